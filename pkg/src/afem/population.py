"""Persons, populations and the family-tree lattice over an NVB forest.

A person is a vertex of some triangle of the forest; person ids are vertex
ids.  A person that is the midpoint of the refinement edge of a triangle has
that triangle's newest vertex as a parent, so interior persons have two
parents and boundary persons one.  A population is a parent-closed set of
persons containing the initial vertices; populations are in one-to-one
correspondence with conforming NVB triangulations.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from .errors import ChainNotFound, NotAPopulation
from .forest import Forest


# ---------------------------------------------------------------- genealogy
def _cache(forest: Forest, name: str) -> dict:
    return forest.genealogy.setdefault(name, {})


def gen(forest: Forest, p: int) -> int:
    return forest.vgen[p]


def n_bottom(forest: Forest) -> int:
    """Number of persons of generation zero (vertices of the initial mesh)."""
    return forest.n_root_vertices


def parents(forest: Forest, p: int) -> tuple[int, ...]:
    """Parents of ``p``: newest vertices of the triangles whose refinement
    edge has ``p`` as midpoint.  Empty for generation zero."""
    memo = _cache(forest, "parents")
    hit = memo.get(p)
    if hit is not None:
        return hit
    t = forest.vcreator[p]
    if t < 0:
        res: tuple[int, ...] = ()
    else:
        ps = {forest.newest(t)}
        tw = forest.twin(t)
        if tw is not None:
            ps.add(forest.newest(tw))
        res = tuple(sorted(ps))
    memo[p] = res
    return res


def _newest_tris(forest: Forest, p: int) -> list[int]:
    """Triangles having ``p`` as newest vertex (all of generation gen(p))."""
    t = forest.vcreator[p]
    if t < 0:
        return [r for r in forest.roots if forest.newest(r) == p]
    out = list(forest.ensure_children(t))
    tw = forest.twin(t)
    if tw is not None:
        out.extend(forest.ensure_children(tw))
    return out


def patch_tris(forest: Forest, p: int) -> list[int]:
    """``{T : p in T, gen(T) = gen(p)}`` as sorted handles."""
    if forest.vcreator[p] < 0:
        return sorted(r for r in forest.roots if p in forest.vertices(r))
    return sorted(_newest_tris(forest, p))


def children(forest: Forest, p: int) -> tuple[int, ...]:
    """All children of ``p`` in the infinite family tree (materialises them)."""
    memo = _cache(forest, "children")
    hit = memo.get(p)
    if hit is not None:
        return hit
    kids = set()
    for t in _newest_tris(forest, p):
        c0, _ = forest.ensure_children(t)
        kids.add(forest.newest(c0))
    res = tuple(sorted(kids))
    memo[p] = res
    return res


def ancestors(forest: Forest, p: int) -> frozenset[int]:
    memo = _cache(forest, "anc")
    hit = memo.get(p)
    if hit is not None:
        return hit
    acc: set[int] = set()
    for q in parents(forest, p):
        acc.add(q)
        acc |= ancestors(forest, q)
    res = frozenset(acc)
    memo[p] = res
    return res


def anc(forest: Forest, persons: Iterable[int]) -> frozenset[int]:
    """Union of the ancestor sets of ``persons``."""
    acc: set[int] = set()
    for p in persons:
        acc |= ancestors(forest, p)
    return frozenset(acc)


def desc(forest: Forest, persons: Iterable[int], within: Iterable[int]) -> frozenset[int]:
    """Members of ``within`` that descend from some person in ``persons``."""
    src = set(persons)
    out: set[int] = set()
    for q in sorted(within, key=lambda v: forest.vgen[v]):
        for par in parents(forest, q):
            if par in src or par in out:
                out.add(q)
                break
    return frozenset(out)


def free(forest: Forest, persons: Iterable[int]) -> frozenset[int]:
    """Persons of the set none of whose descendants are in the set."""
    u = frozenset(persons)
    return u - anc(forest, u)


def canonical_key(forest: Forest, p: int) -> tuple[int, int, int]:
    """Ordering key (generation, x, y) with exact coordinates."""
    return forest.vgen[p], forest.vx[p], forest.vy[p]


def patch(forest: Forest, p: int) -> frozenset[int]:
    """Omega(p) as the set of its generation-level triangle handles."""
    return frozenset(patch_tris(forest, p))


def patch_of_set(forest: Forest, persons: Iterable[int]) -> frozenset[int]:
    out: set[int] = set()
    for p in persons:
        out.update(patch_tris(forest, p))
    return frozenset(out)


# ---------------------------------------------------------------- populations
@dataclass(frozen=True)
class Population:
    """Immutable parent-closed person set; compare with ``<=``, ``|``, ``&``."""

    forest: Forest = field(compare=False, repr=False, hash=False)
    members: frozenset[int]

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, p: int) -> bool:
        return p in self.members

    def __iter__(self) -> Iterator[int]:
        return iter(sorted(self.members))

    def __le__(self, other: "Population") -> bool:
        return self.members <= other.members

    def __lt__(self, other: "Population") -> bool:
        return self.members < other.members

    def __or__(self, other: "Population") -> "Population":
        return join(self, other)

    def __and__(self, other: "Population") -> "Population":
        return meet(self, other)

    @property
    def max_gen(self) -> int:
        return max(self.forest.vgen[p] for p in self.members)

    def added(self) -> frozenset[int]:
        """Persons beyond the bottom population."""
        return frozenset(p for p in self.members if self.forest.vgen[p] > 0)

    def sorted_canonical(self) -> list[int]:
        return sorted(self.members, key=lambda p: canonical_key(self.forest, p))


def bottom(forest: Forest) -> Population:
    return Population(forest, frozenset(range(n_bottom(forest))))


def is_population(forest: Forest, persons: Iterable[int]) -> bool:
    s = set(persons)
    try:
        check_population(forest, s)
    except NotAPopulation:
        return False
    return True


def check_population(forest: Forest, persons: set[int] | frozenset[int]) -> None:
    """Raise NotAPopulation unless ``persons`` contains the bottom and is parent-closed."""
    nb = n_bottom(forest)
    for v in range(nb):
        if v not in persons:
            raise NotAPopulation(v, f"bottom person {v} missing")
    for p in persons:
        for q in parents(forest, p):
            if q not in persons:
                raise NotAPopulation(p)


def make_population(forest: Forest, persons: Iterable[int]) -> Population:
    s = frozenset(persons)
    check_population(forest, s)
    return Population(forest, s)


def from_triangulation(tri) -> Population:
    return tri.population


def to_triangulation(pop: Population):
    from .triangulation import Triangulation
    return Triangulation.from_population(pop)


def leaves_of(forest: Forest, members: frozenset[int] | set[int]) -> list[int]:
    """Leaves of the subtree whose bisected triangles have midpoints in ``members``."""
    leaves = []
    stack = list(forest.roots)
    while stack:
        t = stack.pop()
        m = forest.midpoint_id(t)
        if m is not None and m in members:
            stack.extend(forest.ensure_children(t))
        else:
            leaves.append(t)
    leaves.sort()
    return leaves


def oplus(pop: Population, persons: Iterable[int]) -> Population:
    """Smallest population refining ``pop`` that contains ``persons``."""
    forest = pop.forest
    out = set(pop.members)
    stack = [p for p in persons if p not in out]
    while stack:
        p = stack.pop()
        if p in out:
            continue
        out.add(p)
        stack.extend(q for q in parents(forest, p) if q not in out)
    return Population(forest, frozenset(out))


def ominus(pop: Population, persons: Iterable[int]) -> Population:
    """Greatest coarsening of ``pop`` avoiding ``persons``."""
    forest = pop.forest
    c = frozenset(persons) & pop.members
    if not c:
        return pop
    if any(forest.vgen[p] == 0 for p in c):
        raise ValueError("cannot remove bottom persons")
    gone = c | desc(forest, c, pop.members)
    res = pop.members - gone
    check_population(forest, res)
    return Population(forest, res)


def join(p1: Population, p2: Population) -> Population:
    return Population(p1.forest, p1.members | p2.members)


def meet(p1: Population, p2: Population) -> Population:
    return Population(p1.forest, p1.members & p2.members)


def join_all(pops: Sequence[Population]) -> Population:
    acc = set()
    for p in pops:
        acc |= p.members
    return Population(pops[0].forest, frozenset(acc))


def meet_all(pops: Sequence[Population]) -> Population:
    acc = set(pops[0].members)
    for p in pops[1:]:
        acc &= p.members
    return Population(pops[0].forest, frozenset(acc))


# ------------------------------------------------------------------ diamonds
@dataclass(frozen=True)
class Diamond:
    bottom: Population
    top: Population
    flanks: tuple[Population, ...]

    @property
    def size(self) -> int:
        return len(self.flanks)


def is_lower_diamond(d: Diamond) -> bool:
    if not d.flanks:
        raise ValueError("a diamond needs at least one flank")
    if meet_all(d.flanks).members != d.bottom.members:
        return False
    if join_all(d.flanks).members != d.top.members:
        return False
    seen: set[int] = set()
    for f in d.flanks:
        diff = d.top.members - f.members
        if diff & seen:
            return False
        seen |= diff
    return True


# ------------------------------------------------------------ fine structure
def persons_up_to(forest: Forest, k_max: int) -> list[int]:
    """All persons of generation <= k_max (vertices of the uniform level)."""
    vs = set()
    for t in forest.uniform(k_max):
        vs.update(forest.vertices(t))
    return sorted(vs)


def genetic_diversity(forest: Forest, k_max: int) -> int:
    """Max over persons of gen <= k_max of same-generation ancestor counts."""
    best = 0
    for p in persons_up_to(forest, k_max):
        counts: dict[int, int] = {}
        for q in ancestors(forest, p):
            g = forest.vgen[q]
            counts[g] = counts.get(g, 0) + 1
        if counts:
            best = max(best, max(counts.values()))
    return best


def partners(forest: Forest, a: int, b: int) -> bool:
    """True when ``a != b`` have a joint child."""
    if a == b:
        return False
    return bool(set(children(forest, a)) & set(children(forest, b)))


def share_parent(forest: Forest, a: int, b: int) -> bool:
    return bool(set(parents(forest, a)) & set(parents(forest, b)))


def partner_chain(forest: Forest, p: int, a: int, b: int) -> list[int]:
    """Shortest sequence ``a = P0, ..., Pm = b`` of partners inside anc(p).

    Consecutive entries have a joint child in ``anc(p) | {p}``.
    """
    family = ancestors(forest, p)
    if a not in family or b not in family:
        raise ValueError("both endpoints must be ancestors of p")
    if forest.vgen[a] != forest.vgen[b]:
        raise ValueError("endpoints must share a generation")
    if a == b:
        return [a]
    adj: dict[int, set[int]] = {}
    for q in family | {p}:
        ps = parents(forest, q)
        if len(ps) == 2:
            x, y = ps
            adj.setdefault(x, set()).add(y)
            adj.setdefault(y, set()).add(x)
    prev = {a: a}
    queue = deque([a])
    while queue:
        x = queue.popleft()
        if x == b:
            break
        for y in sorted(adj.get(x, ())):
            if y not in prev:
                prev[y] = x
                queue.append(y)
    if b not in prev:
        raise ChainNotFound(f"no partner chain from {a} to {b} inside anc({p})")
    chain = [b]
    while chain[-1] != a:
        chain.append(prev[chain[-1]])
    return chain[::-1]


# ------------------------------------------------------------------ snapshot
def snapshot(pop: Population) -> str:
    """Text dump: one ``id x y gen`` line per member, sorted by id."""
    forest = pop.forest
    lines = []
    for p in sorted(pop.members):
        x, y = forest.coords(p)
        lines.append(f"{p} {x} {y} {forest.vgen[p]}")
    return "\n".join(lines) + "\n"
