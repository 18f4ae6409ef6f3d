"""Brute-force ground truth on small instances.

Exhaustive population enumeration, optimal total energies ``G_opt[m]``, the
observed energy-optimality constant of an adaptive trace, and random
generators for nested pairs and lower diamonds.
"""
from __future__ import annotations

import csv
import hashlib
import io
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import fem
from . import population as pop_mod
from .errors import BudgetExceeded, CannotPlace
from .estimator import CandidateGraph
from .fem import SourceField
from .forest import Forest
from .population import Diamond, Population
from .triangulation import Triangulation, refine_by_mask

DEFAULT_BUDGET = 10 ** 7


# ------------------------------------------------------------ enumeration
def digest(forest: Forest, members: Iterable[int]) -> str:
    """Platform-independent digest of a person set (by exact coordinates)."""
    h = hashlib.sha256()
    for x, y in sorted((forest.vx[p], forest.vy[p]) for p in members):
        h.update(f"{x},{y};".encode())
    return h.hexdigest()[:16]


@dataclass
class EnumerationIndex:
    forest: Forest
    by_size: dict[int, list[frozenset[int]]]

    @property
    def m_max(self) -> int:
        return max(self.by_size)

    def count(self, m: int) -> int:
        return len(self.by_size[m])

    def populations(self, m: int) -> list[Population]:
        return [Population(self.forest, s) for s in self.by_size[m]]


def addable(forest: Forest, members: frozenset[int]) -> set[int]:
    """Persons outside ``members`` all of whose parents are members."""
    out = set()
    for p in members:
        for c in pop_mod.children(forest, p):
            if c not in members and all(q in members for q in pop_mod.parents(forest, c)):
                out.add(c)
    return out


def enumerate_populations(forest: Forest, m_max: int,
                          budget: int = DEFAULT_BUDGET) -> EnumerationIndex:
    """All populations with at most ``m_max`` persons beyond the bottom."""
    base = pop_mod.bottom(forest).members
    by_size = {0: [base]}
    frontier = {base}
    for m in range(1, m_max + 1):
        nxt: set[frozenset[int]] = set()
        for s in frontier:
            for c in addable(forest, s):
                nxt.add(s | {c})
                if len(nxt) > budget:
                    raise BudgetExceeded(f"more than {budget} populations of size {m}")
        by_size[m] = sorted(nxt, key=lambda s: sorted(pop_mod.canonical_key(forest, p) for p in s))
        frontier = nxt
    return EnumerationIndex(forest, by_size)


def count_by_backtracking(forest: Forest, m: int) -> int:
    """Independent count of populations with exactly ``m`` added persons.

    Walks the persons of generation <= m in a topological order and decides
    membership one by one, admitting a person only when its parents are in.
    """
    persons = [p for p in pop_mod.persons_up_to(forest, m) if forest.vgen[p] > 0]
    persons.sort(key=lambda p: pop_mod.canonical_key(forest, p))
    parents = [pop_mod.parents(forest, p) for p in persons]
    bottom = set(range(pop_mod.n_bottom(forest)))
    chosen: set[int] = set(bottom)
    n = len(persons)

    def rec(i: int, left: int) -> int:
        if left == 0:
            return 1
        if i == n:
            return 0
        total = rec(i + 1, left)
        p = persons[i]
        if all(q in chosen for q in parents[i]):
            chosen.add(p)
            total += rec(i + 1, left - 1)
            chosen.discard(p)
        return total

    return rec(0, m)


# --------------------------------------------------------------- G_opt
@dataclass(frozen=True)
class OptimalRecord:
    m: int
    count: int
    gopt: float
    popt: frozenset[int]
    digest: str


class EnergyCache:
    """G of populations keyed by member-set digest."""

    def __init__(self, forest: Forest, source: SourceField, cg_tol: float = 1e-12):
        self.forest = forest
        self.source = source
        self.cg_tol = cg_tol
        self._g: dict[str, float] = {}

    def G(self, members: frozenset[int]) -> float:
        key = digest(self.forest, members)
        hit = self._g.get(key)
        if hit is None:
            tri = Triangulation.from_population(Population(self.forest, members))
            state = fem.solve(tri, self.source, self.cg_tol)
            hit = fem.total_energy(state).G
            self._g[key] = hit
        return hit


def g_opt(index: EnumerationIndex, m: int, source: SourceField,
          cache: EnergyCache | None = None, rel_tie: float = 1e-12) -> OptimalRecord:
    """Minimal G over the size class ``m`` (ties: lexicographic member list)."""
    cache = cache or EnergyCache(index.forest, source)
    forest = index.forest
    best_g = math.inf
    best: frozenset[int] | None = None
    best_key = None
    for s in index.by_size[m]:
        g = cache.G(s)
        key = sorted(pop_mod.canonical_key(forest, p) for p in s)
        tol = rel_tie * max(1.0, abs(best_g)) if best is not None else 0.0
        if best is None or g < best_g - tol:
            best_g, best, best_key = g, s, key
        elif abs(g - best_g) <= tol and key < best_key:
            best_g, best, best_key = min(g, best_g), s, key
    assert best is not None
    return OptimalRecord(m, len(index.by_size[m]), best_g, best, digest(forest, best))


def g_opt_table(index: EnumerationIndex, source: SourceField) -> list[OptimalRecord]:
    cache = EnergyCache(index.forest, source)
    return [g_opt(index, m, source, cache) for m in sorted(index.by_size)]


def gopt_csv(records: Sequence[OptimalRecord], path: str | Path | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["m", "count", "gopt", "popt_digest"])
    for r in records:
        w.writerow([r.m, r.count, repr(r.gopt), r.digest])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


@dataclass(frozen=True)
class OptimalityReport:
    C: int | None            # None when the trace never reaches some G_opt[m]
    violations: list[tuple[int, int]] = field(default_factory=list)   # (k, m) with G_k > G_opt[m]
    reached: bool = True


def energy_optimality_check(sizes: Sequence[int], energies: Sequence[float],
                            gopt: Sequence[float], rel_tol: float = 1e-12) -> OptimalityReport:
    """Smallest integer C with ``n_k >= C m  =>  G_k <= G_opt[m]``.

    ``sizes[k] = #(P_k \\ P_bot)`` and ``energies[k] = G(P_k)`` along a trace.
    If some ``G_opt[m]`` is never reached the constant is not certified.
    """
    worst = 0.0
    violations = []
    reached = True
    for m in range(1, len(gopt)):
        target = gopt[m] + rel_tol * max(1.0, abs(gopt[m]))
        hit = False
        for k, (n, g) in enumerate(zip(sizes, energies)):
            if g > target:
                violations.append((k, m))
                worst = max(worst, n / m)
            else:
                hit = True
        reached &= hit
    if not reached:
        return OptimalityReport(None, violations, False)
    return OptimalityReport(int(math.floor(worst)) + 1, violations, True)


# ------------------------------------------------------ random instances
def random_refinement(tri: Triangulation, rng: random.Random, n_sides: int = 1) -> Triangulation:
    """Refine ``tri`` at ``n_sides`` random sides (with conforming closure)."""
    graph = CandidateGraph.from_tri(tri)
    picks = [rng.randrange(graph.n) for _ in range(n_sides)]
    cl = graph.closure_of(picks)
    mask = np.zeros(graph.n, dtype=bool)
    mask[list(cl)] = True
    return refine_by_mask(tri, mask)


def random_triangulation(forest: Forest, rng: random.Random, steps: int,
                         n_sides: int = 1, start: Triangulation | None = None) -> Triangulation:
    tri = start or Triangulation.bottom(forest)
    for _ in range(steps):
        tri = random_refinement(tri, rng, n_sides)
    return tri


def random_nested_pair(forest: Forest, rng: random.Random, coarse_steps: int = 6,
                       fine_steps: int = 4) -> tuple[Triangulation, Triangulation]:
    coarse = random_triangulation(forest, rng, rng.randint(0, coarse_steps), rng.randint(1, 3))
    fine = random_triangulation(forest, rng, rng.randint(0, fine_steps), rng.randint(1, 3), start=coarse)
    return coarse, fine


def removal_set(pop: Population, seed: int) -> frozenset[int]:
    """``({Q} | desc(Q)) & P``: what disappears when ``Q`` is removed from ``P``."""
    return frozenset({seed}) | pop_mod.desc(pop.forest, {seed}, pop.members)


def lower_diamond_from_seeds(top: Population, seeds: Sequence[int]) -> Diamond:
    forest = top.forest
    rs = []
    seen: set[int] = set()
    for q in seeds:
        if q not in top.members or forest.vgen[q] == 0:
            raise CannotPlace(f"seed {q} is not a removable member")
        r = removal_set(top, q)
        if r & seen:
            raise CannotPlace("seeds have overlapping descendant closures")
        seen |= r
        rs.append(r)
    flanks = tuple(Population(forest, top.members - r) for r in rs)
    bottom = Population(forest, top.members - frozenset(seen))
    for f in flanks:
        pop_mod.check_population(forest, f.members)
    return Diamond(bottom, top, flanks)


def random_lower_diamond(top: Population, m: int, rng: random.Random,
                         attempts: int = 20) -> Diamond:
    forest = top.forest
    cands = sorted(p for p in top.members if forest.vgen[p] > 0)
    if len(cands) < m:
        raise CannotPlace(f"only {len(cands)} removable persons for a diamond of size {m}")
    for _ in range(attempts):
        rng.shuffle(cands)
        seeds: list[int] = []
        seen: set[int] = set()
        for q in cands:
            r = removal_set(top, q)
            if r & seen:
                continue
            seeds.append(q)
            seen |= r
            if len(seeds) == m:
                return lower_diamond_from_seeds(top, seeds)
    raise CannotPlace(f"could not place {m} disjoint removal sets")
