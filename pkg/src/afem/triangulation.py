"""Conforming triangulations as leaf-set views over the forest."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import population as pop_mod
from .errors import NonConforming, NotAPopulation, NotNested
from .forest import SCALE, Forest, edge_key
from .population import Population


@dataclass(frozen=True)
class Edge:
    endpoints: tuple[int, int]
    h: float
    interior: bool
    adjacent: tuple[int, ...]
    index: int


class MeshArrays:
    """Flat numpy description of a leaf set.

    Sides of a leaf are numbered 0: refinement edge ``(p1, p2)``,
    1: ``(p1, newest)``, 2: ``(p2, newest)``.
    """

    def __init__(self, forest: Forest, leaves: Sequence[int]):
        lv = np.asarray(leaves, dtype=np.int64)
        self.leaves = lv
        self.tri_v = np.stack([
            np.frombuffer(forest.p1, dtype=np.int64)[lv],
            np.frombuffer(forest.p2, dtype=np.int64)[lv],
            np.frombuffer(forest.nw, dtype=np.int64)[lv],
        ], axis=1)
        self.gen = np.frombuffer(forest.tgen, dtype=np.int64)[lv]

        self.nodes, inv = np.unique(self.tri_v, return_inverse=True)
        self.tri_local = inv.reshape(-1, 3)
        vxf = np.frombuffer(forest.vxf, dtype=np.float64)
        vyf = np.frombuffer(forest.vyf, dtype=np.float64)
        self.xy = np.stack([vxf[self.nodes], vyf[self.nodes]], axis=1)
        self.boundary_node = np.fromiter((forest.vbnd[v] != 0 for v in self.nodes),
                                         dtype=bool, count=len(self.nodes))

        nt = len(lv)
        a, b, n = self.tri_local[:, 0], self.tri_local[:, 1], self.tri_local[:, 2]
        side_a = np.stack([a, a, b], axis=1)
        side_b = np.stack([b, n, n], axis=1)
        lo = np.minimum(side_a, side_b).ravel()
        hi = np.maximum(side_a, side_b).ravel()
        nn = len(self.nodes)
        keys = lo * nn + hi
        ukeys, einv = np.unique(keys, return_inverse=True)
        self.edge_local = np.stack([ukeys // nn, ukeys % nn], axis=1)
        self.edges = self.nodes[self.edge_local]
        self.tri_edge = einv.reshape(nt, 3)
        ne = len(ukeys)
        order = np.argsort(einv, kind="stable")
        counts = np.bincount(einv, minlength=ne)
        if counts.max(initial=0) > 2:
            bad = int(np.argmax(counts))
            raise NonConforming(tuple(int(v) for v in self.edges[bad]),
                                "edge shared by more than two leaves")
        first = np.zeros(ne + 1, dtype=np.int64)
        np.cumsum(counts, out=first[1:])
        self.edge_tris = -np.ones((ne, 2), dtype=np.int64)
        self.edge_side = -np.ones((ne, 2), dtype=np.int64)
        slot_tri = order // 3
        slot_side = order % 3
        self.edge_tris[:, 0] = slot_tri[first[:-1]]
        self.edge_side[:, 0] = slot_side[first[:-1]]
        two = counts == 2
        self.edge_tris[two, 1] = slot_tri[first[:-1][two] + 1]
        self.edge_side[two, 1] = slot_side[first[:-1][two] + 1]
        self.interior = two
        d = self.xy[self.edge_local[:, 1]] - self.xy[self.edge_local[:, 0]]
        self.edge_length = np.hypot(d[:, 0], d[:, 1])

        p = self.xy[self.tri_local]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        self.area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    @property
    def n_edges(self) -> int:
        return len(self.edges)


class Triangulation:
    """A conforming NVB triangulation, identified with its population."""

    def __init__(self, forest: Forest, leaves: Iterable[int], population: Population | None = None):
        self.forest = forest
        self.leaves: tuple[int, ...] = tuple(sorted(leaves))
        if population is not None:
            self.__dict__["population"] = population

    @classmethod
    def from_population(cls, pop: Population) -> "Triangulation":
        forest = pop.forest
        pop_mod.check_population(forest, pop.members)
        leaves = pop_mod.leaves_of(forest, pop.members)
        tri = cls(forest, leaves, pop)
        verts = set()
        for t in leaves:
            verts.update(forest.vertices(t))
        if verts != set(pop.members):
            extra = sorted(set(pop.members) - verts)
            raise NotAPopulation(extra[0] if extra else None, "members do not match leaf vertices")
        return tri

    @classmethod
    def bottom(cls, forest: Forest) -> "Triangulation":
        return cls(forest, forest.roots, pop_mod.bottom(forest))

    @classmethod
    def uniform(cls, forest: Forest, k: int) -> "Triangulation":
        return cls(forest, forest.uniform(k))

    @cached_property
    def population(self) -> Population:
        verts = set()
        for t in self.leaves:
            verts.update(self.forest.vertices(t))
        return Population(self.forest, frozenset(verts))

    @cached_property
    def mesh(self) -> MeshArrays:
        return MeshArrays(self.forest, self.leaves)

    def __len__(self) -> int:
        return len(self.leaves)

    def __eq__(self, other) -> bool:
        return isinstance(other, Triangulation) and self.leaves == other.leaves

    def __hash__(self) -> int:
        return hash(self.leaves)

    def __le__(self, other: "Triangulation") -> bool:
        return self.population <= other.population

    def __repr__(self) -> str:
        return f"Triangulation({len(self.leaves)} leaves)"

    @property
    def n_persons(self) -> int:
        return len(self.mesh.nodes)


# --------------------------------------------------------------- inventory
def edges(tri: Triangulation) -> list[Edge]:
    m = tri.mesh
    out = []
    for i in range(m.n_edges):
        adj = tuple(int(tri.leaves[j]) for j in m.edge_tris[i] if j >= 0)
        out.append(Edge((int(m.edges[i, 0]), int(m.edges[i, 1])), float(m.edge_length[i]),
                        bool(m.interior[i]), adj, i))
    return out


def edge_keys(tri: Triangulation) -> set[tuple[int, int]]:
    return {(int(a), int(b)) for a, b in tri.mesh.edges}


def nodes(tri: Triangulation) -> set[int]:
    return set(int(v) for v in tri.mesh.nodes)


def interior_nodes(tri: Triangulation) -> set[int]:
    m = tri.mesh
    return set(int(v) for v in m.nodes[~m.boundary_node])


def midpoint_person(tri: Triangulation, e: tuple[int, int]) -> int:
    """Person at the midpoint of side ``e`` of ``tri`` (materialised on demand)."""
    forest = tri.forest
    e = edge_key(*e)
    m = tri.mesh
    idx = _edge_index(tri, e)
    leaf = int(tri.leaves[m.edge_tris[idx, 0]])
    if forest.refinement_edge(leaf) == e:
        c0, _ = forest.ensure_children(leaf)
        return forest.newest(c0)
    child = forest.child_containing(leaf, e)
    c0, _ = forest.ensure_children(child)
    return forest.newest(c0)


def midpoints(tri: Triangulation, edge_set: Iterable[tuple[int, int]]) -> set[int]:
    return {midpoint_person(tri, e) for e in edge_set}


def midpoint_map(tri: Triangulation) -> dict[int, tuple[int, int]]:
    """Person -> edge for all sides of ``tri``; the keys are P^{++} minus P."""
    return {midpoint_person(tri, e): e for e in edge_keys(tri)}


def _edge_index(tri: Triangulation, e: tuple[int, int]) -> int:
    m = tri.mesh
    lo = np.searchsorted(m.nodes, e[0])
    hi = np.searchsorted(m.nodes, e[1])
    nn = len(m.nodes)
    keys = m.edge_local[:, 0] * nn + m.edge_local[:, 1]
    k = min(lo, hi) * nn + max(lo, hi)
    i = int(np.searchsorted(keys, k))
    if i >= len(keys) or keys[i] != k or m.nodes[lo] != e[0] or m.nodes[hi] != e[1]:
        raise KeyError(f"{e} is not an edge of the triangulation")
    return i


# --------------------------------------------------------------- refinement
def refine(tri: Triangulation, marked: Iterable[tuple[int, int]]) -> Triangulation:
    """Smallest conforming refinement in which no marked side survives."""
    marked = list(marked)
    if not marked:
        return tri
    new_pop = pop_mod.oplus(tri.population, midpoints(tri, marked))
    return Triangulation.from_population(new_pop)


def refd(tri: Triangulation, e: tuple[int, int]) -> set[tuple[int, int]]:
    """Sides of ``tri`` that are bisected when ``e`` is refined."""
    return edge_keys(tri) - edge_keys(refine(tri, [edge_key(*e)]))


def refine_by_mask(tri: Triangulation, edge_mask: np.ndarray) -> Triangulation:
    """Bisect every side flagged in ``edge_mask`` (a closed set of sides).

    The flagged sides must be the midpoint set of a population increment,
    so at most two levels of bisection per leaf are needed.
    """
    forest = tri.forest
    m = tri.mesh
    te = m.tri_edge
    hit = edge_mask[te]
    if np.any(~hit[:, 0] & (hit[:, 1] | hit[:, 2])):
        raise NonConforming(None, "flagged side without its refinement edge")
    leaves: list[int] = []
    new_persons: list[int] = []
    for i in range(m.n_leaves):
        t = int(m.leaves[i])
        if not hit[i, 0]:
            leaves.append(t)
            continue
        c0, c1 = forest.ensure_children(t)
        new_persons.append(forest.nw[c0])
        for c, side in ((c0, 1), (c1, 2)):
            if hit[i, side]:
                g0, g1 = forest.ensure_children(c)
                new_persons.append(forest.nw[g0])
                leaves.append(g0)
                leaves.append(g1)
            else:
                leaves.append(c)
    pop = Population(forest, tri.population.members | frozenset(new_persons))
    return Triangulation(forest, leaves, pop)


def double_refine(tri: Triangulation) -> Triangulation:
    forest = tri.forest
    out = []
    for t in tri.leaves:
        for c in forest.ensure_children(t):
            out.extend(forest.ensure_children(c))
    return Triangulation(forest, out)


def plusplus_population(tri: Triangulation) -> Population:
    return double_refine(tri).population


def meet_tri(t1: Triangulation, t2: Triangulation) -> Triangulation:
    return Triangulation.from_population(pop_mod.meet(t1.population, t2.population))


def join_tri(t1: Triangulation, t2: Triangulation) -> Triangulation:
    return Triangulation.from_population(pop_mod.join(t1.population, t2.population))


def coarsening_area(tri: Triangulation, finer: Triangulation) -> frozenset[int]:
    """Leaves of ``tri`` that are refined in ``finer``."""
    if not tri.population <= finer.population:
        raise NotNested("first triangulation is not a coarsening of the second")
    return frozenset(tri.leaves) - frozenset(finer.leaves)


def edge_patch(tri: Triangulation, e: tuple[int, int]) -> tuple[int, ...]:
    m = tri.mesh
    i = _edge_index(tri, edge_key(*e))
    return tuple(int(tri.leaves[j]) for j in m.edge_tris[i] if j >= 0)


def contains(forest: Forest, big: int, small: int) -> bool:
    """True if forest triangle ``small`` is ``big`` or a descendant of it."""
    g = forest.tgen[big]
    t = small
    while forest.tgen[t] > g:
        t = forest.tparent[t]
    return t == big


# ------------------------------------------------------------------- checks
def check_conforming(tri: Triangulation) -> None:
    """Raise NonConforming if some leaf side carries a hanging node."""
    forest = tri.forest
    node_xy = {(forest.vx[v], forest.vy[v]) for v in tri.mesh.nodes.tolist()}
    for a, b in tri.mesh.edges.tolist():
        sx, sy = forest.vx[a] + forest.vx[b], forest.vy[a] + forest.vy[b]
        if sx & 1 or sy & 1:
            continue
        if (sx >> 1, sy >> 1) in node_xy:
            raise NonConforming((a, b))
    m = tri.mesh
    for i in np.flatnonzero(~m.interior).tolist():
        a, b = m.edges[i]
        if not forest.edge_on_boundary(int(a), int(b)):
            raise NonConforming((int(a), int(b)), "interior side with a single leaf")
    total = sum(forest.area2(t) for t in tri.leaves)
    if total != forest.root_area2:
        raise NonConforming(None, "leaves do not tile the domain")


def matching_violations(tri: Triangulation) -> list[tuple[int, int]]:
    """Pairs of leaves violating the two-case neighbour property of NVB."""
    forest = tri.forest
    m = tri.mesh
    bad = []
    for i in np.flatnonzero(m.interior).tolist():
        for k in (0, 1):
            s, o = m.edge_side[i, k], m.edge_side[i, 1 - k]
            if s != 0:
                continue
            t = int(tri.leaves[m.edge_tris[i, k]])
            t2 = int(tri.leaves[m.edge_tris[i, 1 - k]])
            g, g2 = forest.tgen[t], forest.tgen[t2]
            if g2 == g and o == 0:
                continue
            if g2 == g - 1 and o != 0:
                continue
            bad.append((t, t2))
    return bad


def is_conforming(tri: Triangulation) -> bool:
    try:
        check_conforming(tri)
    except NonConforming:
        return False
    return True


# --------------------------------------------------------------------- svg
def emit_svg(tri: Triangulation, path: str | Path | None = None,
             indicators: np.ndarray | None = None, size: int = 512) -> str:
    """Deterministic SVG: one polygon per leaf, one line per side.

    With ``indicators`` (one value per side, in mesh edge order) the stroke
    width grows with the indicator; otherwise strokes are uniform.
    """
    forest = tri.forest
    m = tri.mesh
    xs = [forest.vx[v] for v in m.nodes.tolist()]
    ys = [forest.vy[v] for v in m.nodes.tolist()]
    x0, y0 = min(xs), min(ys)
    span = max(max(xs) - x0, max(ys) - y0)

    def px(v: int) -> str:
        # integer numerator and span, so the only rounding is the final division
        x = (forest.vx[v] - x0) * size / span
        y = (max(ys) - forest.vy[v]) * size / span
        return f"{x:.6f},{y:.6f}"

    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="-2 -2 {size + 4} {size + 4}">']
    for t in tri.leaves:
        a, b, c = forest.vertices(t)
        lines.append(f'<polygon points="{px(a)} {px(b)} {px(c)}" fill="#eef" stroke="none"/>')
    if indicators is None or len(indicators) == 0 or float(np.max(indicators)) <= 0:
        widths = np.full(m.n_edges, 0.5)
    else:
        ind = np.asarray(indicators, dtype=float)
        widths = 0.5 + 3.0 * ind / float(ind.max())
    for i, (a, b) in enumerate(m.edges.tolist()):
        pa, pb = px(a).split(","), px(b).split(",")
        lines.append(f'<line x1="{pa[0]}" y1="{pa[1]}" x2="{pb[0]}" y2="{pb[1]}" '
                     f'stroke="black" stroke-width="{widths[i]:.4f}"/>')
    lines.append("</svg>")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
