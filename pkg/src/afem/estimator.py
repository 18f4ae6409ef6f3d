"""Edge-based residual indicators and their person-indexed form.

Every side ``S`` of ``T(P)`` corresponds to exactly one person of
``P^{++} \\ P`` (its midpoint).  :class:`CandidateGraph` describes the
genealogy restricted to those persons directly from mesh arrays, so the
marking step never has to materialise ``T^{++}``:

* if ``S`` is the refinement edge of an adjacent leaf ``L``, that side of
  the family contributes the newest vertex of ``L`` (already in ``P``);
* otherwise the midpoint of the refinement edge of ``L`` is a parent of
  the midpoint of ``S`` that also lies in ``P^{++} \\ P``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import NotAMidpoint
from .fem import FemState, h1_distance2, h_term, oscillation, total_energy
from .triangulation import MeshArrays, Triangulation, _edge_index, midpoint_map


# ------------------------------------------------------------- indicators
@dataclass
class IndicatorField:
    """Squared indicators ``E_T^2(S)`` indexed like ``tri.mesh.edges``."""

    tri: Triangulation
    est2: np.ndarray
    element_term: np.ndarray
    jump2: np.ndarray   # squared scalar jump (zero on the boundary)

    @property
    def total(self) -> float:
        return math.fsum(self.est2.tolist())

    def __len__(self) -> int:
        return len(self.est2)


def edge_indicators(state: FemState) -> IndicatorField:
    mesh = state.mesh
    el = state.elements
    elem = el.area * el.f_norm2                     # h_T^2 ||f||^2_T
    et = mesh.edge_tris
    element_term = elem[et[:, 0]] + np.where(et[:, 1] >= 0, elem[np.maximum(et[:, 1], 0)], 0.0)
    jump2 = np.zeros(mesh.n_edges)
    inner = mesh.interior
    if np.any(inner) and state.n_dofs > 0:
        g = state.element_gradients()
        d = mesh.xy[mesh.edge_local[inner, 1]] - mesh.xy[mesh.edge_local[inner, 0]]
        n = np.stack([d[:, 1], -d[:, 0]], axis=1) / mesh.edge_length[inner, None]
        diff = g[et[inner, 0]] - g[et[inner, 1]]
        jump2[inner] = np.einsum("ij,ij->i", diff, n) ** 2
    est2 = element_term + mesh.edge_length ** 2 * jump2
    return IndicatorField(state.tri, est2, element_term, jump2)


def edge_indicator(field: IndicatorField, e: tuple[int, int]) -> float:
    return float(field.est2[_edge_index(field.tri, e)])


def accumulate(field: IndicatorField, edge_set: Iterable[tuple[int, int]] | Iterable[int]) -> float:
    """Sum of the indicators over a set of sides (keys or indices)."""
    vals = []
    for e in edge_set:
        i = e if isinstance(e, (int, np.integer)) else _edge_index(field.tri, e)
        vals.append(float(field.est2[i]))
    return math.fsum(vals)


def person_indicator(field: IndicatorField, persons: Iterable[int]) -> float:
    """Sum over persons of ``P^{++} \\ P`` via the midpoint bijection."""
    mp = midpoint_map(field.tri)
    edges = []
    for p in persons:
        if p not in mp:
            raise NotAMidpoint(f"person {p} is not the midpoint of a side")
        edges.append(mp[p])
    return accumulate(field, edges)


# ------------------------------------------------------- candidate graph
class CandidateGraph:
    """Genealogy of ``P^{++} \\ P`` indexed by mesh side numbers.

    ``parents[i]`` lists in-set parents of side ``i`` (at most two),
    ``children[i]`` in-set children sorted by canonical rank, ``gen`` the
    generation of the midpoint person and ``order`` the canonical
    ``(gen, x, y)`` traversal order.
    """

    def __init__(self, mesh: MeshArrays, forest=None):
        te = mesh.tri_edge
        ne = mesh.n_edges
        self.n = ne
        gen = np.empty(ne, dtype=np.int64)
        gen[te[:, 0]] = mesh.gen + 1
        gen[te[:, 1]] = mesh.gen + 2
        gen[te[:, 2]] = mesh.gen + 2
        self.gen = gen
        if forest is None:
            mid = mesh.xy[mesh.edge_local[:, 0]] + mesh.xy[mesh.edge_local[:, 1]]
            self.order = np.lexsort((mid[:, 1], mid[:, 0], gen))
        else:
            # exact comparison on the scaled integer coordinates
            a, b = mesh.edges[:, 0].tolist(), mesh.edges[:, 1].tolist()
            g = gen.tolist()
            vx, vy = forest.vx, forest.vy
            keys = [(g[i], vx[a[i]] + vx[b[i]], vy[a[i]] + vy[b[i]]) for i in range(ne)]
            self.order = np.array(sorted(range(ne), key=keys.__getitem__), dtype=np.int64)
        rank = np.empty(ne, dtype=np.int64)
        rank[self.order] = np.arange(ne)
        self.rank = rank
        child = np.concatenate([te[:, 1], te[:, 2]])
        par = np.concatenate([te[:, 0], te[:, 0]])
        # parent lists
        p0 = -np.ones(ne, dtype=np.int64)
        p1 = -np.ones(ne, dtype=np.int64)
        srt = np.argsort(child, kind="stable")
        c_sorted, p_sorted = child[srt], par[srt]
        first = np.ones(len(c_sorted), dtype=bool)
        first[1:] = c_sorted[1:] != c_sorted[:-1]
        p0[c_sorted[first]] = p_sorted[first]
        p1[c_sorted[~first]] = p_sorted[~first]
        self.p0, self.p1 = p0, p1
        # children CSR ordered by parent then child rank
        key = np.lexsort((rank[child], par))
        self.child_idx = child[key]
        counts = np.bincount(par, minlength=ne)
        self.child_ptr = np.zeros(ne + 1, dtype=np.int64)
        np.cumsum(counts, out=self.child_ptr[1:])
        roots = np.flatnonzero(p0 < 0)
        self.roots = roots[np.argsort(rank[roots])]

    @classmethod
    def from_tri(cls, tri: Triangulation, exact: bool = False) -> "CandidateGraph":
        """Float ordering is exact while coordinates fit in binary64."""
        if exact or not tri.forest.float_exact:
            return cls(tri.mesh, tri.forest)
        return cls(tri.mesh)

    def parents(self, i: int) -> tuple[int, ...]:
        a, b = int(self.p0[i]), int(self.p1[i])
        if a < 0:
            return ()
        return (a,) if b < 0 else (a, b)

    def children(self, i: int) -> list[int]:
        return self.child_idx[self.child_ptr[i]:self.child_ptr[i + 1]].tolist()

    @cached_property
    def parent_lists(self) -> list[tuple[int, ...]]:
        p0, p1 = self.p0.tolist(), self.p1.tolist()
        return [() if a < 0 else ((a,) if b < 0 else (a, b)) for a, b in zip(p0, p1)]

    @cached_property
    def children_lists(self) -> list[list[int]]:
        ptr = self.child_ptr.tolist()
        idx = self.child_idx.tolist()
        return [idx[ptr[i]:ptr[i + 1]] for i in range(self.n)]

    def closure(self, i: int) -> set[int]:
        """Side indices of ``(P + midpoint(i)) \\ P``, i.e. ``refd(T, S_i)``."""
        return self.closure_of((i,))

    def closure_of(self, idx: Iterable[int]) -> set[int]:
        out: set[int] = set()
        stack = list(idx)
        out.update(stack)
        pl = self.parent_lists
        while stack:
            j = stack.pop()
            for q in pl[j]:
                if q not in out:
                    out.add(q)
                    stack.append(q)
        return out


def sides_to_persons(tri: Triangulation, idx: Iterable[int]) -> set[int]:
    """Midpoint persons of the given side indices (materialises them)."""
    from .triangulation import midpoint_person
    edges = tri.mesh.edges
    return {midpoint_person(tri, (int(edges[i, 0]), int(edges[i, 1]))) for i in idx}


def persons_to_sides(tri: Triangulation, persons: Iterable[int]) -> set[int]:
    mp = midpoint_map(tri)
    out = set()
    for p in persons:
        if p not in mp:
            raise NotAMidpoint(f"person {p} is not the midpoint of a side")
        out.add(_edge_index(tri, mp[p]))
    return out


# ------------------------------------------------------------- checks
@dataclass(frozen=True)
class BoundsRatios:
    ratio_lo: float   # |u - u_T|^2 / est^2
    ratio_hi: float   # (|u - u_T|^2 + osc^2) / est^2


def reliability_efficiency_check(state: FemState, reference: FemState) -> BoundsRatios:
    """Observed ratios against a much finer reference solution."""
    field = edge_indicators(state)
    est2 = field.total
    err2 = h1_distance2(state, reference)
    osc2 = oscillation(state)
    if est2 == 0.0:
        return BoundsRatios(0.0, 0.0)
    return BoundsRatios(err2 / est2, (err2 + osc2) / est2)


@dataclass(frozen=True)
class EnergyGain:
    gain: float
    est_refined: float
    ratio: float | None


def refined_sides(coarse: Triangulation, fine: Triangulation) -> np.ndarray:
    """Indices of coarse sides that are not sides of ``fine``."""
    from .triangulation import edge_keys
    fine_keys = edge_keys(fine)
    e = coarse.mesh.edges
    return np.array([i for i in range(len(e)) if (int(e[i, 0]), int(e[i, 1])) not in fine_keys],
                    dtype=np.int64)


def energy_gain_check(coarse: FemState, fine: FemState,
                      field: IndicatorField | None = None) -> EnergyGain:
    field = field or edge_indicators(coarse)
    gain = total_energy(coarse).G - total_energy(fine).G
    idx = refined_sides(coarse.tri, fine.tri)
    est = math.fsum(field.est2[idx].tolist())
    return EnergyGain(gain, est, gain / est if est > 0 else None)


def est_at_least_h(field: IndicatorField, state: FemState) -> bool:
    return field.total >= h_term(state) * (1 - 1e-12)


def patch_overlap(tri: Triangulation) -> int:
    """Maximum number of side patches containing one leaf."""
    et = tri.mesh.edge_tris
    used = et[et >= 0]
    return int(np.bincount(used, minlength=tri.mesh.n_leaves).max(initial=0))


def indicator_csv(field: IndicatorField, path: str | Path | None = None) -> str:
    """CSV with one row per side: endpoints, interior flag and the terms."""
    mesh = field.tri.mesh
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["a", "b", "interior", "est2", "jump2", "element_term"])
    for i in range(mesh.n_edges):
        w.writerow([int(mesh.edges[i, 0]), int(mesh.edges[i, 1]), int(mesh.interior[i]),
                    repr(float(field.est2[i])), repr(float(field.jump2[i])),
                    repr(float(field.element_term[i]))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
