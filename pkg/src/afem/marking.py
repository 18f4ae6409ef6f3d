"""Modified maximum marking on the candidate persons ``P^{++} \\ P``.

Candidates are addressed by side index of ``T(P)`` (see
:class:`~afem.estimator.CandidateGraph`); ``(P + Q) \\ P`` for a candidate
``Q`` is its ancestor closure inside the candidate graph.

Two variants are provided.  :func:`mark_reference` runs the while-loop with
the exact maximum of accumulated indicators and a canonical ``(gen, x, y)``
selection order.  :func:`mark_linear` runs the two depth-first passes
(max-ind and accum-est) whose cost is linear in the number of candidates.
"""
from __future__ import annotations

import csv
import gc
import io
import math
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import GuaranteeViolated
from .estimator import CandidateGraph, IndicatorField, sides_to_persons
from .forest import SCALE
from .triangulation import Triangulation

MARKERS = ("reference", "linear")


@dataclass
class MarkOutcome:
    """Result of one MARK step, in side indices of ``T(P)``."""

    marked: list[int]
    closure: set[int]
    max_indicator: float            # the threshold base actually used
    variant: str
    mu: float
    trace: list[tuple[int, float, str]] = field(default_factory=list)
    converged: bool = False

    @property
    def n_marked(self) -> int:
        return len(self.marked)

    def closure_mask(self, n: int) -> np.ndarray:
        mask = np.zeros(n, dtype=bool)
        if self.closure:
            mask[np.fromiter(self.closure, dtype=np.int64, count=len(self.closure))] = True
        return mask

    def marked_persons(self, tri: Triangulation) -> set[int]:
        return sides_to_persons(tri, self.marked)

    def closure_persons(self, tri: Triangulation) -> set[int]:
        return sides_to_persons(tri, self.closure)


def _fsum(est: Sequence[float], idx: Iterable[int]) -> float:
    return math.fsum(est[j] for j in idx)


def accumulated(graph: CandidateGraph, est2: np.ndarray) -> np.ndarray:
    """``E^2((P + Q) \\ P)`` for every candidate ``Q``."""
    est = est2.tolist()
    return np.array([_fsum(est, graph.closure(i)) for i in range(graph.n)])


def max_accumulated(graph: CandidateGraph, est2: np.ndarray) -> float:
    """The exact maximum ``Ebar^2`` over all candidates."""
    if graph.n == 0:
        return 0.0
    return float(accumulated(graph, est2).max())


def mark_reference(graph: CandidateGraph, est2: np.ndarray, mu: float,
                   order: Sequence[int] | None = None, record_trace: bool = True) -> MarkOutcome:
    """While-loop marking; ``order`` overrides the canonical selection order."""
    _check_mu(mu)
    est = est2.tolist()
    n = graph.n
    closures = [graph.closure(i) for i in range(n)]
    acc = [_fsum(est, c) for c in closures]
    ebar = max(acc, default=0.0)
    if ebar <= 0.0:
        return MarkOutcome([], set(), 0.0, "reference", mu, converged=True)
    threshold = mu * ebar
    removed = bytearray(n)
    tilde: set[int] = set()
    marked: list[int] = []
    trace = []
    for i in (graph.order.tolist() if order is None else order):
        if removed[i]:
            continue
        cl = closures[i]
        val = acc[i] if not tilde else _fsum(est, (j for j in cl if j not in tilde))
        if val >= threshold:
            marked.append(i)
            tilde |= cl
            if record_trace:
                trace.append((i, val, "marked"))
        elif record_trace:
            trace.append((i, val, "skipped"))
        for j in cl:
            removed[j] = 1
    return MarkOutcome(marked, tilde, ebar, "reference", mu, trace)


def max_ind(graph: CandidateGraph, est2: np.ndarray) -> float:
    """Surrogate maximum accumulated along parent chains of the in-forest."""
    est = est2.tolist()
    kids = graph.children_lists
    best = 0.0
    stack = [(int(r), 0.0) for r in graph.roots[::-1]]
    while stack:
        p, vp = stack.pop()
        e = est[p] + vp
        if e > best:
            best = e
        for c in reversed(kids[p]):
            stack.append((c, e))
    return best


def mark_linear(graph: CandidateGraph, est2: np.ndarray, mu: float,
                record_trace: bool = False) -> MarkOutcome:
    """max-ind followed by accum-est, linear in the number of candidates.

    Two safeguards complete the recursive description.  A person already
    claimed by a mark reports ``True`` when reached again from its second
    parent, and the claimed set is closed under ancestors at the end.  Both
    only matter for persons with two parents among the candidates.
    """
    _check_mu(mu)
    est = est2.tolist()
    ebar_mod = max_ind(graph, est2)
    if ebar_mod <= 0.0:
        return MarkOutcome([], set(), 0.0, "linear", mu, converged=True)
    threshold = mu * ebar_mod
    kids = graph.children_lists
    in_m = bytearray(graph.n)
    claimed = bytearray(graph.n)
    marked: list[int] = []
    trace: list[tuple[int, float, str]] = []

    log = trace.append if record_trace else (lambda item: None)

    def accum_est(p: int, value_parent: float) -> bool:
        if claimed[p] and not kids[p]:
            log((p, value_parent, "claimed"))
            return True
        e = est[p] + value_parent
        is_marked = False
        if e >= threshold:
            if not in_m[p]:
                in_m[p] = 1
                marked.append(p)
            claimed[p] = 1
            log((p, e, "marked"))
            e = 0.0
            is_marked = True
        else:
            log((p, e, "skipped"))
        for c in kids[p]:
            if accum_est(c, e):
                claimed[p] = 1
                e = 0.0
                is_marked = True
        return is_marked

    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 10_000))
    gc_was_enabled = gc.isenabled()
    gc.disable()  # the pass allocates no cycles; collection only adds superlinear scans
    try:
        for r in graph.roots.tolist():
            accum_est(r, 0.0)
    finally:
        sys.setrecursionlimit(limit)
        if gc_was_enabled:
            gc.enable()
    tilde = graph.closure_of(marked)
    return MarkOutcome(marked, tilde, ebar_mod, "linear", mu, trace)


def mark_smallest(graph: CandidateGraph, est2: np.ndarray, mu: float = 1.0) -> MarkOutcome:
    """Negative control: mark only the candidate with the smallest positive indicator."""
    pos = np.flatnonzero(est2 > 0)
    if len(pos) == 0:
        return MarkOutcome([], set(), 0.0, "smallest", mu, converged=True)
    vals = est2[pos]
    best = pos[vals == vals.min()]
    i = int(best[np.argmin(graph.rank[best])])
    return MarkOutcome([i], graph.closure(i), float(est2[i]), "smallest", mu)


def mark(tri: Triangulation, field: IndicatorField, mu: float, variant: str = "linear",
         graph: CandidateGraph | None = None, record_trace: bool = False) -> MarkOutcome:
    graph = graph or CandidateGraph.from_tri(tri)
    if variant == "reference":
        return mark_reference(graph, field.est2, mu, record_trace=record_trace)
    if variant == "linear":
        return mark_linear(graph, field.est2, mu, record_trace=record_trace)
    if variant == "smallest":
        return mark_smallest(graph, field.est2, mu)
    raise ValueError(f"unknown marker {variant!r}")


def _check_mu(mu: float) -> None:
    if not 0.0 < mu <= 1.0:
        raise ValueError(f"mu must lie in (0, 1], got {mu}")


# ---------------------------------------------------------------- checks
def guarantee_check(graph: CandidateGraph, est2: np.ndarray, outcome: MarkOutcome,
                    mu: float, which: str | None = None, ebar: float | None = None,
                    rel_tol: float = 1e-12) -> bool:
    """Assert the lower bound on the indicator mass claimed by a MARK step.

    ``E^2((P + M) \\ P) >= mu #M Ebar^2`` for the reference variant and half
    of that for the linear one.  ``Ebar^2`` is the exact maximum in both
    cases.  Also checks that the reported closure is ``(P + M) \\ P``.
    """
    which = which or outcome.variant
    positive = bool(np.any(est2 > 0))
    if positive and not outcome.marked:
        raise GuaranteeViolated("nothing marked although some indicator is positive")
    if not outcome.marked:
        return True
    cl = graph.closure_of(outcome.marked)
    if cl != set(outcome.closure):
        raise GuaranteeViolated("reported closure differs from the ancestor closure of M")
    if ebar is None:
        ebar = max_accumulated(graph, est2)
    lhs = math.fsum(est2[j] for j in cl)
    factor = 1.0 if which == "reference" else 0.5
    rhs = factor * mu * len(outcome.marked) * ebar
    if lhs < rhs * (1.0 - rel_tol):
        raise GuaranteeViolated(f"claimed mass {lhs!r} below bound {rhs!r} ({which})")
    if which == "linear" and outcome.max_indicator < 0.5 * ebar * (1.0 - rel_tol):
        raise GuaranteeViolated("surrogate maximum below half the exact maximum")
    return True


def trace_csv(tri: Triangulation, outcome: MarkOutcome) -> str:
    """``x,y,value,decision`` rows; the person is named by its exact midpoint."""
    forest = tri.forest
    edges = tri.mesh.edges
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "value", "decision"])
    for i, val, dec in outcome.trace:
        a, b = int(edges[i, 0]), int(edges[i, 1])
        x = Fraction(forest.vx[a] + forest.vx[b], 2 * SCALE)
        y = Fraction(forest.vy[a] + forest.vy[b], 2 * SCALE)
        w.writerow([str(x), str(y), repr(val), dec])
    return buf.getvalue()
