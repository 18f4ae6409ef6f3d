"""SOLVE, ESTIMATE, MARK, REFINE loop with per-iteration records."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import fem
from .estimator import CandidateGraph, edge_indicators
from .fem import CATALOG, SourceField
from .forest import Forest, load_initial
from .marking import MARKERS, guarantee_check, mark
from .triangulation import Triangulation, emit_svg, refine_by_mask

REPORT_COLUMNS = ("k", "leaves", "persons", "marked", "closure", "J", "H", "G", "osc2",
                  "est2", "h1err", "solve_s", "estimate_s", "mark_s", "refine_s")


@dataclass
class AfemConfig:
    problem: str | None = "square-ones"
    mesh: str | Path | None = None
    source: SourceField | None = None
    mu: float = 0.5
    marker: str = "linear"
    max_dofs: int | None = None
    max_iters: int | None = None
    est_tol: float | None = None
    cg_tol: float = 1e-12
    seed: int = 0
    check_guarantees: bool = False
    svg_dir: str | Path | None = None

    def validate(self) -> None:
        if not 0.0 < self.mu <= 1.0:
            raise ValueError(f"mu must lie in (0, 1], got {self.mu}")
        if self.marker not in MARKERS + ("smallest",):
            raise ValueError(f"unknown marker {self.marker!r}")
        if self.max_dofs is None and self.max_iters is None and self.est_tol is None:
            raise ValueError("at least one stopping rule (max_dofs, max_iters, est_tol) is required")
        if (self.problem is None) == (self.mesh is None):
            raise ValueError("give exactly one of problem or mesh")
        if self.problem is not None and self.problem not in CATALOG:
            raise ValueError(f"unknown problem {self.problem!r}; choose from {sorted(CATALOG)}")

    def build(self) -> tuple[Forest, SourceField]:
        if self.problem is not None:
            prob = CATALOG[self.problem]
            return load_initial(prob.mesh_text), self.source or prob.source
        return load_initial(self.mesh), self.source or fem.constant_source(1.0, "ones")


@dataclass
class IterationRecord:
    k: int
    leaves: int
    persons: int
    marked: int
    closure: int
    J: float
    H: float
    G: float
    osc2: float
    est2: float
    h1err: float
    solve_s: float
    estimate_s: float
    mark_s: float
    refine_s: float
    dofs: int = field(default=0, metadata={"report": False})

    def row(self) -> dict:
        d = asdict(self)
        return {c: d[c] for c in REPORT_COLUMNS}


@dataclass
class AfemResult:
    records: list[IterationRecord]
    final: Triangulation
    status: str          # converged | est_tol | max_dofs | max_iters
    states: list = field(default_factory=list, repr=False)


def run(config: AfemConfig, on_record: Callable[[IterationRecord], None] | None = None,
        keep_states: bool = False) -> AfemResult:
    """Adaptive loop; ``on_record`` is called after every iteration (flushing)."""
    config.validate()
    forest, source = config.build()
    tri = Triangulation.bottom(forest)
    records: list[IterationRecord] = []
    states = []
    prev: fem.FemState | None = None
    k = 0
    status = "max_iters"
    while True:
        t0 = time.perf_counter()
        state = fem.assemble(tri, source)
        x0 = None
        if prev is not None and state.n_dofs:
            x0 = fem.prolong(prev, tri)[state.dofs]
        fem.solve_cg(state, config.cg_tol, x0=x0)
        energy = fem.total_energy(state)
        t1 = time.perf_counter()
        indicators = edge_indicators(state)
        est2 = indicators.total
        err2 = fem.h1_error2(state)
        h1err = math.sqrt(max(err2, 0.0)) if err2 is not None else math.nan
        t2 = time.perf_counter()
        if keep_states:
            states.append(state)

        stop = None
        if config.est_tol is not None and est2 <= config.est_tol:
            stop = "est_tol"
        elif config.max_dofs is not None and state.n_dofs >= config.max_dofs:
            stop = "max_dofs"
        n_marked = n_closure = 0
        t3 = t4 = t2
        nxt = tri
        if stop is None:
            graph = CandidateGraph.from_tri(tri)
            outcome = mark(tri, indicators, config.mu, config.marker, graph=graph)
            t3 = time.perf_counter()
            if outcome.converged:
                stop = "converged"
            else:
                if config.check_guarantees:
                    guarantee_check(graph, indicators.est2, outcome, config.mu)
                n_marked, n_closure = outcome.n_marked, len(outcome.closure)
                nxt = refine_by_mask(tri, outcome.closure_mask(graph.n))
            t4 = time.perf_counter()
        if config.svg_dir is not None:
            d = Path(config.svg_dir)
            d.mkdir(parents=True, exist_ok=True)
            emit_svg(tri, d / f"mesh_{k:04d}.svg", indicators.est2)
        rec = IterationRecord(k, len(tri), tri.n_persons, n_marked, n_closure,
                              energy.J, energy.H, energy.G, energy.osc2, est2, h1err,
                              t1 - t0, t2 - t1, t3 - t2, t4 - t3, dofs=state.n_dofs)
        records.append(rec)
        if on_record is not None:
            on_record(rec)
        prev = state
        tri = nxt
        k += 1
        if stop is not None:
            status = stop
            break
        if config.max_iters is not None and k >= config.max_iters:
            status = "max_iters"
            break
    return AfemResult(records, tri, status, states)


def complexity_audit(result: AfemResult | list[IterationRecord],
                     final_leaves: int | None = None) -> list[float]:
    """Running maximum of ``(#T_k - #T_0) / sum_{i<k} #M_i`` for k >= 1."""
    if isinstance(result, AfemResult):
        recs = result.records
        final_leaves = len(result.final)
    else:
        recs = result
    if not recs:
        return []
    leaves = [r.leaves for r in recs]
    if final_leaves is not None and recs[-1].marked:
        leaves.append(final_leaves)
    out = []
    best = 0.0
    total = 0
    for k in range(1, len(leaves)):
        total += recs[k - 1].marked
        if total == 0:
            continue
        best = max(best, (leaves[k] - leaves[0]) / total)
        out.append(best)
    return out


# ----------------------------------------------------------------- reports
def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


class ReportWriter:
    """Writes CSV rows (or a JSON list) incrementally as records arrive."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.json = self.path.suffix.lower() == ".json"
        self.rows: list[dict] = []
        if not self.json:
            with self.path.open("w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(REPORT_COLUMNS)

    def __call__(self, rec: IterationRecord) -> None:
        row = rec.row()
        if self.json:
            self.rows.append(row)
            self.path.write_text(records_json_text(self.rows))
        else:
            with self.path.open("a", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow([_fmt(row[c]) for c in REPORT_COLUMNS])


def records_csv(records: list[IterationRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in records:
        row = r.row()
        w.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])
    return buf.getvalue()


def records_json_text(rows: list[dict]) -> str:
    clean = [{k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in r.items()}
             for r in rows]
    return json.dumps(clean, indent=1) + "\n"


def records_json(records: list[IterationRecord]) -> str:
    return records_json_text([r.row() for r in records])


def loglog_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(lx, ly, 1)[0])
