"""Randomised verification suites with summary tables.

Each suite returns a :class:`SuiteResult` holding a pass flag, a list of
``(metric, value)`` rows and the raw samples for callers that want to make
their own assertions.
"""
from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass, field
from typing import Callable

from . import fem
from . import population as pop_mod
from .driver import AfemConfig, complexity_audit, run
from .errors import CannotPlace, GuaranteeViolated, NonConforming, NotAPopulation
from .estimator import energy_gain_check
from .fem import CATALOG
from .oracle import (enumerate_populations, energy_optimality_check, g_opt_table,
                     random_lower_diamond, random_nested_pair, random_refinement,
                     random_triangulation)
from .triangulation import Triangulation, check_conforming, matching_violations

FIXTURE_PROBLEMS = ("square-ones", "lshape-ones")


@dataclass
class SuiteResult:
    name: str
    passed: bool
    rows: list[tuple[str, object]] = field(default_factory=list)
    samples: dict = field(default_factory=dict)
    seconds: float = 0.0

    def table(self) -> str:
        width = max((len(k) for k, _ in self.rows), default=10)
        lines = [f"suite {self.name}: {'PASS' if self.passed else 'FAIL'} ({self.seconds:.1f}s)"]
        for k, v in self.rows:
            if isinstance(v, float):
                v = f"{v:.6g}"
            lines.append(f"  {k:<{width}}  {v}")
        return "\n".join(lines)


def _problem_forest(problem: str):
    from .forest import load_initial
    return load_initial(CATALOG[problem].mesh_text)


# ------------------------------------------------------------- conformity
def suite_conformity(n: int = 1000, seed: int = 0, restart_every: int = 100) -> SuiteResult:
    rng = random.Random(seed)
    violations = 0
    steps = 0
    largest = 0
    for problem in FIXTURE_PROBLEMS:
        forest = _problem_forest(problem)
        tri = Triangulation.bottom(forest)
        for i in range(n):
            if i % restart_every == 0:
                tri = Triangulation.bottom(forest)
            tri = random_refinement(tri, rng, rng.randint(1, 3))
            steps += 1
            largest = max(largest, len(tri))
            try:
                check_conforming(tri)
                pop_mod.check_population(forest, tri.population.members)
            except (NonConforming, NotAPopulation):
                violations += 1
                continue
            if matching_violations(tri):
                violations += 1
    return SuiteResult("conformity", violations == 0,
                       [("steps", steps), ("violations", violations), ("largest mesh", largest)])


# -------------------------------------------------------- energy identity
def identity_defect(lhs: float, rhs: float, scale: float) -> float | None:
    """Relative defect of the energy identity, or None for an unchanged space.

    Refining only next to the boundary can leave the discrete space as it
    was; then both sides are pure rounding noise of size ``eps * |J|`` and a
    relative defect would be meaningless.
    """
    noise = 1e-14 * max(abs(scale), 1e-300)
    if abs(lhs) <= noise and abs(rhs) <= noise:
        return None
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs))


def suite_energy_identity(n: int = 100, seed: int = 0, problem: str = "lshape-ones") -> SuiteResult:
    rng = random.Random(seed)
    forest = _problem_forest(problem)
    src = CATALOG[problem].source
    defects = []
    unchanged = 0
    for _ in range(n):
        coarse, fine = random_nested_pair(forest, rng)
        sc, sf = fem.solve(coarse, src), fem.solve(fine, src)
        lhs, rhs = fem.energy_diff_identity(sc, sf)
        d = identity_defect(lhs, rhs, fem.dirichlet_energy(sc))
        if d is None:
            unchanged += 1
        else:
            defects.append(d)
    worst = max(defects, default=0.0)
    return SuiteResult("energy-identity", worst <= 1e-9,
                       [("pairs", n), ("unchanged discrete space", unchanged),
                        ("max relative defect", worst)], {"defects": defects})


# ------------------------------------------------------------ energy gain
def suite_energy_gain(n: int = 200, seed: int = 0,
                      problems: tuple[str, ...] = FIXTURE_PROBLEMS) -> SuiteResult:
    rng = random.Random(seed)
    rows: list[tuple[str, object]] = []
    ok = True
    samples = {}
    for problem in problems:
        forest = _problem_forest(problem)
        src = CATALOG[problem].source
        ratios = []
        exceptions = 0
        equal_pairs = 0
        for i in range(n):
            coarse, fine = random_nested_pair(forest, rng)
            if i % 20 == 0:
                fine = coarse
            sc, sf = fem.solve(coarse, src), fem.solve(fine, src)
            g = energy_gain_check(sc, sf)
            if (g.gain > 0) != (g.est_refined > 0):
                exceptions += 1
            if g.ratio is not None:
                ratios.append(g.ratio)
            else:
                equal_pairs += 1
        lo, hi = (min(ratios), max(ratios)) if ratios else (math.nan, math.nan)
        band_ok = bool(ratios) and lo >= 1e-3 and hi <= 1e3
        ok &= exceptions == 0 and band_ok
        samples[problem] = ratios
        rows += [(f"{problem} pairs", n), (f"{problem} positivity exceptions", exceptions),
                 (f"{problem} zero-gain pairs", equal_pairs),
                 (f"{problem} ratio min", lo), (f"{problem} ratio max", hi),
                 (f"{problem} bandwidth hi/lo", hi / lo if ratios else math.nan)]
    return SuiteResult("energy-gain", ok, rows, samples)


# --------------------------------------------------------------- diamonds
@dataclass
class DiamondSample:
    size: int
    flank_ok: bool
    ratio: float          # sum_j |u_v - u_j|^2 / |u_v - u_^|^2
    max_flank_excess: float
    h_ratio: float        # sum_j (H_j - H_v) / (H_^ - H_v)
    g_ratio: float


def diamond_sample(diamond, source, cg_tol: float = 1e-12) -> DiamondSample | None:
    def solve(pop):
        tri = Triangulation.from_population(pop)
        return fem.solve(tri, source, cg_tol)

    top = solve(diamond.top)
    bot = solve(diamond.bottom)
    d_tb = fem.h1_distance2(bot, top)
    if d_tb <= 0.0:
        return None
    eh_top, eh_bot = fem.total_energy(top), fem.total_energy(bot)
    dists, dh, dg = [], [], []
    excess = 0.0
    for flank in diamond.flanks:
        sj = solve(flank)
        dj = fem.h1_distance2(sj, top)
        dists.append(dj)
        excess = max(excess, (math.sqrt(dj) - math.sqrt(d_tb)) / math.sqrt(d_tb))
        ej = fem.total_energy(sj)
        dh.append(ej.H - eh_top.H)
        dg.append(ej.G - eh_top.G)
    h_den = eh_bot.H - eh_top.H
    g_den = eh_bot.G - eh_top.G
    return DiamondSample(len(diamond.flanks), excess <= 1e-9, math.fsum(dists) / d_tb, excess,
                         math.fsum(dh) / h_den if h_den > 0 else math.nan,
                         math.fsum(dg) / g_den if g_den > 0 else math.nan)


def suite_diamonds(n: int = 100, seed: int = 0, sizes: tuple[int, ...] = (2, 3, 4, 5, 6),
                   problems: tuple[str, ...] = FIXTURE_PROBLEMS) -> SuiteResult:
    rng = random.Random(seed)
    samples: list[DiamondSample] = []
    skipped = 0
    attempts = 0
    while len(samples) < n and attempts < 20 * n:
        attempts += 1
        problem = problems[attempts % len(problems)]
        forest = _problem_forest(problem)
        src = CATALOG[problem].source
        top = random_triangulation(forest, rng, rng.randint(3, 10), rng.randint(1, 4))
        m = sizes[len(samples) % len(sizes)]
        try:
            d = random_lower_diamond(top.population, m, rng)
        except CannotPlace:
            skipped += 1
            continue
        s = diamond_sample(d, src)
        if s is None:
            skipped += 1
            continue
        samples.append(s)
    flank_fail = sum(not s.flank_ok for s in samples)
    ratios = [s.ratio for s in samples]
    below_inv_m = sum(s.ratio < 1.0 / s.size * (1 - 1e-9) for s in samples)
    above_m = sum(s.ratio > s.size * (1 + 1e-9) for s in samples)
    r_min = min(ratios) if ratios else math.nan
    ok = len(samples) >= n and flank_fail == 0 and r_min >= 1e-3 and below_inv_m == 0 and above_m == 0
    hr = [s.h_ratio for s in samples if not math.isnan(s.h_ratio)]
    gr = [s.g_ratio for s in samples if not math.isnan(s.g_ratio)]
    rows = [("diamonds", len(samples)), ("skipped", skipped),
            ("flank inequality failures", flank_fail),
            ("max flank excess", max((s.max_flank_excess for s in samples), default=math.nan)),
            ("ratio min", r_min), ("ratio max", max(ratios, default=math.nan)),
            ("ratio < 1/m", below_inv_m), ("ratio > m", above_m),
            ("H ratio min", min(hr, default=math.nan)), ("H ratio max", max(hr, default=math.nan)),
            ("G ratio min", min(gr, default=math.nan)), ("G ratio max", max(gr, default=math.nan))]
    return SuiteResult("diamonds", ok, rows, {"samples": samples})


# -------------------------------------------------------------- free nodes
class DiversityTable:
    """Cached ``genetic_diversity(k)`` per forest."""

    def __init__(self, forest):
        self.forest = forest
        self._v: dict[int, int] = {}

    def __call__(self, k: int) -> int:
        if k not in self._v:
            self._v[k] = pop_mod.genetic_diversity(self.forest, max(k, 1))
        return self._v[k]


def suite_free_nodes(n: int = 500, seed: int = 0) -> SuiteResult:
    rng = random.Random(seed)
    violations = 0
    worst = 0.0
    tables = {p: DiversityTable(_problem_forest(p)) for p in FIXTURE_PROBLEMS}
    cgd_seen = set()
    for i in range(n):
        problem = FIXTURE_PROBLEMS[i % 2]
        table = tables[problem]
        forest = table.forest
        tri = random_triangulation(forest, rng, rng.randint(1, 8), rng.randint(1, 3))
        added = sorted(tri.population.added())
        # V: a random subset of the added persons, U: a random subset of V
        v = [p for p in added if rng.random() < rng.choice((0.3, 0.7, 1.0))] or added[:1]
        u = [p for p in v if rng.random() < rng.random()]
        kmax = max(forest.vgen[p] for p in v)
        c_gd = table(kmax)
        cgd_seen.add(c_gd)
        fu = len(pop_mod.free(forest, u))
        fv = len(pop_mod.free(forest, v))
        if fu > c_gd * fv:
            violations += 1
        if fv:
            worst = max(worst, fu / fv)
    return SuiteResult("free-nodes", violations == 0,
                       [("instances", n), ("violations", violations),
                        ("max #free(U)/#free(V)", worst), ("c_GD values used", sorted(cgd_seen))])


# ---------------------------------------------------------------- marking
def suite_marking(max_dofs: int = 100_000, problems: tuple[str, ...] = ("square-ones", "square-sin", "lshape-ones"),
                  markers: tuple[str, ...] = ("reference", "linear"), mu: float = 0.5) -> SuiteResult:
    rows = []
    ok = True
    for problem in problems:
        for marker in markers:
            try:
                res = run(AfemConfig(problem=problem, mu=mu, marker=marker, max_dofs=max_dofs,
                                     check_guarantees=True))
                rows.append((f"{problem}/{marker} iterations", len(res.records)))
            except GuaranteeViolated as exc:
                ok = False
                rows.append((f"{problem}/{marker}", f"violated: {exc}"))
    return SuiteResult("marking", ok, rows)


# ------------------------------------------------------------- complexity
def suite_complexity(max_dofs: int = 100_000, problems: tuple[str, ...] = ("square-ones", "square-sin", "lshape-ones"),
                     markers: tuple[str, ...] = ("reference", "linear"), mu: float = 0.5,
                     bound: float = 50.0) -> SuiteResult:
    rows = []
    ok = True
    for problem in problems:
        for marker in markers:
            res = run(AfemConfig(problem=problem, mu=mu, marker=marker, max_dofs=max_dofs))
            audit = complexity_audit(res)
            top = audit[-1] if audit else 0.0
            ok &= top < bound
            rows.append((f"{problem}/{marker} running max", top))
    return SuiteResult("complexity", ok, rows)


# -------------------------------------------------------------- optimality
def optimality_constant(m_max: int = 6, mu: float = 0.5, marker: str = "linear",
                        problem: str = "square-ones", max_dofs: int = 2000,
                        max_iters: int = 100) -> tuple:
    prob = CATALOG[problem]
    from .forest import load_initial
    forest = load_initial(prob.mesh_text)
    table = g_opt_table(enumerate_populations(forest, m_max), prob.source)
    gopt = [r.gopt for r in table]
    res = run(AfemConfig(problem=problem, mu=mu, marker=marker, max_dofs=max_dofs, max_iters=max_iters))
    n0 = res.records[0].persons
    sizes = [r.persons - n0 for r in res.records]
    energies = [r.G for r in res.records]
    return energy_optimality_check(sizes, energies, gopt), table, res


def suite_optimality(m_max: int = 6, mu: float = 0.5, bound: int = 16) -> SuiteResult:
    rep, table, _ = optimality_constant(m_max, mu, "linear")
    rep_ref, _, _ = optimality_constant(m_max, mu, "reference")
    ctrl, _, _ = optimality_constant(m_max, mu, "smallest")
    c_ctrl = math.inf if ctrl.C is None else ctrl.C
    ok = (rep.C is not None and rep.C <= bound and rep_ref.C is not None and rep_ref.C <= bound
          and c_ctrl > max(rep.C, rep_ref.C))
    rows = [("m_max", m_max), ("G_opt", [round(r.gopt, 6) for r in table]),
            ("C (linear)", rep.C), ("C (reference)", rep_ref.C), ("C (smallest control)", c_ctrl)]
    return SuiteResult("optimality", ok, rows)


# ---------------------------------------------------------------- scaling
def _geometric_indicators(tri: Triangulation):
    """Smooth, graded indicator field: the element term of ``f = 1`` summed over each side's patch."""
    import numpy as np
    mesh = tri.mesh
    elem = mesh.area ** 2
    et = mesh.edge_tris
    return elem[et[:, 0]] + np.where(et[:, 1] >= 0, elem[np.maximum(et[:, 1], 0)], 0.0)


def mark_scaling(max_persons: int = 1_000_000, base_dofs: int = 800, problem: str = "lshape-ones",
                 mu: float = 0.5, repeats: int = 3) -> tuple[list[int], list[float]]:
    """Best-of timings of ``mark_linear`` on a graded mesh refined uniformly twice per step.

    The base mesh is an adaptive one, so every size keeps the corner grading.
    Larger meshes are released before the next one is built to bound memory.
    """
    import gc
    from .estimator import CandidateGraph
    from .marking import mark_linear
    from .triangulation import double_refine
    tri = run(AfemConfig(problem=problem, mu=mu, max_dofs=base_dofs)).final
    sizes, times = [], []
    while True:
        graph = CandidateGraph.from_tri(tri)
        est = _geometric_indicators(tri)
        best = math.inf
        for _ in range(repeats if tri.n_persons < max_persons // 16 else 1):
            for cached in ("children_lists", "parent_lists"):
                graph.__dict__.pop(cached, None)
            gc.collect()
            t = time.perf_counter()
            mark_linear(graph, est, mu)
            best = min(best, time.perf_counter() - t)
        sizes.append(tri.n_persons)
        times.append(best)
        del graph, est
        if 4 * tri.n_persons > max_persons * 1.1:   # each double refinement roughly quadruples
            break
        tri = double_refine(tri)
    return sizes, times


def suite_scaling(max_persons: int = 1_000_000) -> SuiteResult:
    from .driver import loglog_slope
    sizes, times = mark_scaling(max_persons)
    slope = loglog_slope(sizes, times)
    rows = [("persons", sizes), ("seconds", [round(t, 4) for t in times]), ("log-log slope", slope)]
    return SuiteResult("scaling", abs(slope - 1.0) <= 0.3, rows, {"sizes": sizes, "times": times})


SUITES: dict[str, Callable[..., SuiteResult]] = {
    "conformity": lambda n, seed: suite_conformity(n or 1000, seed),
    "energy-identity": lambda n, seed: suite_energy_identity(n or 100, seed),
    "energy-gain": lambda n, seed: suite_energy_gain(n or 200, seed),
    "diamonds": lambda n, seed: suite_diamonds(n or 100, seed),
    "free-nodes": lambda n, seed: suite_free_nodes(n or 500, seed),
    "marking": lambda n, seed: suite_marking(n or 100_000),
    "complexity": lambda n, seed: suite_complexity(n or 100_000),
    "optimality": lambda n, seed: suite_optimality(n or 6),
    "scaling": lambda n, seed: suite_scaling(n or 1_000_000),
}


def run_suite(name: str, n: int | None = None, seed: int = 7) -> SuiteResult:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    t = time.perf_counter()
    res = SUITES[name](n, seed)
    res.seconds = time.perf_counter() - t
    return res
