import random
from fractions import Fraction as F

import pytest
from hypothesis import given, settings, strategies as st

from afem import fem
from afem.errors import GuaranteeViolated
from afem.estimator import CandidateGraph, edge_indicators
from afem.fem import CATALOG, constant_source
from afem.forest import SCALE, load_initial
from afem.marking import (MarkOutcome, accumulated, guarantee_check, mark, mark_linear,
                          mark_reference, mark_smallest, max_accumulated, max_ind, trace_csv)
from afem.oracle import random_triangulation
from afem.triangulation import Triangulation, edge_keys, refine, refine_by_mask


ONES = constant_source(1.0)


def setup(forest, tri=None, source=ONES):
    tri = tri or Triangulation.bottom(forest)
    field = edge_indicators(fem.solve(tri, source))
    return tri, field, CandidateGraph.from_tri(tri)


def persons(tri, idx):
    f = tri.forest
    e = tri.mesh.edges
    return {(F(f.vx[e[i, 0]] + f.vx[e[i, 1]], 2 * SCALE), F(f.vy[e[i, 0]] + f.vy[e[i, 1]], 2 * SCALE))
            for i in idx}


CENTRE, LEFT = (F(1, 2), F(1, 2)), (F(0), F(1, 2))
BOUNDARY = {(F(1, 2), F(0)), (F(1), F(1, 2)), (F(1, 2), F(1)), LEFT}


def test_accumulated_values(unit2):
    tri, field, graph = setup(unit2)
    acc = {persons(tri, [i]).pop(): v for i, v in enumerate(accumulated(graph, field.est2))}
    assert acc[CENTRE] == pytest.approx(0.5)
    assert all(acc[b] == pytest.approx(0.75) for b in BOUNDARY)
    assert max_accumulated(graph, field.est2) == pytest.approx(0.75)
    assert max_ind(graph, field.est2) == pytest.approx(0.75)


def test_reference_trace_at_mu_one(unit2):
    tri, field, graph = setup(unit2)
    out = mark_reference(graph, field.est2, 1.0)
    assert persons(tri, out.marked) == {LEFT}
    assert persons(tri, out.closure) == {CENTRE, LEFT}
    first, second = out.trace[:2]
    assert persons(tri, [first[0]]) == {CENTRE} and first[2] == "skipped"
    assert persons(tri, [second[0]]) == {LEFT} and second[2] == "marked"
    assert second[1] == pytest.approx(0.75)
    assert guarantee_check(graph, field.est2, out, 1.0)


def test_linear_trace_at_mu_one(unit2):
    # the running accumulation restarts at zero after the first boundary mark,
    # so the remaining boundary midpoints only collect their own 0.25
    tri, field, graph = setup(unit2)
    out = mark_linear(graph, field.est2, 1.0, record_trace=True)
    assert out.max_indicator == pytest.approx(0.75)
    assert persons(tri, out.marked) == {LEFT}
    assert persons(tri, out.closure) == {CENTRE, LEFT}
    decisions = {next(iter(persons(tri, [i]))): (v, d) for i, v, d in out.trace}
    assert decisions[CENTRE] == (pytest.approx(0.5), "skipped")
    others = BOUNDARY - {LEFT}
    assert all(decisions[b] == (pytest.approx(0.25), "skipped") for b in others)
    assert guarantee_check(graph, field.est2, out, 1.0)


def test_small_mu_marks_many(unit2):
    tri, field, graph = setup(unit2)
    for out in (mark_reference(graph, field.est2, 0.01), mark_linear(graph, field.est2, 0.01, record_trace=True)):
        assert out.n_marked >= 4
        for i, v, d in out.trace:
            if d != "claimed":
                assert (d == "marked") == (v >= 0.0075)
        assert guarantee_check(graph, field.est2, out, 0.01)


def test_zero_indicators_converge(unit2):
    tri, field, graph = setup(unit2, Triangulation.uniform(unit2, 3), CATALOG["square-zero"].source)
    for variant in ("reference", "linear", "smallest"):
        out = mark(tri, field, 0.5, variant, graph=graph)
        assert out.converged and out.marked == [] and not out.closure
        assert guarantee_check(graph, field.est2, out, 0.5)


def test_empty_mark_on_positive_indicators_is_a_violation(unit2):
    tri, field, graph = setup(unit2)
    bogus = MarkOutcome([], set(), 0.75, "reference", 0.5)
    with pytest.raises(GuaranteeViolated):
        guarantee_check(graph, field.est2, bogus, 0.5)


def test_wrong_closure_is_a_violation(unit2):
    tri, field, graph = setup(unit2)
    out = mark_reference(graph, field.est2, 1.0)
    out.closure = set(out.marked)
    with pytest.raises(GuaranteeViolated):
        guarantee_check(graph, field.est2, out, 1.0)


def test_mu_range(unit2):
    tri, field, graph = setup(unit2)
    for mu in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            mark_reference(graph, field.est2, mu)
        with pytest.raises(ValueError):
            mark_linear(graph, field.est2, mu)
    with pytest.raises(ValueError):
        mark(tri, field, 0.5, "bulk")


def test_refining_the_closure_removes_its_sides(lshape):
    rng = random.Random(3)
    tri = random_triangulation(lshape, rng, 5, 2)
    tri, field, graph = setup(lshape, tri)
    for variant in ("reference", "linear"):
        out = mark(tri, field, 0.5, variant, graph=graph)
        fine = refine_by_mask(tri, out.closure_mask(graph.n))
        keys = edge_keys(fine)
        e = tri.mesh.edges
        assert all((int(e[i, 0]), int(e[i, 1])) not in keys for i in out.closure)
        marked_keys = [(int(e[i, 0]), int(e[i, 1])) for i in out.marked]
        assert refine(tri, marked_keys) == fine
        assert fine.population.members == tri.population.members | out.closure_persons(tri)


def test_double_parent_persons_have_no_candidate_children(lshape):
    rng = random.Random(21)
    found = 0
    for _ in range(30):
        tri = random_triangulation(lshape, rng, rng.randint(2, 8), 3)
        graph = CandidateGraph.from_tri(tri)
        for i in range(graph.n):
            if len(graph.parents(i)) == 2:
                found += 1
                assert graph.children(i) == []
    assert found > 0


def test_random_orders_keep_the_guarantee(lshape):
    tri = random_triangulation(lshape, random.Random(5), 6, 3)
    tri, field, graph = setup(lshape, tri)
    rng = random.Random(0)
    for _ in range(10):
        order = list(range(graph.n))
        rng.shuffle(order)
        out = mark_reference(graph, field.est2, 0.5, order=order)
        assert guarantee_check(graph, field.est2, out, 0.5)


def test_negative_control_marks_one_smallest(unit2):
    tri, field, graph = setup(unit2)
    out = mark_smallest(graph, field.est2)
    assert out.n_marked == 1
    assert field.est2[out.marked[0]] == field.est2.min()


def test_trace_csv(unit2):
    tri, field, graph = setup(unit2)
    out = mark_reference(graph, field.est2, 1.0)
    lines = trace_csv(tri, out).splitlines()
    assert lines[0] == "x,y,value,decision"
    assert lines[1] == "1/2,1/2,0.5,skipped"
    assert lines[2] == "0,1/2,0.75,marked"


# ------------------------------------------------------------ properties
@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["square-ones", "square-sin", "lshape-ones"]),
       st.integers(0, 2 ** 32 - 1), st.sampled_from([0.1, 0.25, 0.5, 0.9, 1.0]))
def test_guarantees_on_random_meshes(problem, seed, mu):
    prob = CATALOG[problem]
    forest = load_initial(prob.mesh_text)
    rng = random.Random(seed)
    tri = random_triangulation(forest, rng, rng.randint(0, 10), rng.randint(1, 3))
    tri, field, graph = setup(forest, tri, prob.source)
    ebar = max_accumulated(graph, field.est2)
    ref = mark_reference(graph, field.est2, mu)
    lin = mark_linear(graph, field.est2, mu)
    assert guarantee_check(graph, field.est2, ref, mu, ebar=ebar)
    assert guarantee_check(graph, field.est2, lin, mu, ebar=ebar)
    assert set(ref.marked) <= ref.closure and set(lin.marked) <= lin.closure
    assert lin.max_indicator <= ebar * (1 + 1e-12)
