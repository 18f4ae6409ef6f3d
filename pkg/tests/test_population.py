import random
from fractions import Fraction as F

import pytest
from hypothesis import given, settings, strategies as st

from afem import population as pm
from afem.errors import NotAPopulation
from afem.forest import FIXTURES, load_initial
from afem.oracle import random_triangulation
from afem.population import Diamond, Population
from afem.triangulation import Triangulation

from conftest import level, vid
from oracles import all_populations_between


def corners(forest):
    return frozenset(range(4))


@pytest.fixture
def u2(unit2):
    level(unit2, 4)          # materialise persons up to generation 4
    return unit2


def test_bottom_is_corners(u2):
    assert pm.bottom(u2).members == corners(u2)
    assert Triangulation.bottom(u2).population.members == corners(u2)


def test_genealogy_of_small_persons(u2):
    c = vid(u2, F(1, 2), F(1, 2))
    b = vid(u2, F(1, 2), 0)
    assert pm.parents(u2, c) == tuple(sorted((vid(u2, 1, 0), vid(u2, 0, 1))))
    assert pm.parents(u2, b) == (c,)
    assert pm.ancestors(u2, b) == {c, vid(u2, 1, 0), vid(u2, 0, 1)}
    assert set(pm.children(u2, c)) == {vid(u2, F(1, 2), 0), vid(u2, 1, F(1, 2)),
                                        vid(u2, F(1, 2), 1), vid(u2, 0, F(1, 2))}
    assert len(pm.children(u2, b)) == 2            # boundary person


@pytest.mark.parametrize("k", [3, 5])
def test_person_invariants(k):
    for name in ("unit2", "lshape"):
        forest = load_initial(FIXTURES[name])
        for p in pm.persons_up_to(forest, k):
            ps = pm.parents(forest, p)
            g = forest.vgen[p]
            assert (g == 0) == (len(ps) == 0)
            if g > 0:
                assert len(ps) == (1 if forest.on_boundary(p) else 2)
                assert all(forest.vgen[q] == g - 1 for q in ps)
                assert len(pm.children(forest, p)) == (2 if forest.on_boundary(p) else 4)


def test_centre_population_is_four_triangles(u2):
    c = vid(u2, F(1, 2), F(1, 2))
    tri = Triangulation.from_population(Population(u2, corners(u2) | {c}))
    assert len(tri) == 4


def test_missing_parent_is_not_a_population(u2):
    b = vid(u2, F(1, 2), 0)
    with pytest.raises(NotAPopulation):
        Triangulation.from_population(Population(u2, corners(u2) | {b}))
    assert not pm.is_population(u2, corners(u2) | {b})


def test_oplus_examples(u2):
    P0 = pm.bottom(u2)
    c, b = vid(u2, F(1, 2), F(1, 2)), vid(u2, F(1, 2), 0)
    assert pm.oplus(P0, {b}).members == P0.members | {c, b}
    assert pm.oplus(P0, set()).members == P0.members


def test_ominus_examples(u2):
    P0 = pm.bottom(u2)
    c, b = vid(u2, F(1, 2), F(1, 2)), vid(u2, F(1, 2), 0)
    P = Population(u2, P0.members | {c, b})
    assert pm.ominus(P, {b}).members == P0.members | {c}
    assert pm.ominus(P, {c}).members == P0.members
    assert pm.ominus(P, set()).members == P.members


def test_meet_join_examples(u2):
    P0 = pm.bottom(u2)
    c = vid(u2, F(1, 2), F(1, 2))
    b, t = vid(u2, F(1, 2), 0), vid(u2, F(1, 2), 1)
    P1, P2 = pm.oplus(P0, {b}), pm.oplus(P0, {t})
    assert pm.meet(P1, P2).members == P0.members | {c}
    assert pm.join(P1, P2).members == P0.members | {c, b, t}
    assert pm.meet(P1, P1) == P1 == pm.join(P1, P1)
    assert pm.meet(P0, P1) == P0


def test_anc_desc_free(u2):
    c, b = vid(u2, F(1, 2), F(1, 2)), vid(u2, F(1, 2), 0)
    assert pm.anc(u2, {b}) == {c, vid(u2, 1, 0), vid(u2, 0, 1)}
    assert pm.free(u2, {c, b}) == {b}
    assert pm.free(u2, set()) == frozenset()
    assert pm.desc(u2, {c}, {c, b}) == {b}
    leaves = {vid(u2, F(1, 2), 0), vid(u2, 0, F(1, 2))}
    assert pm.free(u2, leaves) == leaves


def test_patches(u2):
    c, b = vid(u2, F(1, 2), F(1, 2)), vid(u2, F(1, 2), 0)
    pc = pm.patch(u2, c)
    assert len(pc) == 4 and all(u2.gen(t) == 1 for t in pc)
    assert sum(u2.area(t) for t in pc) == 1
    pb = pm.patch(u2, b)
    assert len(pb) == 2 and all(u2.gen(t) == 2 for t in pb)
    assert all(b in u2.vertices(t) for t in pb)


@pytest.mark.parametrize("name", ["unit2", "lshape"])
def test_same_generation_patches_are_disjoint(name):
    forest = load_initial(FIXTURES[name])
    rng = random.Random(3)
    persons = pm.persons_up_to(forest, 6)
    by_gen = {}
    for p in persons:
        by_gen.setdefault(forest.vgen[p], []).append(p)
    for g, ps in by_gen.items():
        if g == 0:
            continue
        for _ in range(200):
            a, b = rng.sample(ps, 2) if len(ps) > 1 else (ps[0], ps[0])
            if a != b:
                assert not (pm.patch(forest, a) & pm.patch(forest, b))


def test_diamond_examples(u2):
    P0 = pm.bottom(u2)
    b, t = vid(u2, F(1, 2), 0), vid(u2, F(1, 2), 1)
    P1, P2 = pm.oplus(P0, {b}), pm.oplus(P0, {t})
    assert pm.is_lower_diamond(Diamond(P1, P1, (P1,)))
    assert pm.is_lower_diamond(Diamond(pm.meet(P1, P2), pm.join(P1, P2), (P1, P2)))
    assert not pm.is_lower_diamond(Diamond(P0, pm.join(P1, P2), (P1, P2)))


def test_genetic_diversity(u2):
    vals = [pm.genetic_diversity(u2, k) for k in range(1, 13)]
    assert vals[1] >= 2
    assert vals == sorted(vals)
    # the lower estimate still grows at generation 8 and settles from 10 on
    assert vals[7] == 5
    assert vals[9] == vals[10] == vals[11] == 7


def test_partner_chain(u2):
    rng = random.Random(5)
    persons = [p for p in pm.persons_up_to(u2, 7) if u2.vgen[p] >= 3]
    checked = 0
    for p in rng.sample(persons, min(40, len(persons))):
        by_gen = {}
        for q in pm.ancestors(u2, p):
            by_gen.setdefault(u2.vgen[q], []).append(q)
        for g, qs in by_gen.items():
            if g < 1 or len(qs) < 2:
                continue
            a, b = qs[0], qs[1]
            chain = pm.partner_chain(u2, p, a, b)
            assert chain[0] == a and chain[-1] == b
            assert len(chain) - 1 <= u2.vgen[p] - g
            for x, y in zip(chain, chain[1:]):
                assert pm.partners(u2, x, y)
                if g >= 2:
                    assert pm.share_parent(u2, x, y)
            checked += 1
    assert checked > 0
    q = pm.ancestors(u2, persons[0])
    a = next(iter(q))
    assert pm.partner_chain(u2, persons[0], a, a) == [a]


def test_snapshot_format(unit2):
    text = pm.snapshot(pm.bottom(unit2))
    assert text == "0 0 0 0\n1 1 0 0\n2 1 1 0\n3 0 1 0\n"


# ------------------------------------------------------------ properties
seeds = st.integers(0, 2 ** 32 - 1)
fixture_names = st.sampled_from(["unit2", "lshape"])


def _random_pop(forest, seed, steps=None):
    rng = random.Random(seed)
    return random_triangulation(forest, rng, steps if steps is not None else rng.randint(0, 8),
                                rng.randint(1, 3)).population


@settings(max_examples=40, deadline=None)
@given(fixture_names, seeds, seeds, seeds)
def test_lattice_laws(name, s1, s2, s3):
    forest = load_initial(FIXTURES[name])
    a, b, c = (_random_pop(forest, s) for s in (s1, s2, s3))
    assert pm.meet(a, b) == pm.meet(b, a) and pm.join(a, b) == pm.join(b, a)
    assert pm.meet(pm.meet(a, b), c) == pm.meet(a, pm.meet(b, c))
    assert pm.join(pm.join(a, b), c) == pm.join(a, pm.join(b, c))
    assert pm.join(a, pm.meet(a, b)) == a == pm.meet(a, pm.join(a, b))
    for p in (pm.meet(a, b), pm.join(a, b)):
        pm.check_population(forest, p.members)
    assert pm.oplus(a, b.members) == pm.join(a, b)


@settings(max_examples=40, deadline=None)
@given(fixture_names, seeds)
def test_triangulation_bijection(name, seed):
    forest = load_initial(FIXTURES[name])
    rng = random.Random(seed)
    tri = random_triangulation(forest, rng, rng.randint(0, 8), rng.randint(1, 3))
    pop = pm.from_triangulation(tri)
    again = pm.to_triangulation(Population(forest, pop.members))
    assert again == tri


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_oplus_is_least_upper_population(seed):
    forest = load_initial(FIXTURES["unit2"])
    rng = random.Random(seed)
    P = _random_pop(forest, seed, rng.randint(0, 2))
    pool = [p for p in pm.persons_up_to(forest, 4) if p not in P.members]
    C = set(rng.sample(pool, rng.randint(1, 2)))
    got = pm.oplus(P, C)
    need = (pm.anc(forest, C) | C) - P.members
    extra = rng.sample([p for p in pool if p not in need], 3)
    cands = need | set(extra)
    if len(cands) > 12:
        return
    uppers = [s for s in all_populations_between(forest, P.members, cands) if C <= s]
    assert min(uppers, key=len) == got.members
    assert all(got.members <= s for s in uppers)


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_ominus_is_greatest_lower_population(seed):
    forest = load_initial(FIXTURES["unit2"])
    rng = random.Random(seed)
    P = _random_pop(forest, seed, rng.randint(1, 3))
    added = sorted(P.added())
    if not added or len(added) > 12:
        return
    C = set(rng.sample(added, rng.randint(1, min(2, len(added)))))
    got = pm.ominus(P, C)
    base = pm.bottom(forest).members
    lowers = [s for s in all_populations_between(forest, base, added) if not (s & C)]
    assert max(lowers, key=len) == got.members
    assert all(s <= got.members for s in lowers)


@settings(max_examples=40, deadline=None)
@given(fixture_names, seeds)
def test_cardinality_relation(name, seed):
    forest = load_initial(FIXTURES[name])
    rng = random.Random(seed)
    coarse = random_triangulation(forest, rng, rng.randint(0, 5), 2)
    fine = random_triangulation(forest, rng, rng.randint(0, 5), 2, start=coarse)
    dp = len(fine.population) - len(coarse.population)
    dt = len(fine) - len(coarse)
    assert dp <= dt <= 2 * dp


@settings(max_examples=30, deadline=None)
@given(fixture_names, seeds)
def test_descendant_free_ancestor_sets_are_small(name, seed):
    forest = load_initial(FIXTURES[name])
    rng = random.Random(seed)
    persons = [p for p in pm.persons_up_to(forest, 6) if forest.vgen[p] >= 2]
    p = rng.choice(persons)
    pool = sorted(pm.ancestors(forest, p) - pm.bottom(forest).members)
    U = pm.free(forest, rng.sample(pool, rng.randint(1, len(pool))))
    assert len(U) <= pm.genetic_diversity(forest, forest.vgen[p])


def test_partner_chain_rejects_non_ancestors(u2):
    c = vid(u2, F(1, 2), F(1, 2))
    with pytest.raises(ValueError):
        pm.partner_chain(u2, c, 0, 1)
