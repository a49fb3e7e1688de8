import itertools

import numpy as np
import pytest

import oracles
from keyagree.channel import (AuxScheme, build_joint_nofb, noiseless_binary, product_channel,
                              random_aux_scheme, random_channel)
from keyagree.prob import PMFError, marginalize, random_joint
from keyagree.region_nofb import (InnerPointNofb, OuterBox, SearchBudget, check_containment,
                                  eval_inner_nofb, eval_outer_nofb, maximize_inner_nofb,
                                  maximize_outer_nofb, polytope_weighted_max, positive_part)

I2 = np.eye(2)
FIELDS = ("r0", "r1", "r2", "r0_plus_r1", "r0_plus_r2", "r0_plus_r1_plus_r2")
SMALL = SearchBudget(restarts=4, iterations=60, seed=1)


def u0_equals_x_scheme(ns=1):
    px = np.zeros((ns, 2, 1, 1, 2))
    px[:, 0, 0, 0, 0] = px[:, 1, 0, 0, 1] = 1
    return AuxScheme.from_arrays(np.full((ns, 2), 0.5), np.ones((ns, 2, 1)),
                                 np.ones((ns, 2, 1)), px)


def all_see_x():
    ident = I2[:, None, :]
    return product_channel([1.0], ident, ident, ident)


# ---------------------------------------------------------------- oracle checks first

@pytest.mark.parametrize("seed", range(8))
def test_inner_matches_brute_force(seed):
    rng = np.random.default_rng([31, seed])
    ch = random_channel(rng, ns=2, nx=3)
    joint = build_joint_nofb(ch, random_aux_scheme(rng, ch, n0=3))
    got = eval_inner_nofb(joint)
    ref, slacks = oracles.inner_nofb(joint.names, joint.mass)
    for f in FIELDS:
        assert getattr(got, f) == pytest.approx(ref[f], abs=1e-9)
    assert np.allclose(got.constraint_slacks, slacks, atol=1e-9)
    assert got.feasible == all(s >= -1e-9 for s in slacks)


@pytest.mark.parametrize("seed", range(8))
def test_outer_matches_brute_force(seed):
    rng = np.random.default_rng([32, seed])
    ch = random_channel(rng)
    joint = marginalize(build_joint_nofb(ch, random_aux_scheme(rng, ch)),
                        ["S", "X", "Y1", "Y2", "Z"])
    got = eval_outer_nofb(joint, ch)
    ref = oracles.outer_nofb(joint.names, joint.mass)
    assert (got.r0_max, got.r1_max, got.r2_max) == pytest.approx(ref, abs=1e-9)


def test_inner_optimizer_beats_grid_oracle():
    """|S| = 1, |U0| = 2, trivial U1 and U2: grid over p(u0) and p(x|u0)."""
    ch = random_channel(np.random.default_rng(33), ns=1)
    ticks = np.linspace(0, 1, 21)
    best = 0.0
    for a, b, c in itertools.product(ticks, repeat=3):
        px = np.array([[b, 1 - b], [c, 1 - c]]).reshape(1, 2, 1, 1, 2)
        sc = AuxScheme.from_arrays([[a, 1 - a]], np.ones((1, 2, 1)), np.ones((1, 2, 1)), px)
        p = eval_inner_nofb(build_joint_nofb(ch, sc))
        if p.feasible:
            best = max(best, p.axis_maxima()[0])
    rep = maximize_inner_nofb(ch, cards=(2, 1, 1), weights=(1, 0, 0),
                              budget=SearchBudget(restarts=8, iterations=200, seed=0))
    assert rep.objective >= best - 1e-3


def test_outer_optimizer_matches_grid_oracle():
    ch = random_channel(np.random.default_rng(34))
    ticks = np.linspace(0, 1, 51)
    grid = np.zeros(3)
    for a, b in itertools.product(ticks, repeat=2):
        px = np.array([[a, 1 - a], [b, 1 - b]])
        m = np.transpose(ch.W, (1, 0, 2, 3, 4)) * (ch.p_s[:, None] * px)[:, :, None, None, None]
        joint = random_joint(np.random.default_rng(0), m.shape, ["S", "X", "Y1", "Y2", "Z"])
        joint = type(joint)(joint.variables, m)
        box = eval_outer_nofb(joint)
        grid = np.maximum(grid, [box.r0_max, box.r1_max, box.r2_max])
    got = maximize_outer_nofb(ch)
    assert np.allclose([got.r0_max, got.r1_max, got.r2_max], grid, atol=1e-3)
    assert np.all(np.array([got.r0_max, got.r1_max, got.r2_max]) >= grid - 1e-12)


# ---------------------------------------------------------------- documented examples

@pytest.mark.parametrize("x, expect", [(0.3, 0.3), (-0.3, 0.0), (0.0, 0.0)])
def test_positive_part(x, expect):
    assert positive_part(x) == expect


def test_inner_noiseless_example():
    p = eval_inner_nofb(build_joint_nofb(noiseless_binary(), u0_equals_x_scheme()))
    assert p.r0 == pytest.approx(1.0) and p.r1 == 0 and p.r2 == 0
    assert p.feasible and min(p.constraint_slacks) >= 0


def test_inner_all_zero_when_eavesdropper_sees_everything():
    rng = np.random.default_rng(35)
    ch = all_see_x()
    p = eval_inner_nofb(build_joint_nofb(ch, random_aux_scheme(rng, ch)))
    assert all(getattr(p, f) == pytest.approx(0, abs=1e-12) for f in FIELDS)


def test_inner_rejects_wrong_variables():
    with pytest.raises(PMFError):
        eval_inner_nofb(random_joint(np.random.default_rng(0), [2, 2], ["A", "B"]))


def test_outer_noiseless_example():
    joint = marginalize(build_joint_nofb(noiseless_binary(), u0_equals_x_scheme()),
                        ["S", "X", "Y1", "Y2", "Z"])
    box = eval_outer_nofb(joint)
    assert box.r0_max == pytest.approx(1.0) and box.r1_max == pytest.approx(0, abs=1e-12)


def test_outer_zero_when_z_equals_outputs():
    joint = marginalize(build_joint_nofb(all_see_x(), u0_equals_x_scheme()),
                        ["S", "X", "Y1", "Y2", "Z"])
    box = eval_outer_nofb(joint)
    assert max(box.r0_max, box.r1_max, box.r2_max) == pytest.approx(0, abs=1e-12)


def test_outer_rejects_inconsistent_joint():
    joint = marginalize(build_joint_nofb(noiseless_binary(), u0_equals_x_scheme()),
                        ["S", "X", "Y1", "Y2", "Z"])
    with pytest.raises(PMFError):
        eval_outer_nofb(joint, all_see_x())


def test_maximize_inner_zero_when_eavesdropper_sees_everything():
    rep = maximize_inner_nofb(all_see_x(), budget=SMALL)
    assert rep.objective == pytest.approx(0, abs=1e-12)


def test_maximize_inner_noiseless_reaches_one():
    rep = maximize_inner_nofb(noiseless_binary(), weights=(1, 0, 0))
    assert rep.objective >= 1 - 1e-3
    assert check_containment(rep.best_point, rep.outer)


def test_maximize_outer_examples():
    box = maximize_outer_nofb(noiseless_binary())
    assert box.r0_max == pytest.approx(1.0, abs=1e-9)
    zero = maximize_outer_nofb(all_see_x())
    assert max(zero.r0_max, zero.r1_max, zero.r2_max) == pytest.approx(0, abs=1e-12)


def test_search_budget_validation():
    with pytest.raises(ValueError):
        SearchBudget(restarts=0)
    with pytest.raises(ValueError):
        maximize_inner_nofb(noiseless_binary(), weights=(0, 0, 0), budget=SMALL)


def test_containment_examples():
    zero = InnerPointNofb(0, 0, 0, 0, 0, 0, True, (0, 0, 0, 0))
    one = InnerPointNofb(1, 0, 0, 1, 1, 1, True, (0, 0, 0, 0))
    assert check_containment(zero, OuterBox(0.3, 0.1, 0.0))
    assert check_containment(one, OuterBox(1, 0, 0))
    assert not check_containment(one, OuterBox(0.9, 0, 0))


def test_containment_uses_reachable_maxima():
    # r1 alone exceeds the box but the sum constraints cap R1 below it
    p = InnerPointNofb(0.5, 0.8, 0.0, 0.3, 0.5, 0.3, True, (0, 0, 0, 0))
    assert p.axis_maxima() == (0.3, 0.3, 0.0)
    assert check_containment(p, OuterBox(0.3, 0.3, 0.0))


def test_weighted_max_against_vertex_grid():
    rng = np.random.default_rng(36)
    for _ in range(20):
        v = np.sort(rng.random(6))
        p = InnerPointNofb(v[0], v[1], v[2], v[3], v[4], v[5], True, (0, 0, 0, 0))
        w = rng.random(3)
        val, pt = polytope_weighted_max(p, w)
        assert p.contains(pt, tol=1e-9)
        ticks = np.linspace(0, 1, 41)
        best = max((w @ r for r in itertools.product(ticks, repeat=3) if p.contains(r, 0)),
                   default=0.0)
        assert val >= best - 1e-12
        assert val == pytest.approx(float(w @ np.array(pt)), abs=1e-12)


# ---------------------------------------------------------------- properties

@pytest.mark.parametrize("seed", range(5))
def test_garbling_eavesdropper_never_hurts(seed):
    rng = np.random.default_rng([37, seed])
    ch = random_channel(rng)
    sc = random_aux_scheme(rng, ch)
    G = rng.dirichlet(np.ones(3), size=2)                     # z -> z'
    W2 = np.einsum("xsabz,zw->xsabw", ch.W, G)
    garbled = type(ch).from_arrays(ch.p_s, W2)
    a = eval_inner_nofb(build_joint_nofb(ch, sc))
    b = eval_inner_nofb(build_joint_nofb(garbled, sc))
    for f in FIELDS:
        assert getattr(b, f) >= getattr(a, f) - 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_relabeling_auxiliaries_is_invariant(seed):
    rng = np.random.default_rng([38, seed])
    ch = random_channel(rng)
    sc = random_aux_scheme(rng, ch, n0=3, n1=2, n2=3)
    pu0, pu1, pu2, px = sc.arrays
    p0, p1, p2 = rng.permutation(3), rng.permutation(2), rng.permutation(3)
    perm = AuxScheme.from_arrays(pu0[:, p0], pu1[:, p0][:, :, p1], pu2[:, p0][:, :, p2],
                                 px[:, p0][:, :, p1][:, :, :, p2])
    a = eval_inner_nofb(build_joint_nofb(ch, sc))
    b = eval_inner_nofb(build_joint_nofb(ch, perm))
    for f in FIELDS:
        assert getattr(a, f) == pytest.approx(getattr(b, f), abs=1e-12)


def test_optimizer_deterministic_across_workers():
    ch = random_channel(np.random.default_rng(39))
    budget = dict(restarts=3, iterations=30, seed=5)
    a = maximize_inner_nofb(ch, budget=SearchBudget(**budget, workers=1))
    b = maximize_inner_nofb(ch, budget=SearchBudget(**budget, workers=2))
    assert a.to_dict() == b.to_dict()
    assert [i for i, _ in a.search_trace] == [0, 1, 2]
