import itertools
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from keyagree.channel import FeedbackScheme, build_joint_fb, product_channel, random_channel, \
    random_fb_scheme
from keyagree.prob import PMFError, entropy, random_joint
from keyagree.region_fb import (LITERAL_SECOND_LINE, LinearInequalitySystem,
                                build_fb_constraints, eval_inner_fb, fb_entropies, fm_eliminate,
                                project_fb_region, to_rational, verify_fm_matches_closed_form)

I2 = np.eye(2)
ONE = np.ones((2, 1, 1))


def single_receiver_joint():
    """|S| = 1, Y1 = X noiseless, Y2 and Z constant, X uniform, V1 = Y1."""
    ch = product_channel([1.0], I2[:, None, :], ONE, ONE)
    return build_joint_fb(ch, FeedbackScheme.from_arrays([[0.5, 0.5]], I2, np.ones((1, 1))))


def constant_v_joint(seed=0):
    ch = random_channel(np.random.default_rng(seed))
    sc = FeedbackScheme.from_arrays([[0.5, 0.5], [0.2, 0.8]], np.ones((2, 1)), np.ones((2, 1)))
    return build_joint_fb(ch, sc)


def random_fb_joint(seed):
    rng = np.random.default_rng(seed)
    ch = random_channel(rng)
    return build_joint_fb(ch, random_fb_scheme(rng, ch))


# ---------------------------------------------------------------- oracle checks first

@pytest.mark.parametrize("seed", range(8))
def test_closed_form_matches_brute_force(seed):
    joint = random_fb_joint([41, seed])
    got = eval_inner_fb(joint)
    assert (got.r1_max, got.r2_max, got.sum_max) == pytest.approx(
        oracles.inner_fb(joint.names, joint.mass), abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_constraint_constants_match_entropies(seed):
    joint = random_fb_joint([42, seed])
    rows = build_fb_constraints(joint).inequalities
    H = lambda a, b: oracles.entropy(joint.names, joint.mass, a, b)
    expect = [-H(["V1"], ["X", "S"]), -H(["V2"], ["X", "S"]), -H(["V1", "V2"], ["X", "S"]),
              H(["V1"], ["Z"]), H(["V2"], ["Z"]), H(["V1", "V2"], ["Z"]),
              H(["V1"], ["V2", "Y2"]), H(["V2"], ["V1", "Y1"])]
    for (_, const), ref in zip(rows, expect):
        assert float(const) == pytest.approx(ref, abs=1e-9)
    assert [float(c) for _, c in rows[8:]] == [0.0] * 4


def _exists_grid(system, point, drop_idx, step=0.01, top=3.0, tol=1e-6):
    """Brute-force: some grid value of the dropped variables satisfies the system."""
    A, b = system.as_arrays()
    ticks = np.arange(0, top + step / 2, step) - 1.0
    keep = [i for i in range(len(system.variables)) if i not in drop_idx]
    base = A[:, keep] @ np.asarray(point)
    for vals in itertools.product(ticks, repeat=len(drop_idx)):
        if np.all(base + A[:, drop_idx] @ np.array(vals) <= b + tol):
            return True
    return False


@pytest.mark.parametrize("seed", range(6))
def test_fm_soundness_against_grid_search(seed):
    rng = np.random.default_rng([43, seed])
    rows = []
    for _ in range(6):
        c = tuple(F(int(v)) for v in rng.integers(-2, 3, size=3))
        rows.append((c, F(int(rng.integers(0, 4)))))
    # keep the dropped variable bounded so the grid can witness it
    rows += [((F(0), F(0), F(1)), F(2)), ((F(0), F(0), F(-1)), F(1))]
    sys_ = LinearInequalitySystem(("a", "b", "c"), tuple(rows))
    proj = fm_eliminate(sys_, ["c"])
    for a, b in itertools.product(np.arange(-1, 2.01, 0.25), repeat=2):
        assert proj.is_feasible_point([a, b]) == _exists_grid(sys_, [a, b], [2])


# ---------------------------------------------------------------- documented examples

def test_closed_form_single_receiver():
    assert eval_inner_fb(single_receiver_joint()).r1_max == pytest.approx(1.0)


def test_closed_form_independent_quantizers():
    ch = random_channel(np.random.default_rng(1))
    sc = FeedbackScheme.from_arrays([[0.5, 0.5], [0.5, 0.5]], np.full((2, 2), 0.5),
                                    np.full((2, 2), 0.5))
    p = eval_inner_fb(build_joint_fb(ch, sc))
    assert (p.r1_max, p.r2_max, p.sum_max) == pytest.approx((0, 0, 0), abs=1e-12)


def test_closed_form_rejects_wrong_variables():
    with pytest.raises(PMFError):
        eval_inner_fb(random_joint(np.random.default_rng(0), [2, 2], ["A", "B"]))


def test_constant_quantizers_force_zero_rates():
    proj = project_fb_region(constant_v_joint())
    assert proj.is_feasible_point([0, 0])
    assert not proj.is_feasible_point([0.01, 0])
    assert not proj.is_feasible_point([0, 0.01])


def test_single_receiver_system_gives_unit_bound():
    sys_ = build_fb_constraints(single_receiver_joint())
    assert sys_.inequalities[0][1] == 0                      # Rp1 >= 0
    proj = project_fb_region(single_receiver_joint())
    assert proj.is_feasible_point([1.0, 0]) and not proj.is_feasible_point([1.01, 0])


def test_fm_textbook_example():
    s = LinearInequalitySystem(("x", "y"), (((1, 0), 3), ((-1, 0), 0), ((1, 1), 5)))
    out = fm_eliminate(s, ["x"])
    assert out.variables == ("y",)
    assert out.inequalities == (((F(1),), F(5)),)
    assert not out.infeasible


def test_fm_absent_variable_only_dedups():
    s = LinearInequalitySystem(("x", "y"), (((1, 0), 3), ((2, 0), 6), ((1, 0), 4)))
    out = fm_eliminate(s, ["y"])
    assert out.inequalities == (((F(1),), F(3)),)


def test_fm_flags_contradiction():
    s = LinearInequalitySystem(("x",), (((1,), -1), ((-1,), 0)))
    out = fm_eliminate(s, ["x"])
    assert out.infeasible and out.contradictions
    assert not out.is_feasible_point([])


def test_fm_unknown_variable():
    with pytest.raises(ValueError):
        fm_eliminate(LinearInequalitySystem(("x",), ()), ["z"])


def test_system_rejects_wrong_width():
    with pytest.raises(ValueError):
        LinearInequalitySystem(("x", "y"), (((1,), 0),))


@pytest.mark.parametrize("seed", range(4))
def test_fm_permutation_invariant(seed):
    joint = random_fb_joint([44, seed])
    sys_ = build_fb_constraints(joint)
    perm = np.random.default_rng(seed).permutation(len(sys_.inequalities))
    shuffled = LinearInequalitySystem(sys_.variables, tuple(sys_.inequalities[i] for i in perm))
    a = fm_eliminate(sys_, ["Rp1", "Rp2"])
    b = fm_eliminate(shuffled, ["Rp2", "Rp1"])
    for p in itertools.product(np.arange(0, 1.01, 0.05), repeat=2):
        assert a.is_feasible_point(p) == b.is_feasible_point(p)


def test_text_round_trip():
    joint = random_fb_joint([45, 0])
    sys_ = build_fb_constraints(joint)
    text = sys_.to_text()
    assert "<=" in text.splitlines()[0] and "*R1" in text
    back = LinearInequalitySystem.from_text(text)
    assert back.inequalities == sys_.inequalities


def test_text_reports_parse_errors():
    with pytest.raises(ValueError, match="line 1"):
        LinearInequalitySystem.from_text("2*Q <= 1\n")


def test_to_rational_precision():
    q = to_rational(0.1234567890123456)
    assert q.denominator <= 10 ** 12 and abs(float(q) - 0.1234567890123456) <= 5e-13


def test_literal_reading_flag():
    joint = random_fb_joint([46, 0])
    sym = build_fb_constraints(joint)
    lit = build_fb_constraints(joint, literal=True)
    assert sym.inequalities[7][0] == (0, 1, 0, 1)
    assert lit.inequalities[7][0] == (1, 0, 1, 0)
    assert lit.metadata["printed_second_decoding_row"] == LITERAL_SECOND_LINE
    assert sym.metadata["reading"] == "symmetric"


def test_verify_constant_quantizers_agree():
    rep = verify_fm_matches_closed_form(constant_v_joint())
    assert rep.agree and rep.n_disagreements == 0


def test_verify_single_receiver_agrees():
    rep = verify_fm_matches_closed_form(single_receiver_joint())
    assert rep.agree
    assert rep.closed_form.r1_max == pytest.approx(1.0)


# ---------------------------------------------------------------- properties

@pytest.mark.parametrize("seed", range(10))
def test_factorization_identity(seed):
    joint = random_fb_joint([47, seed])
    e = fb_entropies(joint)
    assert abs(e.h_v1_v2y2 - e.h_v1_y2) <= 1e-10
    assert abs(e.h_v2_v1y1 - e.h_v2_y1) <= 1e-10
    assert e.h_v1_y2 == pytest.approx(entropy(joint, ["V1"], ["Y2"]), abs=1e-12)


def test_regions_agree_whenever_no_bound_is_clipped():
    """Disagreements come only from clipping a negative single-user bound at zero."""
    unclipped = 0
    for i in range(50):
        rep = verify_fm_matches_closed_form(random_fb_joint([5, i]))
        assert rep.identity_ok
        if not any(rep.clipped[:2]):
            unclipped += 1
            assert rep.agree, rep.disagreements
        elif not rep.agree:
            # projected system is empty while the closed form keeps an axis segment
            assert rep.projected_empty
            assert all((not fm) for _, _, _, fm in rep.disagreements)
    assert unclipped >= 5


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_projected_region_inside_closed_form(seed):
    """Every projected point satisfies the closed-form inequalities."""
    joint = random_fb_joint(seed)
    proj = project_fb_region(joint)
    cf = eval_inner_fb(joint)
    for p in itertools.product(np.arange(0, 1.01, 0.05), repeat=2):
        if proj.is_feasible_point(p):
            assert cf.contains(*p)
