import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from treespin import coloring_recursion as cr
from treespin.acceptance import brute_force_types
from treespin.errors import InvalidParams, PreconditionNotMet
from treespin.rng import stream


def test_leaves_are_rigid_and_bad():
    for rec in (cr.type_recursion_exact(4, 3, 0), cr.type_recursion_multinomial(4, 3, 0)):
        t = rec[0]
        assert (t.p_r, t.p2, t.p3, t.p_b) == (1.0, 0.0, 0.0, 1.0)
    assert cr.type_recursion_fraction(4, 3, 0)[0] == (1, 0, 0, 1)


def test_three_colours_binary_first_level():
    assert cr.type_recursion_fraction(3, 2, 1)[1] == (Fraction(1, 2), Fraction(1, 2), 0, Fraction(3, 4))
    t = cr.type_recursion_exact(3, 2, 1)[1]
    assert t.p_b == pytest.approx(0.75, abs=1e-15)


@pytest.mark.parametrize("depth", [1, 2])
def test_fraction_recursion_matches_enumeration(depth):
    bf = brute_force_types(3, 2, depth)
    assert (bf["p_r"], bf["p2"], bf["p3"], bf["p_b"]) == cr.type_recursion_fraction(3, 2, depth)[depth]


def test_four_colours_depth_one_enumeration():
    bf = brute_force_types(4, 2, 1)
    assert (bf["p_r"], bf["p2"], bf["p3"], bf["p_b"]) == cr.type_recursion_fraction(4, 2, 1)[1]


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 6), st.integers(1, 6))
def test_log_mode_matches_multinomial_sum(k, d):
    for a, b in zip(cr.type_recursion_exact(k, d, 5), cr.type_recursion_multinomial(k, d, 5)):
        assert a.p_r == pytest.approx(b.p_r, abs=1e-12)
        assert a.p2 == pytest.approx(b.p2, abs=1e-12)
        assert a.p_b == pytest.approx(b.p_b, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(3, 5), st.integers(1, 4))
def test_log_mode_matches_rationals(k, d):
    for a, b in zip(cr.type_recursion_exact(k, d, 4), cr.type_recursion_fraction(k, d, 4)):
        assert a.p_b == pytest.approx(float(b[3]), rel=1e-12, abs=1e-300)


def test_log_mode_tracks_underflow():
    levels = cr.type_recursion_exact(20, 91, 10)
    assert levels[7].p_b > 0
    assert levels[8].log_p_b < -200
    assert all(a.log_p_b >= b.log_p_b for a, b in zip(levels, levels[1:]))


def test_invalid_parameters():
    with pytest.raises(InvalidParams):
        cr.type_recursion_exact(2, 3, 2)
    with pytest.raises(InvalidParams):
        cr.type_recursion_fraction(4, 0, 2)


def test_monte_carlo_first_level():
    est = cr.mc_estimate_probs(3, 2, 1, 40_000, stream(0))
    root, leaves = est[1], est[0]
    assert leaves.p("rigid") == 1.0 and leaves.p("bad") == 1.0
    sigma = math.sqrt(0.75 * 0.25 / root.n)
    assert abs(root.p("bad") - 0.75) <= 3 * sigma
    lo, hi = root.interval("bad")
    assert lo <= root.p("bad") <= hi


def test_monte_carlo_free_vertices_need_good_children():
    k, d = 5, 3
    est = cr.mc_estimate_probs(k, d, 3, 20_000, stream(1))
    ex = cr.type_recursion_exact(k, d, 3)
    for h in range(1, 4):
        e = est[h]
        assert 1 - e.p("free") <= d * ex[h - 1].p_b + 3 * e.sigma("free")
        assert abs(e.p("bad") - ex[h].p_b) <= 4 * e.sigma("bad") + 1e-12


def test_poisson_sequence_starts_at_one():
    assert cr.poisson_bound_sequence(cr.PoissonBoundParams(20, 91, 0.5), 3)[0] == 1.0


def test_poisson_tail_probability():
    params = cr.PoissonBoundParams(20, 91, 0.5)
    lam = 19 * params.D
    direct = sum(math.exp(-lam + j * math.log(lam) - math.lgamma(j + 1)) for j in range(91))
    assert params.p == pytest.approx(direct, rel=1e-10)


def test_poisson_bound_certifies_for_large_k():
    k = 2000
    d = cr.scan_degree(k, 0.2)
    y = cr.poisson_bound_sequence(cr.PoissonBoundParams(k, d, 0.6), 10)
    assert all(a > b for a, b in zip(y[:5], y[1:5]))
    assert cr.first_below([math.log(v) for v in y], d) == 5


@pytest.mark.xfail(strict=True, reason="at k=20 the Poisson tail p exceeds 1/2 so the bound is vacuous")
def test_poisson_bound_k20_example():
    k, bs = 20, 0.5
    d = cr.scan_degree(k, bs)
    y = cr.poisson_bound_sequence(cr.PoissonBoundParams(k, d, bs), 40)
    assert all(a > b for a, b in zip(y[1:], y[2:]))
    assert min(y) <= 1 / (math.e * d)


def test_poisson_bound_k20_stays_above_p():
    k, bs = 20, 0.5
    d = cr.scan_degree(k, bs)
    params = cr.PoissonBoundParams(k, d, bs)
    y = cr.poisson_bound_sequence(params, 40)
    assert params.p > 0.5
    assert min(y) >= params.p
    # the exact recursion still sits under the bound
    assert all(t.p_b <= yl for t, yl in zip(cr.type_recursion_exact(k, d, 40), y))


def test_vacuous_bound_never_certifies():
    params = cr.PoissonBoundParams(10, 400, 0.1)
    assert params.p > 0.999
    y = cr.poisson_bound_sequence(params, 30)
    assert all(v >= params.p for v in y)
    assert cr.first_below([math.log(v) for v in y], 400) is None


def test_double_exponential_one_step_algebra():
    k, d = 7, 5
    log_p = -1 - math.log(d)
    assert (k - 2) * (math.log(d) + log_p) == pytest.approx(-(k - 2))


def test_zero_stays_zero():
    chk = cr.double_exp_check(5, 3, [0.0, -1 - math.log(3), -math.inf, -math.inf])
    assert chk.l0 == 1 and chk.ok


def test_envelope_holds_for_k20():
    k, d = 20, cr.scan_degree(20, 0.5)
    log_pb = [t.log_p_b for t in cr.type_recursion_exact(k, d, 12)]
    chk = cr.double_exp_check(k, d, log_pb)
    assert chk.l0 == 6
    assert chk.ok


def test_precondition_not_met():
    with pytest.raises(PreconditionNotMet):
        cr.double_exp_check(5, 3, [0.0, -0.1, -0.2])
    with pytest.raises(PreconditionNotMet):
        cr.double_exp_check(5, 3, [0.0, -0.1, -5.0], l0=1)


def test_threshold_scan_statuses():
    rows = cr.threshold_scan([3, 10, 30, 60], 0.2, L=40)
    assert rows[0].status == "out_of_regime" and not rows[0].certified
    for r in rows[1:]:
        assert r.status == "certified" and r.dominated
        assert r.d == math.floor(r.k * (math.log(r.k) + math.log(math.log(r.k)) + 0.2))
    hot = cr.threshold_scan([10], 3.0, L=40)[0]
    assert not hot.certified


def test_scan_rows_have_header_width():
    rows = cr.scan_csv_rows(cr.threshold_scan([3, 10], 0.2, L=5))
    assert all(len(r) == len(cr.SCAN_HEADER) for r in rows)
    assert rows[0][9] == "out_of_regime"
