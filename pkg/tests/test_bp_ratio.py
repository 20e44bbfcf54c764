import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from oracles import level_vertices, reversible_kernel_from_weights, root_posteriors
from treespin.bp_ratio import (
    batch_ratios,
    contraction_factor,
    contraction_table,
    deviation,
    deviation_tail,
    expected_deviation,
    leaf_ratio,
    mean_deviation_identity,
    minimal_contraction_m,
    ratio_from_boundary,
    ratio_step,
    simplex_vertex_factor,
)
from treespin.errors import DegenerateDenominator, InvalidParams, ZeroProbabilityBoundary
from treespin.rng import stream
from treespin.spin_model import coloring_kernel, make_kernel, uniform_kernel
from treespin.tree import TreeShape, all_boundaries

K3 = coloring_kernel(3)
SOFT = make_kernel([[0.5, 0.3, 0.2], [0.3, 0.4, 0.3], [0.2, 0.3, 0.5]])


def lp_contraction(kernel, m):
    """max |M^m u|_inf over |u|_inf <= 1 with pi . u = 0, one LP per coordinate and sign."""
    Mm = np.linalg.matrix_power(kernel.M, m)
    k = kernel.k
    best = 0.0
    for i in range(k):
        for sign in (1, -1):
            res = linprog(-sign * Mm[i], A_eq=kernel.pi[None, :], b_eq=[0.0], bounds=[(-1, 1)] * k)
            best = max(best, -res.fun)
    return best


def test_ratio_step_examples():
    ones = np.ones(3)
    assert np.allclose(ratio_step([ones, ones], K3), 1)
    r = np.array([0.2, 1.5, 1.3])
    r = r / (K3.pi @ r)
    assert np.allclose(ratio_step([r], K3), K3.M @ r)
    fixed = ratio_step([leaf_ratio(K3, 1), leaf_ratio(K3, 2)], K3)
    assert np.allclose(fixed, [3, 0, 0])
    assert np.allclose(leaf_ratio(K3, None), 1)
    with pytest.raises(DegenerateDenominator):
        ratio_step([leaf_ratio(K3, 0), leaf_ratio(K3, 1), leaf_ratio(K3, 2)], K3)


def test_ratio_from_boundary_examples():
    shape = TreeShape(2, 1)
    assert np.allclose(ratio_from_boundary(shape, K3, [1, 2], 0, 1), [3, 0, 0])
    assert np.allclose(ratio_from_boundary(shape, K3, [1, 1], 0, 1), [1.5, 0, 1.5])
    assert np.allclose(ratio_from_boundary(shape, K3, None, 0, 1), 1)
    with pytest.raises(ZeroProbabilityBoundary):
        ratio_from_boundary(TreeShape(3, 1), K3, [0, 1, 2], 0, 1)


@pytest.mark.parametrize("kern, l", [(K3, 2), (SOFT, 2), (coloring_kernel(4), 2)])
def test_ratio_matches_brute_force_posterior(kern, l):
    shape = TreeShape(2, l)
    post, _ = root_posteriors(shape, kern, l)
    for eta, p in post.items():
        assert np.allclose(ratio_from_boundary(shape, kern, list(eta), 0, l), p / kern.pi, atol=1e-12)
    etas = np.array(list(post))
    R, ok = batch_ratios(kern, 2, l, etas)
    assert ok.all()
    assert np.allclose(R, np.array(list(post.values())) / kern.pi, atol=1e-12)


def test_ratio_of_inner_vertex():
    shape = TreeShape(2, 3)
    # vertex 1 with l=2 sees level-3 descendants 7..10
    eta = {7: 0, 8: 1, 9: 0, 10: 0}
    r = ratio_from_boundary(shape, K3, eta, 1, 2)
    expected = ratio_from_boundary(TreeShape(2, 2), K3, [0, 1, 0, 0], 0, 2)
    assert np.allclose(r, expected)


def test_contraction_examples():
    assert contraction_factor(K3, 0) == 1.0
    assert contraction_factor(K3, 2) == pytest.approx(0.25, abs=1e-12)
    assert contraction_factor(uniform_kernel(4), 1) == pytest.approx(0.0, abs=1e-12)
    for k in range(3, 9):
        for m in (1, 2, 3):
            assert contraction_factor(coloring_kernel(k), m) == pytest.approx((1 / (k - 1)) ** m, abs=1e-12)
    assert [row[0] for row in contraction_table(K3, [1, 2])] == [1, 2]
    assert minimal_contraction_m(K3) == 3
    assert minimal_contraction_m(coloring_kernel(6)) == 1
    with pytest.raises(InvalidParams):
        contraction_factor(K3, -1)


def test_vertex_factor_can_understate_contraction():
    # the extreme ratio vectors e_c / pi_c miss the worst direction for this kernel
    assert contraction_factor(SOFT, 1) == pytest.approx(0.3, abs=1e-12)
    assert simplex_vertex_factor(SOFT, 1) == pytest.approx(0.25, abs=1e-12)
    assert lp_contraction(SOFT, 1) == pytest.approx(0.3, abs=1e-9)


kernels = st.integers(2, 4).flatmap(
    lambda k: st.lists(st.floats(0.05, 4.0), min_size=k * k, max_size=k * k).map(lambda xs: np.array(xs).reshape(k, k))
)


@settings(max_examples=30, deadline=None)
@given(kernels, st.integers(1, 3))
def test_contraction_equals_linear_program(A, m):
    M, _ = reversible_kernel_from_weights(A)
    kern = make_kernel(M)
    assert contraction_factor(kern, m) == pytest.approx(lp_contraction(kern, m), abs=1e-8)
    assert simplex_vertex_factor(kern, m) <= contraction_factor(kern, m) + 1e-12


def test_duality_examples():
    lhs, rhs = mean_deviation_identity(TreeShape(2, 1), K3, 1, 0)
    assert lhs == pytest.approx(1.0, abs=1e-12) and rhs == pytest.approx(1.0, abs=1e-12)
    lhs, rhs = mean_deviation_identity(TreeShape(2, 1), uniform_kernel(3), 1, 0)
    assert lhs == pytest.approx(0.0, abs=1e-12) and rhs == pytest.approx(0.0, abs=1e-12)
    lhs, rhs = mean_deviation_identity(TreeShape(2, 1), coloring_kernel(4), 1, 2)
    assert abs(lhs - rhs) < 1e-12


@pytest.mark.parametrize("kern", [K3, SOFT])
def test_duality_against_brute_force(kern):
    shape = TreeShape(2, 2)
    _, joint = root_posteriors(shape, kern, 2)
    J = np.array(list(joint.values()))
    mass = J.sum(axis=1)
    for c in range(kern.k):
        lhs, rhs = mean_deviation_identity(shape, kern, 2, c)
        # sum over eta of |P(eta | root = c) - P(eta)|
        assert rhs == pytest.approx(np.abs(J[:, c] / kern.pi[c] - mass).sum(), abs=1e-12)
        assert lhs == pytest.approx(rhs, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(kernels, st.integers(1, 2), st.data())
def test_duality_property(A, l, data):
    M, _ = reversible_kernel_from_weights(A)
    kern = make_kernel(M)
    c = data.draw(st.integers(0, kern.k - 1))
    lhs, rhs = mean_deviation_identity(TreeShape(2, l), kern, l, c)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_expected_deviation_matches_brute_force():
    shape = TreeShape(2, 2)
    post, joint = root_posteriors(shape, SOFT, 2)
    expect = sum(j.sum() * deviation(post[eta] / SOFT.pi) for eta, j in joint.items())
    assert expected_deviation(shape, SOFT, 2) == pytest.approx(expect, abs=1e-12)


def test_tail_examples():
    shape = TreeShape(2, 1)
    assert deviation_tail(shape, K3, 1, 1.5).value == pytest.approx(0.5)
    assert deviation_tail(shape, K3, 1, 3.0).value == 0.0
    assert deviation_tail(shape, uniform_kernel(3), 1, 0.1).value == 0.0
    with pytest.raises(InvalidParams):
        deviation_tail(shape, K3, 1, 0.0)
    with pytest.raises(InvalidParams):
        deviation_tail(shape, K3, 1, 1.0, mode="mc")


def test_tail_monte_carlo_covers_exact():
    shape = TreeShape(2, 3)
    for z in (0.5, 1.0, 1.5):
        exact = deviation_tail(shape, K3, 3, z)
        est = deviation_tail(shape, K3, 3, z, mode="mc", samples=40_000, rng=stream(7))
        sigma = np.sqrt(exact.value * (1 - exact.value) / est.samples)
        assert abs(est.value - exact.value) <= 4 * sigma + 1e-12
        assert est.ci_low <= est.value <= est.ci_high


def test_tail_against_brute_force():
    shape = TreeShape(2, 2)
    post, joint = root_posteriors(shape, SOFT, 2)
    for z in (0.1, 0.3, 0.6):
        expect = sum(j.sum() for eta, j in joint.items() if deviation(post[eta] / SOFT.pi) > z)
        assert deviation_tail(shape, SOFT, 2, z).value == pytest.approx(expect, abs=1e-12)


def test_batch_ratios_flags_impossible_boundaries():
    etas = all_boundaries(3, 3)
    R, ok = batch_ratios(K3, 3, 1, etas)
    # three distinct children forbid every root state
    distinct = np.array([len(set(e)) == 3 for e in etas.tolist()])
    assert (~ok == distinct).all()
    assert level_vertices(TreeShape(3, 1), 1) == [1, 2, 3]
