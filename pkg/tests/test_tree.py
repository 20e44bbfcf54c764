import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from oracles import brute_law, level_vertices, reversible_kernel_from_weights, root_posteriors
from treespin.errors import InconsistentBoundary, InvalidParams, TooLarge, ZeroProbabilityBoundary
from treespin.rng import stream
from treespin.spin_model import coloring_kernel, make_kernel, uniform_kernel
from treespin.tree import (
    PARENT,
    BoundarySpec,
    TreeShape,
    broadcast_sample,
    conditional_root_marginal,
    conditional_sample,
    enumerate_states,
    format_configuration,
    gibbs_weight,
    is_valid,
    parse_configuration,
    reconstruction_table,
    reconstruction_tv,
    uniqueness_sup,
)

K3 = coloring_kernel(3)
SOFT = make_kernel([[0.5, 0.3, 0.2], [0.3, 0.4, 0.3], [0.2, 0.3, 0.5]])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(0, 4))
def test_indexing(d, depth):
    shape = TreeShape(d, depth)
    assert shape.n == sum(d**l for l in range(depth + 1))
    for v in range(shape.n):
        for c in shape.children(v):
            assert shape.parent(c) == v
            assert shape.level(c) == shape.level(v) + 1
        assert list(shape.children(v)) == [c for c in range(d * v + 1, d * v + d + 1) if c < shape.n]
    assert sorted(shape.block(0, depth)) == list(range(shape.n))


def test_block_is_relative_depths():
    shape = TreeShape(2, 3)
    assert sorted(shape.block(1, 1)) == [1, 3, 4]
    assert sorted(shape.block(1, 5)) == [1, 3, 4, 7, 8, 9, 10]


def test_gibbs_weight_examples():
    assert gibbs_weight(TreeShape(2, 1), K3, (0, 1, 2)) == pytest.approx(1 / 12)
    assert gibbs_weight(TreeShape(2, 1), K3, (0, 0, 1)) == 0.0
    assert gibbs_weight(TreeShape(2, 0), K3, (1,)) == pytest.approx(1 / 3)
    assert not is_valid(TreeShape(2, 1), K3, (0, 0, 1))


def test_enumeration_examples():
    space = enumerate_states(TreeShape(2, 1), K3)
    assert len(space) == 12
    assert np.allclose(space.weights, 1 / 12)
    two = enumerate_states(TreeShape(3, 0), uniform_kernel(2))
    assert len(two) == 2 and np.allclose(two.weights, 0.5)


@pytest.mark.parametrize("kern", [K3, SOFT, coloring_kernel(4)])
@pytest.mark.parametrize("parent", [None, 1])
def test_enumeration_matches_brute_force(kern, parent):
    shape = TreeShape(2, 2)
    boundary = BoundarySpec.free() if parent is None else BoundarySpec.with_parent(parent)
    space = enumerate_states(shape, kern, boundary)
    law = brute_law(shape, kern, parent)
    assert len(space) == len(law)
    for row, w in space:
        assert w == pytest.approx(law[row], abs=1e-14)


def test_enumeration_with_frozen_vertices_and_guard():
    shape = TreeShape(2, 2)
    b = BoundarySpec({3: 0, 4: 0, PARENT: 2})
    space = enumerate_states(shape, K3, b)
    law = brute_law(shape, K3, 2, {3: 0, 4: 0})
    assert {row for row, _ in space} == set(law)
    with pytest.raises(TooLarge):
        enumerate_states(TreeShape(2, 3), coloring_kernel(6), guard=1000)
    with pytest.raises(InconsistentBoundary):
        enumerate_states(shape, K3, BoundarySpec({0: 1, 1: 1}))


def test_conditional_root_marginal_examples():
    shape = TreeShape(2, 1)
    assert np.allclose(conditional_root_marginal(shape, K3, [1, 2], 0, 1), [1, 0, 0])
    assert np.allclose(conditional_root_marginal(shape, K3, [1, 1], 0, 1), [0.5, 0, 0.5])
    assert np.allclose(conditional_root_marginal(shape, K3, None, 0, 1), K3.pi)
    with pytest.raises(ZeroProbabilityBoundary):
        conditional_root_marginal(TreeShape(2, 0), K3, {0: 1}, 0, 0, parent_state=1)


@pytest.mark.parametrize("kern", [K3, SOFT])
def test_conditional_root_marginal_against_brute_force(kern):
    shape = TreeShape(2, 2)
    post, _ = root_posteriors(shape, kern, 2)
    for eta, p in post.items():
        assert np.allclose(conditional_root_marginal(shape, kern, list(eta), 0, 2), p, atol=1e-13)


def test_reconstruction_examples():
    shape = TreeShape(2, 1)
    assert reconstruction_tv(shape, K3, 1, 0, 1) == pytest.approx(0.75)
    assert reconstruction_tv(shape, K3, 1, 2, 2) == 0.0
    assert reconstruction_tv(shape, uniform_kernel(3), 1, 0, 1) == pytest.approx(0.0, abs=1e-15)
    rows = reconstruction_table(shape, K3, [1])
    assert (1, 1, 2, pytest.approx(0.75)) in rows
    assert len(rows) == 9


def test_uniqueness_examples():
    assert uniqueness_sup(TreeShape(2, 1), K3, 1) == pytest.approx(1.0)
    assert uniqueness_sup(TreeShape(2, 1), uniform_kernel(3), 1) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("kern, l", [(coloring_kernel(6), 1), (coloring_kernel(4), 2), (SOFT, 2)])
def test_uniqueness_against_brute_force(kern, l):
    shape = TreeShape(2, l)
    post, _ = root_posteriors(shape, kern, l)
    P = np.array(list(post.values()))
    best = max(0.5 * np.abs(P[i] - P[j]).sum() for i in range(len(P)) for j in range(i + 1, len(P)))
    value = uniqueness_sup(shape, kern, l)
    assert value == pytest.approx(best, abs=1e-12)
    if kern.k == 6:
        assert value < 1


def test_configuration_format_round_trip():
    assert format_configuration((0, 1, 2)) == "1 2 3"
    assert parse_configuration("1 2 3") == (0, 1, 2)
    for bad in ("0 1", "", "1 x"):
        with pytest.raises(InvalidParams):
            parse_configuration(bad)


def test_broadcast_depth_zero_is_pi():
    X = broadcast_sample(TreeShape(2, 0), K3, stream(1), size=30_000)
    counts = np.bincount(X[:, 0], minlength=3)
    assert chisquare(counts).pvalue > 1e-4


def test_broadcast_children_given_root():
    n = 100_000
    X = broadcast_sample(TreeShape(2, 1), K3, stream(2), root_state=0, size=n)
    assert (X[:, 0] == 0).all()
    for v in (1, 2):
        freq = np.mean(X[:, v] == 1)
        assert abs(freq - 0.5) < 3 * np.sqrt(0.25 / n)
        assert not (X[:, v] == 0).any()


def test_broadcast_uniform_kernel_independent_pairs():
    X = broadcast_sample(TreeShape(2, 1), uniform_kernel(3), stream(3), size=100_000)
    joint = np.bincount(3 * X[:, 0] + X[:, 1], minlength=9)
    assert chisquare(joint).pvalue > 1e-4


def test_broadcast_matches_enumeration():
    shape = TreeShape(2, 2)
    space = enumerate_states(shape, SOFT)
    X = broadcast_sample(shape, SOFT, stream(4), size=200_000)
    idx = space.lookup(X.astype(np.int64) @ space.radix)
    assert (idx >= 0).all()
    counts = np.bincount(idx, minlength=len(space))
    assert chisquare(counts, space.weights * len(X)).pvalue > 1e-4


def test_broadcast_single_sample_is_tuple_and_seeded():
    a = broadcast_sample(TreeShape(2, 3), K3, stream(9))
    b = broadcast_sample(TreeShape(2, 3), K3, stream(9))
    assert isinstance(a, tuple) and a == b


def test_conditional_sample_matches_conditional_law():
    shape = TreeShape(2, 2)
    frozen = {3: 0, 5: 1, PARENT: 2}
    b = BoundarySpec(frozen)
    law = brute_law(shape, K3, 2, {3: 0, 5: 1})
    X = conditional_sample(shape, K3, b, stream(5), size=40_000)
    keys = sorted(law)
    pos = {s: i for i, s in enumerate(keys)}
    idx = np.array([pos[tuple(int(v) for v in x)] for x in X])
    emp = np.bincount(idx, minlength=len(keys)) / len(X)
    exact = np.array([law[s] for s in keys])
    assert 0.5 * np.abs(emp - exact).sum() < 0.03


def test_invalid_shape():
    with pytest.raises(InvalidParams):
        TreeShape(0, 2)
    with pytest.raises(InvalidParams):
        TreeShape(2, -1)


@settings(max_examples=25, deadline=None)
@given(
    st.integers(2, 3).flatmap(
        lambda k: st.lists(st.floats(0.1, 3.0), min_size=k * k, max_size=k * k).map(lambda xs: np.array(xs).reshape(k, k))
    ),
    st.integers(1, 2),
)
def test_enumeration_normalised_and_consistent(A, depth):
    M, _ = reversible_kernel_from_weights(A)
    kern = make_kernel(M)
    shape = TreeShape(2, depth)
    space = enumerate_states(shape, kern)
    assert space.weights.sum() == pytest.approx(1.0, abs=1e-12)
    for row, w in list(space)[:50]:
        assert gibbs_weight(shape, kern, row) == pytest.approx(w, rel=1e-12)
    # level marginals of a free tree are pi at every level
    for v in level_vertices(shape, depth)[:2]:
        marg = np.bincount(space.states[:, v], weights=space.weights, minlength=kern.k)
        assert np.allclose(marg, kern.pi, atol=1e-12)
