import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import reversible_kernel_from_weights
from treespin.errors import InvalidParams, ModelFileError, NonErgodicKernel, NonNormalizable, NonReversibleKernel
from treespin.spin_model import (
    HARD,
    ModelSpec,
    Potentials,
    coloring_kernel,
    coloring_potentials,
    format_model,
    kernel_from_potentials,
    kesten_stigum_ok,
    make_kernel,
    parse_model,
    potentials_from_kernel,
    second_eigenvalue,
    uniform_kernel,
)


def test_zero_potentials_give_uniform_kernel():
    kern = kernel_from_potentials(Potentials.from_entries(3))
    assert np.allclose(kern.M, 1 / 3, atol=1e-15)
    assert np.allclose(kern.pi, 1 / 3, atol=1e-15)


def test_hard_diagonal_gives_coloring_kernel():
    kern = kernel_from_potentials(coloring_potentials(3))
    assert np.allclose(kern.M, [[0, 0.5, 0.5], [0.5, 0, 0.5], [0.5, 0.5, 0]], atol=1e-15)
    assert kern.is_coloring()


def test_two_state_soft_pair_potential():
    kern = kernel_from_potentials(Potentials.from_entries(2, U={(0, 1): math.log(2)}))
    assert np.allclose(kern.M, [[2 / 3, 1 / 3], [1 / 3, 2 / 3]], atol=1e-15)
    assert np.allclose(kern.pi, [0.5, 0.5], atol=1e-15)


def test_two_colorings_are_periodic():
    with pytest.raises(NonErgodicKernel):
        kernel_from_potentials(coloring_potentials(2))
    with pytest.raises(NonErgodicKernel):
        coloring_kernel(2)
    with pytest.raises(NonErgodicKernel):
        ModelSpec(2, "coloring").kernel()


def test_coloring_kernel_four_states():
    kern = coloring_kernel(4)
    off = kern.M[~np.eye(4, dtype=bool)]
    assert np.allclose(off, 1 / 3, atol=1e-15)
    assert second_eigenvalue(kern) == pytest.approx(-1 / 3, abs=1e-12)


@pytest.mark.parametrize(
    "kern, expected",
    [
        (coloring_kernel(3), -0.5),
        (uniform_kernel(4), 0.0),
        (make_kernel([[2 / 3, 1 / 3], [1 / 3, 2 / 3]]), 1 / 3),
    ],
)
def test_second_eigenvalue(kern, expected):
    assert second_eigenvalue(kern) == pytest.approx(expected, abs=1e-12)


def test_kesten_stigum():
    assert kesten_stigum_ok(coloring_kernel(3), 2) == (True, pytest.approx(0.5))
    ok, val = kesten_stigum_ok(coloring_kernel(3), 4)
    assert not ok and val == pytest.approx(1.0)
    ok, val = kesten_stigum_ok(uniform_kernel(3), 7)
    assert ok and val == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(InvalidParams):
        kesten_stigum_ok(uniform_kernel(3), 0)


def test_validation_errors():
    with pytest.raises(InvalidParams):
        make_kernel([[0.5, 0.6], [0.5, 0.5]])
    with pytest.raises(InvalidParams):
        make_kernel([[1.2, -0.2], [0.5, 0.5]])
    with pytest.raises(NonErgodicKernel):
        make_kernel(np.eye(2))
    with pytest.raises(NonReversibleKernel):
        # a cyclic drift is stochastic and aperiodic but not reversible
        make_kernel([[0.2, 0.8, 0.0], [0.0, 0.2, 0.8], [0.8, 0.0, 0.2]])
    with pytest.raises(NonNormalizable):
        kernel_from_potentials(Potentials.from_entries(2, W={0: HARD, 1: HARD}))
    with pytest.raises(InvalidParams):
        Potentials.from_entries(2, U={(0, 1): 1.0, (1, 0): 2.0})


weights = st.integers(2, 5).flatmap(
    lambda k: st.lists(st.floats(0.05, 5.0), min_size=k * k, max_size=k * k).map(
        lambda xs: np.array(xs).reshape(k, k)
    )
)


@settings(max_examples=40, deadline=None)
@given(weights)
def test_potential_round_trip(A):
    M, pi = reversible_kernel_from_weights(A)
    kern = make_kernel(M)
    assert np.allclose(kern.pi, pi, atol=1e-12)
    back = kernel_from_potentials(potentials_from_kernel(kern))
    assert np.allclose(back.M, kern.M, atol=1e-12)
    assert np.allclose(back.pi, kern.pi, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    st.integers(2, 5).flatmap(
        lambda k: st.tuples(
            st.just(k),
            st.lists(st.floats(-2, 2), min_size=k * k, max_size=k * k),
            st.lists(st.floats(-2, 2), min_size=k, max_size=k),
        )
    )
)
def test_kernel_from_potentials_is_stochastic_and_reversible(args):
    k, u, w = args
    U = np.array(u).reshape(k, k)
    U = U + U.T
    pot = Potentials.from_entries(k, {(i, j): U[i, j] for i in range(k) for j in range(k)}, dict(enumerate(w)))
    kern = kernel_from_potentials(pot)
    # direct formula: M(a, b) proportional to exp(-U(a, b) - W(b))
    raw = np.exp(-U - np.array(w)[None, :])
    assert np.allclose(kern.M, raw / raw.sum(axis=1, keepdims=True), atol=1e-12)
    flow = kern.pi[:, None] * kern.M
    assert np.allclose(flow, flow.T, atol=1e-14)


MODEL_TEXT = """# hard-core style model
k=3
type=custom
U(1,1)=hard
U(1,2)=0.25
W(3)=-1.5
"""


def test_model_file_parse_and_echo():
    spec = parse_model(MODEL_TEXT)
    assert spec.k == 3 and spec.kind == "custom"
    assert spec.U[(0, 0)] is HARD
    text = format_model(spec)
    assert parse_model(text) == spec
    assert format_model(parse_model(text)) == text
    kern = spec.kernel()
    assert kern.M[0, 0] == 0.0 and kern.hard_mask[0, 0]


def test_model_file_coloring():
    spec = parse_model("k=5\ntype=coloring\n")
    assert spec.kernel().is_coloring()
    assert format_model(spec) == "k=5\ntype=coloring\n"


@pytest.mark.parametrize("text", ["type=custom\n", "k=3\nfoo=1\n", "k=3\nU(1,4)=1\n", "k=x\n", "k=3\nU(1,2)=abc\n", "k=3\nnot a pair\n"])
def test_model_file_errors(text):
    with pytest.raises(ModelFileError):
        parse_model(text)
