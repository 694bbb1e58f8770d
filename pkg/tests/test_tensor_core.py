import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import dense_kron
from tensorclust.tensor_core import (
    batch_tucker, fold, frobenius_norm, inner, matricize, mode_mult, tucker, unvectorize, vectorize,
)

dims_st = st.lists(st.integers(1, 4), min_size=1, max_size=4).map(tuple)


def tensors(dims):
    return arrays(np.float64, dims, elements=st.floats(-10, 10, allow_nan=False))


def test_vectorize_matrix_layout():
    A = np.array([[1.0, 3.0], [2.0, 4.0]])
    assert vectorize(A).tolist() == [1, 2, 3, 4]


def test_vectorize_index_formula():
    dims = (2, 3, 2)
    T = np.zeros(dims)
    for i1, i2, i3 in itertools.product(*(range(1, d + 1) for d in dims)):
        T[i1 - 1, i2 - 1, i3 - 1] = i1 + 10 * i2 + 100 * i3
    v = vectorize(T)
    for i1, i2, i3 in itertools.product(*(range(1, d + 1) for d in dims)):
        pos = i1 + (i2 - 1) * 2 + (i3 - 1) * 6
        assert v[pos - 1] == i1 + 10 * i2 + 100 * i3
    assert v[5] == T[1, 2, 0]


def _matricize_by_loops(T, m):
    dims = T.shape
    others = [k for k in range(len(dims)) if k != m]
    out = np.zeros((dims[m], T.size // dims[m]))
    for idx in itertools.product(*(range(d) for d in dims)):
        col, stride = 0, 1
        for k in others:
            col += idx[k] * stride
            stride *= dims[k]
        out[idx[m], col] = T[idx]
    return out


@pytest.mark.parametrize("m", [0, 1, 2])
def test_matricize_matches_index_loops(rng, m):
    T = rng.standard_normal((2, 3, 4))
    np.testing.assert_array_equal(matricize(T, m), _matricize_by_loops(T, m))


def test_matricize_of_matrix(rng):
    A = rng.standard_normal((3, 5))
    np.testing.assert_array_equal(matricize(A, 0), A)
    np.testing.assert_array_equal(matricize(A, 1), A.T)


def test_bad_mode_rejected(rng):
    with pytest.raises(ValueError):
        matricize(rng.standard_normal((2, 2)), 2)
    with pytest.raises(ValueError):
        mode_mult(rng.standard_normal((2, 3)), np.eye(4), 1)


@given(dims_st.flatmap(lambda d: st.tuples(st.just(d), tensors(d))), st.integers(0, 3))
def test_fold_inverts_matricize(args, m):
    dims, T = args
    m = m % len(dims)
    np.testing.assert_array_equal(fold(matricize(T, m), m, dims), T)


@given(dims_st.flatmap(tensors))
def test_unvectorize_inverts_vectorize(T):
    np.testing.assert_array_equal(unvectorize(vectorize(T), T.shape), T)


def test_mode_mult_is_matrix_product_on_unfolding(rng):
    T = rng.standard_normal((3, 4, 2))
    G = rng.standard_normal((5, 4))
    out = mode_mult(T, G, 1)
    assert out.shape == (3, 5, 2)
    np.testing.assert_allclose(matricize(out, 1), G @ matricize(T, 1), atol=1e-12)


def test_tucker_matches_kronecker(rng):
    dims = (3, 4, 2)
    T = rng.standard_normal(dims)
    Gs = [rng.standard_normal((d, d)) for d in dims]
    np.testing.assert_allclose(vectorize(tucker(T, Gs)), dense_kron(Gs) @ vectorize(T), rtol=1e-12, atol=1e-12)


def test_tucker_skips_none_factors(rng):
    T = rng.standard_normal((2, 3))
    G = rng.standard_normal((3, 3))
    np.testing.assert_allclose(tucker(T, [None, G]), mode_mult(T, G, 1))


def test_tucker_identity_is_noop(rng):
    T = rng.standard_normal((2, 3, 2))
    np.testing.assert_allclose(tucker(T, [np.eye(d) for d in T.shape]), T)


def test_batch_tucker_acts_per_observation(rng):
    X = rng.standard_normal((5, 3, 2))
    Gs = [rng.standard_normal((3, 3)), rng.standard_normal((2, 2))]
    out = batch_tucker(X, Gs)
    for i in range(5):
        np.testing.assert_allclose(out[i], tucker(X[i], Gs), atol=1e-12)


@given(dims_st.flatmap(lambda d: st.tuples(tensors(d), tensors(d))))
def test_inner_is_vector_dot(pair):
    A, B = pair
    assert inner(A, B) == pytest.approx(float(vectorize(A) @ vectorize(B)), abs=1e-9)
    assert frobenius_norm(A) == pytest.approx(np.sqrt(inner(A, A)), abs=1e-9)


def test_inner_shape_mismatch(rng):
    with pytest.raises(ValueError):
        inner(np.zeros((2, 3)), np.zeros((3, 2)))
