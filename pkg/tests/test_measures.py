import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from metaot.errors import DimensionError, InvalidEpsilon, InvalidParameter, InvalidWeights, \
    NotOnSphere
from metaot.measures import (
    DiscreteMeasure,
    displacement_interpolation,
    gibbs_kernel,
    grid_points,
    image_to_measure,
    normalize_weights,
    spherical_cost,
    squared_euclidean_cost,
)

finite = st.floats(-10, 10, allow_nan=False)


def test_normalize_weights_examples():
    np.testing.assert_allclose(normalize_weights([1, 1]), [0.5, 0.5])
    np.testing.assert_allclose(normalize_weights([2, 0, 2]), [0.5, 0, 0.5])
    with pytest.raises(InvalidWeights):
        normalize_weights([0, 0])
    with pytest.raises(InvalidWeights):
        normalize_weights([1, -1, 2])


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(0, 1e6)))
def test_normalize_weights_simplex(raw):
    if not raw.any():
        with pytest.raises(InvalidWeights):
            normalize_weights(raw)
        return
    w = normalize_weights(raw)
    assert abs(w.sum() - 1) <= 1e-9
    assert np.all(w >= 0)
    k = np.argmax(raw)
    np.testing.assert_allclose(w * raw[k], raw * w[k], rtol=1e-12, atol=1e-300)


def test_measure_rejects_bad_input():
    with pytest.raises(InvalidWeights):
        DiscreteMeasure(np.zeros((2, 2)), [0.7, 0.7])
    with pytest.raises(DimensionError):
        DiscreteMeasure(np.zeros((3, 2)), [0.5, 0.5])
    with pytest.raises((InvalidParameter, InvalidWeights, DimensionError)):
        DiscreteMeasure(np.array([[np.nan, 0.0]]), [1.0])


def test_measure_is_immutable():
    mu = DiscreteMeasure(np.zeros((2, 2)), [0.5, 0.5])
    with pytest.raises(ValueError):
        mu.weights[0] = 1.0


def test_squared_euclidean_examples():
    assert squared_euclidean_cost([[0, 0]], [[0, 0]])[0, 0] == 0
    assert squared_euclidean_cost([[0, 0]], [[3, 4]])[0, 0] == 25
    with pytest.raises(DimensionError):
        squared_euclidean_cost(np.zeros((2, 2)), np.zeros((2, 3)))


@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 4)), elements=finite))
def test_squared_euclidean_self_cost(X):
    C = squared_euclidean_cost(X, X)
    assert np.all(np.diag(C) == 0)
    assert np.array_equal(C, C.T)
    assert np.all(C >= 0)


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def test_spherical_examples():
    x = _unit([[1.0, 2.0, 3.0]])
    assert spherical_cost(x, x)[0, 0] == pytest.approx(0, abs=1e-7)
    assert spherical_cost(x, -x)[0, 0] == pytest.approx(np.pi)
    assert spherical_cost([[1, 0, 0]], [[0, 1, 0]])[0, 0] == pytest.approx(np.pi / 2)
    with pytest.raises(NotOnSphere):
        spherical_cost([[1.0, 1.0, 0.0]], [[1.0, 0.0, 0.0]])


@given(arrays(np.float64, st.tuples(st.integers(1, 10), st.just(3)),
              elements=st.floats(-1, 1)).filter(lambda a: np.all(np.linalg.norm(a, axis=1) > 1e-3)))
def test_spherical_range(X):
    X = _unit(X)
    C = spherical_cost(X, X[::-1])
    assert np.all((C >= 0) & (C <= np.pi))


def test_gibbs_kernel_examples():
    k = gibbs_kernel(np.zeros((2, 3)), 0.5)
    assert np.all(k.log_k == 0)
    eps = 0.1
    assert np.exp(gibbs_kernel(np.full((1, 1), eps), eps).log_k[0, 0]) == pytest.approx(np.exp(-1))
    for bad in (0.0, -1.0):
        with pytest.raises(InvalidEpsilon):
            gibbs_kernel(np.zeros((1, 1)), bad)


def test_gibbs_kernel_no_underflow():
    k = gibbs_kernel(np.full((2, 2), 10.0), 1e-4)
    assert np.all(np.isfinite(k.log_k)) and np.all(k.log_k == -1e5)


def test_grid_points_centers():
    X = grid_points(2, 4)
    np.testing.assert_allclose(X[0], [0.25, 0.125])
    np.testing.assert_allclose(X[-1], [0.75, 0.875])
    assert squared_euclidean_cost(X, X).max() <= 2


def test_image_to_measure_examples():
    mu = image_to_measure(np.ones((2, 2)))
    assert mu.size == 4
    np.testing.assert_allclose(mu.weights, 0.25)
    img = np.zeros((3, 3))
    img[1, 2] = 7
    mu, idx = image_to_measure(img, return_index=True)
    assert mu.size == 1 and mu.weights[0] == 1 and idx[0] == 5
    np.testing.assert_allclose(mu.atoms[0], [0.5, 5 / 6])
    with pytest.raises(InvalidWeights):
        image_to_measure(np.zeros((2, 2)))
    assert image_to_measure(img, drop_zeros=False).size == 9


pixels = st.one_of(st.just(0.0), st.floats(1e-3, 255))


@given(arrays(np.float64, (4, 5), elements=pixels).filter(lambda a: (a > 0).sum() >= 2))
def test_image_to_measure_preserves_ratios(img):
    mu, idx = image_to_measure(img, return_index=True)
    flat = img.ravel()[idx]
    np.testing.assert_allclose(mu.weights / mu.weights[0], flat / flat[0], rtol=1e-12)


def test_displacement_endpoints_and_midpoint():
    rng = np.random.default_rng(0)
    P = rng.uniform(size=(3, 4))
    P /= P.sum()
    X, Y = rng.normal(size=(3, 2)), rng.normal(size=(4, 2))
    at0 = displacement_interpolation(P, X, Y, 0.0)
    # atoms are emitted per (i, j); aggregate by source atom
    agg = np.zeros(3)
    for z, w in zip(at0.atoms, at0.weights):
        agg[np.argmin(np.linalg.norm(X - z, axis=1))] += w
    np.testing.assert_allclose(agg, P.sum(1), atol=1e-12)
    at1 = displacement_interpolation(P, X, Y, 1.0)
    agg = np.zeros(4)
    for z, w in zip(at1.atoms, at1.weights):
        agg[np.argmin(np.linalg.norm(Y - z, axis=1))] += w
    np.testing.assert_allclose(agg, P.sum(0), atol=1e-12)

    mid = displacement_interpolation(np.eye(2) / 2, [[0.0, 0.0], [1.0, 1.0]],
                                     [[2.0, 0.0], [1.0, 3.0]], 0.5)
    np.testing.assert_allclose(mid.atoms, [[1.0, 0.0], [1.0, 2.0]])
    np.testing.assert_allclose(mid.weights, [0.5, 0.5])
    with pytest.raises(InvalidParameter):
        displacement_interpolation(P, X, Y, 1.5)


@settings(max_examples=50)
@given(st.integers(1, 6), st.integers(1, 6), st.floats(0, 1), st.integers(0, 2**31))
def test_displacement_weights_on_simplex(m, n, t, seed):
    rng = np.random.default_rng(seed)
    P = rng.uniform(size=(m, n)) * (rng.uniform(size=(m, n)) > 0.3)
    if P.sum() == 0:
        P[0, 0] = 1
    P /= P.sum()
    mu = displacement_interpolation(P, rng.normal(size=(m, 2)), rng.normal(size=(n, 2)), t)
    assert abs(mu.weights.sum() - 1) <= 1e-9
