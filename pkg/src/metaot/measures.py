"""Discrete measures, ground costs and Gibbs kernels."""
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionError,
    InvalidEpsilon,
    InvalidParameter,
    InvalidWeights,
    NotOnSphere,
)

SIMPLEX_TOL = 1e-9
WEIGHT_FLOOR = 1e-12


def _frozen(arr):
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def normalize_weights(raw):
    """Scale a nonnegative vector onto the probability simplex."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1 or raw.size == 0:
        raise InvalidWeights("weights must be a nonempty vector")
    if not np.all(np.isfinite(raw)) or np.any(raw < 0):
        raise InvalidWeights("weights must be finite and nonnegative")
    total = raw.sum()
    if total <= 0:
        raise InvalidWeights("at least one weight must be positive")
    return raw / total


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted atoms ``sum_i a_i delta_{x_i}`` with ``a`` on the simplex."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=np.float64)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        weights = np.asarray(self.weights, dtype=np.float64)
        if atoms.ndim != 2 or weights.ndim != 1 or atoms.shape[0] != weights.shape[0]:
            raise DimensionError(
                f"atoms {atoms.shape} and weights {weights.shape} do not match"
            )
        if not np.all(np.isfinite(atoms)):
            raise InvalidParameter("atoms must be finite")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > SIMPLEX_TOL:
            raise InvalidWeights("weights must lie on the probability simplex")
        object.__setattr__(self, "atoms", _frozen(atoms))
        object.__setattr__(self, "weights", _frozen(weights))

    @property
    def size(self):
        return self.atoms.shape[0]

    @property
    def dim(self):
        return self.atoms.shape[1]


@dataclass(frozen=True)
class GibbsKernel:
    """Log-domain Gibbs kernel ``log K = -C / epsilon``."""

    log_k: np.ndarray
    epsilon: float

    @property
    def shape(self):
        return self.log_k.shape


def _as_points(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return X


def squared_euclidean_cost(X, Y):
    X, Y = _as_points(X), _as_points(Y)
    if X.shape[1] != Y.shape[1]:
        raise DimensionError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    # explicit differences keep the diagonal exactly zero when X is Y
    diff = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def spherical_cost(X, Y, atol=1e-6):
    """Geodesic distance ``arccos(<x, y>)`` between unit vectors in R^3."""
    X, Y = _as_points(X), _as_points(Y)
    if X.shape[1] != 3 or Y.shape[1] != 3:
        raise DimensionError("spherical cost expects points in R^3")
    for P in (X, Y):
        if np.any(np.abs(np.linalg.norm(P, axis=1) - 1.0) > atol):
            raise NotOnSphere("all points must have unit norm")
    inner = np.clip(X @ Y.T, -1.0, 1.0)
    return np.arccos(inner)


def gibbs_kernel(C, epsilon):
    if not np.isfinite(epsilon) or epsilon <= 0:
        raise InvalidEpsilon(f"epsilon must be positive, got {epsilon}")
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or not np.all(np.isfinite(C)) or np.any(C < 0):
        raise InvalidParameter("cost matrix must be 2-D, finite and nonnegative")
    log_k = -C / epsilon
    log_k.setflags(write=False)
    return GibbsKernel(log_k, float(epsilon))


def grid_points(h, w):
    """Pixel-center coordinates ``((i + 0.5) / h, (j + 0.5) / w)`` in row-major order."""
    rows = (np.arange(h) + 0.5) / h
    cols = (np.arange(w) + 0.5) / w
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1)


def image_to_measure(grid, drop_zeros=True, return_index=False):
    """Turn an intensity image into a measure on the unit square.

    Zero-intensity pixels are dropped unless ``drop_zeros`` is False. With
    ``return_index`` the flat pixel indices of the retained atoms are also
    returned, which is what rasterization needs to go back to the grid.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise DimensionError("image must be a 2-D grid")
    h, w = grid.shape
    flat = grid.ravel()
    weights = normalize_weights(flat)
    atoms = grid_points(h, w)
    index = np.arange(flat.size)
    if drop_zeros:
        keep = flat > 0
        atoms, weights, index = atoms[keep], weights[keep], index[keep]
        weights = weights / weights.sum()
    mu = DiscreteMeasure(atoms, weights)
    return (mu, index) if return_index else mu


def displacement_interpolation(P, X, Y, t):
    """McCann interpolant: mass ``P_ij`` moved to ``(1 - t) x_i + t y_j``."""
    if not 0.0 <= t <= 1.0:
        raise InvalidParameter(f"t must lie in [0, 1], got {t}")
    P = np.asarray(P, dtype=np.float64)
    X, Y = _as_points(X), _as_points(Y)
    if P.shape != (X.shape[0], Y.shape[0]) or X.shape[1] != Y.shape[1]:
        raise DimensionError("coupling shape does not match atoms")
    if np.any(P < 0) or abs(P.sum() - 1.0) > 1e-6:
        raise InvalidWeights("coupling must be nonnegative with unit mass")
    i, j = np.nonzero(P >= WEIGHT_FLOOR)
    atoms = (1.0 - t) * X[i] + t * Y[j]
    weights = P[i, j]
    return DiscreteMeasure(atoms, weights / weights.sum())
