"""Log-domain entropic optimal transport.

Conventions: ``f`` has length m and pairs with ``a`` (rows of the kernel),
``g`` has length n and pairs with ``b`` (columns). Every kernel contraction
is a max-shifted log-sum-exp so that ``C / eps`` in the hundreds is harmless.
"""
import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InvalidParameter, InvalidWeights, NumericalOverflow
from .measures import SIMPLEX_TOL, GibbsKernel, gibbs_kernel

EXP_LIMIT = 700.0


def logsumexp(M, axis=None):
    M = np.asarray(M)
    top = np.max(M, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    out = np.log(np.sum(np.exp(M - top), axis=axis, keepdims=True)) + top
    if axis is None:
        return out.reshape(())[()]
    return np.squeeze(out, axis=axis)


@dataclass(frozen=True)
class EntropicProblem:
    a: np.ndarray
    b: np.ndarray
    kernel: GibbsKernel

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if self.kernel.shape != (a.size, b.size):
            raise DimensionError(
                f"kernel {self.kernel.shape} does not match weights ({a.size}, {b.size})"
            )
        for w in (a, b):
            if np.any(w <= 0) or abs(w.sum() - 1.0) > SIMPLEX_TOL:
                raise InvalidWeights("weights must be strictly positive and sum to one")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_cost(cls, a, b, C, epsilon):
        return cls(a, b, gibbs_kernel(C, epsilon))

    @property
    def epsilon(self):
        return self.kernel.epsilon

    @property
    def log_k(self):
        return self.kernel.log_k

    @property
    def shape(self):
        return self.kernel.shape


@dataclass(frozen=True)
class DualPair:
    f: np.ndarray
    g: np.ndarray


@dataclass
class SinkhornResult:
    duals: DualPair
    coupling: np.ndarray
    iterations: int
    error_trace: list
    converged: bool
    objective_trace: list = field(default_factory=list)

    def write_trace_csv(self, path):
        """Write ``iteration,marginal_error,dual_objective``; row 0 is the initialization."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "marginal_error", "dual_objective"])
            for it, (err, obj) in enumerate(zip(self.error_trace, self.objective_trace)):
                writer.writerow([it, repr(float(err)), repr(float(obj))])


def _check_vector(v, size, name):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (size,):
        raise DimensionError(f"{name} has shape {v.shape}, expected ({size},)")
    if not np.all(np.isfinite(v)):
        raise InvalidParameter(f"{name} must be finite")
    return v


def g_from_f(problem, f):
    """Column potential that makes the column marginal exactly ``b``."""
    eps = problem.epsilon
    f = _check_vector(f, problem.shape[0], "f")
    return eps * np.log(problem.b) - eps * logsumexp(problem.log_k + f[:, None] / eps, axis=0)


def f_from_g(problem, g):
    eps = problem.epsilon
    g = _check_vector(g, problem.shape[1], "g")
    return eps * np.log(problem.a) - eps * logsumexp(problem.log_k + g[None, :] / eps, axis=1)


def _log_coupling(problem, duals):
    eps = problem.epsilon
    f = _check_vector(duals.f, problem.shape[0], "f")
    g = _check_vector(duals.g, problem.shape[1], "g")
    return f[:, None] / eps + problem.log_k + g[None, :] / eps


def recover_coupling(problem, duals):
    expo = _log_coupling(problem, duals)
    if np.max(expo) > EXP_LIMIT:
        raise NumericalOverflow("coupling exponent exceeds the overflow guard")
    return np.exp(expo)


def _log_marginals(problem, duals):
    expo = _log_coupling(problem, duals)
    if np.max(expo) > EXP_LIMIT:
        raise NumericalOverflow("coupling exponent exceeds the overflow guard")
    return logsumexp(expo, axis=1), logsumexp(expo, axis=0)


def _diagnostics(problem, duals):
    log_rows, log_cols = _log_marginals(problem, duals)
    rows, cols = np.exp(log_rows), np.exp(log_cols)
    err = np.abs(rows - problem.a).sum() + np.abs(cols - problem.b).sum()
    obj = duals.f @ problem.a + duals.g @ problem.b - problem.epsilon * rows.sum()
    return float(err), float(obj)


def marginal_error(problem, duals):
    """``||P 1 - a||_1 + ||P^T 1 - b||_1`` for the coupling induced by the duals."""
    return _diagnostics(problem, duals)[0]


def dual_objective(problem, duals):
    expo = _log_coupling(problem, duals)
    mass_log = logsumexp(expo)
    if mass_log > EXP_LIMIT:
        raise NumericalOverflow("dual objective mass term overflows")
    return float(duals.f @ problem.a + duals.g @ problem.b - problem.epsilon * np.exp(mass_log))


def dual_objective_f(problem, f):
    """J(f) = -(<f, a> + <g(f), b>); minimized by the optimal potential."""
    f = _check_vector(f, problem.shape[0], "f")
    return float(-(f @ problem.a + g_from_f(problem, f) @ problem.b))


def dual_grad_f(problem, f):
    """Gradient of ``dual_objective_f``: row marginal of P(f, g(f)) minus ``a``."""
    f = _check_vector(f, problem.shape[0], "f")
    g = g_from_f(problem, f)
    log_rows, _ = _log_marginals(problem, DualPair(f, g))
    return np.exp(log_rows) - problem.a


def sinkhorn(problem, f0=None, g0=None, max_iter=5000, tol=1e-3):
    """Alternating f- then g-updates from ``(f0, g0)`` until the marginal error drops below ``tol``.

    The initialization is checked first, so converged duals return after zero
    iterations. ``error_trace[k]`` is the error after ``k`` iterations.
    """
    if tol <= 0 or max_iter < 1:
        raise InvalidParameter("tol must be positive and max_iter at least 1")
    m, n = problem.shape
    f = np.zeros(m) if f0 is None else _check_vector(f0, m, "f0").copy()
    g = np.zeros(n) if g0 is None else _check_vector(g0, n, "g0").copy()

    err, obj = _diagnostics(problem, DualPair(f, g))
    errors, objectives = [err], [obj]
    iterations = 0
    while err >= tol and iterations < max_iter:
        f = f_from_g(problem, g)
        g = g_from_f(problem, f)
        iterations += 1
        err, obj = _diagnostics(problem, DualPair(f, g))
        errors.append(err)
        objectives.append(obj)

    duals = DualPair(f, g)
    return SinkhornResult(
        duals=duals,
        coupling=recover_coupling(problem, duals),
        iterations=iterations,
        error_trace=errors,
        converged=err < tol,
        objective_trace=objectives,
    )


def solve_batch(problems, inits=None, max_iter=5000, tol=1e-3):
    """Solve each problem in order; a failing element yields its exception in place."""
    if inits is None:
        inits = [(None, None)] * len(problems)
    if len(inits) != len(problems):
        raise DimensionError("problems and inits must have equal length")
    results = []
    for problem, (f0, g0) in zip(problems, inits):
        try:
            results.append(sinkhorn(problem, f0, g0, max_iter=max_iter, tol=tol))
        except (NumericalOverflow, DimensionError, InvalidParameter) as exc:
            results.append(exc)
    return results


# Batched routines for training: many weight pairs on one shared kernel.

def batch_g_from_f(log_k, epsilon, b, f):
    """Row-wise ``g_from_f`` for ``f`` of shape (B, m) and ``b`` of shape (B, n)."""
    M = log_k[None, :, :] + f[:, :, None] / epsilon
    return epsilon * np.log(b) - epsilon * logsumexp(M, axis=1)


def batch_dual_objective_f(log_k, epsilon, a, b, f):
    """Per-instance ``J(f)`` and its gradient ``P 1 - a`` for a batch of potentials."""
    M = log_k[None, :, :] + f[:, :, None] / epsilon
    top = M.max(axis=1, keepdims=True)
    np.subtract(M, top, out=M)
    E = np.exp(M, out=M)
    S = E.sum(axis=1)
    g = epsilon * (np.log(b) - top[:, 0, :] - np.log(S))
    J = -(np.sum(f * a, axis=1) + np.sum(g * b, axis=1))
    # P_ij = E_ij b_j / S_j, so the row sums reuse the same exponentials
    grad = np.einsum("bij,bj->bi", E, b / S) - a
    return J, grad, g
