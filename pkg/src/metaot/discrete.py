"""Amortized prediction of entropic dual potentials.

A WarmStartModel maps a pair of weight vectors on fixed supports to the
row potential ``f``; ``g`` always follows analytically from ``g_from_f``.
Training minimizes the mean of ``J(f_hat)`` over freshly sampled pairs and
never needs a solved potential as a target.
"""
import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InvalidParameter, NonFiniteGradient
from .measures import gibbs_kernel
from .nn.mlp import MlpParams, init_mlp, mlp_backward, mlp_forward
from .nn.optim import adam_init, adam_step, cosine_lr
from .sinkhorn import (
    DualPair,
    EntropicProblem,
    batch_dual_objective_f,
    g_from_f,
    marginal_error,
    sinkhorn,
)


@dataclass
class MetaTaskSpec:
    """A task family: fixed supports and cost, plus a sampler of weight pairs.

    ``sampler(rng, batch)`` must return strictly positive ``(a, b)`` arrays
    of shapes (batch, m) and (batch, n), rows on the simplex.
    """

    cost: np.ndarray
    epsilon: float
    sampler: object
    tag: str = "custom"
    support_a: np.ndarray = None
    support_b: np.ndarray = None

    def __post_init__(self):
        self.cost = np.asarray(self.cost, dtype=np.float64)
        if self.cost.ndim != 2:
            raise DimensionError("cost must be a matrix")
        if self.epsilon <= 0:
            raise InvalidParameter("epsilon must be positive")
        for support, size in ((self.support_a, self.cost.shape[0]),
                              (self.support_b, self.cost.shape[1])):
            if support is not None and len(support) != size:
                raise DimensionError("support size does not match the cost matrix")
        self.kernel = gibbs_kernel(self.cost, self.epsilon)

    @property
    def m(self):
        return self.cost.shape[0]

    @property
    def n(self):
        return self.cost.shape[1]

    def sample(self, rng, batch):
        a, b = self.sampler(rng, batch)
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if a.shape != (batch, self.m) or b.shape != (batch, self.n):
            raise DimensionError("sampler returned arrays of the wrong shape")
        return a, b

    def problem(self, a, b):
        return EntropicProblem(a, b, self.kernel)


@dataclass
class WarmStartModel:
    """MLP on ``featurize(a, b)`` whose output times ``output_scale`` is ``f``.

    With ``log_skip`` the prediction also has the fixed term
    ``output_scale * log(m a)``, the ``epsilon log a`` part of the optimal
    potential, so the network only has to fit the remainder.
    """

    mlp: MlpParams
    m: int
    n: int
    output_scale: float = 1.0
    log_skip: bool = False

    def __post_init__(self):
        sizes = self.mlp.sizes
        if sizes[0] != self.m + self.n or sizes[-1] != self.m:
            raise DimensionError(f"MLP sizes {sizes} do not fit m={self.m}, n={self.n}")

    def copy(self):
        return WarmStartModel(self.mlp.copy(), self.m, self.n, self.output_scale, self.log_skip)


def init_warm_start(rng, m, n, hidden=(256, 256), epsilon=1.0, log_skip=True):
    """Fresh model predicting ``f / epsilon``; its network output starts at zero."""
    mlp = init_mlp(rng, [m + n, *hidden, m])
    mlp.weights[-1][:] = 0
    return WarmStartModel(mlp, m, n, float(epsilon), bool(log_skip))


def featurize(a, b, m=None, n=None):
    """Concatenate ``[m a; n b]`` so that uniform weights become all ones."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if (m is not None and a.shape[-1] != m) or (n is not None and b.shape[-1] != n):
        raise DimensionError("weights do not match the task supports")
    if a.shape[:-1] != b.shape[:-1]:
        raise DimensionError("a and b batch shapes differ")
    return np.concatenate([a * a.shape[-1], b * b.shape[-1]], axis=-1)


def _gauge(raw, a):
    return raw - np.sum(raw * a, axis=-1, keepdims=True)


def _skip(model, x):
    if not model.log_skip:
        return 0.0
    return model.output_scale * np.log(x[..., :model.m].astype(np.float64))


def predict_f(model, a, b):
    """Predicted row potential, recentered so that ``sum_i f_i a_i = 0``."""
    x = featurize(a, b, model.m, model.n)
    raw = mlp_forward(model.mlp, x.astype(model.mlp.weights[0].dtype)).astype(np.float64)
    return _gauge(raw * model.output_scale + _skip(model, x), np.asarray(a, dtype=np.float64))


def amortization_loss(model, a, b, log_k, epsilon, with_grad=True):
    """Mean ``J(f_hat)`` over a batch and, optionally, its MLP parameter gradients.

    The cotangent of ``f_hat`` is ``dual_grad_f`` (row marginal minus ``a``),
    pushed back through the gauge fixing and then through the MLP.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if len(a) == 0:
        raise InvalidParameter("batch must be nonempty")
    dtype = model.mlp.weights[0].dtype
    feats = featurize(a, b, model.m, model.n)
    x = feats.astype(dtype)
    raw, cache = mlp_forward(model.mlp, x, return_cache=True)
    f = _gauge(raw.astype(np.float64) * model.output_scale + _skip(model, feats), a)
    J, grad_f, _ = batch_dual_objective_f(log_k, epsilon, a, b, f)
    loss = float(np.mean(J))
    if not with_grad:
        return loss
    cot_f = grad_f / len(a)
    cot_raw = (cot_f - a * np.sum(cot_f, axis=1, keepdims=True)) * model.output_scale
    grads, _ = mlp_backward(model.mlp, x, cot_raw.astype(dtype), cache=cache)
    return loss, grads


@dataclass
class MetaConfig:
    iters: int = 50000
    batch_size: int = 128
    lr: float = 1e-3
    hidden: tuple = (256, 256)
    log_skip: bool = True
    schedule: str = "cosine"


def train_meta(task, config, rng, model=None, callback=None):
    """Adam on the amortization objective with fresh samples every step.

    Returns the trained model and the per-iteration loss history.
    """
    if model is None:
        model = init_warm_start(rng, task.m, task.n, config.hidden, task.epsilon, config.log_skip)
    else:
        model = model.copy()
    arrays = model.mlp.arrays()
    state = adam_init(arrays, lr=config.lr)
    history = []
    log_k = task.kernel.log_k
    if config.schedule not in ("constant", "cosine"):
        raise InvalidParameter(f"unknown schedule {config.schedule!r}")
    for it in range(config.iters):
        if config.schedule == "cosine":
            state.lr = cosine_lr(config.lr, it, config.iters)
        a, b = task.sample(rng, config.batch_size)
        loss, grads = amortization_loss(model, a, b, log_k, task.epsilon)
        if not np.isfinite(loss):
            raise NonFiniteGradient("amortization loss is not finite", it)
        state, arrays = adam_step(state, arrays, grads.arrays())
        model = WarmStartModel(MlpParams.from_arrays(arrays), model.m, model.n,
                               model.output_scale, model.log_skip)
        history.append(loss)
        if callback is not None:
            callback(it, model, loss)
    return model, history


def finetune_sinkhorn(model, problem, max_iter=5000, tol=1e-3):
    """Predict ``f``, complete it with ``g_from_f`` and refine with Sinkhorn."""
    if problem.shape != (model.m, model.n):
        raise DimensionError("model and problem sizes differ")
    f0 = predict_f(model, problem.a, problem.b)
    g0 = g_from_f(problem, f0)
    return sinkhorn(problem, f0, g0, max_iter=max_iter, tol=tol)


def zero_model(m, n, hidden=(8,)):
    """A model whose prediction is identically zero (the default initialization)."""
    mlp = init_mlp(np.random.default_rng(0), [m + n, *hidden, m])
    mlp.weights[-1][:] = 0
    mlp.biases[-1][:] = 0
    return WarmStartModel(mlp, m, n)


@dataclass
class BenchmarkRecord:
    instance_id: int
    arm: str
    iterations: int
    final_error: float
    init_error: float
    predict_seconds: float
    solve_seconds: float
    converged: bool = True
    error_trace: list = field(default_factory=list, repr=False)

    def row(self):
        return [self.instance_id, self.arm, self.iterations, repr(self.final_error),
                repr(self.init_error), f"{self.predict_seconds:.6e}", f"{self.solve_seconds:.6e}"]


BENCHMARK_COLUMNS = ["instance_id", "arm", "iterations", "final_error", "init_error",
                     "predict_seconds", "solve_seconds"]


def benchmark(model, problems, tol=1e-3, max_iter=5000):
    """Solve each problem from the default and from the predicted initialization.

    Both arms start from ``(f0, g_from_f(f0))``: ``f0 = 0`` for ``default``
    and the model prediction for ``meta``. Records come in (default, meta)
    order per instance.
    """
    if not problems:
        raise InvalidParameter("benchmark needs at least one problem")
    records = []
    for k, problem in enumerate(problems):
        for arm in ("default", "meta"):
            t0 = time.perf_counter()
            if arm == "meta":
                f0 = predict_f(model, problem.a, problem.b)
            else:
                f0 = np.zeros(problem.shape[0])
            g0 = g_from_f(problem, f0)
            t1 = time.perf_counter()
            res = sinkhorn(problem, f0, g0, max_iter=max_iter, tol=tol)
            t2 = time.perf_counter()
            records.append(BenchmarkRecord(
                instance_id=k, arm=arm, iterations=res.iterations,
                final_error=res.error_trace[-1], init_error=res.error_trace[0],
                predict_seconds=t1 - t0, solve_seconds=t2 - t1,
                converged=res.converged, error_trace=res.error_trace))
    return records


def write_benchmark_csv(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BENCHMARK_COLUMNS)
        for r in records:
            writer.writerow(r.row())


def summarize(records):
    """Median iterations and fraction of instances where meta starts closer."""
    by_arm = {"default": [], "meta": []}
    for r in records:
        by_arm[r.arm].append(r)
    default, meta = by_arm["default"], by_arm["meta"]
    better = sum(m.init_error < d.init_error for d, m in zip(default, meta))
    return {
        "instances": len(default),
        "median_iterations_default": float(np.median([r.iterations for r in default])),
        "median_iterations_meta": float(np.median([r.iterations for r in meta])),
        "median_init_error_default": float(np.median([r.init_error for r in default])),
        "median_init_error_meta": float(np.median([r.init_error for r in meta])),
        "meta_init_better": better,
    }


def initial_error(problem, f):
    return marginal_error(problem, DualPair(f, g_from_f(problem, f)))
