"""Input-convex potentials, the W2GN objective and Brenier maps.

An ICNN here is

    z_0 = softplus(x A_0 + b_0)
    z_l = softplus(z_{l-1} Wz_l + x A_l + b_l)        Wz_l >= 0
    psi(x) = z_L . w_out + x . a_lin + c + 0.5 * ||x Q||^2,   w_out >= 0

which is convex in ``x``. The quadratic skip lets the default initialization
start at (nearly) the identity map. The transport map is ``grad psi``, written
out explicitly in tape ops so that the W2GN cycle term can be differentiated
through it.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NonFiniteGradient, NumericalOverflow
from .nn import autodiff as ad
from .nn.optim import adam_init, adam_step, clip_global_norm
from .nn.rng import truncated_normal


@dataclass
class IcnnParams:
    arrays: dict
    dim: int
    hidden: tuple

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        expected = icnn_shapes(self.dim, self.hidden)
        if list(self.arrays) != list(expected):
            raise DimensionError("ICNN arrays are not in canonical order")
        for name, shape in expected.items():
            if self.arrays[name].shape != shape:
                raise DimensionError(f"{name}: shape {self.arrays[name].shape} != {shape}")

    @property
    def num_params(self):
        return sum(v.size for v in self.arrays.values())

    def copy(self):
        return IcnnParams({k: v.copy() for k, v in self.arrays.items()}, self.dim, self.hidden)

    def astype(self, dtype):
        return IcnnParams({k: v.astype(dtype) for k, v in self.arrays.items()}, self.dim, self.hidden)

    def flat(self):
        return np.concatenate([v.ravel() for v in self.arrays.values()])

    @classmethod
    def from_flat(cls, vec, dim, hidden):
        arrays, pos = {}, 0
        for name, shape in icnn_shapes(dim, hidden).items():
            size = int(np.prod(shape))
            arrays[name] = np.asarray(vec[pos:pos + size]).reshape(shape)
            pos += size
        return cls(arrays, dim, hidden)


def icnn_shapes(dim, hidden):
    shapes = {}
    for l, h in enumerate(hidden):
        shapes[f"ax{l}"] = (dim, h)
        shapes[f"b{l}"] = (h,)
        if l:
            shapes[f"wz{l}"] = (hidden[l - 1], h)
    shapes["w_out"] = (hidden[-1],)
    shapes["a_lin"] = (dim,)
    shapes["c"] = ()
    shapes["quad"] = (dim, dim)
    return shapes


def is_constrained(name):
    """Entries that must stay nonnegative for convexity."""
    return name.startswith("wz") or name == "w_out"


def init_icnn(rng, dim, hidden=(64, 64), dtype=np.float32):
    arrays = {}
    for name, shape in icnn_shapes(dim, hidden).items():
        if name.startswith("ax"):
            arrays[name] = truncated_normal(rng, shape, np.sqrt(1.0 / dim), dtype=dtype)
        elif is_constrained(name):
            fan_in = shape[0]
            arrays[name] = (rng.uniform(0.0, 1.0 / fan_in, size=shape)).astype(dtype)
        elif name == "quad":
            arrays[name] = np.eye(dim, dtype=dtype)
        else:
            arrays[name] = np.zeros(shape, dtype=dtype)
    return IcnnParams(arrays, dim, hidden)


def project_nonneg(params):
    for name, v in params.arrays.items():
        if is_constrained(name):
            np.maximum(v, 0, out=v)
    return params


# Tape-level building blocks. ``p`` maps names to ad.Tensor.

def _layers(p, x, L):
    pre = []
    z = None
    for l in range(L):
        u = x @ p[f"ax{l}"] + p[f"b{l}"]
        if l:
            u = u + z @ p[f"wz{l}"]
        pre.append(u)
        z = ad.softplus(u)
    return pre, z


def psi_t(p, x, L):
    _, z = _layers(p, x, L)
    xq = x @ p["quad"]
    quad = ad.mul(ad.sum_(ad.square(xq), axis=1), 0.5)
    return ad.sum_(z * p["w_out"], axis=1) + ad.sum_(x * p["a_lin"], axis=1) + p["c"] + quad


def grad_psi_t(p, x, L):
    """Explicit reverse pass of ``psi`` with respect to its input, in tape ops."""
    pre, _ = _layers(p, x, L)
    delta = ad.sigmoid(pre[-1]) * p["w_out"]
    out = delta @ ad.transpose(p[f"ax{L - 1}"])
    for l in range(L - 1, 0, -1):
        delta = (delta @ ad.transpose(p[f"wz{l}"])) * ad.sigmoid(pre[l - 1])
        out = out + delta @ ad.transpose(p[f"ax{l - 1}"])
    quad = p["quad"]
    return out + p["a_lin"] + (x @ quad) @ ad.transpose(quad)


def _tensors(params):
    return {k: ad.Tensor(v) for k, v in params.arrays.items()}


def _points(params, x):
    x = np.asarray(x, dtype=params.arrays["c"].dtype)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != params.dim:
        raise DimensionError(f"expected points of dimension {params.dim}, got {x.shape}")
    return x2, single


def icnn_forward(params, x):
    """Potential value at a point (scalar) or at each row of a batch."""
    x2, single = _points(params, x)
    val = psi_t(_tensors(params), ad.Tensor(x2), len(params.hidden)).value
    return val[0] if single else val


def icnn_grad_x(params, x):
    """Transport map ``grad psi`` at a point or batch of points."""
    x2, single = _points(params, x)
    val = grad_psi_t(_tensors(params), ad.Tensor(x2), len(params.hidden)).value
    return val[0] if single else val


@dataclass
class W2gnPair:
    forward: IcnnParams
    backward: IcnnParams
    gamma: float = 3.0

    def __post_init__(self):
        if self.forward.dim != self.backward.dim:
            raise DimensionError("forward and backward potentials must share a dimension")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")

    @property
    def dim(self):
        return self.forward.dim

    def arrays(self):
        return list(self.forward.arrays.values()) + list(self.backward.arrays.values())

    def with_arrays(self, arrays):
        nf = len(self.forward.arrays)
        fwd = IcnnParams(dict(zip(self.forward.arrays, arrays[:nf])), self.dim, self.forward.hidden)
        bwd = IcnnParams(dict(zip(self.backward.arrays, arrays[nf:])), self.dim, self.backward.hidden)
        return W2gnPair(fwd, bwd, self.gamma)

    def copy(self):
        return W2gnPair(self.forward.copy(), self.backward.copy(), self.gamma)

    def astype(self, dtype):
        return W2gnPair(self.forward.astype(dtype), self.backward.astype(dtype), self.gamma)


def init_pair(rng, dim, hidden=(64, 64), gamma=3.0):
    return W2gnPair(init_icnn(rng, dim, hidden), init_icnn(rng, dim, hidden), gamma)


def _loss_graph(pf, pb, Lf, Lb, x, y, gamma, detached=None):
    """Build the W2GN loss on the tape; returns (total, dual_part).

    ``detached`` holds the parameter values used for the conjugate map inside
    the correlation term; they are constants, so no gradient reaches the
    backward net through that term.
    """
    if detached is None:
        detached = {k: v.value for k, v in pb.items()}
    pb_det = {k: ad.Tensor(v) for k, v in detached.items()}
    y_det = ad.Tensor(grad_psi_t(pb_det, y, Lb).value)
    dual = ad.mean(psi_t(pf, x, Lf)) + ad.mean(
        ad.sum_(y_det * y, axis=1) - psi_t(pf, y_det, Lf))
    if gamma == 0:
        return dual, dual
    y_bar = grad_psi_t(pb, y, Lb)
    cycle = ad.mean(ad.sum_(ad.square(grad_psi_t(pf, y_bar, Lf) - y), axis=1))
    return dual + ad.mul(cycle, float(gamma)), dual


def _batches(pair, x, y):
    dtype = pair.forward.arrays["c"].dtype
    x = np.asarray(x, dtype=dtype)
    y = np.asarray(y, dtype=dtype)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != pair.dim or y.shape[1] != pair.dim:
        raise DimensionError("sample batches must be (n, d) with the pair's dimension")
    if not len(x) or not len(y):
        raise DimensionError("sample batches must be nonempty")
    return ad.Tensor(x), ad.Tensor(y)


def w2gn_loss(pair, x, y, gamma=None, detached=None):
    """W2GN loss on sample batches ``x ~ alpha`` and ``y ~ beta``.

    ``detached`` (an IcnnParams) overrides the frozen copy of the backward
    potential used in the correlation term; by default it is
    ``pair.backward`` itself, so the value is the usual loss.
    """
    gamma = pair.gamma if gamma is None else gamma
    xt, yt = _batches(pair, x, y)
    frozen = None if detached is None else detached.arrays
    total, _ = _loss_graph(_tensors(pair.forward), _tensors(pair.backward),
                           len(pair.forward.hidden), len(pair.backward.hidden), xt, yt, gamma,
                           frozen)
    val = float(total.value)
    if not np.isfinite(val):
        raise NumericalOverflow("W2GN loss is not finite")
    return val


def w2gn_loss_and_grad(pair, x, y, gamma=None):
    """Loss value and exact gradients (list aligned with ``pair.arrays()``)."""
    gamma = pair.gamma if gamma is None else gamma
    xt, yt = _batches(pair, x, y)
    pf, pb = _tensors(pair.forward), _tensors(pair.backward)
    total, _ = _loss_graph(pf, pb, len(pair.forward.hidden), len(pair.backward.hidden),
                           xt, yt, gamma)
    val = float(total.value)
    if not np.isfinite(val):
        raise NumericalOverflow("W2GN loss is not finite")
    leaves = list(pf.values()) + list(pb.values())
    grads = [g.value for g in ad.grad(total, leaves)]
    return val, grads


def dual_value(pair, x, y):
    """Cyclic monotone correlation estimate of the dual (lower is better)."""
    fwd, bwd = pair.forward, pair.backward
    dtype = fwd.arrays["c"].dtype
    x = np.asarray(x, dtype=dtype)
    y = np.asarray(y, dtype=dtype)
    y_bar = icnn_grad_x(bwd, y)
    val = np.mean(icnn_forward(fwd, x), dtype=np.float64) + np.mean(
        np.sum(y_bar * y, axis=1) - icnn_forward(fwd, y_bar), dtype=np.float64)
    return float(val)


def normalized_dual(value, value_init, value_ref):
    """Fraction of the reference improvement achieved: 0 at init, 1 at the reference."""
    return (value_init - value) / (value_init - value_ref)


@dataclass
class W2gnConfig:
    iters: int = 2000
    batch_size: int = 1024
    lr: float = 1e-3
    max_grad_norm: float = 1.0
    weight_decay: float = 1e-6
    log_every: int = 1


def w2gn_train(pair_init, sample_alpha, sample_beta, config, rng, callback=None):
    """Fit a W2GN pair by Adam on fresh samples; ``Wz`` is clipped at zero after every step.

    ``sample_alpha(rng, n)`` / ``sample_beta(rng, n)`` return (n, d) arrays.
    ``callback(i, pair)`` is called after each step when given.
    """
    pair = pair_init.copy()
    state = adam_init(pair.arrays(), lr=config.lr)
    history = []
    for i in range(config.iters):
        x = sample_alpha(rng, config.batch_size)
        y = sample_beta(rng, config.batch_size)
        loss, grads = w2gn_loss_and_grad(pair, x, y)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
            raise NonFiniteGradient("non-finite W2GN gradient", i)
        grads = clip_global_norm(grads, config.max_grad_norm)
        state, arrays = adam_step(state, pair.arrays(), grads, weight_decay=config.weight_decay)
        pair = pair.with_arrays(arrays)
        project_nonneg(pair.forward)
        project_nonneg(pair.backward)
        history.append(loss)
        if callback is not None:
            callback(i, pair)
    return pair, history


def transport(pair, x, direction="forward"):
    """``grad psi`` (forward) or ``grad psi_bar`` (inverse) applied to points."""
    net = pair.forward if direction == "forward" else pair.backward
    if direction not in ("forward", "inverse"):
        raise ValueError("direction must be 'forward' or 'inverse'")
    return icnn_grad_x(net, x)


def color_transfer(image_rgb, pair, direction="forward", chunk=65536):
    """Push every pixel's color through the map and clamp to the unit cube."""
    image_rgb = np.asarray(image_rgb)
    flat = image_rgb.reshape(-1, 3)
    out = np.empty(flat.shape, dtype=np.float64)
    for start in range(0, len(flat), chunk):
        out[start:start + chunk] = transport(pair, flat[start:start + chunk], direction)
    return np.clip(out, 0.0, 1.0).reshape(image_rgb.shape)


def convexity_violation(params, rng, trials=100, scale=1.0):
    """Largest secant-inequality violation over random triples (<= 0 means convex)."""
    d = params.dim
    x1 = rng.normal(scale=scale, size=(trials, d))
    x2 = rng.normal(scale=scale, size=(trials, d))
    lam = rng.uniform(size=(trials, 1))
    p64 = params.astype(np.float64)
    mid = icnn_forward(p64, lam * x1 + (1 - lam) * x2)
    chord = lam[:, 0] * icnn_forward(p64, x1) + (1 - lam[:, 0]) * icnn_forward(p64, x2)
    return float(np.max(mid - chord))

