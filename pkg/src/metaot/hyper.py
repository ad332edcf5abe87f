"""Meta ICNN: a hypernetwork from measure summaries to W2GN pair parameters.

A shared encoder embeds the summary of each measure; the two latents are
concatenated and decoded into every parameter of both potentials. Decoded
values are offsets from a reference initialization, so an untrained model
predicts that initialization. Entries that must be nonnegative go through
softplus, which keeps every prediction a valid ICNN.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DimensionError, InvalidParameter, NonFiniteGradient
from .icnn import IcnnParams, W2gnConfig, W2gnPair, icnn_shapes, init_pair, is_constrained, \
    w2gn_loss_and_grad, w2gn_train
from .nn.mlp import MlpParams, init_mlp, mlp_backward, mlp_forward
from .nn.optim import adam_init, adam_step, clip_global_norm, cosine_lr


def color_histogram(pixels, bins=16, joint=False):
    """Color histogram of pixels in [0, 1], scaled so uniform colors give ones.

    Per-channel histograms (``3 * bins`` values) by default; ``joint=True``
    bins the RGB cube instead (``bins ** 3`` values).
    """
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 3)
    idx = np.clip((pixels * bins).astype(np.int64), 0, bins - 1)
    if joint:
        flat = (idx[:, 0] * bins + idx[:, 1]) * bins + idx[:, 2]
        hist = np.bincount(flat, minlength=bins ** 3) * float(bins ** 3)
    else:
        hist = np.stack([np.bincount(idx[:, c], minlength=bins) for c in range(3)]) * float(bins)
    return (hist / len(pixels)).ravel().astype(np.float32)


def _softplus(x):
    return np.logaddexp(0, x)


def _softplus_inv(y):
    y = np.asarray(y, dtype=np.float64)
    return np.where(y > 20, y, np.log(np.expm1(np.maximum(y, 1e-12))))


def _constraint_mask(dim, hidden):
    return np.concatenate([
        np.full(int(np.prod(shape)), is_constrained(name))
        for name, shape in icnn_shapes(dim, hidden).items()
    ])


@dataclass
class HyperModel:
    encoder: MlpParams
    decoder: MlpParams
    base: np.ndarray
    dim: int
    hidden: tuple
    gamma: float = 3.0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        per_net = sum(int(np.prod(s)) for s in icnn_shapes(self.dim, self.hidden).values())
        if self.decoder.sizes[-1] != 2 * per_net or self.base.shape != (2 * per_net,):
            raise DimensionError("decoder output does not match the ICNN pair size")
        if self.decoder.sizes[0] != 2 * self.encoder.sizes[-1]:
            raise DimensionError("decoder input must take both latents")
        mask = _constraint_mask(self.dim, self.hidden)
        self.mask = np.concatenate([mask, mask])

    @property
    def summary_size(self):
        return self.encoder.sizes[0]

    def copy(self):
        return HyperModel(self.encoder.copy(), self.decoder.copy(), self.base.copy(),
                          self.dim, self.hidden, self.gamma)


def init_hyper(rng, summary_size, dim=3, hidden=(64, 64), z_dim=128,
               enc_hidden=(256,), dec_hidden=(512,), gamma=3.0):
    """Hypernetwork whose untrained prediction equals a fresh ``init_pair``."""
    ref = init_pair(rng, dim, hidden, gamma)
    flat = np.concatenate([ref.forward.flat(), ref.backward.flat()]).astype(np.float64)
    mask = np.concatenate([_constraint_mask(dim, hidden)] * 2)
    base = np.where(mask, _softplus_inv(flat), flat).astype(np.float32)
    encoder = init_mlp(rng, [summary_size, *enc_hidden, z_dim])
    decoder = init_mlp(rng, [2 * z_dim, *dec_hidden, base.size])
    decoder.weights[-1][:] = 0
    return HyperModel(encoder, decoder, base, dim, hidden, gamma)


def _decode_flat(hyper, raw):
    """Raw decoder output (K, P) to parameter values and d value / d raw."""
    pre = hyper.base + raw
    val = np.where(hyper.mask, _softplus(pre), pre).astype(np.float32)
    dval = np.where(hyper.mask, expit(pre), 1.0).astype(np.float32)
    return val, dval


def _flat_to_pair(hyper, flat):
    half = flat.size // 2
    fwd = IcnnParams.from_flat(flat[:half], hyper.dim, hyper.hidden)
    bwd = IcnnParams.from_flat(flat[half:], hyper.dim, hyper.hidden)
    return W2gnPair(fwd, bwd, hyper.gamma)


def _forward(hyper, summary_a, summary_b):
    sa = np.atleast_2d(np.asarray(summary_a, dtype=np.float32))
    sb = np.atleast_2d(np.asarray(summary_b, dtype=np.float32))
    if sa.shape[1] != hyper.summary_size or sb.shape != sa.shape:
        raise DimensionError("summaries do not match the encoder input size")
    k = len(sa)
    both = np.concatenate([sa, sb])
    z, enc_cache = mlp_forward(hyper.encoder, both, return_cache=True)
    latent = np.concatenate([z[:k], z[k:]], axis=1)
    raw, dec_cache = mlp_forward(hyper.decoder, latent, return_cache=True)
    return both, enc_cache, latent, dec_cache, raw


def hyper_predict(hyper, summary_a, summary_b):
    """Predicted W2GN pair for one pair of summaries."""
    *_, raw = _forward(hyper, summary_a, summary_b)
    val, _ = _decode_flat(hyper, raw[0])
    return _flat_to_pair(hyper, val)


def hyper_loss_and_grad(hyper, tasks, rng, inner_batch):
    """Mean W2GN loss of the predicted pairs over a meta-batch, with gradients.

    ``tasks`` is a sequence of objects with ``summary_a``, ``summary_b`` and
    ``sample_a(rng, n)`` / ``sample_b(rng, n)``. Returns ``(loss, enc_grads,
    dec_grads)``.
    """
    sa = np.stack([t.summary_a for t in tasks])
    sb = np.stack([t.summary_b for t in tasks])
    both, enc_cache, latent, dec_cache, raw = _forward(hyper, sa, sb)
    k = len(tasks)
    cot_raw = np.zeros_like(raw)
    losses = []
    for i, task in enumerate(tasks):
        val, dval = _decode_flat(hyper, raw[i])
        pair = _flat_to_pair(hyper, val)
        x = task.sample_a(rng, inner_batch)
        y = task.sample_b(rng, inner_batch)
        loss, grads = w2gn_loss_and_grad(pair, x, y)
        losses.append(loss)
        cot_raw[i] = np.concatenate([g.ravel() for g in grads]) * dval / k
    dec_grads, cot_latent = mlp_backward(hyper.decoder, latent, cot_raw, cache=dec_cache)
    z_dim = hyper.encoder.sizes[-1]
    cot_z = np.concatenate([cot_latent[:, :z_dim], cot_latent[:, z_dim:]])
    enc_grads, _ = mlp_backward(hyper.encoder, both, cot_z, cache=enc_cache)
    return float(np.mean(losses)), enc_grads, dec_grads


@dataclass
class HyperConfig:
    iters: int = 2000
    meta_batch: int = 8
    inner_batch: int = 256
    lr: float = 1e-3
    max_grad_norm: float = 1.0
    weight_decay: float = 1e-6
    schedule: str = "constant"


def meta_icnn_train(hyper_init, sample_tasks, config, rng, callback=None):
    """Adam on the amortized W2GN objective.

    ``sample_tasks(rng, k)`` returns ``k`` task objects (see
    ``hyper_loss_and_grad``). Returns the trained model and loss history.
    """
    hyper = hyper_init.copy()
    n_enc = len(hyper.encoder.arrays())
    arrays = hyper.encoder.arrays() + hyper.decoder.arrays()
    state = adam_init(arrays, lr=config.lr)
    history = []
    if config.schedule not in ("constant", "cosine"):
        raise InvalidParameter(f"unknown schedule {config.schedule!r}")
    for it in range(config.iters):
        if config.schedule == "cosine":
            state.lr = cosine_lr(config.lr, it, config.iters)
        tasks = sample_tasks(rng, config.meta_batch)
        loss, enc_g, dec_g = hyper_loss_and_grad(hyper, tasks, rng, config.inner_batch)
        grads = enc_g.arrays() + dec_g.arrays()
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
            raise NonFiniteGradient("non-finite meta ICNN gradient", it)
        grads = clip_global_norm(grads, config.max_grad_norm)
        state, arrays = adam_step(state, arrays, grads, weight_decay=config.weight_decay)
        hyper = HyperModel(MlpParams.from_arrays(arrays[:n_enc]),
                           MlpParams.from_arrays(arrays[n_enc:]),
                           hyper.base, hyper.dim, hyper.hidden, hyper.gamma)
        history.append(loss)
        if callback is not None:
            callback(it, hyper, loss)
    return hyper, history


def finetune_w2gn(hyper, task, iters, rng, config=None, callback=None):
    """Predict a pair for ``task`` and continue with plain W2GN training."""
    pair = hyper_predict(hyper, task.summary_a, task.summary_b)
    if iters == 0:
        return pair, []
    config = W2gnConfig(iters=iters) if config is None else \
        W2gnConfig(**{**config.__dict__, "iters": iters})
    return w2gn_train(pair, task.sample_a, task.sample_b, config, rng, callback=callback)
