"""Adam with global-norm clipping and an L2 penalty on the gradient."""
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidParameter, NonFiniteGradient


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_init(params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    return AdamState(
        lr=lr, beta1=beta1, beta2=beta2, eps=eps, t=0,
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
    )


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))


def clip_global_norm(grads, max_norm):
    if max_norm <= 0:
        raise InvalidParameter("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return list(grads)
    scale = max_norm / norm
    return [(g * scale).astype(g.dtype) for g in grads]


def cosine_lr(base, step, total, final_fraction=0.0):
    """Cosine decay from ``base`` at step 0 to ``final_fraction * base`` at ``total``."""
    if total <= 1:
        return base
    frac = min(step, total - 1) / (total - 1)
    return base * (final_fraction + (1 - final_fraction) * 0.5 * (1 + np.cos(np.pi * frac)))


def adam_step(state, params, grads, weight_decay=0.0):
    """One bias-corrected Adam update; returns ``(new_state, new_params)``.

    ``weight_decay`` adds ``weight_decay * p`` to each gradient first.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise InvalidParameter("params, grads and optimizer state must align")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("gradient contains NaN or Inf", state.t)
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise InvalidParameter(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if weight_decay:
            g = g + weight_decay * p
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * np.square(g)
        step = state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
        new_m.append(m.astype(p.dtype))
        new_v.append(v.astype(p.dtype))
        new_p.append((p - step).astype(p.dtype))
    new_state = AdamState(state.lr, b1, b2, state.eps, t, new_m, new_v)
    return new_state, new_p
