"""Dense rectifier MLPs with a hand-written reverse pass."""
from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError
from .rng import truncated_normal

# std of a unit normal truncated at two standard deviations
_TRUNC_STD = 0.87962566103423978


@dataclass
class MlpParams:
    """Weights are stored ``(fan_in, fan_out)`` so batches multiply on the right."""

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionError("need one bias per weight matrix")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise DimensionError(f"layer {k}: weight {W.shape} and bias {b.shape} mismatch")
            if k and self.weights[k - 1].shape[1] != W.shape[0]:
                raise DimensionError(f"layer {k} does not chain with layer {k - 1}")

    @property
    def sizes(self):
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def num_params(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def arrays(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    @classmethod
    def from_arrays(cls, arrays):
        return cls(list(arrays[0::2]), list(arrays[1::2]))

    def copy(self):
        return MlpParams([W.copy() for W in self.weights], [b.copy() for b in self.biases])


def init_mlp(rng, sizes, dtype=np.float32):
    """Truncated-normal fan-in initialization with zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        std = np.sqrt(1.0 / fan_in) / _TRUNC_STD
        weights.append(truncated_normal(rng, (fan_in, fan_out), std, dtype=dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return MlpParams(weights, biases)


def mlp_forward(params, x, return_cache=False):
    """Affine + rectifier on hidden layers, affine output. ``x`` is (d,) or (B, d)."""
    x = np.asarray(x, dtype=params.weights[0].dtype)
    if x.shape[-1] != params.weights[0].shape[0]:
        raise DimensionError(f"input size {x.shape[-1]} != {params.weights[0].shape[0]}")
    h = x
    pre = []
    last = len(params.weights) - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        u = h @ W + b
        if k < last:
            pre.append(u)
            h = np.maximum(u, 0)
        else:
            h = u
    return (h, pre) if return_cache else h


def mlp_backward(params, x, cotangent, cache=None):
    """Vector-Jacobian product of ``mlp_forward`` at ``x`` with ``cotangent``.

    Returns ``(grads, grad_x)`` where ``grads`` is an MlpParams of gradients of
    ``<output, cotangent>`` (summed over the batch when ``x`` is 2-D).
    """
    x = np.asarray(x, dtype=params.weights[0].dtype)
    if cache is None:
        out, cache = mlp_forward(params, x, return_cache=True)
    else:
        out = None
    cot = np.asarray(cotangent, dtype=x.dtype)
    n_out = params.weights[-1].shape[1]
    if cot.shape[-1] != n_out or (out is not None and cot.shape != out.shape):
        raise DimensionError(f"cotangent shape {cot.shape} does not match the output")
    single = x.ndim == 1
    if single:
        x, cot = x[None, :], cot[None, :]
        cache = [u[None, :] for u in cache]
    acts = [x] + [np.maximum(u, 0) for u in cache]
    gW = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    delta = cot
    for k in range(len(params.weights) - 1, -1, -1):
        gW[k] = acts[k].T @ delta
        gb[k] = delta.sum(axis=0)
        delta = delta @ params.weights[k].T
        if k > 0:
            delta = delta * (cache[k - 1] > 0)
    grad_x = delta[0] if single else delta
    return MlpParams(gW, gb), grad_x
