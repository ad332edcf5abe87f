"""Conversion between models and the named-array form stored in MOTK files."""
import numpy as np

from .discrete import WarmStartModel
from .errors import FormatError
from .hyper import HyperModel
from .icnn import IcnnParams, W2gnPair, icnn_shapes
from .nn.mlp import MlpParams


def _mlp_arrays(prefix, mlp):
    out = {}
    for k, (W, b) in enumerate(zip(mlp.weights, mlp.biases)):
        out[f"{prefix}.w{k}"] = W
        out[f"{prefix}.b{k}"] = b
    return out


def _mlp_from(prefix, arrays):
    weights, biases, k = [], [], 0
    while f"{prefix}.w{k}" in arrays:
        weights.append(arrays[f"{prefix}.w{k}"])
        biases.append(arrays[f"{prefix}.b{k}"])
        k += 1
    if not weights:
        raise FormatError(f"checkpoint has no {prefix} layers")
    return MlpParams(weights, biases)


def _icnn_from(prefix, arrays, dim, hidden):
    names = icnn_shapes(dim, hidden)
    return IcnnParams({n: arrays[f"{prefix}.{n}"] for n in names}, dim, hidden)


def to_arrays(model):
    """Return ``(kind, metadata, arrays)`` for a supported model."""
    if isinstance(model, WarmStartModel):
        meta = {"m": model.m, "n": model.n, "output_scale": model.output_scale,
                "log_skip": model.log_skip}
        return "warm_start", meta, _mlp_arrays("mlp", model.mlp)
    if isinstance(model, W2gnPair):
        arrays = {f"forward.{k}": v for k, v in model.forward.arrays.items()}
        arrays.update({f"backward.{k}": v for k, v in model.backward.arrays.items()})
        meta = {"dim": model.dim, "hidden": list(model.forward.hidden),
                "hidden_backward": list(model.backward.hidden), "gamma": model.gamma}
        return "w2gn_pair", meta, arrays
    if isinstance(model, HyperModel):
        arrays = {**_mlp_arrays("encoder", model.encoder), **_mlp_arrays("decoder", model.decoder),
                  "base": model.base}
        meta = {"dim": model.dim, "hidden": list(model.hidden), "gamma": model.gamma}
        return "hyper", meta, arrays
    raise TypeError(f"cannot serialize {type(model).__name__}")


def from_arrays(kind, metadata, arrays):
    try:
        if kind == "warm_start":
            return WarmStartModel(_mlp_from("mlp", arrays), int(metadata["m"]), int(metadata["n"]),
                                  float(metadata.get("output_scale", 1.0)),
                                  bool(metadata.get("log_skip", False)))
        if kind == "w2gn_pair":
            dim = int(metadata["dim"])
            fwd = _icnn_from("forward", arrays, dim, tuple(metadata["hidden"]))
            bwd = _icnn_from("backward", arrays, dim, tuple(metadata["hidden_backward"]))
            return W2gnPair(fwd, bwd, float(metadata["gamma"]))
        if kind == "hyper":
            return HyperModel(_mlp_from("encoder", arrays), _mlp_from("decoder", arrays),
                              np.asarray(arrays["base"]), int(metadata["dim"]),
                              tuple(metadata["hidden"]), float(metadata["gamma"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed {kind} checkpoint: {exc}") from exc
    raise FormatError(f"unknown checkpoint kind {kind!r}")
