from .mlp import MlpParams, init_mlp, mlp_backward, mlp_forward
from .optim import AdamState, adam_init, adam_step, clip_global_norm, global_norm
from .rng import make_rng, truncated_normal

__all__ = [
    "MlpParams", "init_mlp", "mlp_forward", "mlp_backward",
    "AdamState", "adam_init", "adam_step", "clip_global_norm", "global_norm",
    "make_rng", "truncated_normal",
]
