"""Amortized optimal transport: learned warm starts for Sinkhorn and hypernetwork ICNN maps."""
from .discrete import MetaTaskSpec, WarmStartModel, benchmark, finetune_sinkhorn, init_warm_start, \
    predict_f, train_meta
from .errors import *  # noqa: F401,F403
from .measures import DiscreteMeasure, gibbs_kernel, spherical_cost, squared_euclidean_cost
from .sinkhorn import DualPair, EntropicProblem, SinkhornResult, g_from_f, sinkhorn

__version__ = "0.1.0"
