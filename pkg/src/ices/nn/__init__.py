from . import tensor as T
from .distributions import (
    CategoricalDist,
    LatentGaussian,
    categorical_entropy,
    categorical_sample,
    gaussian_log_likelihood,
    greedy,
    kl_diag_gaussian,
    reparameterize,
)
from .layers import ParamStore, gru_cell, init_gru, init_linear, init_mlp, linear, mlp_forward, mlp_layers
from .optim import Adam, OptimizerState, adam_step, clip_grad_norm, global_norm
from .tensor import DimensionError, NumericError, Tape, Tensor, no_grad

__all__ = [
    "T",
    "Adam",
    "CategoricalDist",
    "DimensionError",
    "LatentGaussian",
    "NumericError",
    "OptimizerState",
    "ParamStore",
    "Tape",
    "Tensor",
    "adam_step",
    "categorical_entropy",
    "categorical_sample",
    "clip_grad_norm",
    "gaussian_log_likelihood",
    "global_norm",
    "greedy",
    "gru_cell",
    "init_gru",
    "init_linear",
    "init_mlp",
    "kl_diag_gaussian",
    "linear",
    "mlp_forward",
    "mlp_layers",
    "no_grad",
    "reparameterize",
]
