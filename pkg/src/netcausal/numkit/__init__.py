"""Numerical core: graph layers, HSIC, Adam, Gumbel sampling, gradient checks.

Reverse-mode differentiation is delegated to torch autograd in float64.
"""

from .gradcheck import grad_check
from .gumbel import gumbel_noise, gumbel_softmax_sample
from .hsic import hsic, median_bandwidth
from .layers import dropout, gcn_layer, glorot, init_mlp, mlp, onegnn_layer, sage_layer, zeros
from .optim import Adam, AdamState, adam_step
from .serialize import load_params, params_from_dict, params_to_dict, save_params
from .tensor import DTYPE, as_tensor, check_finite, graph_operator

__all__ = [
    "DTYPE", "Adam", "AdamState", "adam_step", "as_tensor", "check_finite", "dropout",
    "gcn_layer", "glorot", "grad_check", "graph_operator", "gumbel_noise",
    "gumbel_softmax_sample", "hsic", "init_mlp", "load_params", "median_bandwidth", "mlp",
    "onegnn_layer", "params_from_dict", "params_to_dict", "sage_layer", "save_params", "zeros",
]
