"""Dense and graph layers written against torch autograd.

All layers are functional: weights are passed in explicitly so that the same
code serves training, gradient checks and the dense reference tests.
"""

import numpy as np
import torch

from ..exceptions import InvalidInputError
from .tensor import DTYPE, graph_operator, resolve_norm

NORM_FLOOR = 1e-12


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
    return torch.as_tensor(w, dtype=DTYPE).requires_grad_(True)


def zeros(*shape):
    return torch.zeros(shape, dtype=DTYPE, requires_grad=True)


def _check_shapes(H, W, n=None):
    if H.dim() != 2 or W.dim() != 2 or H.shape[1] != W.shape[0]:
        raise InvalidInputError(f"shape mismatch: H {tuple(H.shape)} @ W {tuple(W.shape)}")
    if n is not None and H.shape[0] != n:
        raise InvalidInputError(f"H has {H.shape[0]} rows but graph has {n} nodes")


def _bias(out, bias):
    return out if bias is None else out + bias


def gcn_layer(H, norm, W, activate, bias=None):
    """``sigma(D^-1/2 (A+I) D^-1/2 H W)``; ``norm`` may be a Graph or NormAdjacency."""
    op = resolve_norm(norm)
    _check_shapes(H, W, op.shape[0])
    out = _bias(torch.sparse.mm(op, H @ W), bias)
    return torch.relu(out) if activate else out


def sage_layer(H, g, W, activate, bias=None):
    """Mean over ``N(i) + {i}`` of ``H_j W``, then row-wise L2 normalisation.

    Rows whose norm is below 1e-12 are left unnormalised.
    """
    _check_shapes(H, W, g.n)
    out = _bias(torch.sparse.mm(graph_operator(g, "mean_self"), H @ W), bias)
    if activate:
        out = torch.relu(out)
    norms = out.norm(dim=1, keepdim=True)
    safe = torch.where(norms < NORM_FLOOR, torch.ones_like(norms), norms)
    return out / safe


def onegnn_layer(H, g, W1, W2, activate, bias=None):
    """``sigma(H_i W1 + mean_{j in N(i)} H_j W2)``; isolated nodes get no neighbour term."""
    _check_shapes(H, W1, g.n)
    _check_shapes(H, W2)
    if W1.shape[1] != W2.shape[1]:
        raise InvalidInputError("W1 and W2 must have the same output width")
    out = H @ W1 + torch.sparse.mm(graph_operator(g, "mean_nbr"), H @ W2)
    out = _bias(out, bias)
    return torch.relu(out) if activate else out


def dropout(H, rate, generator, training):
    if not training or rate <= 0.0:
        return H
    keep = torch.full(H.shape, 1.0 - rate, dtype=DTYPE)
    mask = torch.bernoulli(keep, generator=generator)
    return H * mask / (1.0 - rate)


def init_mlp(params, prefix, rng, dims):
    """Register Glorot weights ``{prefix}.{l}.W`` and zero biases for a chain of dims."""
    for l, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        params[f"{prefix}.{l}.W"] = glorot(rng, a, b)
        params[f"{prefix}.{l}.b"] = zeros(b)
    return params


def mlp(params, prefix, H, n_layers, *, activate_last, rate=0.0, generator=None, training=False):
    """ReLU MLP; dropout is applied between hidden layers only."""
    for l in range(n_layers):
        W, b = params[f"{prefix}.{l}.W"], params[f"{prefix}.{l}.b"]
        _check_shapes(H, W)
        H = H @ W + b
        last = l == n_layers - 1
        if not last or activate_last:
            H = torch.relu(H)
        if not last:
            H = dropout(H, rate, generator, training)
    return H
