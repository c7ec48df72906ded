"""Two-class Gumbel-softmax with a straight-through hard value."""

import numpy as np
import torch

from ..exceptions import InvalidInputError
from .tensor import DTYPE, as_tensor

P_CLAMP = 1e-6


def gumbel_noise(rng, n):
    """``(n, 2)`` standard Gumbel draws; pass the result back in to freeze the noise."""
    u = rng.uniform(np.finfo(float).tiny, 1.0, size=(n, 2))
    return -np.log(-np.log(u))


def gumbel_softmax_sample(p, tau_g=0.5, rng=None, *, noise=None, hard=True):
    """Sample treat (1) / control (0) for each entry of ``p``.

    The soft sample is ``softmax((log p + g1, log(1-p) + g0) / tau_g)[0]``. With
    ``hard=True`` the forward value is its argmax while the gradient is that of
    the soft sample.
    """
    if tau_g <= 0:
        raise InvalidInputError(f"temperature must be positive, got {tau_g}")
    p = p if isinstance(p, torch.Tensor) else as_tensor(p)
    p = p.to(DTYPE).clamp(P_CLAMP, 1.0 - P_CLAMP)
    n = p.numel()
    if noise is None:
        if rng is None:
            raise InvalidInputError("either rng or noise must be given")
        noise = gumbel_noise(rng, n)
    noise = as_tensor(noise).reshape(n, 2)
    logit = torch.log(p.reshape(-1)) - torch.log1p(-p.reshape(-1)) + noise[:, 0] - noise[:, 1]
    soft = torch.sigmoid(logit / tau_g).reshape(p.shape)
    if not hard:
        return soft
    hard_val = (soft > 0.5).to(DTYPE)
    return hard_val + (soft - soft.detach())
