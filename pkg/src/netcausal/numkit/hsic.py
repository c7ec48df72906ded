"""Empirical HSIC with Gaussian kernels (biased V-statistic)."""

import numpy as np
import torch
from scipy.spatial.distance import pdist

from ..exceptions import InvalidInputError
from .tensor import DTYPE, as_tensor


def median_bandwidth(R):
    """Median pairwise Euclidean distance between rows; 1.0 if all rows coincide."""
    arr = R.detach().cpu().numpy() if isinstance(R, torch.Tensor) else np.asarray(R, float)
    arr = arr.reshape(arr.shape[0], -1)
    med = float(np.median(pdist(arr))) if arr.shape[0] > 1 else 0.0
    return med if med > 0 else 1.0


def _rbf(A, sigma):
    sq = (A * A).sum(dim=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (A @ A.T)
    return torch.exp(-d2 / (2.0 * sigma * sigma))


def hsic(R, T, sigma="auto"):
    """``mean(K*L) + mean(K) mean(L) - 2 mean_i(mean_j K_ij * mean_j L_ij)``.

    K is the RBF kernel over rows of ``R`` and L the same kernel over ``T``.
    Differentiable with respect to ``R``; the bandwidth is treated as a constant.
    """
    R = R if isinstance(R, torch.Tensor) else as_tensor(R)
    if R.dim() == 1:
        R = R[:, None]
    n = R.shape[0]
    if n < 2:
        raise InvalidInputError(f"hsic needs n >= 2 samples, got {n}")
    R = R.to(DTYPE)
    T = as_tensor(T).reshape(n, 1)
    if sigma == "auto":
        sigma = median_bandwidth(R)
    sigma = float(sigma)
    if sigma <= 0:
        raise InvalidInputError(f"bandwidth must be positive, got {sigma}")
    K = _rbf(R, sigma)
    L = _rbf(T, sigma)
    term1 = (K * L).mean()
    term2 = K.mean() * L.mean()
    term3 = (K.mean(dim=1) * L.mean(dim=1)).mean()
    return term1 + term2 - 2.0 * term3
