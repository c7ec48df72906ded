"""Central finite-difference check of autograd gradients."""

import torch

from ..exceptions import NumericError


def grad_check(loss_fn, params, h=1e-5, floor=1e-6):
    """Largest elementwise relative error between autograd and central differences.

    ``loss_fn()`` must return a scalar tensor computed from ``params`` and be
    deterministic. Relative error is ``|a - f| / max(|a|, |f|, floor)``.
    """
    params = list(params.values()) if isinstance(params, dict) else list(params)
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise NumericError("loss is not finite")
    analytic = torch.autograd.grad(loss, params, allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for p, a in zip(params, analytic):
            a = torch.zeros_like(p) if a is None else a
            flat = p.view(-1)
            a_flat = a.reshape(-1)
            for k in range(flat.numel()):
                orig = flat[k].item()
                flat[k] = orig + h
                up = loss_fn().item()
                flat[k] = orig - h
                down = loss_fn().item()
                flat[k] = orig
                if not (abs(up) < float("inf") and abs(down) < float("inf")):
                    raise NumericError("loss became non-finite during finite differences")
                fd = (up - down) / (2.0 * h)
                an = a_flat[k].item()
                err = abs(an - fd) / max(abs(an), abs(fd), floor)
                worst = max(worst, err)
    return worst
