"""Adam with decoupled weight decay."""

from dataclasses import dataclass, field

import torch

from ..exceptions import InvalidInputError


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
    """Update ``params`` in place and return ``state``.

    Weight decay is decoupled: ``p <- p * (1 - lr * wd)`` precedes the Adam move.
    A ``None`` gradient is treated as zero.
    """
    if lr <= 0:
        raise InvalidInputError(f"lr must be positive, got {lr}")
    if len(params) != len(grads):
        raise InvalidInputError("params and grads differ in length")
    if not state.m:
        state.m = [torch.zeros_like(p) for p in params]
        state.v = [torch.zeros_like(p) for p in params]
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            if g is None:
                g = torch.zeros_like(p)
            if g.shape != p.shape:
                raise InvalidInputError(f"grad shape {tuple(g.shape)} != param shape {tuple(p.shape)}")
            if weight_decay:
                p.mul_(1.0 - lr * weight_decay)
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            denom = (v / bc2).sqrt_().add_(eps)
            p.addcdiv_(m, denom, value=-lr / bc1)
    return state


class Adam:
    """Stateful wrapper around :func:`adam_step` for a fixed parameter list."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = AdamState()

    def step(self, loss):
        grads = torch.autograd.grad(loss, self.params, allow_unused=True)
        adam_step(self.params, grads, self.state, self.lr, *self.betas,
                  eps=self.eps, weight_decay=self.weight_decay)
        return grads
