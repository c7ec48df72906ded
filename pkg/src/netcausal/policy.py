"""Capacity-constrained treatment policies learned through a frozen causal estimator.

A policy maps covariates to treatment probabilities. Training maximises the
plug-in utility ``mean((2 pi - 1)(tau_hat + delta_hat))`` with hard assignments
drawn by straight-through Gumbel-softmax, while a penalty keeps the mean
treatment probability at the capacity ``p_t``.

Any object with ``effect_terms(X, graph, T) -> (tau_hat, delta_hat)`` (torch
tensors, differentiable in ``T``) can serve as the estimator.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .exceptions import ConstraintInfeasibleError, InvalidInputError, NumericError
from .numkit import (
    DTYPE,
    Adam,
    as_tensor,
    glorot,
    gumbel_noise,
    gumbel_softmax_sample,
    init_mlp,
    mlp,
    onegnn_layer,
    params_from_dict,
    params_to_dict,
    zeros,
)
from .synth import gen_spillover

logger = logging.getLogger(__name__)

GAMMA_GRID = (5.0, 50.0, 100.0, 200.0, 500.0)
POLICY_KINDS = ("mlp", "onegnn")


@dataclass
class PolicyConfig:
    hidden: tuple = (64, 32)
    kind: str = "mlp"
    lr: float = 1e-3
    epochs: int = 2000
    tau_g: float = 0.5
    gamma_grid: tuple = GAMMA_GRID
    tol: float = 0.01
    n_check: int = 1000
    seed: int = 0


class PolicyModel:
    """Policy network ``pi(X) in (0, 1)``: an MLP or a 1-GNN stack with sigmoid output."""

    def __init__(self, n_features, p_t, hidden=(64, 32), kind="mlp", tau_g=0.5, gamma=None, seed=0,
                 params=None):
        if kind not in POLICY_KINDS:
            raise InvalidInputError(f"unknown policy kind {kind!r}; expected one of {POLICY_KINDS}")
        if not 0 < p_t < 1:
            raise InvalidInputError(f"capacity p_t must lie in (0, 1), got {p_t}")
        self.n_features = int(n_features)
        self.p_t = float(p_t)
        self.hidden = tuple(hidden)
        self.kind = kind
        self.tau_g = float(tau_g)
        self.gamma = gamma
        self.seed = seed
        self.params = params if params is not None else self._init(np.random.default_rng(seed))

    def _init(self, rng):
        dims = [self.n_features, *self.hidden, 1]
        if self.kind == "mlp":
            return init_mlp({}, "pi", rng, dims)
        params = {}
        for l, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            params[f"pi.{l}.W"] = glorot(rng, a, b)
            params[f"pi.{l}.W2"] = glorot(rng, a, b)
            params[f"pi.{l}.b"] = zeros(b)
        return params

    def probs(self, X, graph=None):
        X = X if isinstance(X, torch.Tensor) else as_tensor(X)
        n_layers = len(self.hidden) + 1
        if self.kind == "mlp":
            out = mlp(self.params, "pi", X, n_layers, activate_last=False)
        else:
            if graph is None:
                raise InvalidInputError("the 1-GNN policy needs the graph")
            out = X
            for l in range(n_layers):
                out = onegnn_layer(out, graph, self.params[f"pi.{l}.W"], self.params[f"pi.{l}.W2"],
                                   l < n_layers - 1, bias=self.params[f"pi.{l}.b"])
        return torch.sigmoid(out[:, 0])

    def predict_proba(self, X, graph=None):
        with torch.no_grad():
            return self.probs(X, graph).numpy()

    def sample(self, X, graph, rng, n_draws=1):
        """Hard Bernoulli assignments, shape ``(n_draws, n)``."""
        p = self.predict_proba(X, graph)
        return (rng.random((n_draws, p.shape[0])) < p).astype(float)

    def to_dict(self):
        meta = {"n_features": self.n_features, "p_t": self.p_t, "hidden": list(self.hidden),
                "kind": self.kind, "tau_g": self.tau_g, "gamma": self.gamma, "seed": self.seed}
        return params_to_dict(self.params, meta)

    @classmethod
    def from_dict(cls, doc):
        params, meta = params_from_dict(doc)
        return cls(meta["n_features"], meta["p_t"], meta["hidden"], meta["kind"], meta["tau_g"],
                   meta["gamma"], meta["seed"], params=params)


# -- utilities -------------------------------------------------------------------------

def utility_true(pi_treat, tau, graph, alpha, order=1):
    """``mean((2 pi - 1)(tau + delta(pi)))`` with spillover recomputed under ``pi``."""
    if tau is None:
        raise InvalidInputError("true utility needs ground-truth effects")
    pi = np.asarray(pi_treat, dtype=float)
    tau = np.asarray(tau, dtype=float)
    delta = gen_spillover(graph, pi, tau, alpha, order)
    return float(np.mean((2 * pi - 1) * (tau + delta)))


def utility_capped(pi, tau, graph, alpha, p_t, order=1):
    """Capacity-capped utility with weight ``2 min(1, p_t / P(pi)) pi - 1``.

    ``P(pi)`` is the mean policy probability; when it is 0 the factor is 1.
    """
    if tau is None:
        raise InvalidInputError("capped utility needs ground-truth effects")
    pi = np.asarray(pi, dtype=float)
    tau = np.asarray(tau, dtype=float)
    mass = float(pi.mean())
    factor = 1.0 if mass == 0 else min(1.0, p_t / mass)
    delta = gen_spillover(graph, pi, tau, alpha, order)
    return float(np.mean((2 * factor * pi - 1) * (tau + delta)))


def utility_est(pi_soft, estimator, graph, X, *, tau_g=0.5, rng=None, noise=None, hard=True):
    """Differentiable plug-in utility; returns ``(S_hat, T)`` with ``T`` the sampled assignment.

    ``T`` is drawn with straight-through Gumbel-softmax from ``pi_soft``; the
    weight ``2 pi - 1`` uses the soft probabilities.
    """
    pi_soft = pi_soft if isinstance(pi_soft, torch.Tensor) else as_tensor(pi_soft)
    T = gumbel_softmax_sample(pi_soft, tau_g, rng, noise=noise, hard=hard)
    tau_hat, delta_hat = estimator.effect_terms(X, graph, T)
    if tau_hat.shape != pi_soft.shape:
        raise InvalidInputError("estimator/graph mismatch: effect terms do not match the policy size")
    S = ((2 * pi_soft - 1) * (tau_hat + delta_hat)).mean()
    return S, T


def estimated_utility_of(T, estimator, graph, X):
    """Plug-in utility of a fixed hard assignment (weight ``2T - 1``)."""
    with torch.no_grad():
        Tt = as_tensor(T)
        tau_hat, delta_hat = estimator.effect_terms(X, graph, Tt)
        return float(((2 * Tt - 1) * (tau_hat + delta_hat)).mean())


def policy_loss(policy, estimator, graph, X, gamma, noise, hard=True):
    """``-S_hat + gamma * |mean pi - p_t|`` with frozen Gumbel noise.

    ``hard=False`` keeps the relaxed samples in the forward pass, which makes the
    loss smooth in the policy parameters (used for finite-difference checks).
    """
    pi = policy.probs(X, graph)
    S, _ = utility_est(pi, estimator, graph, X, tau_g=policy.tau_g, noise=noise, hard=hard)
    return -S + gamma * (pi.mean() - policy.p_t).abs()


def constraint_residual(policy, X, graph, rng, n_draws=1000):
    """``|mean hard treatment rate - p_t|`` over sampled assignments."""
    draws = policy.sample(X, graph, rng, n_draws)
    return float(abs(draws.mean() - policy.p_t))


# -- training ----------------------------------------------------------------------------

@dataclass
class GammaTrial:
    gamma: float
    residual: float
    utility: float


def _train_at_gamma(estimator, graph, X, p_t, cfg, gamma):
    policy = PolicyModel(X.shape[1], p_t, cfg.hidden, cfg.kind, cfg.tau_g, gamma, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(policy.params.values(), lr=cfg.lr)
    Xt = as_tensor(X)
    for epoch in range(int(cfg.epochs)):
        noise = gumbel_noise(rng, X.shape[0])
        loss = policy_loss(policy, estimator, graph, Xt, gamma, noise)
        if not torch.isfinite(loss):
            raise NumericError(f"policy loss not finite at epoch {epoch}")
        opt.step(loss)
    for p in policy.params.values():
        p.requires_grad_(False)
    return policy


def train_policy(estimator, graph, X, p_t, cfg=None):
    """Ascend the gamma grid, retraining from scratch; the first feasible policy wins.

    Returns ``(policy, trials)``. Raises :class:`ConstraintInfeasibleError` with
    the smallest residual seen when no gamma meets the tolerance.
    """
    cfg = cfg or PolicyConfig()
    if not 0 < p_t < 1:
        raise InvalidInputError(f"capacity p_t must lie in (0, 1), got {p_t}")
    X = np.asarray(X, dtype=float)
    check_rng = np.random.default_rng([cfg.seed, 1])
    trials = []
    for gamma in sorted(cfg.gamma_grid):
        policy = _train_at_gamma(estimator, graph, X, p_t, cfg, gamma)
        res = constraint_residual(policy, X, graph, check_rng, cfg.n_check)
        util = estimated_utility_of(policy.sample(X, graph, check_rng)[0], estimator, graph, X)
        trials.append(GammaTrial(gamma, res, util))
        logger.info("gamma=%g residual=%.4f S_hat=%.4f", gamma, res, util)
        if res <= cfg.tol:
            return policy, trials
    closest = min(t.residual for t in trials) if trials else None
    raise ConstraintInfeasibleError(
        f"no gamma in {tuple(cfg.gamma_grid)} met tolerance {cfg.tol}; closest residual {closest}",
        closest_residual=closest)


# -- evaluation --------------------------------------------------------------------------

@dataclass
class UtilityReport:
    S_hat: float
    S_true: float | None
    delta_S_hat: float
    delta_S_true: float | None
    residual: float
    p_t: float
    n_draws: int
    n_random: int
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def random_assignments(n, p_t, n_random, rng):
    """``n_random`` assignments each treating exactly ``round(p_t n)`` nodes."""
    k = int(round(p_t * n))
    out = np.zeros((n_random, n))
    for r in range(n_random):
        out[r, rng.choice(n, size=k, replace=False)] = 1.0
    return out


def evaluate_improvement(policy, estimator, data, graph=None, n_random=20, rng=None, n_draws=20,
                         alpha=None, order=None, assignments=None):
    """Estimated and true utility gains of ``policy`` over same-capacity random policies.

    The learned policy is scored on ``n_draws`` hard samples (or the explicit
    ``assignments``); both utilities use the same draws.
    """
    if n_random < 1:
        raise InvalidInputError("n_random must be >= 1")
    graph = graph or data.graph
    rng = rng if rng is not None else np.random.default_rng(0)
    alpha = data.meta.get("alpha") if alpha is None else alpha
    order = data.meta.get("order", 1) if order is None else order
    X = data.X
    truth = data.has_truth and alpha is not None
    draws = assignments if assignments is not None else policy.sample(X, graph, rng, n_draws)
    randoms = random_assignments(data.n, policy.p_t, n_random, rng)

    def scores(Ts):
        est = np.mean([estimated_utility_of(T, estimator, graph, X) for T in Ts])
        tru = np.mean([utility_true(T, data.tau, graph, alpha, order) for T in Ts]) if truth else None
        return est, tru

    s_hat, s_true = scores(draws)
    r_hat, r_true = scores(randoms)
    return UtilityReport(
        S_hat=float(s_hat), S_true=None if s_true is None else float(s_true),
        delta_S_hat=float(s_hat - r_hat),
        delta_S_true=None if s_true is None else float(s_true - r_true),
        residual=float(abs(np.mean(draws) - policy.p_t)), p_t=policy.p_t,
        n_draws=len(draws), n_random=n_random)
