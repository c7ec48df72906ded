import itertools
import json

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st
from scipy.stats import spearmanr

from netcausal import ConstraintInfeasibleError, Graph, InvalidInputError
from netcausal.estimators import GNNCausalEstimator
from netcausal.numkit import as_tensor, grad_check, gumbel_noise
from netcausal.policy import (
    PolicyConfig,
    PolicyModel,
    UtilityReport,
    constraint_residual,
    evaluate_improvement,
    policy_loss,
    random_assignments,
    train_policy,
    utility_capped,
    utility_est,
    utility_true,
)
from netcausal.graph import mean_adjacency
from netcausal.synth import Dataset, GenConfig, gen_spillover, generate

from .conftest import path_graph, random_graph


class FixedEffects:
    """Stand-in estimator: fixed ``tau_hat`` and spillover ``alpha * mean_nbr(T * tau_hat)``."""

    def __init__(self, tau, alpha=0.0):
        self.tau = np.asarray(tau, dtype=float)
        self.alpha = alpha

    def effect_terms(self, X, graph, T):
        tau = as_tensor(self.tau)
        if self.alpha == 0:
            return tau, torch.zeros_like(tau)
        A = as_tensor(mean_adjacency(graph, include_self=False).toarray())
        return tau, self.alpha * (A @ (T * tau))


def toy_dataset(tau, graph, alpha, X=None, seed=0):
    n = len(tau)
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2)) if X is None else X
    T = np.zeros(n)
    return Dataset(X=X, T=T, G=np.zeros(n), Y=np.zeros(n), graph=graph, split=np.zeros(n, dtype=np.int64),
                   tau=np.asarray(tau, float), delta=np.zeros(n), meta={"alpha": alpha, "order": 1}, p=0.5)


# -- utilities ---------------------------------------------------------------------------

def test_utility_true_trivial_cases():
    g = random_graph(20, 0.2, 0)
    c = 1.3
    assert utility_true(np.ones(20), np.full(20, c), g, 0.0) == pytest.approx(c)
    assert utility_true(np.zeros(20), np.full(20, c), g, 0.7) == pytest.approx(-c)
    with pytest.raises(InvalidInputError):
        utility_true(np.ones(20), None, g, 0.5)


def test_utility_true_hand_computed_path():
    # delta = (0, 0.5 * mean(1, 3), 0) = (0, 1, 0); S = (1 - 3 + 3) / 3
    assert utility_true([1, 0, 1], [1.0, 2.0, 3.0], path_graph(3), 0.5) == pytest.approx(1 / 3)


@given(st.integers(0, 10_000), st.floats(-3, 3))
def test_utility_true_linear_in_tau(seed, c):
    rng = np.random.default_rng(seed)
    g = random_graph(15, 0.3, seed)
    tau = rng.normal(size=15)
    pi = (rng.random(15) < 0.5).astype(float)
    assert utility_true(pi, c * tau, g, 0.4) == pytest.approx(c * utility_true(pi, tau, g, 0.4), abs=1e-12)


def test_utility_capped_cases():
    g = random_graph(30, 0.2, 1)
    rng = np.random.default_rng(1)
    tau = rng.normal(size=30)
    pi = np.full(30, 0.2)
    assert utility_capped(pi, tau, g, 0.5, p_t=0.3) == pytest.approx(utility_true(pi, tau, g, 0.5))
    assert utility_capped(np.ones(30), np.full(30, 2.0), g, 0.0, p_t=0.5) == pytest.approx(0.0)
    assert utility_capped(np.zeros(30), tau, g, 0.5, p_t=0.3) == pytest.approx(-tau.mean())
    with pytest.raises(InvalidInputError):
        utility_capped(pi, None, g, 0.5, 0.3)


def test_utility_est_trivial_cases():
    g = random_graph(10, 0.3, 2)
    X = np.zeros((10, 2))
    S, _ = utility_est(np.full(10, 0.5), FixedEffects(np.zeros(10)), g, X, rng=np.random.default_rng(0))
    assert float(S) == 0.0
    S, T = utility_est(np.ones(10), FixedEffects(np.full(10, 0.8)), g, X, rng=np.random.default_rng(0))
    assert float(S) == pytest.approx(0.8) and torch.all(T == 1)
    with pytest.raises(InvalidInputError, match="mismatch"):
        utility_est(np.full(9, 0.5), FixedEffects(np.zeros(10)), g, X, rng=np.random.default_rng(0))


def test_utility_est_matches_truth_without_interference():
    rng = np.random.default_rng(3)
    n = 200
    g = random_graph(n, 0.03, 3)
    tau = rng.normal(size=n)
    pi = rng.uniform(0.1, 0.9, size=n)
    est = FixedEffects(tau)
    X = np.zeros((n, 1))
    diffs = []
    for seed in range(100):
        S, T = utility_est(pi, est, g, X, rng=np.random.default_rng(seed))
        diffs.append(float(S) - utility_true(T.detach().numpy(), tau, g, 0.0))
    assert abs(np.mean(diffs)) < 0.05


def test_gumbel_draws_follow_policy_probabilities():
    n = 4000
    pi = np.full(n, 0.3)
    _, T = utility_est(pi, FixedEffects(np.zeros(n)), Graph.empty(n), np.zeros((n, 1)),
                       rng=np.random.default_rng(0))
    assert abs(float(T.mean()) - 0.3) < 0.03


# -- policy model ------------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["mlp", "onegnn"])
def test_policy_model_outputs_and_roundtrip(kind):
    g = random_graph(25, 0.2, 4)
    X = np.random.default_rng(4).normal(size=(25, 3)) * 10
    pol = PolicyModel(3, 0.3, hidden=(8,), kind=kind, seed=1)
    p = pol.predict_proba(X, g)
    assert np.all((p > 0) & (p < 1))
    back = PolicyModel.from_dict(json.loads(json.dumps(pol.to_dict())))
    assert np.array_equal(back.predict_proba(X, g), p)


def test_policy_model_validation():
    with pytest.raises(InvalidInputError):
        PolicyModel(3, 0.3, kind="tree")
    with pytest.raises(InvalidInputError):
        PolicyModel(3, 0.0)
    with pytest.raises(InvalidInputError, match="graph"):
        PolicyModel(3, 0.3, kind="onegnn").probs(np.zeros((4, 3)))


# -- gradients ---------------------------------------------------------------------------

def small_gnn_estimator(ds):
    est = GNNCausalEstimator(gnn_kind="onegnn", phi_dims=(6,), gnn_dims=(5, 4), head_dims=(5,), dropout=0.0,
                             epochs=20, check_every=10, lr=1e-2, random_state=0)
    return est.fit(ds.X, ds.Y, treatment=ds.T, graph=ds.graph, exposure=ds.G)


@pytest.mark.parametrize("kind", ["mlp", "onegnn"])
@pytest.mark.parametrize("which", ["fixed", "gnn"])
def test_policy_loss_gradient_with_frozen_noise(kind, which):
    ds = generate(GenConfig(n=16, p=0.4, seed=7, k=3))
    est = FixedEffects(np.random.default_rng(0).normal(size=16), alpha=0.5) if which == "fixed" \
        else small_gnn_estimator(ds)
    pol = PolicyModel(ds.X.shape[1], 0.3, hidden=(6,), kind=kind, seed=2)
    noise = gumbel_noise(np.random.default_rng(5), 16)
    X = as_tensor(ds.X)

    def loss():
        return policy_loss(pol, est, ds.graph, X, 50.0, noise, hard=False)

    assert grad_check(loss, pol.params) < 1e-4


def test_hard_policy_loss_has_straight_through_gradient():
    ds = generate(GenConfig(n=16, p=0.4, seed=7, k=3))
    pol = PolicyModel(ds.X.shape[1], 0.3, hidden=(6,), seed=2)
    loss = policy_loss(pol, FixedEffects(np.ones(16), alpha=0.5), ds.graph, as_tensor(ds.X), 5.0,
                       gumbel_noise(np.random.default_rng(0), 16))
    grads = torch.autograd.grad(loss, list(pol.params.values()))
    assert all(torch.isfinite(g).all() for g in grads)
    assert any(g.abs().sum() > 0 for g in grads)


# -- training ----------------------------------------------------------------------------

FAST = PolicyConfig(hidden=(16,), lr=1e-2, epochs=500, seed=0)


def test_train_policy_uniform_effect_hits_capacity():
    n = 200
    X = np.random.default_rng(0).normal(size=(n, 3))
    g = random_graph(n, 0.02, 0)
    pol, trials = train_policy(FixedEffects(np.ones(n)), g, X, 0.3, FAST)
    assert trials[-1].residual <= 0.01
    assert constraint_residual(pol, X, g, np.random.default_rng(9), 1000) <= 0.01
    assert [t.gamma for t in trials] == sorted(t.gamma for t in trials)


def test_train_policy_concentrates_on_positive_effects():
    n = 200
    rng = np.random.default_rng(1)
    pos = np.zeros(n, dtype=bool)
    pos[rng.choice(n, size=60, replace=False)] = True
    X = np.column_stack([pos.astype(float), rng.normal(size=(n, 2))])
    tau_hat = np.where(pos, 1.0, -1.0)
    g = random_graph(n, 0.02, 1)
    pol, _ = train_policy(FixedEffects(tau_hat), g, X, 0.3, FAST)
    top = np.argsort(-pol.predict_proba(X, g))[:60]
    assert pos[top].mean() >= 0.9


def test_train_policy_infeasible_reports_closest_residual():
    n = 100
    X = np.random.default_rng(2).normal(size=(n, 2))
    g = Graph.empty(n)
    cfg = PolicyConfig(hidden=(8,), lr=1e-2, epochs=200, gamma_grid=(0.0,))
    with pytest.raises(ConstraintInfeasibleError) as info:
        train_policy(FixedEffects(np.ones(n)), g, X, 0.3, cfg)
    assert info.value.closest_residual > 0.01
    with pytest.raises(InvalidInputError):
        train_policy(FixedEffects(np.ones(n)), g, X, 0.0, cfg)


# -- evaluation --------------------------------------------------------------------------

def test_random_assignments_exact_count():
    A = random_assignments(50, 0.3, 7, np.random.default_rng(0))
    assert A.shape == (7, 50) and np.all(A.sum(axis=1) == 15)


def test_self_comparison_gives_zero_gain():
    n = 100
    g = random_graph(n, 0.05, 3)
    rng = np.random.default_rng(3)
    tau = rng.normal(size=n)
    ds = toy_dataset(tau, g, 0.5)
    est = FixedEffects(tau, alpha=0.5)
    pol = PolicyModel(2, 0.3, hidden=(4,))
    draws = random_assignments(n, 0.3, 300, np.random.default_rng(10))
    rep = evaluate_improvement(pol, est, ds, n_random=300, rng=np.random.default_rng(11), assignments=draws)
    per = np.array([float(((2 * T - 1) * (tau + gen_spillover(g, T, tau, 0.5))).mean()) for T in draws])
    se = per.std(ddof=1) * np.sqrt(2 / 300)
    assert abs(rep.delta_S_hat) < 3 * se
    assert abs(rep.delta_S_true) < 3 * se


@pytest.mark.parametrize("seed", range(5))
def test_oracle_policy_beats_every_random_subset_on_average(seed):
    n, p_t = 12, 0.25
    rng = np.random.default_rng(seed)
    tau = rng.normal(size=n)
    g = random_graph(n, 0.3, seed)
    k = round(p_t * n)
    oracle = np.zeros(n)
    oracle[np.argsort(-tau)[:k]] = 1
    subsets = list(itertools.combinations(range(n), k))
    exact = np.mean([utility_true(np.isin(np.arange(n), s).astype(float), tau, g, 0.0) for s in subsets])
    assert utility_true(oracle, tau, g, 0.0) > exact
    ds = toy_dataset(tau, g, 0.0)
    pol = PolicyModel(2, p_t, hidden=(4,))
    rep = evaluate_improvement(pol, FixedEffects(tau), ds, n_random=50, rng=rng, assignments=oracle[None])
    assert rep.delta_S_true > 0 and rep.residual == 0.0


def test_report_json_and_missing_truth():
    n = 40
    g = random_graph(n, 0.1, 4)
    ds = toy_dataset(np.ones(n), g, 0.5)
    pol = PolicyModel(2, 0.3, hidden=(4,))
    rep = evaluate_improvement(pol, FixedEffects(np.ones(n), 0.5), ds, n_random=5)
    doc = json.loads(rep.to_json())
    assert UtilityReport(**doc) == rep
    assert all(np.isfinite(v) for v in (rep.S_hat, rep.S_true, rep.delta_S_hat, rep.delta_S_true))
    ds.tau = None
    rep = evaluate_improvement(pol, FixedEffects(np.ones(n), 0.5), ds, n_random=5)
    assert rep.S_true is None and rep.delta_S_true is None
    with pytest.raises(InvalidInputError):
        evaluate_improvement(pol, FixedEffects(np.ones(n)), ds, n_random=0)


@pytest.mark.slow
def test_gap_shrinks_with_estimator_quality():
    n, alpha = 300, 0.5
    rng = np.random.default_rng(0)
    X = rng.normal(size=(n, 3))
    tau = X @ np.array([1.0, -0.5, 0.3])
    g = random_graph(n, 0.02, 0)
    ds = toy_dataset(tau, g, alpha, X=X)
    ladder = [0.0, 0.25, 0.5, 1.0, 2.0]
    gaps = []
    for sd in ladder:
        runs = []
        for seed in range(3):
            noisy = tau + sd * np.random.default_rng(100 + seed).normal(size=n)
            est = FixedEffects(noisy, alpha)
            pol, _ = train_policy(est, g, X, 0.3, PolicyConfig(hidden=(16,), lr=1e-2, epochs=400, seed=seed))
            rep = evaluate_improvement(pol, est, ds, n_random=20, rng=np.random.default_rng(seed))
            runs.append(abs(rep.delta_S_hat - rep.delta_S_true))
        gaps.append(np.mean(runs))
    assert spearmanr(ladder, gaps).correlation > 0
