"""Domain-adaptation (DA) and doubly-robust (DR) meta-learners with exposure as a feature.

Both learners fit outcome models on ``[X, G]`` per treatment arm and then
regress pseudo-effects on ``X`` alone. Regressors are weighted ridge or a small
MLP; propensities are either the known randomisation probability or a
gradient-descent logistic fit.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.linalg
import torch
from scipy.special import expit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .estimators import compute_metrics
from .exceptions import InvalidInputError, NumericError
from .numkit import Adam, as_tensor, graph_operator, init_mlp, mlp

logger = logging.getLogger(__name__)

CLIP = (0.02, 0.98)
MIN_ARM = 4
RIDGE_JITTER = 1e-8
METHODS = ("da", "dr")
REGRESSORS = ("ridge", "mlp")


def _weights(sample_weight, n):
    if sample_weight is None:
        return np.ones(n)
    w = np.asarray(sample_weight, dtype=float).reshape(-1)
    if w.shape[0] != n or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidInputError("sample_weight must be finite, non-negative and one per row")
    return w


class RidgeRegressor(RegressorMixin, BaseEstimator):
    """Weighted ridge with an unpenalised intercept, solved by normal equations."""

    def __init__(self, alpha=1.0):
        self.alpha = alpha

    def fit(self, X, y, sample_weight=None):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y, dtype=float).reshape(-1)
        w = _weights(sample_weight, X.shape[0])
        sw = w.sum()
        if sw <= 0:
            raise InvalidInputError("sample weights sum to zero")
        x_mean = w @ X / sw
        y_mean = w @ y / sw
        Xc, yc = X - x_mean, y - y_mean
        A = (Xc * w[:, None]).T @ Xc
        rhs = (Xc * w[:, None]).T @ yc
        lam = max(float(self.alpha), RIDGE_JITTER)
        eye = np.eye(X.shape[1])
        for scale in (1.0, 1e4):
            try:
                coef = scipy.linalg.solve(A + lam * scale * eye, rhs, assume_a="pos")
                break
            except (scipy.linalg.LinAlgError, ValueError):
                logger.warning("ridge system singular at lambda=%g; retrying with more jitter", lam * scale)
        else:
            raise NumericError("ridge normal equations are singular")
        self.coef_ = coef
        self.intercept_ = float(y_mean - x_mean @ coef)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        return X @ self.coef_ + self.intercept_

    def torch_predict(self, Xt):
        return Xt @ torch.as_tensor(self.coef_, dtype=Xt.dtype) + self.intercept_

    def to_dict(self):
        return {"kind": "ridge", "alpha": self.alpha, "coef": self.coef_.tolist(), "intercept": self.intercept_}

    @classmethod
    def from_dict(cls, d):
        r = cls(alpha=d["alpha"])
        r.coef_ = np.asarray(d["coef"], dtype=float)
        r.intercept_ = float(d["intercept"])
        r.n_features_in_ = r.coef_.shape[0]
        return r


class MLPRegressor(RegressorMixin, BaseEstimator):
    """One-hidden-layer ReLU network trained full-batch on weighted MSE."""

    def __init__(self, hidden=(32,), lr=1e-2, epochs=300, weight_decay=1e-4, random_state=0):
        self.hidden = hidden
        self.lr = lr
        self.epochs = epochs
        self.weight_decay = weight_decay
        self.random_state = random_state

    def fit(self, X, y, sample_weight=None):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y, dtype=float).reshape(-1)
        w = _weights(sample_weight, X.shape[0])
        self.x_mean_, self.x_sd_ = X.mean(axis=0), np.where(X.std(axis=0) > 0, X.std(axis=0), 1.0)
        self.y_mean_, self.y_sd_ = float(y.mean()), float(y.std()) or 1.0
        Xt = as_tensor((X - self.x_mean_) / self.x_sd_)
        yt = as_tensor((y - self.y_mean_) / self.y_sd_)
        wt = as_tensor(w / w.mean())
        rng = np.random.default_rng(self.random_state)
        params = init_mlp({}, "net", rng, [X.shape[1], *self.hidden, 1])
        opt = Adam(params.values(), lr=self.lr, weight_decay=self.weight_decay)
        for _ in range(int(self.epochs)):
            out = mlp(params, "net", Xt, len(self.hidden) + 1, activate_last=False)[:, 0]
            loss = (wt * (out - yt) ** 2).mean()
            if not torch.isfinite(loss):
                raise NumericError("MLP regressor loss is not finite")
            opt.step(loss)
        self.params_ = {k: v.detach() for k, v in params.items()}
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        with torch.no_grad():
            out = mlp(self.params_, "net", as_tensor((X - self.x_mean_) / self.x_sd_),
                      len(self.hidden) + 1, activate_last=False)[:, 0]
        return out.numpy() * self.y_sd_ + self.y_mean_

    def torch_predict(self, Xt):
        Z = (Xt - as_tensor(self.x_mean_)) / as_tensor(self.x_sd_)
        return mlp(self.params_, "net", Z, len(self.hidden) + 1, activate_last=False)[:, 0] * self.y_sd_ + self.y_mean_

    def to_dict(self):
        return {"kind": "mlp", "hyper": {**self.get_params(), "hidden": list(self.hidden)},
                "x_mean": self.x_mean_.tolist(), "x_sd": self.x_sd_.tolist(),
                "y_mean": self.y_mean_, "y_sd": self.y_sd_,
                "params": {k: {"shape": list(v.shape), "values": v.reshape(-1).tolist()}
                           for k, v in self.params_.items()}}

    @classmethod
    def from_dict(cls, d):
        hyper = dict(d["hyper"], hidden=tuple(d["hyper"]["hidden"]))
        r = cls(**hyper)
        r.x_mean_, r.x_sd_ = np.asarray(d["x_mean"]), np.asarray(d["x_sd"])
        r.y_mean_, r.y_sd_ = d["y_mean"], d["y_sd"]
        r.params_ = {k: torch.tensor(v["values"], dtype=torch.float64).reshape(v["shape"])
                     for k, v in d["params"].items()}
        r.n_features_in_ = r.x_mean_.shape[0]
        return r


def make_regressor(kind, **kw):
    if kind == "ridge":
        return RidgeRegressor(**kw)
    if kind == "mlp":
        return MLPRegressor(**kw)
    raise InvalidInputError(f"unknown regressor {kind!r}; expected one of {REGRESSORS}")


def regressor_from_dict(d):
    return RidgeRegressor.from_dict(d) if d["kind"] == "ridge" else MLPRegressor.from_dict(d)


class Propensity:
    """``Pr[T=1 | X]`` clipped to [0.02, 0.98]; constant or logistic."""

    def __init__(self, mode, p=None, w=None, b=0.0):
        if mode not in ("constant", "logistic"):
            raise InvalidInputError(f"unknown propensity mode {mode!r}")
        if mode == "constant" and not (p is not None and 0 < p < 1):
            raise InvalidInputError("constant propensity needs 0 < p < 1")
        self.mode = mode
        self.p = p
        self.w = None if w is None else np.asarray(w, dtype=float)
        self.b = float(b)

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        if self.mode == "constant":
            raw = np.full(X.shape[0], float(self.p))
        else:
            raw = expit(X @ self.w + self.b)
        return np.clip(raw, *CLIP)

    def to_dict(self):
        return {"mode": self.mode, "p": self.p, "w": None if self.w is None else self.w.tolist(), "b": self.b}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mode"], p=d.get("p"), w=d.get("w"), b=d.get("b", 0.0))


def fit_propensity(X, T, mode="logistic", p=None, steps=500, lr=0.1, l2=1e-4):
    """Logistic regression by plain gradient descent, or the known constant ``p``."""
    if mode == "constant":
        return Propensity("constant", p=p)
    X = check_array(X, dtype=np.float64)
    T = np.asarray(T, dtype=float).reshape(-1)
    if len(np.unique(T)) < 2:
        raise InvalidInputError("propensity fit needs both treatment labels")
    n, d = X.shape
    w, b = np.zeros(d), 0.0
    for _ in range(steps):
        r = expit(X @ w + b) - T
        w -= lr * (X.T @ r / n + l2 * w)
        b -= lr * r.mean()
    return Propensity("logistic", w=w, b=b)


class MetaLearner(BaseEstimator):
    """DA or DR estimator of individual effects under interference.

    Outcome models ``mu0`` / ``mu1`` see ``[X, G]``; the effect model sees ``X``.
    ``propensity`` is a :class:`Propensity`, ``"constant"`` (uses ``p``) or
    ``"logistic"`` (fitted on the training rows).
    """

    def __init__(self, method="da", regressor="ridge", propensity="constant", p=0.5, reg_params=None):
        self.method = method
        self.regressor = regressor
        self.propensity = propensity
        self.p = p
        self.reg_params = reg_params

    def _reg(self):
        return make_regressor(self.regressor, **(self.reg_params or {}))

    def fit(self, X, y, *, treatment, exposure, train_mask=None):
        if self.method not in METHODS:
            raise InvalidInputError(f"unknown method {self.method!r}; expected one of {METHODS}")
        X = check_array(X, dtype=np.float64)
        n = X.shape[0]
        T = np.asarray(treatment, dtype=float).reshape(-1)
        G = np.asarray(exposure, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        tr = np.ones(n, bool) if train_mask is None else np.asarray(train_mask, bool)
        X, T, G, y = X[tr], T[tr], G[tr], y[tr]
        t1, t0 = T == 1, T == 0
        if t1.sum() < MIN_ARM or t0.sum() < MIN_ARM:
            raise InvalidInputError(
                f"each arm needs at least {MIN_ARM} training units (treated={int(t1.sum())}, control={int(t0.sum())})")
        if not np.all(np.isfinite(y)):
            raise InvalidInputError("training outcomes must be finite")

        if isinstance(self.propensity, Propensity):
            prop = self.propensity
        elif self.propensity == "constant":
            prop = Propensity("constant", p=self.p)
        else:
            prop = fit_propensity(X, T)
        g = prop.predict(X)
        XG = np.column_stack([X, G])

        if self.method == "da":
            mu0 = self._reg().fit(XG[t0], y[t0], sample_weight=g[t0] / (1 - g[t0]))
            mu1 = self._reg().fit(XG[t1], y[t1], sample_weight=(1 - g[t1]) / g[t1])
            d1 = y[t1] - mu0.predict(XG[t1])
            d0 = mu1.predict(XG[t0]) - y[t0]
            tau_model = self._reg().fit(np.vstack([X[t0], X[t1]]), np.concatenate([d0, d1]))
        else:
            if np.any(np.isclose(g, CLIP[0]) | np.isclose(g, CLIP[1])):
                logger.warning("propensity at clip boundary for %d units; DR variance inflated",
                               int(np.sum(np.isclose(g, CLIP[0]) | np.isclose(g, CLIP[1]))))
            mu0 = self._reg().fit(XG[t0], y[t0])
            mu1 = self._reg().fit(XG[t1], y[t1])
            m0, m1 = mu0.predict(XG), mu1.predict(XG)
            d1 = m1 + (y - m1) / g * t1
            d0 = m0 + (y - m0) / (1 - g) * t0
            tau_model = self._reg().fit(X, d1 - d0)

        self.propensity_ = prop
        self.mu0_, self.mu1_, self.tau_model_ = mu0, mu1, tau_model
        self.pseudo_ = (d1, d0)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X, *, treatment, exposure):
        check_is_fitted(self, "tau_model_")
        XG = np.column_stack([check_array(X, dtype=np.float64), np.asarray(exposure, dtype=float)])
        T = np.asarray(treatment, dtype=float)
        return np.where(T == 1, self.mu1_.predict(XG), self.mu0_.predict(XG))

    def predict_ite(self, X):
        check_is_fitted(self, "tau_model_")
        return self.tau_model_.predict(check_array(X, dtype=np.float64))

    def effect_terms(self, X, graph, T):
        """``(tau_hat, delta_hat)`` as tensors; ``delta_hat = mu1([X, G(T)]) - mu1([X, 0])``."""
        check_is_fitted(self, "tau_model_")
        Xt = X if isinstance(X, torch.Tensor) else as_tensor(check_array(X, dtype=np.float64))
        if graph.n != Xt.shape[0]:
            raise InvalidInputError("estimator/graph mismatch: graph size differs from X rows")
        tau = as_tensor(self.tau_model_.predict(Xt.detach().numpy()))
        G = torch.sparse.mm(graph_operator(graph, "mean_nbr"), T[:, None])
        zero = torch.zeros_like(G)
        delta = self.mu1_.torch_predict(torch.cat([Xt, G], 1)) - self.mu1_.torch_predict(torch.cat([Xt, zero], 1))
        return tau, delta

    def score_dataset(self, ds, mask=None):
        """Metrics in outcome units standardised by the training-split mean and sd."""
        mask = ds.test_mask if mask is None else mask
        y_tr = ds.Y[ds.train_mask]
        mu, sd = float(y_tr.mean()), float(y_tr.std()) or 1.0
        y_hat = self.predict(ds.X, treatment=ds.T, exposure=ds.G)
        tau = None if ds.tau is None else ds.tau / sd
        return compute_metrics((y_hat - mu) / sd, (ds.Y - mu) / sd, self.predict_ite(ds.X) / sd, tau, mask)

    def to_dict(self):
        check_is_fitted(self, "tau_model_")
        return {"estimator": "MetaLearner", "method": self.method, "regressor": self.regressor,
                "p": self.p, "reg_params": self.reg_params, "propensity": self.propensity_.to_dict(),
                "mu0": self.mu0_.to_dict(), "mu1": self.mu1_.to_dict(), "tau": self.tau_model_.to_dict()}

    @classmethod
    def from_dict(cls, d):
        m = cls(method=d["method"], regressor=d["regressor"], p=d["p"], reg_params=d["reg_params"])
        m.propensity_ = Propensity.from_dict(d["propensity"])
        m.mu0_, m.mu1_ = regressor_from_dict(d["mu0"]), regressor_from_dict(d["mu1"])
        m.tau_model_ = regressor_from_dict(d["tau"])
        m.n_features_in_ = m.tau_model_.n_features_in_
        return m


def _default_propensity(data, g_prop):
    if g_prop is not None:
        return g_prop
    if data.mode == "randomized" and data.p is not None:
        return Propensity("constant", p=data.p)
    tr = data.train_mask
    return fit_propensity(data.X[tr], data.T[tr])


def fit_da(data, g_prop=None, reg_kind="ridge", reg_params=None):
    """DA learner on the training split of a :class:`~netcausal.synth.Dataset`."""
    model = MetaLearner("da", reg_kind, _default_propensity(data, g_prop), reg_params=reg_params)
    return model.fit(data.X, data.Y, treatment=data.T, exposure=data.G, train_mask=data.train_mask)


def fit_dr(data, g_prop=None, reg_kind="ridge", reg_params=None):
    """DR learner on the training split of a :class:`~netcausal.synth.Dataset`."""
    model = MetaLearner("dr", reg_kind, _default_propensity(data, g_prop), reg_params=reg_params)
    return model.fit(data.X, data.Y, treatment=data.T, exposure=data.G, train_mask=data.train_mask)
