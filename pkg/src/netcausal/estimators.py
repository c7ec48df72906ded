"""GNN-based causal estimator with HSIC representation balancing.

Covariates pass through a feature map ``phi``; the treatment vector masks the
``phi`` rows before a GNN stack aggregates treated neighbours; two outcome heads
(control / treated) read ``[phi, z, exposure]``. Individual effects are the head
difference with the graph and exposure inputs zeroed.
"""

from __future__ import annotations

import copy
import logging
import warnings
from dataclasses import dataclass

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import InvalidInputError, NumericError, TrainingError
from .graph import Graph
from .numkit import (
    DTYPE,
    Adam,
    as_tensor,
    gcn_layer,
    glorot,
    graph_operator,
    hsic,
    init_mlp,
    mlp,
    onegnn_layer,
    params_from_dict,
    params_to_dict,
    sage_layer,
    zeros,
)

logger = logging.getLogger(__name__)

GNN_KINDS = ("gcn", "sage", "onegnn")
BALANCE_TARGETS = ("phi", "gnn", "none")
ITE_MODES = ("zero", "edgeless")
KAPPA_GRID = (0.001, 0.005, 0.1, 0.2)


def _vector(a, n, name):
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.shape[0] != n:
        raise InvalidInputError(f"{name} has length {a.shape[0]}, expected {n}")
    return a


def _mask(m, n, default):
    if m is None:
        return np.full(n, default, dtype=bool)
    m = np.asarray(m, dtype=bool).reshape(-1)
    if m.shape[0] != n:
        raise InvalidInputError(f"mask has length {m.shape[0]}, expected {n}")
    return m


def compute_metrics(y_hat, y, tau_hat=None, tau=None, mask=None):
    """``rmse = sqrt(mean (y - y_hat)^2)`` and ``pehe = mean (tau - tau_hat)^2`` over ``mask``.

    PEHE is reported unrooted; it is ``None`` when no true effects are given.
    """
    y = np.asarray(y, dtype=float)
    mask = np.ones(y.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise InvalidInputError("evaluation mask is empty")
    rmse = float(np.sqrt(np.mean((y[mask] - np.asarray(y_hat)[mask]) ** 2)))
    pehe = None
    if tau is not None and tau_hat is not None:
        pehe = float(np.mean((np.asarray(tau)[mask] - np.asarray(tau_hat)[mask]) ** 2))
    return {"rmse": rmse, "pehe": pehe}


class GNNCausalEstimator(BaseEstimator):
    """Estimator of outcomes, individual effects and spillover on a fixed graph.

    Parameters follow the scikit-learn convention; ``fit`` needs the treatment
    vector and the graph as keyword arguments. Outcomes are standardised with
    the training-split mean and sd; ``predict`` and ``predict_ite`` return
    values on the original outcome scale.
    """

    def __init__(self, gnn_kind="sage", phi_dims=(64, 64), gnn_dims=(128, 32), head_dims=(64, 32),
                 kappa=0.0, balance_target="phi", sigma="auto", lr=1e-3, weight_decay=1e-4,
                 epochs=20000, check_every=2000, dropout=0.5, hsic_batch=256, use_exposure=True,
                 ite_mode="zero", random_state=0):
        self.gnn_kind = gnn_kind
        self.phi_dims = phi_dims
        self.gnn_dims = gnn_dims
        self.head_dims = head_dims
        self.kappa = kappa
        self.balance_target = balance_target
        self.sigma = sigma
        self.lr = lr
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.check_every = check_every
        self.dropout = dropout
        self.hsic_batch = hsic_batch
        self.use_exposure = use_exposure
        self.ite_mode = ite_mode
        self.random_state = random_state

    # -- construction ----------------------------------------------------------

    def _validate_hyper(self):
        if self.gnn_kind not in GNN_KINDS:
            raise InvalidInputError(f"unknown gnn_kind {self.gnn_kind!r}; expected one of {GNN_KINDS}")
        if self.balance_target not in BALANCE_TARGETS:
            raise InvalidInputError(f"unknown balance_target {self.balance_target!r}")
        if self.ite_mode not in ITE_MODES:
            raise InvalidInputError(f"unknown ite_mode {self.ite_mode!r}")
        if not 2 <= len(self.gnn_dims) <= 3:
            raise InvalidInputError("the GNN stack must have 2 or 3 layers")
        if self.lr <= 0 or self.epochs <= 0:
            raise InvalidInputError("lr and epochs must be positive")
        if self.kappa < 0:
            raise InvalidInputError("kappa must be non-negative")

    def init_params(self, n_features):
        """Fresh Glorot-initialised parameters for ``n_features`` inputs."""
        self._validate_hyper()
        rng = np.random.default_rng(self.random_state)
        params = {}
        phi = [n_features, *self.phi_dims]
        init_mlp(params, "phi", rng, phi)
        dims = [phi[-1], *self.gnn_dims]
        for l, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            params[f"gnn.{l}.W"] = glorot(rng, a, b)
            if self.gnn_kind == "onegnn":
                params[f"gnn.{l}.W2"] = glorot(rng, a, b)
            params[f"gnn.{l}.b"] = zeros(b)
        head_in = phi[-1] + dims[-1] + 1
        for h in ("h0", "h1"):
            init_mlp(params, h, rng, [head_in, *self.head_dims, 1])
        return params

    # -- forward pieces --------------------------------------------------------

    def _phi(self, params, X, training=False, gen=None):
        return mlp(params, "phi", X, len(self.phi_dims), activate_last=True,
                   rate=self.dropout, generator=gen, training=training)

    def _gnn(self, params, H, graph):
        n_layers = len(self.gnn_dims)
        for l in range(n_layers):
            act = l < n_layers - 1
            W, b = params[f"gnn.{l}.W"], params[f"gnn.{l}.b"]
            if self.gnn_kind == "gcn":
                H = gcn_layer(H, graph, W, act, bias=b)
            elif self.gnn_kind == "sage":
                H = sage_layer(H, graph, W, act, bias=b)
            else:
                H = onegnn_layer(H, graph, W, params[f"gnn.{l}.W2"], act, bias=b)
        return H

    def _head(self, params, name, inp, training=False, gen=None):
        out = mlp(params, name, inp, len(self.head_dims) + 1, activate_last=False,
                  rate=self.dropout, generator=gen, training=training)
        return out[:, 0]

    def _expo(self, G):
        return G[:, None] if self.use_exposure else torch.zeros_like(G)[:, None]

    def forward_parts(self, params, X, T, G, graph, training=False, gen=None):
        """Return ``(y_hat, phi, z)`` in standardised outcome units.

        ``T`` and ``G`` may be tensors carrying gradients (used by policy training).
        """
        phi = self._phi(params, X, training, gen)
        z = self._gnn(params, T[:, None] * phi, graph)
        inp = torch.cat([phi, z, self._expo(G)], dim=1)
        y0 = self._head(params, "h0", inp, training, gen)
        y1 = self._head(params, "h1", inp, training, gen)
        y_hat = T * y1 + (1.0 - T) * y0
        if not torch.isfinite(y_hat).all():
            raise NumericError("non-finite activations in forward pass")
        return y_hat, phi, z

    def _counterfactual_input(self, params, phi, treated):
        """Head input for the empty-graph counterfactual at a fixed own treatment.

        ``zero`` mode uses the literal zero GNN vector; ``edgeless`` mode runs the
        GNN on an edgeless graph with the node's own masked features.
        """
        n = phi.shape[0]
        if self.ite_mode == "zero":
            z = torch.zeros((n, self.gnn_dims[-1]), dtype=DTYPE)
        else:
            z = self._gnn(params, phi * float(treated), Graph.empty(n))
        return torch.cat([phi, z, torch.zeros((n, 1), dtype=DTYPE)], dim=1)

    def ite_std(self, params, X):
        phi = self._phi(params, X)
        y1 = self._head(params, "h1", self._counterfactual_input(params, phi, 1))
        y0 = self._head(params, "h0", self._counterfactual_input(params, phi, 0))
        return y1 - y0

    # -- training --------------------------------------------------------------

    def _check_inputs(self, X, treatment, graph, exposure):
        X = check_array(X, dtype=np.float64)
        n = X.shape[0]
        if not isinstance(graph, Graph) or graph.n != n:
            raise InvalidInputError("graph must be a Graph with one node per row of X")
        T = _vector(treatment, n, "treatment")
        if not np.isin(T, (0.0, 1.0)).all():
            raise InvalidInputError("treatment must be binary")
        if exposure is None:
            G = graph_operator(graph, "mean_nbr") @ as_tensor(T)
        else:
            G = as_tensor(_vector(exposure, n, "exposure"))
        return X, T, G

    def fit(self, X, y, *, treatment, graph, exposure=None, train_mask=None, val_mask=None):
        """Train on ``train_mask`` rows; keep the parameters with the best validation loss.

        Outcomes outside the train and validation masks are never read and may be NaN.
        """
        self._validate_hyper()
        torch.set_num_threads(1)
        X, T, G = self._check_inputs(X, treatment, graph, exposure)
        n = X.shape[0]
        y = _vector(y, n, "y")
        tr = _mask(train_mask, n, True)
        va = _mask(val_mask, n, False) & ~tr
        if not tr.any():
            raise InvalidInputError("train mask is empty")
        if not np.isfinite(y[tr | va]).all():
            raise InvalidInputError("outcomes on the train/validation rows must be finite")

        self.y_mean_ = float(y[tr].mean())
        sd = float(y[tr].std())
        self.y_sd_ = sd if sd > 0 else 1.0
        ys = np.where(tr | va, (np.nan_to_num(y) - self.y_mean_) / self.y_sd_, 0.0)

        kappa = float(self.kappa)
        if kappa > 0 and len(np.unique(T[tr])) < 2:
            warnings.warn("only one treatment arm in the training split; HSIC term dropped", RuntimeWarning)
            kappa = 0.0
        if self.balance_target == "none":
            kappa = 0.0

        params = self.init_params(X.shape[1])
        Xt, Tt, yt = as_tensor(X), as_tensor(T), as_tensor(ys)
        tr_idx = torch.as_tensor(np.flatnonzero(tr))
        va_idx = torch.as_tensor(np.flatnonzero(va))
        rng = np.random.default_rng(self.random_state)
        gen = torch.Generator().manual_seed(int(self.random_state))
        opt = Adam(params.values(), lr=self.lr, weight_decay=self.weight_decay)
        check = max(1, int(self.check_every or max(1, self.epochs // 10)))

        best_val, best_params, best_epoch = np.inf, None, 0
        history = []
        last_finite = -1
        for epoch in range(1, int(self.epochs) + 1):
            try:
                y_hat, phi, z = self.forward_parts(params, Xt, Tt, G, graph, training=True, gen=gen)
            except NumericError:
                raise TrainingError(f"activations diverged at epoch {epoch}", last_finite_epoch=last_finite) from None
            mse = ((y_hat[tr_idx] - yt[tr_idx]) ** 2).mean()
            loss = mse
            pen = torch.zeros((), dtype=DTYPE)
            if kappa > 0:
                rep = phi if self.balance_target == "phi" else z
                batch = tr_idx
                if len(batch) > self.hsic_batch:
                    batch = torch.as_tensor(np.sort(rng.choice(tr_idx.numpy(), self.hsic_batch, replace=False)))
                pen = hsic(rep[batch], Tt[batch], self.sigma)
                loss = loss + kappa * pen
            if not torch.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}", last_finite_epoch=last_finite)
            last_finite = epoch
            opt.step(loss)

            if epoch % check == 0 or epoch == self.epochs:
                with torch.no_grad():
                    ev, _, _ = self.forward_parts(params, Xt, Tt, G, graph)
                    idx = va_idx if len(va_idx) else tr_idx
                    val = float(((ev[idx] - yt[idx]) ** 2).mean())
                history.append({"epoch": epoch, "train_mse": mse.item(), "hsic": pen.item(), "val_mse": val})
                logger.debug("epoch %d train %.5f val %.5f hsic %.5f", epoch, mse.item(), val, pen.item())
                if val < best_val:
                    best_val, best_epoch = val, epoch
                    best_params = {k: v.detach().clone() for k, v in params.items()}

        self.params_ = best_params
        self.best_epoch_ = best_epoch
        self.history_ = history
        self.n_features_in_ = X.shape[1]
        return self

    # -- inference -------------------------------------------------------------

    def _frozen(self):
        check_is_fitted(self, "params_")
        return self.params_

    def predict(self, X, *, treatment, graph, exposure=None):
        params = self._frozen()
        X, T, G = self._check_inputs(X, treatment, graph, exposure)
        with torch.no_grad():
            y_hat, _, _ = self.forward_parts(params, as_tensor(X), as_tensor(T), G, graph)
        return y_hat.numpy() * self.y_sd_ + self.y_mean_

    def predict_ite(self, X):
        """Individual effects with zero graph and exposure inputs (original units)."""
        params = self._frozen()
        X = check_array(X, dtype=np.float64)
        with torch.no_grad():
            tau = self.ite_std(params, as_tensor(X))
        return tau.numpy() * self.y_sd_

    def effect_terms(self, X, graph, T):
        """Differentiable ``(tau_hat, delta_hat)`` under a (relaxed) assignment ``T``.

        ``delta_hat_i = h1([phi_i, z_i(T), G_i(T)]) - h1([phi_i, 0, 0])``; both
        terms are scaled to original outcome units.
        """
        params = self._frozen()
        Xt = X if isinstance(X, torch.Tensor) else as_tensor(check_array(X, dtype=np.float64))
        if graph.n != Xt.shape[0]:
            raise InvalidInputError("estimator/graph mismatch: graph size differs from X rows")
        phi = self._phi(params, Xt)
        base = self._counterfactual_input(params, phi, 1)
        tau = self._head(params, "h1", base) - self._head(params, "h0", self._counterfactual_input(params, phi, 0))
        G = torch.sparse.mm(graph_operator(graph, "mean_nbr"), T[:, None])[:, 0]
        z = self._gnn(params, T[:, None] * phi, graph)
        inter = torch.cat([phi, z, self._expo(G)], dim=1)
        delta = self._head(params, "h1", inter) - self._head(params, "h1", base)
        return tau * self.y_sd_, delta * self.y_sd_

    def score_dataset(self, ds, mask=None):
        """Metrics in standardised units on ``mask`` (default: test split)."""
        mask = ds.test_mask if mask is None else mask
        y_hat = self.predict(ds.X, treatment=ds.T, graph=ds.graph, exposure=ds.G)
        tau_hat = self.predict_ite(ds.X)
        s = self.y_sd_
        return compute_metrics((y_hat - self.y_mean_) / s, (ds.Y - self.y_mean_) / s,
                               tau_hat / s, None if ds.tau is None else ds.tau / s, mask)

    # -- persistence -----------------------------------------------------------

    def to_dict(self):
        params = self._frozen()
        hyper = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.get_params().items()}
        meta = {"estimator": "GNNCausalEstimator", "hyper": hyper, "y_mean": self.y_mean_,
                "y_sd": self.y_sd_, "n_features": self.n_features_in_, "best_epoch": self.best_epoch_}
        return params_to_dict(params, meta)

    @classmethod
    def from_dict(cls, doc):
        params, meta = params_from_dict(doc, requires_grad=False)
        hyper = {k: (tuple(v) if isinstance(v, list) else v) for k, v in meta["hyper"].items()}
        est = cls(**hyper)
        est.params_ = params
        est.y_mean_ = meta["y_mean"]
        est.y_sd_ = meta["y_sd"]
        est.n_features_in_ = meta["n_features"]
        est.best_epoch_ = meta.get("best_epoch", 0)
        est.history_ = []
        return est

    def with_params(self, params, y_mean=0.0, y_sd=1.0):
        """Copy of this estimator frozen at explicit parameters (for tests and oracles)."""
        est = copy.copy(self)
        est.params_ = params
        est.y_mean_ = y_mean
        est.y_sd_ = y_sd
        est.n_features_in_ = params["phi.0.W"].shape[0]
        est.best_epoch_ = 0
        est.history_ = []
        return est


# -- functional interface --------------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    epochs: int = 20000
    check_every: int = 2000
    dropout: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 1 or self.check_every < 1:
            raise InvalidInputError("lr, epochs and check_every must be positive")


def forward(model, g, X, T, G=None):
    """Outcome predictions for all nodes under the observed assignment (original units)."""
    return model.predict(X, treatment=T, graph=g, exposure=G)


def train_estimator(model, data, g=None, cfg=None):
    """Fit ``model`` on the train split of ``data``; returns ``(model, history)``."""
    if cfg is not None:
        model.set_params(lr=cfg.lr, weight_decay=cfg.weight_decay, epochs=cfg.epochs,
                         check_every=cfg.check_every, dropout=cfg.dropout, random_state=cfg.seed)
    g = data.graph if g is None else g
    y = np.where(data.train_mask | data.val_mask, data.Y, np.nan)
    model.fit(data.X, y, treatment=data.T, graph=g, exposure=data.G,
              train_mask=data.train_mask, val_mask=data.val_mask)
    return model, model.history_


def extract_ite(model, X):
    return model.predict_ite(X)


def metrics(y_hat, y, tau_hat, tau, test_mask):
    m = compute_metrics(y_hat, y, tau_hat, tau, test_mask)
    return m["rmse"], m["pehe"]
