"""Semi-synthetic data under network interference.

Two covariate schemas are supported. ``wave1`` mimics 19 questionnaire answers
on a kNN friendship graph with first-order spillover; ``pokec`` mimics 9 user
profile fields on a preferential-attachment social graph with second-order
spillover. Ground truth (baseline outcome, ITE, spillover) is kept alongside
the observed data so that estimators and policies can be scored.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

import networkx as nx
import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .exceptions import InvalidInputError, ParseError
from .graph import Graph, build_knn_graph, load_edge_list, mean_adjacency, save_edge_list, two_hop_matrix

logger = logging.getLogger(__name__)

SCHEMAS = ("wave1", "pokec")
RESPONSES = ("G0", "G1", "G2")
MODES = ("randomized", "observational")
SPLIT_FRACTIONS = (0.80, 0.05, 0.15)
SPLIT_NAMES = ("train", "val", "test")

WAVE1_BINARY = [
    "H1GH52", "H1ED3", "H1ED5", "H1ED7", "H1HS1", "H1HS3", "H1WP17B", "H1TO51",
    "H1TO53", "H1NB5", "H1EE3", "PA57D",
]
# graded answers: name -> admissible integer values
WAVE1_GRADED = {
    "H1DA5": range(0, 4),
    "H1DA7": range(0, 4),
    "H1ED11": range(1, 5),
    "H1ED12": range(1, 5),
    "H1ED13": range(1, 5),
    "H1ED14": range(1, 5),
    "H1DS12": range(0, 4),
}
WAVE1_FEATURES = WAVE1_BINARY + list(WAVE1_GRADED)
WAVE1_Y0_NONLINEAR = ["H1HS1", "H1HS3", "H1WP17B", "H1TO51", "H1TO53", "H1NB5", "H1EE3", "PA57D"]
WAVE1_TAU_LINEAR = ["H1ED3", "H1GH52", "H1ED5", "H1ED7", "H1ED11", "H1ED12", "H1ED13", "H1ED14", "H1DS12"]
WAVE1_TAU_NONLINEAR = [f for f in WAVE1_FEATURES if f not in WAVE1_TAU_LINEAR]

POKEC_RANGES = {
    "gender": (0, 1),
    "age": (15, 60),
    "height": (140, 200),
    "weight": (30, 200),
    "education": (0, 3),
    "eyesight": (0, 1),
    "smoke": (0, 3),
    "alcohol": (0, 3),
    "sex": (0, 2),
}
POKEC_FEATURES = list(POKEC_RANGES)
POKEC_NOISE_MEAN = 0.1
POKEC_NOISE_VAR = 0.25

NET_WIDTH = 8
NET_COEF_VAR = 0.25


def feature_names(schema):
    if schema == "wave1":
        return list(WAVE1_FEATURES)
    if schema == "pokec":
        return list(POKEC_FEATURES)
    raise InvalidInputError(f"unknown schema {schema!r}; expected one of {SCHEMAS}")


def standardize(X):
    """Column-wise z-score (population sd); constant columns are only centred."""
    X = np.asarray(X, dtype=float)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (X - mu) / sd


def gen_raw_covariates(schema, n, rng):
    """Covariates on their natural integer scales, before standardisation."""
    n = int(n)
    if n < 2:
        raise InvalidInputError(f"need n >= 2 nodes, got {n}")
    if schema == "wave1":
        cols = [rng.integers(0, 2, size=n) for _ in WAVE1_BINARY]
        cols += [rng.integers(r.start, r.stop, size=n) for r in WAVE1_GRADED.values()]
    elif schema == "pokec":
        cols = [rng.integers(lo, hi + 1, size=n) for lo, hi in POKEC_RANGES.values()]
    else:
        raise InvalidInputError(f"unknown schema {schema!r}; expected one of {SCHEMAS}")
    return np.column_stack(cols).astype(float)


def gen_covariates(schema, n, rng):
    return standardize(gen_raw_covariates(schema, n, rng))


@dataclass(frozen=True)
class RandomTanhNet:
    """One hidden tanh layer with random Gaussian coefficients and no output bias."""

    W: np.ndarray
    b: np.ndarray
    a: np.ndarray

    @classmethod
    def draw(cls, rng, n_in, width=NET_WIDTH):
        sd = np.sqrt(NET_COEF_VAR)
        return cls(rng.normal(0.0, sd, size=(n_in, width)),
                   rng.normal(0.0, sd, size=width),
                   rng.normal(0.0, sd, size=width))

    @classmethod
    def zero(cls, n_in, width=NET_WIDTH):
        return cls(np.zeros((n_in, width)), np.zeros(width), np.zeros(width))

    def __call__(self, U):
        U = np.asarray(U, dtype=float).reshape(-1, self.W.shape[0])
        return np.tanh(U @ self.W + self.b) @ self.a


@dataclass(frozen=True)
class TruthNets:
    y0: RandomTanhNet
    tau: RandomTanhNet

    @classmethod
    def draw(cls, rng):
        return cls(RandomTanhNet.draw(rng, 1), RandomTanhNet.draw(rng, len(WAVE1_TAU_NONLINEAR)))

    @classmethod
    def zero(cls):
        return cls(RandomTanhNet.zero(1), RandomTanhNet.zero(len(WAVE1_TAU_NONLINEAR)))


def _columns(X, names):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(names):
        raise InvalidInputError(f"expected {len(names)} covariate columns, got shape {X.shape}")
    return {name: X[:, j] for j, name in enumerate(names)}


def gen_truth(X, schema, rng, nets=None):
    """Baseline outcome ``Y0`` and individual effect ``tau`` from (standardised) covariates.

    For ``wave1`` the random tanh networks are drawn from ``rng`` unless ``nets``
    is given. For ``pokec`` both quantities carry separate N(0.1, 0.25) noise.
    """
    if schema == "wave1":
        c = _columns(X, WAVE1_FEATURES)
        nets = nets or TruthNets.draw(rng)
        grades = c["H1ED11"] + c["H1ED12"] + c["H1ED13"] + c["H1ED14"]
        u = sum(c[f] for f in WAVE1_Y0_NONLINEAR)
        y0 = (-c["H1GH52"] + 2 * c["H1ED3"] - c["H1ED5"] - 2 * c["H1ED7"] - 0.5 * grades
              + 0.5 * (c["H1DA5"] + c["H1DA7"]) - 3 * c["H1DS12"] + nets.y0(u))
        rest = np.column_stack([c[f] for f in WAVE1_TAU_NONLINEAR])
        tau = (c["H1ED3"] + 0.5 * (c["H1GH52"] + c["H1ED5"] + c["H1ED7"]) + 0.5 * grades
               + c["H1DS12"] + nets.tau(rest))
        return y0, tau
    if schema == "pokec":
        c = _columns(X, POKEC_FEATURES)
        n = len(c["age"])
        sd = np.sqrt(POKEC_NOISE_VAR)
        eps_y = rng.normal(POKEC_NOISE_MEAN, sd, size=n)
        eps_t = rng.normal(POKEC_NOISE_MEAN, sd, size=n)
        y0 = (0.2 * (1 - c["gender"]) + 0.5 * c["age"] - 0.2 * c["weight"] + 0.5 * c["education"]
              - 0.6 * (3 - c["smoke"]) + 0.2 * c["sex"] - 0.6 * (3 - c["alcohol"]) + eps_y)
        tau = (0.8 * (1 - c["gender"]) + c["age"] + 0.3 * c["weight"] + 0.5 * (1 - c["eyesight"])
               + 0.5 * (c["education"] + 0.5) + 0.6 * c["smoke"] + 0.5 * c["alcohol"] + eps_t)
        return y0, tau
    raise InvalidInputError(f"unknown schema {schema!r}; expected one of {SCHEMAS}")


def _row_normalize(m):
    counts = np.asarray(m.sum(axis=1)).ravel()
    scale = np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)
    return m.multiply(scale[:, None]).tocsr()


def gen_spillover(g, T, tau, alpha, order=1):
    """``alpha * mean_{N(i)} T_j tau_j``, plus ``alpha^2 * mean_{N2(i)} T_k tau_k`` for order 2."""
    T = np.asarray(T, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if T.shape != (g.n,) or tau.shape != (g.n,):
        raise InvalidInputError(f"T and tau must have length n={g.n}")
    if alpha < 0:
        raise InvalidInputError(f"alpha must be >= 0, got {alpha}")
    if order not in (1, 2):
        raise InvalidInputError(f"order must be 1 or 2, got {order}")
    effect = T * tau
    delta = alpha * (mean_adjacency(g, include_self=False) @ effect)
    if order == 2:
        delta = delta + alpha ** 2 * (_row_normalize(two_hop_matrix(g)) @ effect)
    return delta


def gen_response(Y0, tau, delta, T, model="G0", kappa_nl=0.0, noise_sd=0.1, rng=None):
    Y0, tau, delta, T = (np.asarray(a, dtype=float) for a in (Y0, tau, delta, T))
    if not (Y0.shape == tau.shape == delta.shape == T.shape):
        raise InvalidInputError("Y0, tau, delta and T must have equal length")
    y = Y0 + T * tau + delta
    if model == "G1":
        y = y + kappa_nl * delta ** 2
    elif model == "G2":
        y = y + 0.5 * kappa_nl * delta ** 2 + 0.5 * kappa_nl * tau * delta
    elif model != "G0":
        raise InvalidInputError(f"unknown response model {model!r}; expected one of {RESPONSES}")
    if noise_sd > 0:
        if rng is None:
            raise InvalidInputError("rng required when noise_sd > 0")
        y = y + rng.normal(0.0, noise_sd, size=y.shape)
    return y


def exposure(g, T):
    """Fraction of treated neighbours; 0 for isolated nodes."""
    return mean_adjacency(g, include_self=False) @ np.asarray(T, dtype=float)


def observational_propensity(X, p, rng):
    """Logistic propensity with random direction and intercept matching a rate in [0.2, 0.8]."""
    X = np.asarray(X, dtype=float)
    w = rng.normal(size=X.shape[1])
    w /= np.linalg.norm(w)
    logits = X @ w
    target = float(np.clip(p, 0.2, 0.8))
    b = brentq(lambda c: expit(logits + c).mean() - target, -50.0, 50.0)
    return expit(logits + b)


def assign_treatment(mode, X, p, rng):
    """Binary treatment vector; returns ``(T, propensity)``."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if not 0 < p < 1:
        raise InvalidInputError(f"treatment probability must lie in (0, 1), got {p}")
    if mode == "randomized":
        prop = np.full(n, float(p))
    elif mode == "observational":
        prop = observational_propensity(X, p, rng)
    else:
        raise InvalidInputError(f"unknown assignment mode {mode!r}; expected one of {MODES}")
    T = (rng.random(n) < prop).astype(float)
    return T, prop


def make_splits(n, rng):
    """Random 80/5/15 partition coded 0=train, 1=val, 2=test."""
    order = rng.permutation(n)
    n_train = max(1, int(round(SPLIT_FRACTIONS[0] * n)))
    n_val = int(round(SPLIT_FRACTIONS[1] * n))
    n_val = min(n_val, n - n_train)
    split = np.full(n, 2, dtype=np.int64)
    split[order[:n_train]] = 0
    split[order[n_train:n_train + n_val]] = 1
    return split


@dataclass
class Dataset:
    """Observed data plus optional simulation truth.

    ``split`` codes nodes as 0 (train), 1 (validation) or 2 (test). ``Y`` may
    hold NaN for nodes whose outcome is withheld.
    """

    X: np.ndarray
    T: np.ndarray
    G: np.ndarray
    Y: np.ndarray
    graph: Graph
    split: np.ndarray
    feature_names: list = field(default_factory=list)
    Y0: np.ndarray | None = None
    tau: np.ndarray | None = None
    delta: np.ndarray | None = None
    propensity: np.ndarray | None = None
    mode: str = "randomized"
    p: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def has_truth(self):
        return self.tau is not None

    def mask(self, name):
        return self.split == SPLIT_NAMES.index(name)

    @property
    def train_mask(self):
        return self.mask("train")

    @property
    def val_mask(self):
        return self.mask("val")

    @property
    def test_mask(self):
        return self.mask("test")


@dataclass
class GenConfig:
    schema: str = "wave1"
    n: int = 1000
    k: int = 10
    metric: str = "cosine"
    edge_file: str | None = None
    attach_m: int = 5
    p: float = 0.1
    alpha: float = 0.5
    order: int | None = None
    response: str = "G0"
    kappa_nl: float = 0.0
    noise_sd: float = 0.1
    mode: str = "randomized"
    seed: int = 0

    def __post_init__(self):
        if self.schema not in SCHEMAS:
            raise InvalidInputError(f"unknown schema {self.schema!r}; expected one of {SCHEMAS}")
        if self.n < 2:
            raise InvalidInputError(f"n must be >= 2, got {self.n}")
        if not 0 < self.p < 1:
            raise InvalidInputError(f"p must lie in (0, 1), got {self.p}")
        if self.alpha < 0 or self.kappa_nl < 0 or self.noise_sd < 0:
            raise InvalidInputError("alpha, kappa_nl and noise_sd must be non-negative")
        if self.response not in RESPONSES:
            raise InvalidInputError(f"unknown response {self.response!r}; expected one of {RESPONSES}")
        if self.mode not in MODES:
            raise InvalidInputError(f"unknown mode {self.mode!r}; expected one of {MODES}")

    @property
    def spill_order(self):
        if self.order is not None:
            return self.order
        return 1 if self.schema == "wave1" else 2

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _build_graph(cfg, X, rng):
    if cfg.edge_file:
        return load_edge_list(cfg.edge_file, cfg.n)
    if cfg.schema == "wave1":
        return build_knn_graph(X, cfg.k, metric=cfg.metric)
    m = min(cfg.attach_m, cfg.n - 1)
    nxg = nx.barabasi_albert_graph(cfg.n, m, seed=int(rng.integers(2**31 - 1)))
    return Graph.from_edges(cfg.n, nxg.edges())


def generate(cfg):
    """Draw a full dataset; every random quantity derives from ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    X = gen_covariates(cfg.schema, cfg.n, rng)
    g = _build_graph(cfg, X, rng)
    y0, tau = gen_truth(X, cfg.schema, rng)
    T, prop = assign_treatment(cfg.mode, X, cfg.p, rng)
    G = exposure(g, T)
    delta = gen_spillover(g, T, tau, cfg.alpha, cfg.spill_order)
    Y = gen_response(y0, tau, delta, T, cfg.response, cfg.kappa_nl, cfg.noise_sd, rng)
    split = make_splits(cfg.n, rng)
    return Dataset(X=X, T=T, G=G, Y=Y, graph=g, split=split, feature_names=feature_names(cfg.schema),
                   Y0=y0, tau=tau, delta=delta, propensity=prop, mode=cfg.mode, p=cfg.p,
                   meta={"generator": cfg.to_dict(), "alpha": cfg.alpha, "order": cfg.spill_order})


# -- CSV / directory IO ---------------------------------------------------------------

def _fmt(x):
    return "" if np.isnan(x) else repr(float(x))


def _write_csv(path, header, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow(row)


def _read_csv(path, allow_empty=()):
    """Header plus float columns; empty cells become NaN only in ``allow_empty`` columns."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    out = np.empty((len(body), len(header)))
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise ParseError(f"{path}: expected {len(header)} cells, got {len(row)}", line=i)
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell == "" and header[j] in allow_empty:
                out[i - 2, j] = np.nan
                continue
            try:
                out[i - 2, j] = float(cell)
            except ValueError:
                raise ParseError(f"{path}: non-numeric cell {cell!r}", line=i, column=j + 1) from None
    return header, out


def load_covariates_csv(path):
    """Read a header + numeric body and return ``(standardised X, column names)``."""
    header, X = _read_csv(path)
    if X.shape[0] < 2:
        raise ParseError(f"{path}: need at least two data rows, got {X.shape[0]}")
    if not np.all(np.isfinite(X)):
        raise ParseError(f"{path}: non-finite covariate value")
    return standardize(X), header


def save_dataset(ds, out_dir, manifest_extra=None, config_text=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = ds.feature_names or [f"x{j}" for j in range(ds.X.shape[1])]
    _write_csv(out / "covariates.csv", names, [[_fmt(v) for v in ds.X[:, j]] for j in range(ds.X.shape[1])])
    save_edge_list(ds.graph, out / "edges.txt")
    _write_csv(out / "assign.csv", ["T", "G", "Y", "split"],
               [[_fmt(v) for v in ds.T], [_fmt(v) for v in ds.G], [_fmt(v) for v in ds.Y],
                [str(int(s)) for s in ds.split]])
    files = ["covariates.csv", "edges.txt", "assign.csv"]
    if ds.has_truth:
        _write_csv(out / "truth.csv", ["Y0", "tau", "delta"],
                   [[_fmt(v) for v in ds.Y0], [_fmt(v) for v in ds.tau], [_fmt(v) for v in ds.delta]])
        files.append("truth.csv")
    if config_text is not None:
        (out / "config.toml").write_text(config_text, encoding="utf-8")
        files.append("config.toml")
    manifest = {"n": ds.n, "mode": ds.mode, "p": ds.p, "files": files, **ds.meta}
    manifest.update(manifest_extra or {})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def load_dataset(data_dir):
    """Inverse of :func:`save_dataset`. Missing outcomes (empty ``Y`` cells) load as NaN.

    Covariates are read back verbatim: they were standardised at generation time.
    """
    d = Path(data_dir)
    for name in ("covariates.csv", "edges.txt", "assign.csv", "manifest.json"):
        if not (d / name).exists():
            raise FileNotFoundError(f"{d / name} is missing")
    manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    names, X = _read_csv(d / "covariates.csv")
    n = X.shape[0]
    g = load_edge_list(d / "edges.txt", n)
    _, assign = _read_csv(d / "assign.csv", allow_empty=("Y",))
    truth = {}
    if (d / "truth.csv").exists():
        hdr, arr = _read_csv(d / "truth.csv")
        truth = {h: arr[:, j] for j, h in enumerate(hdr)}
    meta = {k: v for k, v in manifest.items() if k not in ("n", "mode", "p", "files")}
    return Dataset(X=X, T=assign[:, 0], G=assign[:, 1], Y=assign[:, 2], graph=g,
                   split=assign[:, 3].astype(np.int64), feature_names=names,
                   Y0=truth.get("Y0"), tau=truth.get("tau"), delta=truth.get("delta"),
                   mode=manifest.get("mode", "randomized"), p=manifest.get("p"), meta=meta)
