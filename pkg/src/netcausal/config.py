"""Experiment configuration: TOML in, validated dataclasses out.

Every section rejects unknown keys. ``config_hash`` fingerprints the resolved
configuration (defaults included) and is stamped on every output artifact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import tomli
import tomli_w

from .exceptions import ConfigError, ParseError

GNN_NAMES = ("gcn", "sage", "onegnn")
BASELINE_NAMES = ("da-ridge", "dr-ridge", "da-mlp", "dr-mlp")
ESTIMATOR_NAMES = GNN_NAMES + BASELINE_NAMES


@dataclass
class GraphSection:
    k: int = 10
    metric: str = "cosine"
    edge_file: str = ""
    attach_m: int = 5
    families: list = field(default_factory=lambda: ["edgeless", "path", "ring", "star", "regular"])
    sizes: list = field(default_factory=lambda: [100, 400])
    regular_d: int = 4


@dataclass
class GenerateSection:
    schema: str = "wave1"
    n: int = 1000
    p: float = 0.1
    alpha: float = 0.5
    order: int = 0  # 0 picks the schema default
    response: str = "G0"
    kappa_nl: float = 0.0
    noise_sd: float = 0.1
    mode: str = "randomized"


@dataclass
class EstimatorSection:
    kinds: list = field(default_factory=lambda: ["sage"])
    phi_dims: list = field(default_factory=lambda: [64, 64])
    gnn_dims: list = field(default_factory=lambda: [128, 32])
    head_dims: list = field(default_factory=lambda: [64, 32])
    kappa: float = 0.0
    balance_target: str = "phi"
    sigma: float = 0.0  # 0 selects the median heuristic
    lr: float = 1e-3
    weight_decay: float = 1e-4
    epochs: int = 20000
    check_every: int = 2000
    dropout: float = 0.5
    hsic_batch: int = 256
    use_exposure: bool = True
    ite_mode: str = "zero"
    seeds: int = 3


@dataclass
class BaselinesSection:
    ridge_alpha: float = 1.0
    mlp_hidden: list = field(default_factory=lambda: [32])
    mlp_epochs: int = 300
    mlp_lr: float = 1e-2
    propensity: str = "auto"  # auto | constant | logistic


@dataclass
class PolicySection:
    p_t: float = 0.3
    hidden: list = field(default_factory=lambda: [64, 32])
    kind: str = "mlp"
    lr: float = 1e-3
    epochs: int = 2000
    tau_g: float = 0.5
    gamma_grid: list = field(default_factory=lambda: [5.0, 50.0, 100.0, 200.0, 500.0])
    tol: float = 0.01
    n_check: int = 1000
    seeds: int = 5
    n_random: int = 20
    n_draws: int = 20


@dataclass
class RegretSection:
    family: str = "uniform_mean"
    n_trials: int = 10000
    eps_grid: list = field(default_factory=lambda: [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5])
    M1: float = 1.0
    M2: float = 1.0
    L: float = 0.5
    pi_class_size: float = 1000.0
    delta_conf: float = 0.05
    d_max_grid: list = field(default_factory=lambda: [1, 2, 4, 10, 20])
    n_grid: list = field(default_factory=lambda: [100, 1000, 10000])
    p_t_grid: list = field(default_factory=lambda: [0.1, 0.3, 0.5])
    alpha: float = 0.5
    lipschitz_pairs: int = 500


@dataclass
class OutputSection:
    dir: str = "runs"
    decimals: int = 3


SECTIONS = {
    "graph": GraphSection,
    "generate": GenerateSection,
    "estimator": EstimatorSection,
    "baselines": BaselinesSection,
    "policy": PolicySection,
    "regret": RegretSection,
    "output": OutputSection,
}


@dataclass
class ExperimentConfig:
    seed: int = 0
    graph: GraphSection = field(default_factory=GraphSection)
    generate: GenerateSection = field(default_factory=GenerateSection)
    estimator: EstimatorSection = field(default_factory=EstimatorSection)
    baselines: BaselinesSection = field(default_factory=BaselinesSection)
    policy: PolicySection = field(default_factory=PolicySection)
    regret: RegretSection = field(default_factory=RegretSection)
    output: OutputSection = field(default_factory=OutputSection)

    def validate(self):
        unknown = [k for k in self.estimator.kinds if k not in ESTIMATOR_NAMES]
        if unknown:
            raise ConfigError(f"unknown estimator kind(s) {unknown}; valid kinds are {list(ESTIMATOR_NAMES)}")
        if not self.estimator.kinds:
            raise ConfigError("estimator.kinds is empty")
        if not self.graph.families:
            raise ConfigError("graph.families is empty")
        if self.generate.n < 2:
            raise ConfigError(f"generate.n must be >= 2, got {self.generate.n}")
        if self.estimator.seeds < 1 or self.policy.seeds < 1:
            raise ConfigError("seed counts must be positive")
        return self

    def to_dict(self):
        return asdict(self)

    def to_toml(self):
        return tomli_w.dumps(self.to_dict())

    @property
    def hash(self):
        return config_hash(self)


def config_hash(cfg):
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"[{where}] must be a table")
    names = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in [{where}]; allowed: {sorted(names)}")
    kwargs = {}
    for key, value in data.items():
        default = getattr(cls(), key)
        if isinstance(default, bool) and not isinstance(value, bool):
            raise ConfigError(f"[{where}] {key} must be a boolean")
        if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if default is not None and not isinstance(default, bool) and not isinstance(value, type(default)):
            raise ConfigError(f"[{where}] {key} must be of type {type(default).__name__}, got {type(value).__name__}")
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data):
    data = dict(data)
    seed = data.pop("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s) {unknown}; allowed: {sorted(SECTIONS)}")
    sections = {name: _build(cls, data.get(name, {}), name) for name, cls in SECTIONS.items()}
    return ExperimentConfig(seed=seed, **sections).validate()


def parse_config(text):
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ParseError(f"invalid TOML: {exc}") from None
    return config_from_dict(data)


def load_config(path=None):
    if path is None:
        return ExperimentConfig().validate()
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
