"""Numerical checks of the concentration and policy-regret bounds on networks.

* dependence hypergraphs (each node with its 1- and 2-hop neighbourhood) and
  their maximal degree ``omega``;
* Monte-Carlo tails of networked averages against ``exp(-n eps^2 / (2 omega (b-a)^2))``;
* closed-form regret bounds for finite policy classes, with and without a
  capacity constraint;
* the leading-term estimator error curve ``sqrt(D^3 ln D / n)``;
* an empirical Lipschitz check of first-order spillover in the policy.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp
from joblib import Parallel, delayed
from scipy.optimize import brentq

from .exceptions import InvalidInputError
from .graph import Graph
from .synth import gen_spillover

FAMILIES = ("uniform_mean", "bernoulli")
TRIAL_CHUNK = 2000


@dataclass(frozen=True)
class Hypergraph:
    """Hyperedge ``i`` is ``{i} | N(i) | N2(i)``, stored as a binary CSR incidence matrix."""

    incidence: sp.csr_matrix
    d_max: int

    @property
    def n(self):
        return self.incidence.shape[0]

    def edge(self, i):
        row = self.incidence.getrow(i)
        return set(row.indices.tolist())

    @property
    def edge_sizes(self):
        return np.diff(self.incidence.indptr)

    @property
    def memberships(self):
        return np.asarray(self.incidence.sum(axis=0)).ravel().astype(int)

    @property
    def omega(self):
        return int(self.memberships.max())


def build_hypergraph(g):
    a = g.adjacency()
    eye = sp.identity(g.n, format="csr")
    inc = (eye + a + a @ a).tocsr()
    inc.data[:] = 1.0
    inc.eliminate_zeros()
    inc.sort_indices()
    return Hypergraph(inc, g.d_max)


# -- concentration ----------------------------------------------------------------------

def concentration_bound(n, eps, omega, a=0.0, b=1.0):
    return math.exp(-n * eps ** 2 / (2 * omega * (b - a) ** 2))


def _chunk_exceedances(hg, family, size, seed, eps_grid):
    rng = np.random.default_rng(seed)
    U = rng.random((hg.n, size))
    sizes = hg.edge_sizes[:, None]
    xi = (hg.incidence @ U) / sizes
    if family == "bernoulli":
        xi = (xi > 0.5).astype(float)
    dev = np.abs(xi.mean(axis=0) - 0.5)
    return np.array([(dev >= e).sum() for e in eps_grid], dtype=np.int64)


def concentration_check(g, family="uniform_mean", n_trials=10_000, eps_grid=None, seed=0, n_jobs=1):
    """Empirical tail of the networked mean vs the concentration bound.

    ``xi_i`` is the mean of i.i.d. Uniform(0, 1) draws over hyperedge ``i``
    (``uniform_mean``) or the indicator that this mean exceeds 1/2
    (``bernoulli``); either way ``xi_i`` lies in [0, 1] with mean 1/2. Trials
    are split into fixed chunks seeded by ``SeedSequence(seed).spawn`` so that
    results do not depend on ``n_jobs``. A row is flagged when the empirical
    frequency exceeds the bound by more than three binomial standard errors.
    """
    if family not in FAMILIES:
        raise InvalidInputError(f"unknown family {family!r}; bounded families are {FAMILIES}")
    if n_trials < 1:
        raise InvalidInputError("n_trials must be positive")
    eps_grid = np.linspace(0.05, 0.5, 10) if eps_grid is None else np.asarray(eps_grid, dtype=float)
    hg = build_hypergraph(g)
    sizes = [TRIAL_CHUNK] * (n_trials // TRIAL_CHUNK)
    if n_trials % TRIAL_CHUNK:
        sizes.append(n_trials % TRIAL_CHUNK)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    counts = Parallel(n_jobs=n_jobs)(
        delayed(_chunk_exceedances)(hg, family, s, ss, eps_grid) for s, ss in zip(sizes, seeds))
    total = np.sum(counts, axis=0)
    rows = []
    for eps, c in zip(eps_grid, total):
        emp = c / n_trials
        bound = concentration_bound(g.n, eps, hg.omega)
        b_clip = min(bound, 1.0)
        se = math.sqrt(b_clip * (1 - b_clip) / n_trials)
        rows.append({"n": g.n, "omega": hg.omega, "d_max": g.d_max, "eps": float(eps),
                     "empirical": float(emp), "bound": bound, "se": se,
                     "violation": bool(emp - bound > 3 * se)})
    return rows


# -- regret bounds ----------------------------------------------------------------------

@dataclass(frozen=True)
class BoundInputs:
    n: int
    d_max: int
    M1: float
    M2: float
    L: float
    pi_class_size: float
    delta_conf: float = 0.05
    alpha_tau: float = 0.0
    alpha_delta: float = 0.0
    zeta_tau: float = 0.5
    zeta_delta: float = 0.5
    p_t: float | None = None

    def __post_init__(self):
        if self.n < 1 or self.d_max < 0:
            raise InvalidInputError("n must be positive and d_max non-negative")
        if min(self.M1, self.M2, self.L) <= 0:
            raise InvalidInputError("M1, M2 and L must be positive")
        if not (0 < self.zeta_tau < 1 and 0 < self.zeta_delta < 1):
            raise InvalidInputError("zeta exponents must lie in (0, 1)")
        if self.pi_class_size < 1:
            raise InvalidInputError("policy class size must be >= 1")
        if not 0 < self.delta_conf < 1:
            raise InvalidInputError("confidence level delta must lie in (0, 1)")
        if self.alpha_tau < 0 or self.alpha_delta < 0:
            raise InvalidInputError("alpha coefficients must be non-negative")
        if self.p_t is not None and not 0 < self.p_t < 1:
            raise InvalidInputError("p_t must lie in (0, 1)")


class RegretBound:
    """Regret bound ``2 (a_tau / n^z_tau + a_delta / n^z_delta) + 2 eps`` and its failure probability.

    ``covering`` is ``None`` (finite class: the covering number is ``|Pi|``) or a
    callable mapping a covering radius to a covering number.
    """

    def __init__(self, inputs, constrained=False, covering=None):
        if constrained and inputs.p_t is None:
            raise InvalidInputError("the constrained bound needs p_t")
        self.b = inputs
        self.constrained = constrained
        self.covering = covering

    @property
    def estimation_term(self):
        b = self.b
        return 2 * (b.alpha_tau / b.n ** b.zeta_tau + b.alpha_delta / b.n ** b.zeta_delta)

    def radius(self, eps):
        b = self.b
        if self.constrained:
            return eps / (8 * ((b.M1 + b.M2 + b.L) + (b.M1 + b.M2) / b.p_t))
        return eps / (4 * (2 * b.M1 + 2 * b.M2 + b.L))

    def covering_number(self, eps):
        if self.covering is None:
            return float(self.b.pi_class_size)
        return float(self.covering(self.radius(eps)))

    def regret(self, eps):
        return self.estimation_term + 2 * eps

    def _exponent(self, eps):
        b = self.b
        return b.n * eps ** 2 / (32 * (b.d_max ** 2 + 1) * (b.M1 + b.M2) ** 2)

    def failure_probability(self, eps):
        return self.covering_number(eps) * math.exp(-self._exponent(eps))

    def eps_star(self, delta=None):
        """Smallest ``eps`` whose failure probability equals ``delta``."""
        b = self.b
        delta = b.delta_conf if delta is None else delta
        if self.covering is None:
            return (b.M1 + b.M2) * math.sqrt(32 * (b.d_max ** 2 + 1) / b.n * math.log(b.pi_class_size / delta))
        f = lambda e: math.log(self.covering_number(e)) - self._exponent(e) - math.log(delta)
        hi = 1.0
        while f(hi) > 0:
            hi *= 2
        return brentq(f, 1e-12, hi)

    def display_bound(self, delta=None):
        """Finite-class total: estimation term + ``8 (M1+M2) sqrt(2 (d^2+1)/n log(|Pi|/delta))``."""
        b = self.b
        delta = b.delta_conf if delta is None else delta
        return self.estimation_term + 8 * (b.M1 + b.M2) * math.sqrt(
            2 * (b.d_max ** 2 + 1) / b.n * math.log(b.pi_class_size / delta))

    def report(self):
        eps = self.eps_star()
        return {"inputs": asdict(self.b), "constrained": self.constrained, "eps_star": eps,
                "radius": self.radius(eps), "regret_at_eps_star": self.regret(eps),
                "failure_probability": self.failure_probability(eps),
                "display_bound": self.display_bound()}


def regret_bound(inputs, constrained=False, covering=None):
    return RegretBound(inputs, constrained, covering)


def claim1_value(d_max, n):
    D = 1 + d_max + d_max ** 2
    return math.sqrt(D ** 3 * math.log(D) / n)


def claim1_curve(d_max_grid, n_grid):
    if any(d <= 0 for d in d_max_grid) or any(n <= 0 for n in n_grid):
        raise InvalidInputError("grids must be positive")
    return [{"d_max": int(d), "n": int(n), "D": 1 + d + d * d, "value": claim1_value(d, n)}
            for d in d_max_grid for n in n_grid]


# -- Lipschitz --------------------------------------------------------------------------

@dataclass(frozen=True)
class LipschitzResult:
    max_ratio: float
    bound: float
    n_pairs: int
    skipped: int

    @property
    def ok(self):
        return self.max_ratio <= self.bound + 1e-9


def spillover_ratio(g, tau, alpha, pi1, pi2):
    """``max_i |delta_i(pi1) - delta_i(pi2)| / ||pi1 - pi2||_inf``; ``None`` for equal policies."""
    gap = float(np.max(np.abs(np.asarray(pi1) - np.asarray(pi2))))
    if gap == 0:
        return None
    d1 = gen_spillover(g, pi1, tau, alpha, 1)
    d2 = gen_spillover(g, pi2, tau, alpha, 1)
    return float(np.max(np.abs(d1 - d2)) / gap)


def lipschitz_check(g, tau, alpha, n_policy_pairs=500, rng=None):
    """Largest spillover ratio over random policy pairs in [0, 1]^n vs ``alpha * max|tau|``."""
    rng = rng if rng is not None else np.random.default_rng(0)
    tau = np.asarray(tau, dtype=float)
    best, skipped = 0.0, 0
    for _ in range(n_policy_pairs):
        r = spillover_ratio(g, tau, alpha, rng.random(g.n), rng.random(g.n))
        if r is None:
            skipped += 1
            continue
        best = max(best, r)
    return LipschitzResult(best, alpha * float(np.max(np.abs(tau))), n_policy_pairs, skipped)


def lipschitz_tight_case(g, M1, alpha, shift=0.5, base=0.25):
    """``tau = M1`` everywhere and policies differing by ``shift`` on every node; ratio is ``alpha M1``."""
    if g.d_max == 0:
        raise InvalidInputError("the tight case needs at least one edge")
    tau = np.full(g.n, float(M1))
    pi1 = np.full(g.n, base)
    pi2 = pi1 + shift
    return spillover_ratio(g, tau, alpha, pi1, pi2), alpha * M1


# -- graph families ---------------------------------------------------------------------

def family_graph(name, n, d=3, seed=0):
    """Test graphs: edgeless, path, ring, star, or random ``d``-regular."""
    import networkx as nx

    if name == "edgeless":
        return Graph.empty(n)
    if name == "path":
        return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])
    if name == "ring":
        return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])
    if name == "star":
        return Graph.from_edges(n, [(0, i) for i in range(1, n)])
    if name == "regular":
        if d > 6:
            raise InvalidInputError("regular family limited to d <= 6")
        return Graph.from_edges(n, nx.random_regular_graph(d, n, seed=seed).edges())
    raise InvalidInputError(f"unknown graph family {name!r}")
