import numpy as np
import pytest
from hypothesis import given, strategies as st

from netcausal import Graph, InvalidInputError, ParseError
from netcausal.synth import (
    POKEC_FEATURES,
    WAVE1_FEATURES,
    WAVE1_TAU_NONLINEAR,
    GenConfig,
    TruthNets,
    assign_treatment,
    exposure,
    gen_covariates,
    gen_raw_covariates,
    gen_response,
    gen_spillover,
    gen_truth,
    generate,
    load_covariates_csv,
    load_dataset,
    make_splits,
    save_dataset,
)

from .conftest import graphs

Y0_COEF = {"H1GH52": -1, "H1ED3": 2, "H1ED5": -1, "H1ED7": -2, "H1ED11": -0.5, "H1ED12": -0.5,
           "H1ED13": -0.5, "H1ED14": -0.5, "H1DA5": 0.5, "H1DA7": 0.5, "H1DS12": -3}
TAU_COEF = {"H1ED3": 1, "H1GH52": 0.5, "H1ED5": 0.5, "H1ED7": 0.5, "H1ED11": 0.5, "H1ED12": 0.5,
            "H1ED13": 0.5, "H1ED14": 0.5, "H1DS12": 1}
Y0_NET_INPUTS = ["H1HS1", "H1HS3", "H1WP17B", "H1TO51", "H1TO53", "H1NB5", "H1EE3", "PA57D"]


def oracle_wave1(row, nets):
    """Row-at-a-time evaluation of the printed wave1 formulas."""
    x = dict(zip(WAVE1_FEATURES, row))

    def net(net_, inputs):
        total = 0.0
        for h in range(len(net_.a)):
            pre = net_.b[h] + sum(inputs[j] * net_.W[j, h] for j in range(len(inputs)))
            total += net_.a[h] * np.tanh(pre)
        return total

    y0 = sum(c * x[f] for f, c in Y0_COEF.items()) + net(nets.y0, [sum(x[f] for f in Y0_NET_INPUTS)])
    rest = [x[f] for f in WAVE1_FEATURES if f not in TAU_COEF]
    tau = sum(c * x[f] for f, c in TAU_COEF.items()) + net(nets.tau, rest)
    return y0, tau


def test_wave1_covariates_shape_and_standardization():
    X = gen_covariates("wave1", 5, np.random.default_rng(0))
    assert X.shape == (5, 19)
    assert np.allclose(X.mean(0), 0, atol=1e-12)


def test_pokec_age_range():
    raw = gen_raw_covariates("pokec", 2000, np.random.default_rng(0))
    age = raw[:, POKEC_FEATURES.index("age")]
    assert age.min() >= 15 and age.max() <= 60


def test_covariates_deterministic():
    a = gen_covariates("pokec", 50, np.random.default_rng(7))
    b = gen_covariates("pokec", 50, np.random.default_rng(7))
    assert np.array_equal(a, b)
    with pytest.raises(InvalidInputError):
        gen_covariates("amazon", 5, np.random.default_rng(0))
    with pytest.raises(InvalidInputError):
        gen_covariates("wave1", 1, np.random.default_rng(0))


def test_truth_zero_inputs():
    y0, tau = gen_truth(np.zeros((4, 19)), "wave1", None, nets=TruthNets.zero())
    assert np.all(y0 == 0) and np.all(tau == 0)


def test_truth_coefficient_signs():
    rng = np.random.default_rng(3)
    nets = TruthNets.draw(rng)
    X = rng.normal(size=(6, 19))
    X2 = X.copy()
    X2[:, WAVE1_FEATURES.index("H1DS12")] += 1
    y0a, ta = gen_truth(X, "wave1", None, nets=nets)
    y0b, tb = gen_truth(X2, "wave1", None, nets=nets)
    assert np.allclose(y0b - y0a, -3, atol=1e-12)
    assert np.allclose(tb - ta, 1, atol=1e-12)


def test_truth_matches_straight_line_oracle():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(6, 19))
    nets = TruthNets.draw(np.random.default_rng(5))
    y0, tau = gen_truth(X, "wave1", None, nets=nets)
    for i in range(6):
        oy, ot = oracle_wave1(X[i], nets)
        assert abs(y0[i] - oy) < 1e-10 and abs(tau[i] - ot) < 1e-10
    assert len(WAVE1_TAU_NONLINEAR) == 19 - len(TAU_COEF)


def test_pokec_truth_formula():
    X = np.zeros((200_000, len(POKEC_FEATURES)))
    y0, tau = gen_truth(X, "pokec", np.random.default_rng(0))
    # all covariates zero: y0 = 0.2 - 1.8 - 1.8 + eps, tau = 0.8 + 0.5 + 0.25 + eps
    assert abs(y0.mean() - (0.2 - 3.6 + 0.1)) < 0.01
    assert abs(tau.mean() - (1.55 + 0.1)) < 0.01
    assert abs(tau.var() - 0.25) < 0.01


def test_truth_schema_mismatch():
    with pytest.raises(InvalidInputError):
        gen_truth(np.zeros((3, 9)), "wave1", np.random.default_rng(0))


def test_spillover_hand_example():
    g = Graph.from_edges(3, [(0, 1), (0, 2)])
    delta = gen_spillover(g, [0, 1, 0], [0, 2, 5], 0.5, 1)
    assert delta[0] == 0.5
    assert np.all(gen_spillover(g, [0, 0, 0], [1, 2, 3], 0.5) == 0)
    assert np.all(gen_spillover(g, [1, 1, 1], [1, 2, 3], 0.0) == 0)


def ref_spillover(g, T, tau, alpha, order):
    A = g.adjacency().toarray()
    out = np.zeros(g.n)
    for i in range(g.n):
        nb = np.flatnonzero(A[i])
        if nb.size:
            out[i] += alpha * np.mean([T[j] * tau[j] for j in nb])
        if order == 2:
            two = {k for j in nb for k in np.flatnonzero(A[j])} - set(nb) - {i}
            if two:
                out[i] += alpha ** 2 * np.mean([T[k] * tau[k] for k in sorted(two)])
    return out


@given(graphs(max_n=20), st.integers(1, 2), st.floats(0, 2), st.integers(0, 10**6))
def test_spillover_matches_reference(g, order, alpha, seed):
    rng = np.random.default_rng(seed)
    T = rng.integers(0, 2, size=g.n).astype(float)
    tau = rng.normal(size=g.n)
    assert np.max(np.abs(gen_spillover(g, T, tau, alpha, order) - ref_spillover(g, T, tau, alpha, order))) < 1e-10


@given(graphs(min_n=2, max_n=15), st.integers(1, 2), st.integers(0, 10**6))
def test_spillover_locality(g, order, seed):
    rng = np.random.default_rng(seed)
    T = rng.integers(0, 2, size=g.n).astype(float)
    tau = rng.normal(size=g.n) + 3.0
    j = int(rng.integers(g.n))
    T2 = T.copy()
    T2[j] = 1 - T2[j]
    changed = np.flatnonzero(gen_spillover(g, T, tau, 0.7, order) != gen_spillover(g, T2, tau, 0.7, order))
    A = g.adjacency().toarray()
    reach = A[:, j] > 0
    if order == 2:
        reach |= (A @ A)[:, j] > 0
    assert all(reach[i] for i in changed)


@given(graphs(min_n=2, max_n=15), st.floats(0, 2), st.integers(0, 10**6))
def test_spillover_lipschitz(g, alpha, seed):
    rng = np.random.default_rng(seed)
    tau = rng.normal(size=g.n)
    T1, T2 = rng.random(g.n), rng.random(g.n)
    gap = np.max(np.abs(T1 - T2))
    diff = np.abs(gen_spillover(g, T1, tau, alpha) - gen_spillover(g, T2, tau, alpha))
    assert np.all(diff <= alpha * np.max(np.abs(tau)) * gap + 1e-12)


def test_response_examples():
    one = np.ones(1)
    assert gen_response(one, 2 * one, 0.5 * one, one, "G0", noise_sd=0.0)[0] == 3.5
    rng = np.random.default_rng(0)
    y0, tau, d, T = rng.normal(size=(4, 10))
    assert np.array_equal(gen_response(y0, tau, d, T, "G1", 0.0, 0.0), gen_response(y0, tau, d, T, "G0", 0.0, 0.0))
    assert gen_response([0.0], [2.0], [0.5], [1.0], "G2", 0.2, 0.0)[0] == pytest.approx(2.625, abs=1e-15)
    with pytest.raises(InvalidInputError):
        gen_response(one, one, one, one, "G3", 0.0, 0.0)


def test_response_reference_g1_g2():
    rng = np.random.default_rng(1)
    y0, tau, d = rng.normal(size=(3, 20))
    T = rng.integers(0, 2, size=20).astype(float)
    k = 0.2
    assert np.max(np.abs(gen_response(y0, tau, d, T, "G1", k, 0.0) - (y0 + T * tau + d + k * d * d))) < 1e-10
    ref2 = y0 + T * tau + d + k / 2 * d * d + k / 2 * tau * d
    assert np.max(np.abs(gen_response(y0, tau, d, T, "G2", k, 0.0) - ref2)) < 1e-10


def test_assignment_rate_and_exposure():
    rng = np.random.default_rng(0)
    T, prop = assign_treatment("randomized", np.zeros((10_000, 2)), 0.1, rng)
    assert abs(T.mean() - 0.1) < 0.01
    assert set(np.unique(T)) <= {0.0, 1.0}
    g = Graph.from_edges(4, [(0, 1), (0, 2)])
    G = exposure(g, [0, 1, 1, 1])
    assert G[0] == 1.0 and G[3] == 0.0
    with pytest.raises(InvalidInputError):
        assign_treatment("randomized", np.zeros((3, 1)), 1.0, rng)


def test_observational_rate_in_band():
    rng = np.random.default_rng(4)
    X = gen_covariates("wave1", 3000, rng)
    T, prop = assign_treatment("observational", X, 0.1, rng)
    assert 0.2 - 0.03 <= T.mean() <= 0.8 + 0.03
    assert prop.std() > 0


@given(graphs(), st.integers(0, 10**6))
def test_exposure_bounds(g, seed):
    T = np.random.default_rng(seed).integers(0, 2, size=g.n)
    G = exposure(g, T)
    assert np.all((G >= 0) & (G <= 1))


def test_splits_partition():
    split = make_splits(1000, np.random.default_rng(0))
    assert [int((split == c).sum()) for c in range(3)] == [800, 50, 150]


@pytest.mark.parametrize("schema", ["wave1", "pokec"])
def test_generate_g0_reconstruction(schema):
    ds = generate(GenConfig(schema=schema, n=200, noise_sd=0.0, seed=2))
    assert np.max(np.abs(ds.Y - ds.Y0 - ds.T * ds.tau - ds.delta)) < 1e-12
    assert ds.meta["order"] == (1 if schema == "wave1" else 2)


def test_genconfig_validation():
    with pytest.raises(InvalidInputError):
        GenConfig(n=1)
    with pytest.raises(InvalidInputError):
        GenConfig(p=0.0)
    with pytest.raises(InvalidInputError):
        GenConfig(response="G9")


def test_dataset_roundtrip(tmp_path):
    ds = generate(GenConfig(n=60, seed=1))
    save_dataset(ds, tmp_path / "a", manifest_extra={"seed": 1})
    back = load_dataset(tmp_path / "a")
    for name in ("X", "T", "G", "Y", "Y0", "tau", "delta"):
        assert np.array_equal(getattr(ds, name), getattr(back, name))
    assert np.array_equal(ds.split, back.split)
    assert np.array_equal(ds.graph.indices, back.graph.indices)
    save_dataset(back, tmp_path / "b", manifest_extra={"seed": 1})
    for f in ("covariates.csv", "assign.csv", "truth.csv", "edges.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_covariates_csv(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,10\n2,20\n3,60\n")
    X, names = load_covariates_csv(p)
    assert names == ["a", "b"]
    sd_b = np.std([10, 20, 60])
    assert np.allclose(X[:, 0], [-np.sqrt(1.5), 0, np.sqrt(1.5)])
    assert np.allclose(X[:, 1], (np.array([10, 20, 60]) - 30) / sd_b)
    p.write_text("a,b\n")
    with pytest.raises(ParseError):
        load_covariates_csv(p)
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ParseError):
        load_covariates_csv(p)
    p.write_text("a,b\n1,2\n3,x\n")
    with pytest.raises(ParseError) as err:
        load_covariates_csv(p)
    assert err.value.line == 3 and err.value.column == 2
