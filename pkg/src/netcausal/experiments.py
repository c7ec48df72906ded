"""Experiment drivers shared by the CLI and the acceptance tests.

Each driver is deterministic given the configuration and root seed: replicate
``r`` uses seed ``root + r`` and parallel fan-out never shares random state.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np
import torch
from joblib import Parallel, delayed

from .baselines import MetaLearner, Propensity
from .config import GNN_NAMES, ExperimentConfig
from .estimators import GNNCausalEstimator
from .exceptions import ConfigError, ParseError
from .policy import PolicyConfig, evaluate_improvement, train_policy
from .regret import (
    BoundInputs,
    build_hypergraph,
    claim1_curve,
    concentration_check,
    family_graph,
    lipschitz_check,
    lipschitz_tight_case,
    regret_bound,
)
from .synth import GenConfig, generate, load_dataset, save_dataset

logger = logging.getLogger(__name__)


def dump_json(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    return text


def write_csv(path, rows):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    header = list(rows[0]) if rows else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


# -- generation ----------------------------------------------------------------------------

def gen_config(cfg: ExperimentConfig):
    g, s = cfg.graph, cfg.generate
    return GenConfig(schema=s.schema, n=s.n, k=g.k, metric=g.metric, edge_file=g.edge_file or None,
                     attach_m=g.attach_m, p=s.p, alpha=s.alpha, order=s.order or None,
                     response=s.response, kappa_nl=s.kappa_nl, noise_sd=s.noise_sd, mode=s.mode,
                     seed=cfg.seed)


def run_generate(cfg, out_dir):
    ds = generate(gen_config(cfg))
    return save_dataset(ds, out_dir, manifest_extra={"seed": cfg.seed, "config_hash": cfg.hash},
                        config_text=cfg.to_toml())


# -- estimators ----------------------------------------------------------------------------

def make_estimator(kind, cfg, seed, ds=None):
    e, b = cfg.estimator, cfg.baselines
    if kind in GNN_NAMES:
        return GNNCausalEstimator(
            gnn_kind=kind, phi_dims=tuple(e.phi_dims), gnn_dims=tuple(e.gnn_dims),
            head_dims=tuple(e.head_dims), kappa=e.kappa, balance_target=e.balance_target,
            sigma=e.sigma or "auto", lr=e.lr, weight_decay=e.weight_decay, epochs=e.epochs,
            check_every=e.check_every, dropout=e.dropout, hsic_batch=e.hsic_batch,
            use_exposure=e.use_exposure, ite_mode=e.ite_mode, random_state=seed)
    method, reg = kind.split("-")
    reg_params = ({"alpha": b.ridge_alpha} if reg == "ridge" else
                  {"hidden": tuple(b.mlp_hidden), "epochs": b.mlp_epochs, "lr": b.mlp_lr, "random_state": seed})
    prop = b.propensity
    if prop == "auto":
        prop = "constant" if ds is None or ds.mode == "randomized" else "logistic"
    if prop == "constant":
        p = ds.p if ds is not None and ds.p is not None else cfg.generate.p
        prop = Propensity("constant", p=p)
    elif prop != "logistic":
        raise ConfigError(f"unknown propensity mode {prop!r}")
    return MetaLearner(method, reg, prop, p=cfg.generate.p, reg_params=reg_params)


def fit_on(model, ds):
    """Fit using only train/validation outcomes; other outcomes are hidden from the model."""
    visible = ds.train_mask | ds.val_mask
    y = np.where(visible, ds.Y, np.nan)
    if isinstance(model, GNNCausalEstimator):
        return model.fit(ds.X, y, treatment=ds.T, graph=ds.graph, exposure=ds.G,
                         train_mask=ds.train_mask, val_mask=ds.val_mask)
    return model.fit(ds.X, y, treatment=ds.T, exposure=ds.G, train_mask=ds.train_mask)


def model_to_doc(kind, model, cfg_hash):
    return {"kind": kind, "config_hash": cfg_hash, "model": model.to_dict()}


def model_from_doc(doc):
    inner = doc["model"]
    if inner.get("estimator") == "MetaLearner":
        return MetaLearner.from_dict(inner)
    return GNNCausalEstimator.from_dict(inner)


def load_model(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", line=exc.lineno, column=exc.colno) from None
    return doc.get("kind"), model_from_doc(doc)


def metrics_record(model, ds, kind, seed, cfg_hash):
    m = model.score_dataset(ds)
    return {"estimator": kind, "seed": seed, "config_hash": cfg_hash, "rmse": m["rmse"], "pehe": m["pehe"]}


def _train_one(kind, cfg, ds, rep):
    torch.set_num_threads(1)
    seed = cfg.seed + rep
    model = fit_on(make_estimator(kind, cfg, seed, ds), ds)
    return metrics_record(model, ds, kind, seed, cfg.hash), model_to_doc(kind, model, cfg.hash)


def run_train(cfg, data_dir, out_dir, jobs=1):
    """Train every configured estimator kind for every replicate seed.

    Writes ``models/<kind>-s<seed>.json`` and ``metrics.json`` under ``out_dir``.
    """
    ds = load_dataset(data_dir)
    tasks = [(kind, rep) for kind in cfg.estimator.kinds for rep in range(cfg.estimator.seeds)]
    results = Parallel(n_jobs=jobs)(delayed(_train_one)(k, cfg, ds, r) for k, r in tasks)
    out = Path(out_dir)
    records = []
    for (kind, rep), (rec, doc) in zip(tasks, results):
        dump_json(doc, out / "models" / f"{kind}-s{cfg.seed + rep}.json")
        records.append(rec)
    dump_json({"config_hash": cfg.hash, "records": records}, out / "metrics.json")
    return records


def run_eval(cfg, data_dir, model_file, out_dir=None):
    ds = load_dataset(data_dir)
    kind, model = load_model(model_file)
    rec = metrics_record(model, ds, kind, cfg.seed, cfg.hash)
    if out_dir is not None:
        dump_json(rec, Path(out_dir) / "eval.json")
    return rec


# -- policy --------------------------------------------------------------------------------

def policy_config(cfg, seed):
    p = cfg.policy
    return PolicyConfig(hidden=tuple(p.hidden), kind=p.kind, lr=p.lr, epochs=p.epochs, tau_g=p.tau_g,
                        gamma_grid=tuple(p.gamma_grid), tol=p.tol, n_check=p.n_check, seed=seed)


def _policy_one(cfg, ds, model, seed):
    torch.set_num_threads(1)
    policy, trials = train_policy(model, ds.graph, ds.X, cfg.policy.p_t, policy_config(cfg, seed))
    rep = evaluate_improvement(policy, model, ds, n_random=cfg.policy.n_random,
                               rng=np.random.default_rng([seed, 2]), n_draws=cfg.policy.n_draws)
    rec = rep.to_dict()
    rec.update(seed=seed, gamma=policy.gamma, trials=[vars(t) for t in trials])
    return rec


def summarize(values):
    arr = np.asarray([v for v in values if v is not None], dtype=float)
    if arr.size == 0:
        return None
    return {"mean": float(arr.mean()), "std": float(arr.std()),
            "se": float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0}


def run_policy(cfg, data_dir, model_file, out_dir=None, jobs=1):
    """Constrained policy training and improvement evaluation over replicate seeds."""
    ds = load_dataset(data_dir)
    kind, model = load_model(model_file)
    seeds = [cfg.seed + r for r in range(cfg.policy.seeds)]
    runs = Parallel(n_jobs=jobs)(delayed(_policy_one)(cfg, ds, model, s) for s in seeds)
    report = {"estimator": kind, "config_hash": cfg.hash, "p_t": cfg.policy.p_t, "runs": runs,
              "delta_S_hat": summarize(r["delta_S_hat"] for r in runs),
              "delta_S_true": summarize(r["delta_S_true"] for r in runs),
              "max_residual": max(r["residual"] for r in runs)}
    if out_dir is not None:
        dump_json(report, Path(out_dir) / "policy.json")
    return report


# -- regret --------------------------------------------------------------------------------

def run_regret(cfg, out_dir=None, jobs=1):
    r, g = cfg.regret, cfg.graph
    if not g.families:
        raise ConfigError("graph.families is empty")
    conc, hyper = [], []
    for fam in g.families:
        for n in g.sizes:
            graph = family_graph(fam, n, d=g.regular_d, seed=cfg.seed)
            hg = build_hypergraph(graph)
            hyper.append({"family": fam, "n": n, "d_max": graph.d_max, "omega": hg.omega,
                          "omega_cap": graph.d_max ** 2 + 1, "tight": hg.omega == graph.d_max ** 2 + 1})
            for row in concentration_check(graph, r.family, r.n_trials, r.eps_grid, seed=cfg.seed, n_jobs=jobs):
                conc.append({"family": fam, **row})

    bounds = []
    for n in r.n_grid:
        for d in r.d_max_grid:
            base = dict(n=n, d_max=d, M1=r.M1, M2=r.M2, L=r.L, pi_class_size=r.pi_class_size,
                        delta_conf=r.delta_conf)
            rb = regret_bound(BoundInputs(**base))
            eps = rb.eps_star()
            bounds.append({"n": n, "d_max": d, "p_t": "", "eps_star": eps,
                           "display_bound": rb.display_bound(), "radius": rb.radius(eps)})
            for p_t in r.p_t_grid:
                rc = regret_bound(BoundInputs(**base, p_t=p_t), constrained=True)
                eps = rc.eps_star()
                bounds.append({"n": n, "d_max": d, "p_t": p_t, "eps_star": eps,
                               "display_bound": rc.display_bound(), "radius": rc.radius(eps)})

    claim = claim1_curve(r.d_max_grid, r.n_grid)
    rng = np.random.default_rng(cfg.seed)
    lg = family_graph("regular", 100, d=g.regular_d, seed=cfg.seed)
    tau = rng.normal(size=lg.n)
    lip = lipschitz_check(lg, tau, r.alpha, r.lipschitz_pairs, rng)
    tight_ratio, tight_bound = lipschitz_tight_case(lg, r.M1, r.alpha)
    lip_rows = [{"case": "random", "max_ratio": lip.max_ratio, "bound": lip.bound, "ok": lip.ok},
                {"case": "tight", "max_ratio": tight_ratio, "bound": tight_bound,
                 "ok": abs(tight_ratio - tight_bound) <= 1e-9}]

    summary = {"config_hash": cfg.hash, "violations": sum(row["violation"] for row in conc),
               "rows": len(conc), "tight_families": sorted({h["family"] for h in hyper if h["tight"]}),
               "lipschitz_ok": all(x["ok"] for x in lip_rows)}
    if out_dir is not None:
        out = Path(out_dir)
        write_csv(out / "concentration.csv", conc)
        write_csv(out / "hypergraph.csv", hyper)
        write_csv(out / "regret_bound.csv", bounds)
        write_csv(out / "claim1.csv", claim)
        write_csv(out / "lipschitz.csv", lip_rows)
        dump_json(summary, out / "regret_summary.json")
    return {"summary": summary, "concentration": conc, "hypergraph": hyper, "bounds": bounds,
            "claim1": claim, "lipschitz": lip_rows}


# -- report --------------------------------------------------------------------------------

def _pm(values, decimals):
    s = summarize(values)
    if s is None:
        return "n/a"
    return f"{s['mean']:.{decimals}f} ± {s['std']:.{decimals}f}"


def render_report(run_dir, decimals=3):
    """Markdown tables: estimator metrics (sqrt MSE, PEHE) and policy gains."""
    run = Path(run_dir)
    lines = []
    metrics = sorted(run.rglob("metrics.json"))
    if metrics:
        records = [r for p in metrics for r in json.loads(p.read_text(encoding="utf-8"))["records"]]
        kinds = list(dict.fromkeys(r["estimator"] for r in records))
        lines += ["| estimator | √MSE | ε_PEHE |", "|---|---|---|"]
        for k in kinds:
            rs = [r for r in records if r["estimator"] == k]
            lines.append(f"| {k} | {_pm([r['rmse'] for r in rs], decimals)} | "
                         f"{_pm([r['pehe'] for r in rs], decimals)} |")
        lines.append("")
    policies = sorted(run.rglob("policy.json"))
    if policies:
        lines += ["| estimator | p_t | ΔŜ | ΔS | max residual |", "|---|---|---|---|---|"]
        for p in policies:
            rep = json.loads(p.read_text(encoding="utf-8"))
            lines.append(f"| {rep['estimator']} | {rep['p_t']} | "
                         f"{_pm([r['delta_S_hat'] for r in rep['runs']], decimals)} | "
                         f"{_pm([r['delta_S_true'] for r in rep['runs']], decimals)} | "
                         f"{rep['max_residual']:.{decimals}f} |")
        lines.append("")
    summaries = sorted(run.rglob("regret_summary.json"))
    for p in summaries:
        s = json.loads(p.read_text(encoding="utf-8"))
        lines += ["| concentration rows | violations | tight ω families | Lipschitz ok |", "|---|---|---|---|",
                  f"| {s['rows']} | {s['violations']} | {', '.join(s['tight_families']) or '-'} | "
                  f"{s['lipschitz_ok']} |", ""]
    if not lines:
        lines = ["No results found."]
    return "\n".join(lines)
