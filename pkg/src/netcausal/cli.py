"""``netcausal`` command line: generate, train, eval, policy, regret, report.

Verbosity comes from ``NETCAUSAL_LOG`` (a logging level name, default WARNING).
"""

from __future__ import annotations

import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import click

from . import experiments as ex
from .config import load_config
from .exceptions import NetCausalError

config_opt = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                          default=None, help="TOML experiment configuration.")
seed_opt = click.option("--seed", type=int, default=None, help="Root seed (overrides the config).")
jobs_opt = click.option("--jobs", type=int, default=1, show_default=True, help="Parallel workers.")


def out_opt(required=True, **kw):
    return click.option("--out", "out", type=click.Path(file_okay=False), required=required, **kw)


def _config(config_path, seed):
    cfg = load_config(config_path)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def _setup_logging():
    level = os.environ.get("NETCAUSAL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


class _Group(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except (NetCausalError, ValueError, OSError) as exc:
            raise click.ClickException(f"{type(exc).__name__}: {exc}") from exc


@click.group(cls=_Group)
@click.version_option(package_name="artifact")
def main():
    """Causal effect estimation and policy learning under network interference."""
    _setup_logging()


@main.command()
@config_opt
@out_opt()
@seed_opt
def generate(config_path, out, seed):
    """Write a synthetic dataset directory."""
    cfg = _config(config_path, seed)
    path = ex.run_generate(cfg, out)
    click.echo(str(path))


@main.command()
@click.argument("data_dir", type=click.Path(exists=True, file_okay=False))
@config_opt
@out_opt()
@seed_opt
@jobs_opt
def train(data_dir, config_path, out, seed, jobs):
    """Train the configured estimators; writes models/ and metrics.json."""
    cfg = _config(config_path, seed)
    for rec in ex.run_train(cfg, data_dir, out, jobs=jobs):
        pehe = "n/a" if rec["pehe"] is None else f"{rec['pehe']:.4f}"
        click.echo(f"{rec['estimator']}\tseed={rec['seed']}\trmse={rec['rmse']:.4f}\tpehe={pehe}")


@main.command("eval")
@click.argument("data_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("model_file", type=click.Path(exists=True, dir_okay=False))
@config_opt
@out_opt(required=False, default=None)
@seed_opt
def eval_cmd(data_dir, model_file, config_path, out, seed):
    """Score a saved model on the test split."""
    cfg = _config(config_path, seed)
    click.echo(ex.dump_json(ex.run_eval(cfg, data_dir, model_file, out)), nl=False)


@main.command()
@click.argument("data_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("model_file", type=click.Path(exists=True, dir_okay=False))
@config_opt
@out_opt()
@seed_opt
@jobs_opt
def policy(data_dir, model_file, config_path, out, seed, jobs):
    """Learn capacity-constrained policies through a saved estimator."""
    cfg = _config(config_path, seed)
    rep = ex.run_policy(cfg, data_dir, model_file, out, jobs=jobs)
    click.echo("| estimator | p_t | ΔŜ | ΔS | max residual |")
    click.echo("|---|---|---|---|---|")
    hat, true = rep["delta_S_hat"], rep["delta_S_true"]
    true_s = "n/a" if true is None else f"{true['mean']:.3f} ± {true['std']:.3f}"
    click.echo(f"| {rep['estimator']} | {rep['p_t']} | {hat['mean']:.3f} ± {hat['std']:.3f} | {true_s} | "
               f"{rep['max_residual']:.3f} |")


@main.command()
@config_opt
@out_opt()
@seed_opt
@jobs_opt
def regret(config_path, out, seed, jobs):
    """Concentration, regret-bound, and Lipschitz tables as CSV."""
    cfg = _config(config_path, seed)
    s = ex.run_regret(cfg, out, jobs=jobs)["summary"]
    click.echo(f"rows={s['rows']} violations={s['violations']} tight={','.join(s['tight_families'])} "
               f"lipschitz_ok={s['lipschitz_ok']}")


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out", type=click.Path(dir_okay=False), default=None, help="Markdown file (default stdout).")
@config_opt
def report(run_dir, out, config_path):
    """Render Markdown tables from a run directory."""
    cfg = load_config(config_path)
    text = ex.render_report(run_dir, cfg.output.decimals)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        click.echo(text)


if __name__ == "__main__":
    main()
