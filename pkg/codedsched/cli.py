import functools
import os
from dataclasses import asdict

import click
import pandas as pd

from . import config as settings
from .actions import export_action_table
from .config import load_run_config
from .env import make_rng
from .harness import (LEARNED, POLICY_NAMES, build_policy, evaluate_policy, iterations_to_fraction,
                      load_sweep_spec, run_convergence, run_sweep, train_algo)
from .oracle import rank_actions
from .plots import emit_plot


def _usage_errors(fn):
    """Surface bad input as a usage error (exit code 2) instead of a traceback."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValueError as e:
            raise click.UsageError(str(e)) from None
    return wrapper


@click.group(help="Coded edge scheduling simulator: train, evaluate, sweep, inspect.")
def cli():
    pass


@cli.command()
@click.option("--algo", type=click.Choice(LEARNED), required=True)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=settings.DEFAULT_SEED, show_default=True)
@click.option("--iterations", type=int, default=None, help="Overrides the config's iteration count.")
@click.option("--out", "out_dir", type=click.Path(), default=settings.OUTPUT_DIR, show_default=True)
@click.option("--eval-every", type=int, default=settings.TRAIN_EVAL_EVERY, show_default=True)
@_usage_errors
def train(algo, config_path, seed, iterations, out_dir, eval_every):
    """Train a learned policy and write its checkpoint and curve.csv."""
    run_config = load_run_config(config_path)
    out = train_algo(run_config, algo, seed, iterations=iterations, out_dir=out_dir, eval_every=eval_every)
    click.echo(out.checkpoint)


@cli.command("eval")
@click.option("--policy", type=click.Choice(POLICY_NAMES), required=True)
@click.option("--checkpoint", type=click.Path(), default=None)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=settings.DEFAULT_SEED, show_default=True)
@click.option("--slots", type=int, default=settings.EVAL_SLOTS, show_default=True)
@click.option("--warmup", type=int, default=settings.WARMUP_SLOTS, show_default=True)
@_usage_errors
def evaluate(policy, checkpoint, config_path, seed, slots, warmup):
    """Evaluate one policy and print its metrics as a CSV row."""
    run_config = load_run_config(config_path)
    decider = build_policy(policy, run_config, checkpoint=checkpoint)
    metrics = evaluate_policy(run_config.system, decider, slots, warmup, seed)
    row = {"policy": policy, **asdict(metrics)}
    click.echo(pd.DataFrame([row]).to_csv(index=False), nl=False)


@cli.command()
@click.option("--spec", "spec_path", type=click.Path(), required=True)
@click.option("--out", "out_dir", type=click.Path(), default=settings.OUTPUT_DIR, show_default=True)
@click.option("--workers", type=int, default=None)
@click.option("--plot/--no-plot", default=True, show_default=True)
@_usage_errors
def sweep(spec_path, out_dir, workers, plot):
    """Run a parameter sweep; writes sweep_<param>.csv (and SVG charts)."""
    spec = load_sweep_spec(spec_path)
    run_sweep(spec, out_dir=out_dir, workers=workers)
    csv_path = os.path.join(out_dir, f"sweep_{spec.param}.csv")
    if plot:
        for metric in ("avg_queue", "drop_rate", "avg_delay_slots"):
            emit_plot(csv_path, "value", metric, os.path.join(out_dir, f"sweep_{spec.param}_{metric}.svg"),
                      title=f"{metric} vs {spec.param}")
    click.echo(csv_path)


@cli.command("oracle-check")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--task-size", type=int, required=True)
@click.option("--reps", type=int, default=100_000, show_default=True)
@click.option("--seed", type=int, default=settings.DEFAULT_SEED, show_default=True)
@click.option("--available", default=None, help="Comma-separated free nodes (default: all).")
@_usage_errors
def oracle_check(config_path, task_size, reps, seed, available):
    """Rank every coded action by Monte-Carlo expected serving time."""
    run_config = load_run_config(config_path)
    system = run_config.system
    nodes = range(system.num_nodes) if not available else [int(j) for j in available.split(",")]
    ranked = rank_actions(system, task_size, nodes, reps, make_rng(seed))
    rows = [{"index": e.action.global_index, "n": e.action.n, "k": e.action.k,
             "subset": " ".join(str(j) for j in e.action.subset),
             "mean_seconds": e.mean_seconds, "half_width_95": e.half_width_95} for e in ranked]
    click.echo(pd.DataFrame(rows).to_csv(index=False), nl=False)


@cli.command()
@click.option("--csv", "csv_path", type=click.Path(), required=True)
@click.option("--x", "x_col", required=True)
@click.option("--y", "y_col", required=True)
@click.option("--series", default="policy", show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@_usage_errors
def plot(csv_path, x_col, y_col, series, out_path):
    """Render a CSV table as an SVG line chart."""
    click.echo(emit_plot(csv_path, x_col, y_col, out_path, series=series))


@cli.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--algos", default="qlearn,dqn,dueling", show_default=True)
@click.option("--seeds", default="1,2,3", show_default=True)
@click.option("--iterations", type=int, default=40_000, show_default=True)
@click.option("--eval-every", type=int, default=settings.TRAIN_EVAL_EVERY, show_default=True)
@click.option("--eval-slots", type=int, default=settings.TRAIN_EVAL_SLOTS, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default=settings.OUTPUT_DIR, show_default=True)
@_usage_errors
def convergence(config_path, algos, seeds, iterations, eval_every, eval_slots, out_dir):
    """Learning curves of several algorithms on one configuration."""
    algo_list = [a.strip() for a in algos.split(",") if a.strip()]
    unknown = [a for a in algo_list if a not in LEARNED]
    if unknown:
        raise ValueError(f"unknown algorithms: {', '.join(unknown)}")
    seed_list = [int(s) for s in seeds.split(",") if s.strip()]
    df = run_convergence(load_run_config(config_path), algo_list, seed_list, iterations,
                         eval_every, eval_slots, out_dir=out_dir)
    emit_plot(os.path.join(out_dir, "convergence.csv"), "iteration", "eval_reward",
              os.path.join(out_dir, "convergence.svg"), series="algo", title="Learning curves")
    for (algo, seed), curve in df.groupby(["algo", "seed"]):
        click.echo(f"{algo} seed={seed} iterations_to_95pct={iterations_to_fraction(curve)}")


@cli.command()
@click.option("--nodes", type=int, required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@_usage_errors
def actions(nodes, out_path):
    """Export the canonical action-index table as CSV."""
    export_action_table(nodes, out_path)
    click.echo(out_path)


def main():
    cli()
