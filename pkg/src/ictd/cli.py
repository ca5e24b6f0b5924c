"""Command-line entry points for experiments and certification runs.

Every subcommand accepts ``--config FILE`` (JSON) supplying any of its
flags; explicit flags override the file. All outputs are deterministic for
a fixed seed: task sampling, trajectories, and serialization order are all
driven by seeded generators and sorted iteration.
"""

from __future__ import annotations

import glob as globlib
import json
import sys
from pathlib import Path

import click
import numpy as np

from .evaluation import default_lengths, msve_curve, weight_report
from .mrp import generate_boyan, generate_loop
from .pretrain import Checkpoint, TrainConfig, train, trial_rng
from .verify import BoundReport, decay_sweep, embedding_trace_check, gradient_norm_check


def _load_config(ctx: click.Context, config: str | None, values: dict) -> dict:
    """Fill in flags the user left at their defaults from a JSON file."""
    if config is None:
        return values
    file_values = json.loads(Path(config).read_text())
    merged = dict(values)
    for key, value in file_values.items():
        if key in merged and ctx.get_parameter_source(key) == click.core.ParameterSource.DEFAULT:
            merged[key] = value
    return merged


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        click.echo(text, nl=False)
    else:
        Path(path).write_text(text)


def _parse_lengths(spec: str) -> list[int]:
    """Context lengths from "start:stop:step" (stop exclusive) or "a,b,c"."""
    if ":" in spec:
        parts = [int(p) for p in spec.split(":")]
        if len(parts) == 2:
            parts.append(1)
        if len(parts) != 3:
            raise click.BadParameter("expected start:stop[:step]")
        return list(range(parts[0], parts[1], parts[2]))
    return [int(p) for p in spec.split(",") if p]


def _sample_tasks(family: str, n: int, gamma: float, count: int, rng, loop_threshold=0.5):
    if family == "boyan":
        return [generate_boyan(n, rng, gamma=gamma) for _ in range(count)]
    return [generate_loop(n, loop_threshold, rng, gamma=gamma) for _ in range(count)]


@click.group()
def cli():
    """Looped-transformer in-context policy evaluation toolkit."""


@cli.command("gen-mrp")
@click.option("--config", type=click.Path(exists=True), default=None, help="JSON flag file.")
@click.option("--family", type=click.Choice(["boyan", "loop"]), default="boyan")
@click.option("--states", type=int, default=5)
@click.option("--gamma", type=float, default=0.9)
@click.option("--loop-threshold", type=float, default=0.5)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), default="-", help="Output path, - for stdout.")
@click.pass_context
def gen_mrp(ctx, config, **kw):
    """Sample one random MRP and write it as JSON."""
    kw = _load_config(ctx, config, kw)
    rng = np.random.default_rng(np.random.SeedSequence(kw["seed"]))
    mrp = _sample_tasks(
        kw["family"], kw["states"], kw["gamma"], 1, rng, kw["loop_threshold"]
    )[0]
    _write_text(kw["out"], json.dumps(mrp.to_json_dict(), sort_keys=True, indent=2) + "\n")


@cli.command("train")
@click.option("--config", type=click.Path(exists=True), default=None, help="JSON flag file.")
@click.option("--algorithm", type=click.Choice(["td", "mc"]), default="td")
@click.option(
    "--parameterization", type=click.Choice(["structured", "full"]), default="structured"
)
@click.option("--states", type=int, default=5)
@click.option("--depth", type=int, default=30)
@click.option("--gamma", type=float, default=0.9)
@click.option("--batch", type=int, default=64)
@click.option("--tasks", type=int, default=20000)
@click.option("--lr", type=float, default=1e-3)
@click.option("--mc-horizon", type=int, default=200)
@click.option("--family", type=click.Choice(["boyan", "loop"]), default="boyan")
@click.option("--loop-threshold", type=float, default=0.5)
@click.option("--init-scale", type=float, default=1e-2)
@click.option("--optimizer", type=click.Choice(["adam", "sgd"]), default="adam")
@click.option("--seed", type=int, default=0)
@click.option("--trial", type=int, default=0)
@click.option("--checkpoint-every", type=int, default=0)
@click.option("--log/--no-log", default=True, help="Write a per-task training log CSV.")
@click.option("--out", type=click.Path(), default="run", help="Output directory.")
@click.pass_context
def train_cmd(ctx, config, **kw):
    """Run one pretraining trial and write checkpoint JSON files."""
    kw = _load_config(ctx, config, kw)
    cfg = TrainConfig(
        algorithm=kw["algorithm"],
        parameterization=kw["parameterization"],
        n_states=kw["states"],
        depth=kw["depth"],
        gamma=kw["gamma"],
        batch=kw["batch"],
        n_tasks=kw["tasks"],
        learning_rate=kw["lr"],
        mc_horizon=kw["mc_horizon"],
        mrp_family=kw["family"],
        loop_threshold=kw["loop_threshold"],
        init_scale=kw["init_scale"],
        seed=kw["seed"],
        checkpoint_every=kw["checkpoint_every"],
        use_adam=kw["optimizer"] == "adam",
    )
    out = Path(kw["out"])
    out.mkdir(parents=True, exist_ok=True)
    log_rows = ["task_index,mean_abs_error,param_norm"]
    progress = (
        (lambda i, err, norm: log_rows.append(f"{i},{err!r},{norm!r}")) if kw["log"] else None
    )
    checkpoints = train(cfg, trial_rng(cfg.seed, kw["trial"]), progress)
    if kw["log"]:
        (out / "train_log.csv").write_text("\n".join(log_rows) + "\n")
    for ck in checkpoints[1:-1]:
        path = out / f"checkpoint_{ck.tasks_seen:06d}.json"
        path.write_text(json.dumps(ck.to_json_dict(), sort_keys=True) + "\n")
    final = checkpoints[-1]
    (out / "checkpoint.json").write_text(json.dumps(final.to_json_dict(), sort_keys=True) + "\n")
    click.echo(
        f"trained {cfg.algorithm} for {cfg.n_tasks} tasks "
        f"(final mean |error| {final.mean_abs_error:.4f}) -> {out / 'checkpoint.json'}"
    )


@cli.command("eval-msve")
@click.option("--config", type=click.Path(exists=True), default=None, help="JSON flag file.")
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--tasks", type=int, default=10, help="Validation tasks per point.")
@click.option(
    "--lengths", default="5:105:5", help="Context lengths, start:stop:step or comma list."
)
@click.option("--family", type=click.Choice(["boyan", "loop"]), default="boyan")
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), default="-", help="CSV path, - for stdout.")
@click.pass_context
def eval_msve(ctx, config, **kw):
    """MSVE-vs-context-length curve for a trained checkpoint."""
    kw = _load_config(ctx, config, kw)
    ck = Checkpoint.from_json(Path(kw["ckpt"]).read_text())
    rng = np.random.default_rng(np.random.SeedSequence(kw["seed"]))
    report = msve_curve(
        ck.params,
        kw["tasks"],
        _parse_lengths(kw["lengths"]),
        rng,
        family=kw["family"],
        gamma=ck.config.gamma,
        seed=kw["seed"],
    )
    _write_text(kw["out"], "\n".join(report.csv_rows()) + "\n")


@cli.command("inspect-weights")
@click.option("--config", type=click.Path(exists=True), default=None, help="JSON flag file.")
@click.option("--ckpt", required=True, help="Checkpoint path glob (one trial per file).")
@click.option("--out-json", type=click.Path(), default=None)
@click.option("--out-csv", type=click.Path(), default=None)
@click.pass_context
def inspect_weights(ctx, config, **kw):
    """Alignment of trained weights with the hand-built TD pattern."""
    kw = _load_config(ctx, config, kw)
    paths = sorted(globlib.glob(kw["ckpt"]))
    if not paths:
        raise click.ClickException(f"no checkpoints match {kw['ckpt']!r}")
    checkpoints = [Checkpoint.from_json(Path(p).read_text()) for p in paths]
    report = weight_report(checkpoints)
    if kw["out_json"] is not None:
        _write_text(
            kw["out_json"], json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n"
        )
    csv_text = (
        "matrix,correlation,off_pattern_energy\n"
        f"P,{report.p_corr!r},{report.p_off_pattern!r}\n"
        f"Q,{report.q_corr!r},{report.q_off_pattern!r}\n"
    )
    if kw["out_csv"] is not None:
        _write_text(kw["out_csv"], csv_text)
    if kw["out_json"] is None and kw["out_csv"] is None:
        click.echo(csv_text, nl=False)


_VERIFY_CHECKS = (
    "value_error",
    "bootstrap_error",
    "return_error",
    "trace",
    "grad_norm",
    "neu_td",
    "neu_mc",
)


@cli.command("verify")
@click.option("--config", type=click.Path(exists=True), default=None, help="JSON flag file.")
@click.option("--check", type=click.Choice(("all",) + _VERIFY_CHECKS), default="all")
@click.option("--states", type=int, default=5)
@click.option("--layers", default="5,10,20,30", help="Depths, comma list or start:stop:step.")
@click.option("--gamma", type=float, default=0.9)
@click.option("--tasks", type=int, default=100)
@click.option("--family", type=click.Choice(["boyan", "loop"]), default="boyan")
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), default=None, help="Per-record CSV path.")
@click.option("--summary", type=click.Path(), default=None, help="JSON summary path.")
@click.pass_context
def verify_cmd(ctx, config, **kw):
    """Certify error, trace, gradient, and update-norm bounds at the TD weights.

    Exits nonzero if any measured quantity violates its bound.
    """
    kw = _load_config(ctx, config, kw)
    rng = np.random.default_rng(np.random.SeedSequence(kw["seed"]))
    tasks = _sample_tasks(kw["family"], kw["states"], kw["gamma"], kw["tasks"], rng)
    depths = _parse_lengths(kw["layers"])
    checks = _VERIFY_CHECKS if kw["check"] == "all" else (kw["check"],)
    report = None
    for check in checks:
        if check == "trace":
            part = BoundReport(records=[])
            for mrp in tasks:
                for s in range(mrp.n):
                    part.extend(embedding_trace_check(mrp, s, max(depths)))
        elif check == "grad_norm":
            part = gradient_norm_check(tasks, depths)
        else:
            part = decay_sweep(check, depths, tasks)
        if report is None:
            report = part
        else:
            report.extend(part)
    summary = report.to_json_dict()
    summary["n_tasks"] = kw["tasks"]
    summary["family"] = kw["family"]
    summary["gamma"] = kw["gamma"]
    if kw["out"] is not None:
        _write_text(kw["out"], "\n".join(report.csv_rows()) + "\n")
    if kw["summary"] is not None:
        _write_text(kw["summary"], json.dumps(summary, sort_keys=True, indent=2) + "\n")
    click.echo(
        f"{len(report.records)} records, min slack {report.worst().slack:.3e}, "
        f"{'PASS' if report.passed else 'FAIL'}"
    )
    if not report.passed:
        sys.exit(1)


def main():
    cli(prog_name="ictd")


if __name__ == "__main__":
    main()
