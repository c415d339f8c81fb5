"""``spectral-uq`` command line: clarify, score, evaluate, simulate, bench."""

from __future__ import annotations

import functools
import json
import logging
import math
import sys
from dataclasses import fields
from pathlib import Path

import click
import httpx
import numpy as np

from .config import RunConfig, load_config, read_config_file
from .errors import (
    ConfigError,
    DatasetError,
    ParseError,
    ProviderError,
    SpectralUQError,
    UndefinedMetricError,
)
from .evaluation.datasets import ingest_dataset, parse_item, write_dataset
from .evaluation.report import default_methods, eval_records, export_report, format_table, pooled_distance_cdf
from .gateway import DiskCache, LLMGateway, OpenAIClient
from .pipeline import DISTANCE_GRID, generate_clarifications, load_runs, run_benchmark
from .synthetic import SyntheticProvider, ambiguity_world, synthetic_config, synthetic_gateway

logger = logging.getLogger("spectral_uncertainty")

EXIT_CODES = {ConfigError: 2, DatasetError: 3, ProviderError: 4, ParseError: 5, UndefinedMetricError: 6}
STAGES = ("clarify", "sample", "embed", "decompose", "baselines", "judge", "total")

_CLICK_TYPES = {"str": str, "int": int, "float": float, "list[str]": str}


def _config_options(func):
    """Add one ``--flag`` per RunConfig field plus ``--config FILE``."""
    for fld in reversed(fields(RunConfig)):
        base = str(fld.type).replace(" | None", "")
        func = click.option(f"--{fld.name.replace('_', '-')}", fld.name, type=_CLICK_TYPES[base], default=None,
                            help="comma-separated" if base == "list[str]" else None, show_default=False)(func)
    return click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                        help="YAML or JSON file with RunConfig fields; flags override it.")(func)


def _split_config(kwargs: dict) -> tuple[str | None, dict]:
    names = {f.name for f in fields(RunConfig)}
    overrides = {k: kwargs.pop(k) for k in list(kwargs) if k in names}
    return kwargs.pop("config_path", None), {k: v for k, v in overrides.items() if v is not None}


def staged(stage: str):
    """Turn package errors into ``error[stage]: ...`` on stderr and a nonzero exit code."""
    def wrap(func):
        @functools.wraps(func)
        def inner(*args, **kwargs):
            try:
                return func(*args, **kwargs)
            except (SpectralUQError, httpx.HTTPError, OSError) as exc:
                code = next((c for cls, c in EXIT_CODES.items() if isinstance(exc, cls)), 1)
                click.echo(f"error[{stage}]: {exc}", err=True)
                sys.exit(code)
        return inner
    return wrap


def build_gateway(config: RunConfig) -> LLMGateway:
    key = config.api_key()
    if not key and "api.openai.com" in config.base_url:
        raise ConfigError([f"api_key_env: environment variable {config.api_key_env} is not set"])
    kw = dict(timeout=config.request_timeout, max_in_flight=config.max_in_flight, rate_limit=config.rate_limit)
    client = OpenAIClient(config.base_url, key, **kw)
    emb = OpenAIClient(config.embedding_base_url, key, **kw) if config.embedding_base_url else None
    return LLMGateway(client, DiskCache(config.cache_root), embedding_client=emb)


def _load_items(config: RunConfig):
    if not config.dataset:
        raise ConfigError(["dataset: a dataset path is required for this command"])
    return ingest_dataset(config.dataset, subsample=config.subsample, seed=config.seed)


@click.group()
@click.option("-v", "--verbose", count=True, help="-v for progress, -vv for debug logging.")
def main(verbose: int):
    """Spectral (von Neumann entropy) uncertainty decomposition for LLM answers."""
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--question", help="Clarify a single question instead of a dataset.")
@click.option("--out", type=click.Path(dir_okay=False), help="Write JSONL here instead of stdout.")
@_config_options
@staged("clarify")
def clarify(question, out, **kwargs):
    """Generate clarifications for one question or every dataset item."""
    path, overrides = _split_config(kwargs)
    config = load_config(path, **overrides)
    items = ([parse_item({"id": "q0", "question": question, "ambiguous": False})] if question
             else _load_items(config))
    gateway = build_gateway(config)
    lines = []
    for item in items:
        cs = generate_clarifications(item.question, item.task_kind or config.task, gateway=gateway, config=config)
        lines.append(json.dumps({"id": item.id, "question": item.question, "needed": cs.needed,
                                 "clarifications": cs.clarifications, "raw_analysis": cs.raw_analysis},
                                ensure_ascii=False, sort_keys=True))
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)


def _summarize(runs, run_dir: Path, gateway: LLMGateway) -> None:
    ok = sum(r.ok for r in runs)
    click.echo(f"{run_dir}: {ok} scored, {len(runs) - ok} failed; "
               f"{gateway.stats['chat_calls']} chat and {gateway.stats['embedding_calls']} embedding provider calls")


@main.command()
@click.option("--run-id", help="Run directory name under runs_root (default: config digest).")
@_config_options
@staged("score")
def score(run_id, **kwargs):
    """Run clarify -> sample -> embed -> decompose (+ baselines) over a dataset."""
    path, overrides = _split_config(kwargs)
    config = load_config(path, **overrides)
    items = _load_items(config)
    run_dir = Path(config.runs_root) / (run_id or config.digest())
    gateway = build_gateway(config)
    try:
        runs = run_benchmark(items, config, gateway=gateway, run_dir=run_dir)
    finally:
        gateway.close()
    _summarize(runs, run_dir, gateway)


def _evaluate(run_dir: Path, methods: list[str] | None, figures: bool) -> Path:
    runs = load_runs(run_dir)
    if not runs:
        raise DatasetError(f"{run_dir}: no question records found")
    kinds = {r.item.label_kind for r in runs}
    if len(kinds) != 1:
        raise DatasetError(f"{run_dir}: mixes ambiguity and correctness items; evaluate them separately")
    kind = kinds.pop()
    records, excluded = eval_records(runs)
    if not records:
        raise UndefinedMetricError("no labelled records to evaluate")
    methods = methods or [m for m in default_methods(kind) if any(m in r.scores for r in records)]
    config = json.loads((run_dir / "config.json").read_text(encoding="utf-8")) \
        if (run_dir / "config.json").exists() else {}
    metadata = {"config": config, "excluded": excluded, "questions": len(runs),
                "parse_warnings": sum(r.parse_warnings for r in runs)}
    if config.get("equivalence") == "llm":
        metadata["note"] = "semantic-equivalence clustering uses an LLM entailment judge, not an NLI model"
    out = run_dir / "report"
    export_report(records, methods, out, metadata=metadata, label_kind=kind,
                  distance_cdf=pooled_distance_cdf(runs, DISTANCE_GRID), figures=figures)
    click.echo(format_table(json.loads((out / "metrics.json").read_text())["metrics"]), nl=False)
    if any(excluded.values()):
        click.echo(f"excluded: {excluded}")
    return out


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--methods", help="Comma-separated score columns (default depends on the label kind).")
@click.option("--figures/--no-figures", default=True, help="Render KDE and distance-CDF figures.")
@staged("evaluate")
def evaluate(run_dir, methods, figures):
    """AUROC/AUPR table, score columns and figures for a scored run."""
    chosen = [m.strip() for m in methods.split(",")] if methods else None
    out = _evaluate(Path(run_dir), chosen, figures)
    click.echo(f"report written to {out}")


@main.command()
@click.option("--questions", "n_questions", type=int, default=40, show_default=True)
@click.option("--ambiguous-fraction", type=float, default=0.5, show_default=True)
@click.option("--run-id", help="Run directory name under runs_root (default: simulate-<seed>).")
@click.option("--figures/--no-figures", default=True)
@_config_options
@staged("simulate")
def simulate(n_questions, ambiguous_fraction, run_id, figures, **kwargs):
    """Score a synthetic ambiguity world through the full pipeline, offline."""
    path, overrides = _split_config(kwargs)
    file_cfg = read_config_file(path) if path else {}
    config = synthetic_config(**{**file_cfg, **overrides})
    world = ambiguity_world(n_questions, ambiguous_fraction, config.seed)
    run_dir = Path(config.runs_root) / (run_id or f"simulate-{config.seed}")
    run_dir.mkdir(parents=True, exist_ok=True)
    items = world.dataset()
    write_dataset(items, run_dir / "dataset.jsonl")
    provider = SyntheticProvider(world)
    gateway = synthetic_gateway(provider, Path(config.cache_root) / "synthetic")
    try:
        runs = run_benchmark(items, config, gateway=gateway, run_dir=run_dir)
    finally:
        gateway.close()
    _summarize(runs, run_dir, gateway)
    _evaluate(run_dir, None, figures)


def timing_table(runs) -> list[dict]:
    """Mean seconds per question and a normal 95% interval (mean +- 1.96 standard errors)."""
    rows = []
    for stage in STAGES:
        vals = np.array([r.timings[stage] for r in runs if r.ok and stage in r.timings], dtype=float)
        if vals.size == 0:
            continue
        mean = float(vals.mean())
        half = 1.96 * float(vals.std(ddof=1)) / math.sqrt(vals.size) if vals.size > 1 else float("nan")
        rows.append({"stage": stage, "n": int(vals.size), "mean": mean, "ci_low": mean - half, "ci_high": mean + half})
    return rows


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@staged("bench")
def bench(run_dir):
    """Per-stage wall-clock time per question with 95% confidence intervals."""
    run_dir = Path(run_dir)
    runs = load_runs(run_dir)
    if not runs:
        raise DatasetError(f"{run_dir}: no question records found")
    rows = timing_table(runs)
    lines = [f"{'stage':<10} {'n':>5} {'mean (s)':>10}  95% CI", "-" * 44]
    for r in rows:
        ci = "n/a" if math.isnan(r["ci_low"]) else f"({r['ci_low']:.3f}, {r['ci_high']:.3f})"
        lines.append(f"{r['stage']:<10} {r['n']:>5d} {r['mean']:>10.3f}  {ci}")
    text = "\n".join(lines) + "\n"
    out = run_dir / "report"
    out.mkdir(exist_ok=True)
    (out / "bench.txt").write_text(text, encoding="utf-8")
    (out / "bench.json").write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    click.echo(text, nl=False)


if __name__ == "__main__":
    main()
