"""AUROC/AUPR tables, per-method score columns and figures for a scored run."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..plotting import plot_distance_cdf, plot_score_densities
from .datasets import LabelKind
from .metrics import aupr, auroc

AMBIGUITY_METHODS = ("semantic_entropy", "pke", "ice_aleatoric", "spectral_aleatoric")
CORRECTNESS_METHODS = ("semantic_entropy", "pke", "ice_total", "spectral_total")

DISPLAY_NAMES = {
    "semantic_entropy": "Semantic Entropy",
    "pke": "Predictive Kernel Entropy",
    "ice_total": "Input Clarification Ensembling (total)",
    "ice_aleatoric": "Input Clarification Ensembling (aleatoric)",
    "ice_epistemic": "Input Clarification Ensembling (epistemic)",
    "spectral_total": "Spectral Uncertainty (total)",
    "spectral_aleatoric": "Spectral Uncertainty (aleatoric)",
    "spectral_epistemic": "Spectral Uncertainty (epistemic)",
}


@dataclass(frozen=True)
class EvalRecord:
    """One labelled item. For correctness, label 1 means the best-effort answer was wrong."""

    id: str
    label: int
    scores: dict[str, float] = field(default_factory=dict)


def default_methods(kind: LabelKind) -> tuple[str, ...]:
    return AMBIGUITY_METHODS if LabelKind(kind) is LabelKind.AMBIGUITY else CORRECTNESS_METHODS


def eval_records(runs) -> tuple[list[EvalRecord], dict[str, int]]:
    """Labelled records from scored questions plus counts of what had to be left out."""
    records, excluded = [], {"failed": 0, "judge_error": 0, "unlabelled": 0}
    for run in runs:
        if not run.ok:
            excluded["failed"] += 1
            continue
        item = run.item
        if item.label_kind is LabelKind.AMBIGUITY:
            label = int(item.ambiguous)
        else:
            verdict = (run.correctness or {}).get("correct")
            if verdict is None:
                excluded["judge_error" if run.correctness else "unlabelled"] += 1
                continue
            label = int(not verdict)
        scores = {k: float(v) for k, v in run.scores().items() if v is not None and math.isfinite(v)}
        records.append(EvalRecord(run.id, label, scores))
    return records, excluded


def _column(records: Sequence[EvalRecord], method: str):
    return [(r.id, r.label, r.scores[method]) for r in records if method in r.scores]


def metrics_table(records: Sequence[EvalRecord], methods: Sequence[str]) -> list[dict]:
    table = []
    for method in methods:
        rows = _column(records, method)
        scores = [s for _, _, s in rows]
        labels = [y for _, y, _ in rows]
        a, p = auroc(scores, labels), aupr(scores, labels)
        table.append({
            "method": method,
            "name": DISPLAY_NAMES.get(method, method),
            "n": len(rows),
            "positives": int(sum(labels)),
            "auroc": a,
            "aupr": p,
            "auroc_pct": round(100 * a, 2),
            "aupr_pct": round(100 * p, 2),
        })
    return table


def format_table(table: Sequence[dict]) -> str:
    width = max([len("Uncertainty Method")] + [len(r["name"]) for r in table])
    lines = [f"{'Uncertainty Method':<{width}}  {'AUROC (%)':>9}  {'AUPR (%)':>9}  {'n':>5}",
             "-" * (width + 31)]
    for r in table:
        lines.append(f"{r['name']:<{width}}  {100 * r['auroc']:>9.2f}  {100 * r['aupr']:>9.2f}  {r['n']:>5d}")
    return "\n".join(lines) + "\n"


def export_report(records: Sequence[EvalRecord], methods: Sequence[str], out_dir: str | Path, *,
                  metadata: dict | None = None, label_kind: LabelKind = LabelKind.AMBIGUITY,
                  distance_cdf: tuple[Sequence[float], Sequence[float]] | None = None,
                  figures: bool = True) -> dict[str, Path]:
    """Write metrics.{json,txt}, scores_<method>.csv and (optionally) figures into ``out_dir``."""
    if not records:
        raise ValueError("export_report needs at least one record")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = metrics_table(records, methods)
    paths: dict[str, Path] = {}

    paths["metrics.txt"] = out / "metrics.txt"
    paths["metrics.txt"].write_text(format_table(table), encoding="utf-8")
    meta = dict(metadata or {})
    meta.update(label_kind=LabelKind(label_kind).value, records=len(records))
    paths["metrics.json"] = out / "metrics.json"
    paths["metrics.json"].write_text(json.dumps({"metrics": table, "metadata": meta}, indent=2, sort_keys=True)
                                     + "\n", encoding="utf-8")

    columns = {}
    for method in methods:
        rows = _column(records, method)
        p = out / f"scores_{method}.csv"
        with open(p, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["id", "label", "score"])
            for rid, label, score in rows:
                writer.writerow([rid, label, repr(score)])
        paths[p.name] = p
        columns[method] = ([s for *_, s in rows], [y for _, y, _ in rows])

    if distance_cdf is not None:
        grid, cdf = distance_cdf
        p = out / "distance_cdf.csv"
        with open(p, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["distance", "cumulative_fraction"])
            writer.writerows([repr(float(t)), repr(float(c))] for t, c in zip(grid, cdf))
        paths[p.name] = p

    if figures:
        pos, neg = (("ambiguous", "unambiguous") if LabelKind(label_kind) is LabelKind.AMBIGUITY
                    else ("incorrect", "correct"))
        paths["kde.png"] = plot_score_densities(columns, out / "kde.png", positive=pos, negative=neg,
                                                titles=DISPLAY_NAMES)
        if distance_cdf is not None:
            paths["distance_cdf.png"] = plot_distance_cdf(*distance_cdf, out / "distance_cdf.png",
                                                          label="pairwise answer distances")
    return paths


def pooled_distance_cdf(runs, grid: Sequence[float]) -> tuple[list[float], list[float]] | None:
    """Aggregate the per-question distance counts stored on each run."""
    counts, pairs = np.zeros(len(grid), dtype=np.int64), 0
    for run in runs:
        d = run.distance_cdf
        if run.ok and d and len(d["counts"]) == len(grid):
            counts += np.asarray(d["counts"], dtype=np.int64)
            pairs += d["pairs"]
    if pairs == 0:
        return None
    return [float(t) for t in grid], [float(c) / pairs for c in counts]
