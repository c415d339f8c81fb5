"""End-to-end scoring of one question: clarify, sample, embed, decompose.

Baselines (predictive kernel entropy, semantic entropy, clarification
ensembling) reuse the same gateway so every model call is cached once.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Sequence

import httpx
import numpy as np
from scipy.spatial.distance import pdist

from .baselines import EquivalenceOracle, ExactMatchOracle, LLMEntailmentOracle, ice_decompose, semantic_entropy
from .config import RunConfig
from .errors import ConfigError, ParseError, SpectralUQError
from .evaluation.datasets import DatasetItem, LabelKind, judge_correctness
from .gateway import ChatRequest
from .kernels import distance_counts
from .prompts import TaskKind, answer_prompt, clarification_prompt, parse_answer, parse_clarifications
from .spectral import SampleMatrix, Spectrum, UncertaintyReport, decompose, vne_of_samples

logger = logging.getLogger(__name__)

DISTANCE_GRID = tuple(round(0.05 * k, 2) for k in range(41))


@dataclass(frozen=True)
class ClarificationSet:
    question: str
    clarifications: list[str]
    raw_analysis: str
    needed: bool

    @property
    def n(self) -> int:
        return len(self.clarifications)


@dataclass
class QuestionRun:
    id: str
    item: DatasetItem
    task_kind: TaskKind
    clarification_set: ClarificationSet | None = None
    answers: list[list[str]] = field(default_factory=list)
    embeddings: SampleMatrix | None = None
    report: UncertaintyReport | None = None
    baselines: dict[str, float] = field(default_factory=dict)
    raw_answers: list[str] = field(default_factory=list)
    correctness: dict | None = None
    parse_warnings: int = 0
    distance_cdf: dict | None = None
    timings: dict[str, float] = field(default_factory=dict)
    error: dict | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def scores(self) -> dict[str, float]:
        out = {}
        if self.report is not None:
            out.update(spectral_total=self.report.total, spectral_aleatoric=self.report.aleatoric,
                       spectral_epistemic=self.report.epistemic)
        out.update(self.baselines)
        return out

    def to_record(self, config_snapshot: dict | None = None) -> dict:
        cs = self.clarification_set
        rec = {
            "id": self.id,
            "item": self.item.to_dict(),
            "task_kind": self.task_kind.value,
            "status": "ok" if self.ok else "failed",
            "error": self.error,
            "clarifications": cs.clarifications if cs else None,
            "clarification_needed": cs.needed if cs else None,
            "raw_analysis": cs.raw_analysis if cs else None,
            "answers": self.answers,
            "raw_answers": self.raw_answers,
            "parse_warnings": self.parse_warnings,
            "report": self.report.to_dict() if self.report else None,
            "scores": self.scores(),
            "correctness": self.correctness,
            "distance_cdf": self.distance_cdf,
            "timings": self.timings,
        }
        if config_snapshot is not None:
            rec["config"] = config_snapshot
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "QuestionRun":
        from .evaluation.datasets import parse_item

        run = cls(rec["id"], parse_item(rec["item"]), TaskKind.parse(rec["task_kind"]))
        if rec.get("clarifications") is not None:
            run.clarification_set = ClarificationSet(rec["item"]["question"], rec["clarifications"],
                                                     rec.get("raw_analysis") or "", rec["clarification_needed"])
        run.answers = rec.get("answers") or []
        run.raw_answers = rec.get("raw_answers") or []
        run.parse_warnings = rec.get("parse_warnings", 0)
        rep = rec.get("report")
        if rep:
            def spec(d):
                return Spectrum(np.asarray(d["eigenvalues"], dtype=np.float64), d["source_size"])
            run.report = UncertaintyReport(rep["total"], rep["aleatoric"], rep["epistemic"],
                                           [spec(s) for s in rep.get("inner_spectra", [])],
                                           spec(rep["outer_spectrum"]) if "outer_spectrum" in rep else None)
        scores = dict(rec.get("scores") or {})
        run.baselines = {k: v for k, v in scores.items() if not k.startswith("spectral_")}
        run.correctness = rec.get("correctness")
        run.distance_cdf = rec.get("distance_cdf")
        run.timings = rec.get("timings") or {}
        run.error = rec.get("error")
        return run


def generate_clarifications(question: str, task_kind: TaskKind | str, *, gateway, config: RunConfig) -> ClarificationSet:
    """One call to the clarification model, parsed into at most ``max_clarifications`` rewrites."""
    task = TaskKind.parse(task_kind)
    system, user = clarification_prompt(question, task)
    text = gateway.chat(ChatRequest(config.clarification_model, system, user,
                                    temperature=config.clarification_temperature,
                                    max_tokens=config.clarification_max_tokens))
    parsed = parse_clarifications(text, question, task, max_items=config.max_clarifications)
    return ClarificationSet(question, parsed.clarifications, parsed.raw_analysis, parsed.needed)


def sample_answers(clarification: str, m: int, temperature: float, task_kind: TaskKind | str, *, gateway,
                   model: str, max_tokens: int = 256, warnings: list[str] | None = None) -> list[str]:
    """Draw ``m`` answers (sample indices ``0..m-1``) and strip the answer marker.

    A reply without a recognizable marker is kept whole and appended to
    ``warnings`` instead of failing the question.
    """
    task = TaskKind.parse(task_kind)
    system, user = answer_prompt(clarification, task)
    out = []
    for j in range(m):
        raw = gateway.chat(ChatRequest(model, system, user, temperature=temperature,
                                       sample_index=j, max_tokens=max_tokens))
        text, warned = parse_answer(raw, task)
        if warned:
            logger.warning("answer without marker for %r (sample %d)", clarification[:60], j)
            if warnings is not None:
                warnings.append(raw)
        out.append(text)
    return out


def make_oracle(config: RunConfig, gateway) -> EquivalenceOracle:
    if config.equivalence == "exact":
        return ExactMatchOracle()
    return LLMEntailmentOracle(gateway, config.equivalence_model or config.judge_model, config.judge_max_tokens)


@contextmanager
def _timed(timings: dict[str, float], name: str):
    t0 = time.perf_counter()
    try:
        yield
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0


def run_question(item: DatasetItem, config: RunConfig, *, gateway, oracle: EquivalenceOracle | None = None) -> QuestionRun:
    """Score one dataset item. Failures are captured on the returned run, tagged by stage."""
    task = item.task_kind or config.task
    run = QuestionRun(item.id, item, task)
    spec = config.kernel_spec(task)
    methods = set(config.methods)
    lap = partial(_timed, run.timings)
    stage = "clarify"
    t_start = time.perf_counter()
    try:
        with lap("clarify"):
            cs = generate_clarifications(item.question, task, gateway=gateway, config=config)
        run.clarification_set = cs

        stage = "sample"
        warnings: list[str] = []
        prompts = list(cs.clarifications)
        need_raw = bool(methods & {"pke", "semantic_entropy"})
        if need_raw:
            prompts.append(item.question)
        with lap("sample"), ThreadPoolExecutor(max_workers=max(1, min(len(prompts), config.max_in_flight))) as pool:
            futures = [pool.submit(sample_answers, p, config.m, config.temperature, task, gateway=gateway,
                                   model=config.target_model, max_tokens=config.answer_max_tokens,
                                   warnings=warnings) for p in prompts]
            grids = [f.result() for f in futures]
        run.answers = grids[:cs.n]
        run.raw_answers = grids[cs.n] if need_raw else []
        run.parse_warnings = len(warnings)

        if "spectral" in methods:
            stage = "embed"
            with lap("embed"):
                flat = [a for g in run.answers for a in g]
                E = gateway.embed(flat, config.embedding_model)
            stage = "decompose"
            with lap("decompose"):
                run.embeddings = SampleMatrix(E.reshape(cs.n, config.m, -1))
                run.report = decompose(run.embeddings, spec)
                if E.shape[0] >= 2:
                    d = pdist(run.embeddings.flat)
                    run.distance_cdf = {"pairs": int(d.size),
                                        "counts": [int(c) for c in distance_counts(d, DISTANCE_GRID)]}

        stage = "baselines"
        with lap("baselines"):
            if "pke" in methods:
                R = gateway.embed(run.raw_answers, config.embedding_model)
                run.baselines["pke"] = vne_of_samples(R, spec)
            if methods & {"semantic_entropy", "ice"}:
                oracle = oracle or make_oracle(config, gateway)
            if "semantic_entropy" in methods:
                run.baselines["semantic_entropy"] = semantic_entropy(run.raw_answers, oracle, item.question)
            if "ice" in methods:
                t, a, e = ice_decompose(run.answers, oracle, item.question)
                run.baselines.update(ice_total=t, ice_aleatoric=a, ice_epistemic=e)

        if item.label_kind is LabelKind.CORRECTNESS:
            stage = "judge"
            with lap("judge"):
                run.correctness = _judge(item, task, config, gateway)
    except (SpectralUQError, httpx.HTTPError) as exc:
        logger.error("question %s failed at %s: %s", item.id, stage, exc)
        run.error = {"stage": stage, "type": type(exc).__name__, "message": str(exc)}
    run.timings["total"] = time.perf_counter() - t_start
    return run


def _judge(item: DatasetItem, task: TaskKind, config: RunConfig, gateway) -> dict:
    """Best-effort answer at low temperature, then a yes/no verdict from the judge model."""
    system, user = answer_prompt(item.question, task)
    raw = gateway.chat(ChatRequest(config.target_model, system, user, temperature=config.best_effort_temperature,
                                   sample_index=0, max_tokens=config.answer_max_tokens))
    answer, _ = parse_answer(raw, task)
    try:
        correct = judge_correctness(item.question, item.gold_answers, answer, gateway=gateway,
                                    model=config.judge_model, max_tokens=config.judge_max_tokens)
    except ParseError as exc:
        return {"answer": answer, "correct": None, "judge_error": str(exc)}
    return {"answer": answer, "correct": correct, "judge_error": None}


def _read_records(path: Path) -> dict[str, dict]:
    latest: dict[str, dict] = {}
    if path.exists():
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    latest[rec["id"]] = rec
    return latest


def dump_record(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, ensure_ascii=False)


def run_benchmark(items: Sequence[DatasetItem], config: RunConfig, *, gateway, run_dir: str | Path,
                  oracle: EquivalenceOracle | None = None,
                  progress: Callable[[int, int, QuestionRun], None] | None = None) -> list[QuestionRun]:
    """Score every item into ``run_dir/questions.jsonl``, resuming finished questions.

    Questions run concurrently, but records are appended strictly in dataset
    order so reruns produce identical files. Already-successful ids are not
    recomputed; failed ones are retried and their new record appended.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    snapshot = config.snapshot()
    cfg_path = run_dir / "config.json"
    if cfg_path.exists():
        previous = json.loads(cfg_path.read_text(encoding="utf-8"))
        if previous != snapshot:
            raise ConfigError([f"{run_dir}: existing run was produced with a different configuration"])
    else:
        cfg_path.write_text(json.dumps(snapshot, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    out_path = run_dir / "questions.jsonl"
    done = {k: v for k, v in _read_records(out_path).items() if v.get("status") == "ok"}
    todo = [it for it in items if it.id not in done]
    logger.info("%d questions, %d already scored, %d to do", len(items), len(items) - len(todo), len(todo))

    fresh: dict[str, QuestionRun] = {}
    with ThreadPoolExecutor(max_workers=config.question_concurrency) as pool, \
            open(out_path, "a", encoding="utf-8") as fh:
        futures = [pool.submit(run_question, it, config, gateway=gateway, oracle=oracle) for it in todo]
        for k, (it, fut) in enumerate(zip(todo, futures), start=1):
            run = fut.result()
            fresh[it.id] = run
            fh.write(dump_record(run.to_record(snapshot)) + "\n")
            fh.flush()
            if progress is not None:
                progress(k, len(todo), run)
            logger.info("[%d/%d] %s %s", k, len(todo), it.id, "ok" if run.ok else f"failed at {run.error['stage']}")
    return [fresh[it.id] if it.id in fresh else QuestionRun.from_record(done[it.id]) for it in items]


def load_runs(run_dir: str | Path) -> list[QuestionRun]:
    """Latest record per question id, in first-seen order."""
    return [QuestionRun.from_record(r) for r in _read_records(Path(run_dir) / "questions.jsonl").values()]
