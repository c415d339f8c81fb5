"""Synthetic answer worlds with known embeddings.

Two uses:

* closed-form checks of the estimators: with a linear kernel the covariance
  operators are explicit ``d x d`` matrices, so the population total,
  aleatoric and epistemic VNE can be computed exactly and compared to
  finite-sample estimates;
* an offline ambiguity benchmark: :class:`SyntheticProvider` speaks the
  OpenAI wire format and answers clarification, answer, judge and embedding
  requests from a world, so the full pipeline runs without a network.
"""

from __future__ import annotations

import hashlib
import json
import re
import tempfile
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import httpx
import numpy as np

from .config import RunConfig, load_config
from .evaluation.datasets import DatasetItem, LabelKind
from .evaluation.report import EvalRecord, eval_records
from .gateway import DiskCache, LLMGateway, OpenAIClient
from .kernels import KernelSpec, as_embeddings
from .prompts import TaskKind, template
from .spectral import SampleMatrix, UncertaintyReport, decompose


def _vne_matrix(C: np.ndarray) -> float:
    lam = np.linalg.eigvalsh(0.5 * (C + C.T))
    lam = lam[lam > 1e-15]
    return float(-np.sum(lam * np.log(lam)))


def exact_uncertainties(profiles, embeddings, weights=None) -> tuple[float, float, float]:
    """Population ``(total, aleatoric, epistemic)`` for a linear-kernel world.

    Each profile ``p_i`` is a distribution over the vocabulary; its covariance
    is ``sum_v p_i(v) x_v x_v^T``. The clarification variable is uniform over
    profiles unless ``weights`` says otherwise.
    """
    P = np.atleast_2d(np.asarray(profiles, dtype=np.float64))
    X = as_embeddings(embeddings, warn=False)
    if P.shape[1] != X.shape[0]:
        raise ValueError(f"profiles cover {P.shape[1]} answers but {X.shape[0]} embeddings were given")
    w = np.full(P.shape[0], 1.0 / P.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    covs = [(X * p[:, None]).T @ X for p in P]
    marginal = sum(wi * C for wi, C in zip(w, covs))
    total = _vne_matrix(marginal)
    epistemic = float(sum(wi * _vne_matrix(C) for wi, C in zip(w, covs)))
    return total, total - epistemic, epistemic


def simulate_and_estimate(profiles, embeddings, n: int, m: int, seed: int,
                          spec: KernelSpec | None = None) -> UncertaintyReport:
    """Two-stage sample from the world and run the spectral decomposition.

    Outer draw: ``n`` distinct profiles when that many exist, otherwise with
    replacement. Inner draw: ``m`` i.i.d. answers per chosen profile.
    """
    P = np.atleast_2d(np.asarray(profiles, dtype=np.float64))
    X = as_embeddings(embeddings, warn=False)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(P.shape[0], size=n, replace=n > P.shape[0])
    idx = np.stack([rng.choice(X.shape[0], size=m, p=P[i]) for i in chosen])
    return decompose(SampleMatrix(X[idx]), spec or KernelSpec.linear())


def orthonormal(k: int, d: int | None = None) -> np.ndarray:
    return np.eye(d or k)[:k]


# ---------------------------------------------------------------------------
# worlds for the pipeline


@dataclass
class WorldQuestion:
    id: str
    question: str
    ambiguous: bool
    clarifications: list[str]
    profiles: np.ndarray
    answers: list[str]

    @property
    def raw_profile(self) -> np.ndarray:
        """Answer distribution for the unclarified question: the mixture over interpretations."""
        return self.profiles.mean(axis=0)

    def item(self, task: TaskKind | None = None) -> DatasetItem:
        return DatasetItem(self.id, self.question, LabelKind.AMBIGUITY, ambiguous=self.ambiguous, task_kind=task)


@dataclass
class SyntheticWorld:
    questions: list[WorldQuestion]
    embeddings: dict[str, np.ndarray]
    seed: int
    dim: int = 16
    broken: set[str] = field(default_factory=set)

    def dataset(self, task: TaskKind | None = None) -> list[DatasetItem]:
        return [q.item(task) for q in self.questions]

    def exact(self, qid: str) -> tuple[float, float, float]:
        q = next(q for q in self.questions if q.id == qid)
        return exact_uncertainties(q.profiles, np.stack([self.embeddings[a] for a in q.answers]))


def _unit(rng: np.random.Generator, d: int) -> np.ndarray:
    v = rng.normal(size=d)
    return v / np.linalg.norm(v)


def ambiguity_world(n_questions: int, ambiguous_fraction: float, seed: int, *, dim: int = 16,
                    dominance: float = 0.9) -> SyntheticWorld:
    """A separable ambiguity benchmark.

    Ambiguous questions get 2-4 interpretations, each answered confidently
    but differently. Unambiguous questions get one interpretation; half of
    them are "known" (one dominant answer) and half "unknown" (answers spread
    uniformly), so total uncertainty alone cannot tell them apart from
    ambiguous ones while the aleatoric part can.
    """
    if not 0.0 <= ambiguous_fraction <= 1.0:
        raise ValueError("ambiguous_fraction must be in [0, 1]")
    rng = np.random.default_rng(seed)
    n_amb = int(round(n_questions * ambiguous_fraction))
    flags = np.zeros(n_questions, dtype=bool)
    flags[rng.choice(n_questions, size=n_amb, replace=False)] = True

    questions, embeddings = [], {}
    unknown_toggle = False
    for i, amb in enumerate(flags):
        qid = f"syn-{i:03d}"
        question = f"Synthetic question {i}: which option does item {i} refer to?"
        if amb:
            k = int(rng.integers(2, 5))
            answers = [f"{qid} option {a}" for a in range(k + 1)]
            profiles = np.full((k, k + 1), 0.0)
            for c in range(k):
                profiles[c, c] = dominance
                profiles[c, k] = 1.0 - dominance
            clarifications = [f"{question} (reading {c + 1} of {k})" for c in range(k)]
        else:
            unknown_toggle = not unknown_toggle
            answers = [f"{qid} option {a}" for a in range(4)]
            if unknown_toggle:
                profiles = np.full((1, 4), 0.25)
            else:
                profiles = np.array([[dominance, (1 - dominance) / 3, (1 - dominance) / 3, (1 - dominance) / 3]])
            clarifications = []
        for a in answers:
            embeddings[a] = _unit(rng, dim)
        questions.append(WorldQuestion(qid, question, bool(amb), clarifications, profiles, answers))
    return SyntheticWorld(questions, embeddings, seed, dim)


class SyntheticProvider:
    """In-process OpenAI-compatible provider answering from a :class:`SyntheticWorld`.

    Repeated identical chat requests return successive i.i.d. draws; the
    ``k``-th draw for a given prompt is a pure function of (world seed,
    prompt, k), so a run that issues each prompt's draws in order is
    reproducible.
    """

    def __init__(self, world: SyntheticWorld):
        self.world = world
        self.calls: Counter[str] = Counter()
        self._lock = threading.Lock()
        self._draws: Counter[str] = Counter()
        self._clarify: dict[str, WorldQuestion] = {}
        self._answer: dict[str, tuple[WorldQuestion, np.ndarray]] = {}
        for q in world.questions:
            self._clarify[q.question.strip()] = q
            self._answer[q.question.strip()] = (q, q.raw_profile)
            for c, text in enumerate(q.clarifications):
                self._answer[text.strip()] = (q, q.profiles[c])

    def transport(self) -> httpx.MockTransport:
        def handler(request: httpx.Request) -> httpx.Response:
            status, body = self.handle(request.url.path, json.loads(request.content or b"{}"))
            return httpx.Response(status, json=body)
        return httpx.MockTransport(handler)

    def handle(self, path: str, payload: dict) -> tuple[int, dict]:
        if path.endswith("/embeddings"):
            with self._lock:
                self.calls["embeddings"] += 1
            inputs = payload["input"] if isinstance(payload["input"], list) else [payload["input"]]
            data = [{"object": "embedding", "index": i, "embedding": self._embedding(t).tolist()}
                    for i, t in enumerate(inputs)]
            return 200, {"object": "list", "data": data, "model": payload.get("model"),
                         "usage": {"prompt_tokens": len(inputs), "total_tokens": len(inputs)}}
        if path.endswith("/chat/completions"):
            with self._lock:
                self.calls["chat"] += 1
            messages = payload["messages"]
            system = next((msg["content"] for msg in messages if msg["role"] == "system"), "")
            user = messages[-1]["content"]
            try:
                text = self._reply(system, user)
            except LookupError as exc:
                return 400, {"error": {"message": str(exc), "type": "invalid_request_error"}}
            return 200, {"object": "chat.completion", "model": payload.get("model"),
                         "choices": [{"index": 0, "finish_reason": "stop",
                                      "message": {"role": "assistant", "content": text}}],
                         "usage": {"prompt_tokens": len(user.split()), "completion_tokens": len(text.split())}}
        return 404, {"error": {"message": f"unknown endpoint {path}"}}

    def _embedding(self, text: str) -> np.ndarray:
        if text in self.world.embeddings:
            return self.world.embeddings[text]
        digest = hashlib.sha256(text.encode()).digest()
        return _unit(np.random.default_rng(int.from_bytes(digest[:8], "little")), self.world.dim)

    def _rng(self, key: str) -> np.random.Generator:
        with self._lock:
            k = self._draws[key]
            self._draws[key] += 1
        digest = hashlib.sha256(f"{self.world.seed}|{k}|{key}".encode()).digest()
        return np.random.default_rng(int.from_bytes(digest[:8], "little"))

    def _reply(self, system: str, user: str) -> str:
        if system in {template(f"clarify_{t.value}") for t in TaskKind}:
            return self._clarification(system, user)
        if system == template("judge_correctness"):
            gold = re.search(r"^Ground truth answer: (.*)$", user, re.M).group(1).split("; ")
            answer = re.search(r"^Model generated answer: (.*)$", user, re.M).group(1)
            return "yes" if answer.strip() in {g.strip() for g in gold} else "no"
        if system == template("judge_entailment"):
            first = re.search(r"^First answer: (.*)$", user, re.M).group(1)
            second = re.search(r"^Second answer: (.*)$", user, re.M).group(1)
            return "yes" if first == second else "no"
        question = re.sub(r"^(Question|Q): ", "", user).strip()
        if question not in self._answer:
            raise LookupError(f"synthetic world has no question {question[:60]!r}")
        q, profile = self._answer[question]
        pick = self._rng(f"{system}|{question}").choice(len(q.answers), p=profile)
        marker = "A" if system == template("answer_paraphrase") else "Answer"
        return f"{marker}: {q.answers[pick]}"

    def _clarification(self, system: str, user: str) -> str:
        question = re.sub(r"^(Question|Q): ", "", user).strip()
        if question not in self._clarify:
            raise LookupError(f"synthetic world has no question {question[:60]!r}")
        q = self._clarify[question]
        if q.id in self.world.broken:
            return "I am not sure how to format this."
        marker = "---Rephrasings:" if system == template("clarify_paraphrase") else "---Clarifications:"
        verdict = "The question is ambiguous." if q.clarifications else "The question is clear."
        lines = [f"-{c + 1} {text}" for c, text in enumerate(q.clarifications)] or ["-1 No clarification needed."]
        return f"---Analyses:\n{verdict}\n\n{marker}\n" + "\n".join(lines)


SYNTHETIC_BASE_URL = "http://synthetic.invalid/v1"


def synthetic_config(**overrides) -> RunConfig:
    """Configuration used by the offline benchmark: exact-match clustering, defaults elsewhere."""
    base = dict(target_model="synthetic-target", clarification_model="synthetic-clarifier",
                embedding_model="synthetic-embedder", judge_model="synthetic-judge",
                base_url=SYNTHETIC_BASE_URL, equivalence="exact", task_kind="ambigqa")
    base.update({k: v for k, v in overrides.items() if v is not None})
    return load_config(None, **base)


def synthetic_gateway(provider: SyntheticProvider, cache_root: str | Path) -> LLMGateway:
    client = OpenAIClient(SYNTHETIC_BASE_URL, transport=provider.transport(), sleep=lambda s: None)
    return LLMGateway(client, DiskCache(cache_root))


def synthetic_benchmark(n_questions: int, ambiguous_fraction: float, seed: int, *,
                        config: RunConfig | None = None, run_dir: str | Path | None = None,
                        cache_root: str | Path | None = None) -> tuple[list[DatasetItem], list[EvalRecord]]:
    """Build an ambiguity world, score it through the full pipeline, return items and records."""
    from .pipeline import run_benchmark

    world = ambiguity_world(n_questions, ambiguous_fraction, seed)
    config = config or synthetic_config(seed=seed)
    provider = SyntheticProvider(world)
    items = world.dataset()
    with tempfile.TemporaryDirectory() as tmp:
        gateway = synthetic_gateway(provider, cache_root or Path(tmp) / "cache")
        runs = run_benchmark(items, config, gateway=gateway, run_dir=run_dir or Path(tmp) / "run")
        gateway.close()
    records, _ = eval_records(runs)
    return items, records


def mean_abs_errors(profiles, embeddings, n: int, ms: Sequence[int], seeds: Sequence[int]) -> dict[int, np.ndarray]:
    """Mean |estimate - exact| per component (total, aleatoric, epistemic) for each ``m``."""
    exact = np.asarray(exact_uncertainties(profiles, embeddings))
    out = {}
    for m in ms:
        errs = [np.abs(np.asarray(simulate_and_estimate(profiles, embeddings, n, m, s).as_tuple()) - exact)
                for s in seeds]
        out[m] = np.mean(errs, axis=0)
    return out
