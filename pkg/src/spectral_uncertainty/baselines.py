"""Cluster-based comparison methods: semantic entropy and input clarification ensembling.

Predictive kernel entropy needs nothing new: it is
:func:`spectral_uncertainty.spectral.vne_of_samples` over answers to the
unclarified question.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import UsageError
from .gateway import ChatRequest
from .prompts import entailment_prompt, parse_yes_no


class EquivalenceOracle:
    """Decides whether two answers to ``question`` mean the same thing.

    Identical strings short-circuit to True. Otherwise both entailment
    directions are queried and AND-ed, and the verdict is memoized per
    unordered pair.
    """

    def __init__(self):
        self._memo: dict[tuple[str, str, str], bool] = {}
        self._lock = threading.Lock()

    def entails(self, premise: str, hypothesis: str, question: str) -> bool:
        raise NotImplementedError

    def __call__(self, a: str, b: str, question: str = "") -> bool:
        if a == b:
            return True
        key = (question, *sorted((a, b)))
        with self._lock:
            if key in self._memo:
                return self._memo[key]
        verdict = self.entails(a, b, question) and self.entails(b, a, question)
        with self._lock:
            self._memo[key] = verdict
        return verdict


class ExactMatchOracle(EquivalenceOracle):
    """Only identical strings are equivalent."""

    def entails(self, premise: str, hypothesis: str, question: str) -> bool:
        return premise == hypothesis


class LLMEntailmentOracle(EquivalenceOracle):
    """Bidirectional entailment judged by a chat model through the gateway.

    Stands in for the NLI model used by the original baselines; unparseable
    judge replies count as "not equivalent".
    """

    def __init__(self, gateway, model: str, max_tokens: int = 8):
        super().__init__()
        self.gateway = gateway
        self.model = model
        self.max_tokens = max_tokens
        self.parse_failures = 0

    def entails(self, premise: str, hypothesis: str, question: str) -> bool:
        system, user = entailment_prompt(question, premise, hypothesis)
        reply = self.gateway.chat(ChatRequest(self.model, system, user, temperature=0.0, max_tokens=self.max_tokens))
        try:
            return parse_yes_no(reply)
        except ValueError:
            self.parse_failures += 1
            return False


@dataclass(frozen=True)
class ClusterDistribution:
    labels: list[int]
    probabilities: np.ndarray

    @property
    def n_clusters(self) -> int:
        return len(self.probabilities)


def _greedy_labels(answers: Sequence[str], oracle: EquivalenceOracle, question: str) -> list[int]:
    reps: list[str] = []
    labels = []
    for ans in answers:
        for k, rep in enumerate(reps):
            if oracle(ans, rep, question):
                labels.append(k)
                break
        else:
            labels.append(len(reps))
            reps.append(ans)
    return labels


def cluster_answers(answers: Sequence[str], oracle: EquivalenceOracle, question: str = "") -> ClusterDistribution:
    """Greedy single pass: join the first cluster whose founder is equivalent, else found one."""
    if len(answers) == 0:
        raise UsageError("cluster_answers needs at least one answer")
    labels = _greedy_labels(answers, oracle, question)
    counts = np.bincount(labels).astype(np.float64)
    return ClusterDistribution(labels, counts / counts.sum())


def shannon_entropy(p: ClusterDistribution | Sequence[float]) -> float:
    probs = p.probabilities if isinstance(p, ClusterDistribution) else np.asarray(p, dtype=np.float64)
    probs = probs[probs > 0]
    return float(-np.sum(probs * np.log(probs)))


def semantic_entropy(answers: Sequence[str], oracle: EquivalenceOracle, question: str = "") -> float:
    return shannon_entropy(cluster_answers(answers, oracle, question))


def ice_decompose(
    answers_by_clarification: Sequence[Sequence[str]],
    oracle: EquivalenceOracle,
    question: str = "",
) -> tuple[float, float, float]:
    """Shannon-entropy decomposition over clarifications: ``(total, aleatoric, epistemic)``.

    All ``n * m`` answers are clustered once so that every clarification's
    frequencies live on the same label space.
    """
    groups = [list(g) for g in answers_by_clarification]
    if not groups:
        raise UsageError("ice_decompose needs at least one clarification")
    sizes = {len(g) for g in groups}
    if len(sizes) != 1 or 0 in sizes:
        raise UsageError(f"every clarification needs the same non-zero number of answers, got {sorted(sizes)}")
    m = sizes.pop()
    pooled = [a for g in groups for a in g]
    labels = np.asarray(_greedy_labels(pooled, oracle, question)).reshape(len(groups), m)
    k = int(labels.max()) + 1

    per_group = np.stack([np.bincount(row, minlength=k) / m for row in labels])
    marginal = np.bincount(labels.ravel(), minlength=k) / labels.size
    epistemic = math.fsum(shannon_entropy(p) for p in per_group) / len(groups)
    total = shannon_entropy(marginal)
    return total, total - epistemic, epistemic
