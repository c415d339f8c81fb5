"""Run configuration: models, endpoint, sampling constants, kernel, concurrency."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError
from .kernels import KernelFamily, KernelSpec
from .prompts import TaskKind

METHODS = ("spectral", "pke", "semantic_entropy", "ice")
EQUIVALENCE = ("llm", "exact")

DEFAULT_GAMMA = 1.0
AMBIGINST_GAMMA = 100.0


@dataclass
class RunConfig:
    """Everything that determines a run. Serialized verbatim into each run directory.

    ``gamma=None`` resolves to 100 for AmbigInst-style tasks (compact answer
    embeddings) and 1 otherwise.
    """

    target_model: str = "gpt-4o-mini"
    clarification_model: str = "gpt-4o"
    embedding_model: str = "text-embedding-3-small"
    judge_model: str = "gpt-4.1"
    equivalence_model: str | None = None

    base_url: str = "https://api.openai.com/v1"
    embedding_base_url: str | None = None
    api_key_env: str = "OPENAI_API_KEY"
    request_timeout: float = 60.0
    max_in_flight: int = 8
    rate_limit: float | None = None

    m: int = 10
    temperature: float = 0.5
    clarification_temperature: float = 0.0
    best_effort_temperature: float = 0.1
    max_clarifications: int = 10
    answer_max_tokens: int = 256
    clarification_max_tokens: int = 1024
    judge_max_tokens: int = 8

    kernel: str = "rbf"
    gamma: float | None = None

    task_kind: str = "ambigqa"
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    equivalence: str = "llm"

    question_concurrency: int = 4
    cache_root: str = ".cache/spectral_uq"
    runs_root: str = "runs"
    seed: int = 0
    dataset: str | None = None
    subsample: int | None = None

    @property
    def task(self) -> TaskKind:
        return TaskKind.parse(self.task_kind)

    def kernel_spec(self, task: TaskKind | None = None) -> KernelSpec:
        task = task or self.task
        gamma = self.gamma
        if gamma is None:
            gamma = AMBIGINST_GAMMA if task is TaskKind.AMBIGINST else DEFAULT_GAMMA
        return KernelSpec(KernelFamily(self.kernel), gamma)

    def problems(self) -> list[str]:
        """Every invalid field, so users can fix them all in one go."""
        out = []
        for name in ("target_model", "clarification_model", "embedding_model", "judge_model", "base_url"):
            if not isinstance(getattr(self, name), str) or not getattr(self, name).strip():
                out.append(f"{name}: must be a non-empty string")
        if not isinstance(self.m, int) or self.m < 1:
            out.append(f"m: must be an integer >= 1, got {self.m!r}")
        for name in ("temperature", "clarification_temperature", "best_effort_temperature"):
            t = getattr(self, name)
            if not isinstance(t, (int, float)) or not 0.0 <= t <= 2.0:
                out.append(f"{name}: must be in [0, 2], got {t!r}")
        if self.task_kind == "" or not _ok(TaskKind.parse, self.task_kind):
            out.append(f"task_kind: unknown value {self.task_kind!r}")
        if self.kernel not in {k.value for k in KernelFamily}:
            out.append(f"kernel: must be one of {[k.value for k in KernelFamily]}, got {self.kernel!r}")
        if self.gamma is not None and (not isinstance(self.gamma, (int, float)) or not self.gamma > 0):
            out.append(f"gamma: must be positive, got {self.gamma!r}")
        if not isinstance(self.max_clarifications, int) or not 1 <= self.max_clarifications <= 10:
            out.append(f"max_clarifications: must be in [1, 10], got {self.max_clarifications!r}")
        for name in ("answer_max_tokens", "clarification_max_tokens", "judge_max_tokens",
                     "max_in_flight", "question_concurrency"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                out.append(f"{name}: must be an integer >= 1, got {v!r}")
        if not isinstance(self.request_timeout, (int, float)) or self.request_timeout <= 0:
            out.append(f"request_timeout: must be positive, got {self.request_timeout!r}")
        if self.rate_limit is not None and (not isinstance(self.rate_limit, (int, float)) or self.rate_limit <= 0):
            out.append(f"rate_limit: must be positive requests/second, got {self.rate_limit!r}")
        bad = [x for x in self.methods if x not in METHODS]
        if bad or not self.methods:
            out.append(f"methods: must be a non-empty subset of {list(METHODS)}, got {self.methods!r}")
        if self.equivalence not in EQUIVALENCE:
            out.append(f"equivalence: must be one of {list(EQUIVALENCE)}, got {self.equivalence!r}")
        if self.subsample is not None and (not isinstance(self.subsample, int) or self.subsample < 1):
            out.append(f"subsample: must be a positive integer, got {self.subsample!r}")
        if not isinstance(self.seed, int):
            out.append(f"seed: must be an integer, got {self.seed!r}")
        return out

    def validate(self) -> "RunConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def api_key(self) -> str | None:
        return os.environ.get(self.api_key_env)

    def snapshot(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.snapshot(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _ok(fn, value) -> bool:
    try:
        fn(value)
    except ValueError:
        return False
    return True


def read_config_file(path: str | os.PathLike) -> dict[str, Any]:
    """Raw mapping from a YAML/JSON config file, not yet validated."""
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return data


def load_config(path: str | os.PathLike | None = None, **overrides) -> RunConfig:
    """Read a YAML/JSON config file and apply non-None overrides; unknown keys are errors."""
    data = read_config_file(path) if path is not None else {}
    data.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError([f"{k}: unknown configuration field" for k in unknown])
    if isinstance(data.get("methods"), str):
        data["methods"] = [s.strip() for s in data["methods"].split(",") if s.strip()]
    return RunConfig(**data).validate()
