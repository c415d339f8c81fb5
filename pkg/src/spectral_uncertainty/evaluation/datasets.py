"""Line-delimited JSON datasets and LLM-judged correctness labels."""

from __future__ import annotations

import enum
import json
import random
from dataclasses import dataclass
from pathlib import Path

from ..errors import DatasetError
from ..gateway import ChatRequest
from ..prompts import TaskKind, correctness_prompt, parse_yes_no


class LabelKind(str, enum.Enum):
    AMBIGUITY = "ambiguity"
    CORRECTNESS = "correctness"


@dataclass(frozen=True)
class DatasetItem:
    id: str
    question: str
    label_kind: LabelKind
    ambiguous: bool | None = None
    gold_answers: tuple[str, ...] | None = None
    task_kind: TaskKind | None = None

    def to_dict(self) -> dict:
        out: dict = {"id": self.id, "question": self.question}
        if self.ambiguous is not None:
            out["ambiguous"] = self.ambiguous
        if self.gold_answers is not None:
            out["gold_answers"] = list(self.gold_answers)
        if self.task_kind is not None:
            out["task_kind"] = self.task_kind.value
        return out


def parse_item(obj, where: str = "record") -> DatasetItem:
    if not isinstance(obj, dict):
        raise DatasetError(f"{where}: expected a JSON object")
    for key in ("id", "question"):
        if key not in obj:
            raise DatasetError(f"{where}: missing required field {key!r}")
    if not isinstance(obj["id"], str) or not obj["id"]:
        raise DatasetError(f"{where}: 'id' must be a non-empty string")
    if not isinstance(obj["question"], str) or not obj["question"].strip():
        raise DatasetError(f"{where}: 'question' must be a non-empty string")

    has_amb, has_gold = "ambiguous" in obj, "gold_answers" in obj
    if has_amb == has_gold:
        raise DatasetError(f"{where}: exactly one of 'ambiguous' or 'gold_answers' is required")
    task = None
    if obj.get("task_kind") is not None:
        try:
            task = TaskKind.parse(obj["task_kind"])
        except ValueError as exc:
            raise DatasetError(f"{where}: {exc}") from None
    if has_amb:
        if not isinstance(obj["ambiguous"], bool):
            raise DatasetError(f"{where}: 'ambiguous' must be true or false")
        return DatasetItem(obj["id"], obj["question"], LabelKind.AMBIGUITY, ambiguous=obj["ambiguous"], task_kind=task)
    gold = obj["gold_answers"]
    if not isinstance(gold, list) or not gold or not all(isinstance(g, str) for g in gold):
        raise DatasetError(f"{where}: 'gold_answers' must be a non-empty array of strings")
    return DatasetItem(obj["id"], obj["question"], LabelKind.CORRECTNESS, gold_answers=tuple(gold), task_kind=task)


def ingest_dataset(path: str | Path, format: str = "jsonl", *, subsample: int | None = None,
                   seed: int = 0) -> list[DatasetItem]:
    """Load and validate a dataset; optionally keep a seeded random subset in file order."""
    if format != "jsonl":
        raise DatasetError(f"unsupported dataset format {format!r} (only 'jsonl')")
    items: list[DatasetItem] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}, line {lineno}: invalid JSON ({exc.msg})") from None
            item = parse_item(obj, f"{path}, line {lineno}")
            if item.id in seen:
                raise DatasetError(f"{path}, line {lineno}: duplicate id {item.id!r} (first seen on line {seen[item.id]})")
            seen[item.id] = lineno
            items.append(item)
    if subsample is not None and subsample < len(items):
        keep = sorted(random.Random(seed).sample(range(len(items)), subsample))
        items = [items[i] for i in keep]
    return items


def write_dataset(items, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


def judge_correctness(question: str, gold_answers, model_answer: str, *, gateway, model: str,
                      max_tokens: int = 8) -> bool:
    """Ask the judge model whether ``model_answer`` matches the ground truth."""
    system, user = correctness_prompt(question, list(gold_answers), model_answer)
    reply = gateway.chat(ChatRequest(model, system, user, temperature=0.0, max_tokens=max_tokens))
    return parse_yes_no(reply)
