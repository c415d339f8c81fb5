"""Prompt templates and parsers for clarification, answering and judging."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from ..errors import JudgeParseError, ParseError

NO_CLARIFICATION = "no clarification needed"


class TaskKind(str, enum.Enum):
    AMBIGQA = "ambigqa"
    AMBIGINST = "ambiginst"
    PARAPHRASE = "paraphrase"

    @classmethod
    def parse(cls, value: "str | TaskKind") -> "TaskKind":
        if isinstance(value, TaskKind):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        aliases = {"triviaqa": cls.PARAPHRASE, "nq": cls.PARAPHRASE, "naturalquestions": cls.PARAPHRASE}
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown task kind {value!r}; expected one of "
                             f"{[k.value for k in cls]} (or triviaqa/nq)") from None


@lru_cache(maxsize=None)
def template(name: str) -> str:
    return resources.files(__package__).joinpath(f"{name}.txt").read_text(encoding="utf-8").strip()


def clarification_prompt(question: str, task: TaskKind) -> tuple[str, str]:
    """(system, user) prompt pair asking the clarification model for rewrites."""
    task = TaskKind.parse(task)
    if task is TaskKind.AMBIGINST:
        return template("clarify_ambiginst"), question.strip()
    return template(f"clarify_{task.value}"), f"Question: {question.strip()}"


def answer_prompt(question: str, task: TaskKind) -> tuple[str, str]:
    task = TaskKind.parse(task)
    if task is TaskKind.AMBIGINST:
        return template("answer_ambiginst"), question.strip()
    if task is TaskKind.PARAPHRASE:
        return template("answer_paraphrase"), f"Q: {question.strip()}"
    return template("answer_ambigqa"), f"Question: {question.strip()}"


def correctness_prompt(question: str, gold_answers: list[str], model_answer: str) -> tuple[str, str]:
    gold = "; ".join(a.strip() for a in gold_answers)
    user = (f"Question: {question.strip()}\n"
            f"Ground truth answer: {gold}\n"
            f"Model generated answer: {model_answer.strip()}")
    return template("judge_correctness"), user


def entailment_prompt(question: str, premise: str, hypothesis: str) -> tuple[str, str]:
    user = f"Question: {question.strip()}\nFirst answer: {premise.strip()}\nSecond answer: {hypothesis.strip()}"
    return template("judge_entailment"), user


@dataclass(frozen=True)
class ParsedClarifications:
    clarifications: list[str]
    raw_analysis: str
    needed: bool


_MARKERS = {
    TaskKind.AMBIGQA: ("---Clarifications:",),
    TaskKind.AMBIGINST: ("---Clarifications:",),
    TaskKind.PARAPHRASE: ("---Rephrasings:", "---Clarifications:"),
}
_ITEM = re.compile(r"^\s*-\s*(\d+)\s*[.):]?\s*(.*\S)\s*$")
_ANALYSES = "---Analyses:"


def parse_clarifications(text: str, question: str, task: TaskKind, max_items: int = 10) -> ParsedClarifications:
    """Parse the numbered ``-1 ...``, ``-2 ...`` list after the clarification marker.

    A lone "No clarification needed." collapses to the original question as the
    only clarification. More than ``max_items`` entries are truncated.
    """
    task = TaskKind.parse(task)
    pos, marker = -1, ""
    for candidate in _MARKERS[task]:
        pos = text.find(candidate)
        if pos >= 0:
            marker = candidate
            break
    if pos < 0:
        raise ParseError(f"no {_MARKERS[task][0]!r} block in clarification output", text)

    head, body = text[:pos], text[pos + len(marker):]
    a = head.find(_ANALYSES)
    analysis = (head[a + len(_ANALYSES):] if a >= 0 else head).strip()

    items = []
    for line in body.splitlines():
        match = _ITEM.match(line)
        if match:
            items.append(match.group(2).strip())
        elif line.strip().startswith("---"):
            break
    if not items:
        raise ParseError("clarification block contains no numbered items", text)

    if items[0].lower().rstrip(".").strip() == NO_CLARIFICATION:
        return ParsedClarifications([question], analysis, needed=False)
    items = [c for c in items if c.lower().rstrip(".").strip() != NO_CLARIFICATION]
    return ParsedClarifications(items[:max_items], analysis, needed=True)


_ANSWER_MARK = re.compile(r"^[ \t]*(?:\*\*)?(Answer|A)(?:\*\*)?[ \t]*:(?:\*\*)?", re.MULTILINE)


def parse_answer(text: str, task: TaskKind) -> tuple[str, bool]:
    """Extract the final answer; returns ``(answer, warned)``.

    Takes whatever follows the last ``Answer:`` (or ``A:``) marker, which
    skips a preceding ``Reasoning:`` block. Without a marker the whole trimmed
    response is kept and ``warned`` is True.
    """
    matches = list(_ANSWER_MARK.finditer(text))
    if not matches:
        return text.strip(), True
    return text[matches[-1].end():].strip(), False


def parse_yes_no(text: str) -> bool:
    word = text.strip().lower().rstrip(".!").strip()
    if word == "yes":
        return True
    if word == "no":
        return False
    raise JudgeParseError(f"expected 'yes' or 'no' from judge, got {text.strip()[:80]!r}", text)
