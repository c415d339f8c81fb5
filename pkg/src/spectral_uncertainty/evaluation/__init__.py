"""Datasets, labels, ranking metrics and report export."""

from .datasets import DatasetItem, LabelKind, ingest_dataset, judge_correctness, parse_item, write_dataset
from .metrics import aupr, auroc
from .report import EvalRecord, default_methods, eval_records, export_report, metrics_table

__all__ = [
    "DatasetItem",
    "EvalRecord",
    "LabelKind",
    "aupr",
    "auroc",
    "default_methods",
    "eval_records",
    "export_report",
    "ingest_dataset",
    "judge_correctness",
    "metrics_table",
    "parse_item",
    "write_dataset",
]
