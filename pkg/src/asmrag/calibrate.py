"""Threshold calibration on a labeled validation slice.

The expensive part of a grid sweep is retrieval, and retrieval does not
depend on the thresholds. So each validation function is searched and
alpha-scored exactly once; every (tau_func, tau_file) cell is then pure
arithmetic over the cached alphas and must equal a from-scratch re-scan
bit for bit.

Selection maximizes sample-level F1 subject to a hard function-level
false-positive cap (strict: a row at exactly the cap is infeasible), with
ties broken toward higher precision, then lower tau_func, then lower
tau_file so the choice is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .detector import alpha_for
from .errors import EmptyGrid, NoFeasibleRow
from .kb import KbSnapshot, KnowledgeBase

LABEL_BENIGN = "benign"
LABEL_MALICIOUS = "malicious"


def binary_metrics(tp: int, fp: int, fn: int, tn: int) -> dict[str, float]:
    total = tp + fp + fn + tn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "accuracy": (tp + tn) / total if total else 0.0,
        "precision": precision,
        "recall": recall,
        "f1": f1,
    }


@dataclass(frozen=True)
class ValidationSample:
    """One labeled sample, already filtered and embedded."""

    sample_id: str
    label: str  # LABEL_BENIGN | LABEL_MALICIOUS
    vectors: tuple[np.ndarray, ...]

    def __post_init__(self):
        if self.label not in (LABEL_BENIGN, LABEL_MALICIOUS):
            raise ValueError(f"unknown label {self.label!r}")
        if not self.vectors:
            raise ValueError(f"sample {self.sample_id} has no function vectors")


@dataclass(frozen=True)
class CalibrationRow:
    tau_func: float
    tau_file: float
    f1: float
    precision: float
    recall: float
    func_fpr: float

    def to_json(self) -> dict:
        return {
            "tau_func": self.tau_func,
            "tau_file": self.tau_file,
            "f1": self.f1,
            "precision": self.precision,
            "recall": self.recall,
            "func_fpr": self.func_fpr,
        }


@dataclass(frozen=True)
class CalibrationReport:
    rows: tuple[CalibrationRow, ...]
    selected: CalibrationRow
    fpr_cap: float
    k: int

    def to_json(self) -> dict:
        return {
            "fpr_cap": self.fpr_cap,
            "k": self.k,
            "selected": self.selected.to_json(),
            "rows": [r.to_json() for r in self.rows],
        }


def compute_alphas(
    validation: Sequence[ValidationSample],
    kb: KnowledgeBase | KbSnapshot,
    k: int,
) -> list[list[float]]:
    """One retrieval pass: per-sample list of per-function alphas."""
    snapshot = kb.snapshot() if isinstance(kb, KnowledgeBase) else kb
    out = []
    for sample in validation:
        out.append([
            alpha_for(snapshot.search(v, k, query_ref=sample.sample_id), snapshot)
            for v in sample.vectors
        ])
    return out


def grid_search(
    validation: Sequence[ValidationSample],
    grid_func: Sequence[float],
    grid_file: Sequence[float],
    fpr_cap: float,
    kb: KnowledgeBase | KbSnapshot,
    k: int,
) -> CalibrationReport:
    if not grid_func or not grid_file:
        raise EmptyGrid("calibration grid is empty")
    if not validation:
        raise ValueError("validation set is empty")
    alphas = compute_alphas(validation, kb, k)
    labels = [s.label == LABEL_MALICIOUS for s in validation]
    benign_func_total = sum(
        len(a) for a, mal in zip(alphas, labels) if not mal
    )
    rows = []
    for tau_func in grid_func:
        omegas = [
            sum(1 for a in sample_alphas if a > tau_func) / len(sample_alphas)
            for sample_alphas in alphas
        ]
        benign_flagged = sum(
            sum(1 for a in sample_alphas if a > tau_func)
            for sample_alphas, mal in zip(alphas, labels) if not mal
        )
        func_fpr = benign_flagged / benign_func_total if benign_func_total else 0.0
        for tau_file in grid_file:
            tp = fp = fn = tn = 0
            for omega, mal in zip(omegas, labels):
                predicted = omega > tau_file
                if predicted and mal:
                    tp += 1
                elif predicted and not mal:
                    fp += 1
                elif not predicted and mal:
                    fn += 1
                else:
                    tn += 1
            m = binary_metrics(tp, fp, fn, tn)
            rows.append(CalibrationRow(
                tau_func=float(tau_func), tau_file=float(tau_file),
                f1=m["f1"], precision=m["precision"], recall=m["recall"],
                func_fpr=func_fpr,
            ))
    feasible = [r for r in rows if r.func_fpr < fpr_cap]
    if not feasible:
        raise NoFeasibleRow(
            f"no grid row keeps function-level FPR below {fpr_cap}"
        )
    selected = max(
        feasible,
        key=lambda r: (r.f1, r.precision, -r.tau_func, -r.tau_file),
    )
    return CalibrationReport(
        rows=tuple(rows), selected=selected, fpr_cap=fpr_cap, k=k,
    )
