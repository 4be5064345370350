"""Corpus handling, leakage-safe splits, and end-to-end metrics.

Splits are defined by first-seen date only and validated for disjointness
up front, so a sample can never inform the KB it is later tested against.
The leave-one-optimization-out split stresses robustness to compiler
settings instead of time: every record at the held-out level moves to the
test side, all families included.

``evaluate`` runs the full scan pipeline per test sample and reports
sample-level detection metrics, per-family attribution (macro and
support-weighted aggregates both, labeled, since either convention is
defensible), a function-level recall@k curve, and detection F1 across
equal-count temporal quartiles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Sequence

import numpy as np

from .calibrate import binary_metrics
from .detector import (
    Thresholds,
    SampleVerdict,
    VERDICT_MALICIOUS,
    recall_at_k,
    scan_sample,
)
from .embedding import ProviderConfig, embed_batch
from .errors import MissingDate, MissingFamily, MissingOptLevel, OverlappingWindows
from .ingest import CanonFunction, content_hash_of, render_text
from .kb import MALICIOUS, BENIGN, KbSnapshot, KnowledgeBase
from .libfilter import Blocklist

OPT_LEVELS = ("O0", "O1", "O2", "O3", "Os")


@dataclass(frozen=True)
class CorpusRecord:
    sample_id: str
    functions: tuple[CanonFunction, ...]
    label: str  # "benign" | "malicious"
    family: str | None = None
    first_seen: date | None = None
    opt_level: str | None = None
    compiler: str | None = None

    def __post_init__(self):
        if self.label == "malicious" and not self.family:
            raise MissingFamily(f"malicious record {self.sample_id} has no family")
        if self.opt_level is not None and self.opt_level not in OPT_LEVELS:
            raise ValueError(f"unknown opt level {self.opt_level!r}")


def write_corpus(records: Sequence[CorpusRecord], path: str | Path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps({
                "sample_id": r.sample_id,
                "label": r.label,
                "family": r.family,
                "first_seen": r.first_seen.isoformat() if r.first_seen else None,
                "opt_level": r.opt_level,
                "compiler": r.compiler,
                "functions": [
                    {"name": f.name, "address": f"0x{f.start_address:x}",
                     "lines": list(f.lines)}
                    for f in r.functions
                ],
            }, sort_keys=True) + "\n")


def read_corpus(path: str | Path) -> list[CorpusRecord]:
    records = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        funcs = tuple(
            CanonFunction(
                sample_id=rec["sample_id"],
                name=f["name"],
                start_address=int(f["address"], 16),
                lines=tuple(f["lines"]),
                content_hash=content_hash_of("\n".join(f["lines"])),
                source_line_count=len(f["lines"]),
            )
            for f in rec["functions"]
        )
        records.append(CorpusRecord(
            sample_id=rec["sample_id"],
            functions=funcs,
            label=rec["label"],
            family=rec.get("family"),
            first_seen=date.fromisoformat(rec["first_seen"]) if rec.get("first_seen") else None,
            opt_level=rec.get("opt_level"),
            compiler=rec.get("compiler"),
        ))
    return records


# -- splits ------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    """KB takes first_seen < kb_cutoff, validation the inclusive window,
    test first_seen >= test_start."""

    kb_cutoff: date = date(2022, 6, 1)
    val_start: date = date(2022, 6, 1)
    val_end: date = date(2023, 5, 31)
    test_start: date = date(2023, 6, 1)

    def __post_init__(self):
        if self.val_start > self.val_end:
            raise ValueError("validation window is inverted")
        if self.val_start < self.kb_cutoff:
            raise OverlappingWindows("validation window reaches into the KB window")
        if self.val_end >= self.test_start:
            raise OverlappingWindows("validation window reaches into the test window")
        if self.test_start < self.kb_cutoff:
            raise OverlappingWindows("test window reaches into the KB window")


@dataclass(frozen=True)
class SplitResult:
    kb: tuple[CorpusRecord, ...]
    val: tuple[CorpusRecord, ...]
    test: tuple[CorpusRecord, ...]
    unassigned: tuple[CorpusRecord, ...]


def chronological_split(records: Sequence[CorpusRecord], spec: SplitSpec) -> SplitResult:
    kb, val, test, unassigned = [], [], [], []
    for r in records:
        if r.first_seen is None:
            raise MissingDate(f"record {r.sample_id} has no first_seen date")
        if r.first_seen < spec.kb_cutoff:
            kb.append(r)
        elif spec.val_start <= r.first_seen <= spec.val_end:
            val.append(r)
        elif r.first_seen >= spec.test_start:
            test.append(r)
        else:
            unassigned.append(r)
    return SplitResult(tuple(kb), tuple(val), tuple(test), tuple(unassigned))


def loo_opt_split(
    src: Sequence[CorpusRecord],
    held_out: str,
    wild_kb: Sequence[CorpusRecord] = (),
) -> tuple[list[CorpusRecord], list[CorpusRecord]]:
    """KB side = wild base plus every non-held-out recompilation; test side
    = exactly the held-out level."""
    if held_out not in OPT_LEVELS:
        raise ValueError(f"unknown opt level {held_out!r}")
    kb_side = list(wild_kb)
    test_side = []
    for r in src:
        if r.opt_level is None:
            raise MissingOptLevel(f"record {r.sample_id} has no opt_level")
        (test_side if r.opt_level == held_out else kb_side).append(r)
    return kb_side, test_side


# -- KB and validation construction ------------------------------------------

def build_kb_from_records(
    records: Sequence[CorpusRecord],
    cfg: ProviderConfig,
) -> KnowledgeBase:
    kb = KnowledgeBase(cfg.dim)
    texts, owners = [], []
    for r in records:
        for f in r.functions:
            texts.append(render_text(f))
            owners.append((r, f))
    if texts:
        vectors = embed_batch(texts, cfg)
        for (r, f), v in zip(owners, vectors):
            label = MALICIOUS if r.label == "malicious" else BENIGN
            kb.insert(v, label, r.family, r.sample_id, f.name,
                      first_seen=r.first_seen, lines=f.lines)
    return kb


# -- evaluation --------------------------------------------------------------

@dataclass
class EvalReport:
    samples_total: int
    detection: dict
    func_fpr: float
    attribution: dict
    recall_curve: dict[int, float]
    drift_quartiles: list[dict]
    thresholds: Thresholds
    verdicts: list[SampleVerdict] = field(repr=False, default_factory=list)

    def to_json(self) -> dict:
        return {
            "samples_total": self.samples_total,
            "detection": self.detection,
            "func_fpr": self.func_fpr,
            "attribution": self.attribution,
            "recall_curve": {str(k): v for k, v in sorted(self.recall_curve.items())},
            "drift_quartiles": self.drift_quartiles,
            "thresholds": {
                "tau_func": self.thresholds.tau_func,
                "tau_file": self.thresholds.tau_file,
                "k": self.thresholds.k,
            },
        }


def _attribution_metrics(pairs: list[tuple[str, str]]) -> dict:
    """pairs = (true_family, predicted_family) over truly-malicious samples
    that were flagged malicious."""
    families = sorted({t for t, _ in pairs} | {p for _, p in pairs})
    per_family = {}
    for fam in families:
        tp = sum(1 for t, p in pairs if t == fam and p == fam)
        fp = sum(1 for t, p in pairs if t != fam and p == fam)
        fn = sum(1 for t, p in pairs if t == fam and p != fam)
        m = binary_metrics(tp, fp, fn, 0)
        per_family[fam] = {
            "precision": m["precision"], "recall": m["recall"], "f1": m["f1"],
            "support": tp + fn,
        }
    supported = {f: v for f, v in per_family.items() if v["support"] > 0}
    total_support = sum(v["support"] for v in supported.values())
    macro_f1 = (
        sum(v["f1"] for v in supported.values()) / len(supported) if supported else 0.0
    )
    weighted_f1 = (
        sum(v["f1"] * v["support"] for v in supported.values()) / total_support
        if total_support else 0.0
    )
    correct = sum(1 for t, p in pairs if t == p)
    return {
        "per_family": per_family,
        "macro_f1": macro_f1,
        "weighted_f1": weighted_f1,
        "attributed_count": len(pairs),
        "correct_count": correct,
        "accuracy": correct / len(pairs) if pairs else 0.0,
    }


def evaluate(
    test_records: Sequence[CorpusRecord],
    kb: KnowledgeBase | KbSnapshot,
    thresholds: Thresholds,
    provider: ProviderConfig,
    lib: object | None = None,
    blocklist: Blocklist | None = None,
    tau_lib: float = 0.95,
    recall_ks: Sequence[int] = (1, 5, 10, 20, 50),
) -> EvalReport:
    if not test_records:
        raise ValueError("test set is empty")
    snapshot = kb.snapshot() if isinstance(kb, KnowledgeBase) else kb

    verdicts: list[SampleVerdict] = []
    vectors_per_record: list[list[np.ndarray]] = []
    for r in test_records:
        vectors = embed_batch([render_text(f) for f in r.functions], provider)
        vectors_per_record.append(vectors)
        verdicts.append(scan_sample(
            r.functions, snapshot, thresholds, provider,
            lib=lib, blocklist=blocklist, tau_lib=tau_lib, vectors=vectors,
        ))

    tp = fp = fn = tn = 0
    for r, v in zip(test_records, verdicts):
        truly = r.label == "malicious"
        predicted = v.verdict == VERDICT_MALICIOUS
        if predicted and truly:
            tp += 1
        elif predicted and not truly:
            fp += 1
        elif not predicted and truly:
            fn += 1
        else:
            tn += 1
    detection = binary_metrics(tp, fp, fn, tn)
    detection["confusion"] = {"tp": tp, "fp": fp, "fn": fn, "tn": tn}

    benign_funcs = benign_flagged = 0
    for r, v in zip(test_records, verdicts):
        if r.label == "benign":
            benign_funcs += len(v.function_scores)
            benign_flagged += sum(1 for s in v.function_scores if s.flagged)
    func_fpr = benign_flagged / benign_funcs if benign_funcs else 0.0

    pairs = [
        (r.family, v.c_best)
        for r, v in zip(test_records, verdicts)
        if r.label == "malicious" and v.verdict == VERDICT_MALICIOUS and v.c_best
    ]
    attribution = _attribution_metrics(pairs)

    # one search per malicious-sample function at max k; smaller k values
    # are prefixes of the same ranking
    k_max = max(recall_ks)
    family_entries: dict[str, set[int]] = {}
    for e in snapshot.entries:
        if e.family:
            family_entries.setdefault(e.family, set()).add(e.entry_id)
    hits = {k: 0 for k in recall_ks}
    probed = 0
    for r, vectors in zip(test_records, vectors_per_record):
        if r.label != "malicious":
            continue
        relevant = family_entries.get(r.family, set())
        for v in vectors:
            probed += 1
            ranked = [eid for eid, _ in snapshot.search(v, k_max).neighbors]
            for k in recall_ks:
                hits[k] += recall_at_k(ranked, relevant, k)
    recall_curve = {
        k: hits[k] / probed if probed else 0.0 for k in recall_ks
    }

    drift = []
    dated = [
        (r, v) for r, v in zip(test_records, verdicts) if r.first_seen is not None
    ]
    dated.sort(key=lambda rv: (rv[0].first_seen, rv[0].sample_id))
    if dated:
        for part in np.array_split(np.arange(len(dated)), 4):
            if len(part) == 0:
                continue
            chunk = [dated[i] for i in part]
            qtp = sum(1 for r, v in chunk
                      if r.label == "malicious" and v.verdict == VERDICT_MALICIOUS)
            qfp = sum(1 for r, v in chunk
                      if r.label == "benign" and v.verdict == VERDICT_MALICIOUS)
            qfn = sum(1 for r, v in chunk
                      if r.label == "malicious" and v.verdict != VERDICT_MALICIOUS)
            qtn = len(chunk) - qtp - qfp - qfn
            drift.append({
                "start": chunk[0][0].first_seen.isoformat(),
                "end": chunk[-1][0].first_seen.isoformat(),
                "count": len(chunk),
                "f1": binary_metrics(qtp, qfp, qfn, qtn)["f1"],
            })

    return EvalReport(
        samples_total=len(test_records),
        detection=detection,
        func_fpr=func_fpr,
        attribution=attribution,
        recall_curve=recall_curve,
        drift_quartiles=drift,
        thresholds=thresholds,
        verdicts=verdicts,
    )
