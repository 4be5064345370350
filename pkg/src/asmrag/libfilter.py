"""Library-noise prefilter: drop statically linked runtime and library code
before detection ever sees it.

Two stages, cheap first. A blocklist of canonical content hashes catches
byte-identical boilerplate with no vector search at all. Survivors are
compared against a benign library index; a function is discarded when its
best library similarity strictly exceeds ``tau_lib``. Equality at the
threshold keeps the function: the filter only removes what it is sure
about, since anything dropped here is invisible to every later stage.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .embedding import ProviderConfig, embed_batch
from .errors import EmptyGrid, EmptyKb, EmptyLibIndex
from .ingest import CanonFunction, render_text
from .kb import BENIGN, KbSnapshot, KnowledgeBase


@dataclass(frozen=True)
class FilterDecision:
    """Per-function audit record of what the prefilter did and why."""

    sample_id: str
    function_name: str
    blocklisted: bool
    best_lib_sim: float | None  # None when blocklisted: no search was run
    best_lib_entry: int | None
    filtered: bool


class Blocklist:
    """Set of canonical content hashes to drop unconditionally."""

    def __init__(self, hashes: Iterable[str] = ()):
        self._hashes = {h.strip().lower() for h in hashes if h.strip()}

    def __contains__(self, content_hash: str) -> bool:
        return content_hash.lower() in self._hashes

    def __len__(self) -> int:
        return len(self._hashes)

    def add(self, content_hash: str) -> None:
        self._hashes.add(content_hash.lower())

    @classmethod
    def from_functions(cls, funcs: Iterable[CanonFunction]) -> "Blocklist":
        return cls(f.content_hash for f in funcs)

    @classmethod
    def load(cls, path: str | Path) -> "Blocklist":
        return cls(Path(path).read_text().splitlines())

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(f"{h}\n" for h in sorted(self._hashes)))


def build_lib_index(funcs: Sequence[CanonFunction], cfg: ProviderConfig) -> KnowledgeBase:
    """Embed known library functions into a benign-only index."""
    vectors = embed_batch([render_text(f) for f in funcs], cfg)
    kb = KnowledgeBase(cfg.dim)
    for f, v in zip(funcs, vectors):
        kb.insert(v, BENIGN, None, f.sample_id, f.name, lines=f.lines)
    return kb


def phi(
    vector: np.ndarray,
    lib: KnowledgeBase | KbSnapshot,
    tau_lib: float,
) -> tuple[int, float, int]:
    """Library indicator: (1 iff best lib sim > tau_lib, best sim, best entry)."""
    try:
        nb = lib.search(vector, 1)
    except EmptyKb as exc:
        raise EmptyLibIndex("library index has no entries") from exc
    best_id, best_sim = nb.neighbors[0]
    return (1 if best_sim > tau_lib else 0), best_sim, best_id


def filter_sample(
    funcs: Sequence[CanonFunction],
    vectors: Sequence[np.ndarray],
    lib: KnowledgeBase | KbSnapshot | None,
    blocklist: Blocklist | None,
    tau_lib: float,
) -> tuple[list[tuple[CanonFunction, np.ndarray]], list[FilterDecision]]:
    """Apply blocklist then library filter; return survivors (order kept)
    plus one decision per input function."""
    if len(funcs) != len(vectors):
        raise ValueError(f"{len(funcs)} functions but {len(vectors)} vectors")
    kept: list[tuple[CanonFunction, np.ndarray]] = []
    decisions: list[FilterDecision] = []
    for f, v in zip(funcs, vectors):
        if blocklist is not None and f.content_hash in blocklist:
            decisions.append(FilterDecision(
                sample_id=f.sample_id, function_name=f.name,
                blocklisted=True, best_lib_sim=None, best_lib_entry=None,
                filtered=True,
            ))
            continue
        if lib is None:
            decisions.append(FilterDecision(
                sample_id=f.sample_id, function_name=f.name,
                blocklisted=False, best_lib_sim=None, best_lib_entry=None,
                filtered=False,
            ))
            kept.append((f, v))
            continue
        fired, best_sim, best_id = phi(v, lib, tau_lib)
        decisions.append(FilterDecision(
            sample_id=f.sample_id, function_name=f.name,
            blocklisted=False, best_lib_sim=best_sim, best_lib_entry=best_id,
            filtered=bool(fired),
        ))
        if not fired:
            kept.append((f, v))
    return kept, decisions


@dataclass(frozen=True)
class TauLibRow:
    tau: float
    filter_precision: float
    malicious_recall: float
    reduction: float
    downstream_f1: float | None


@dataclass(frozen=True)
class TauLibReport:
    rows: tuple[TauLibRow, ...]
    selected: TauLibRow


def calibrate_tau_lib(
    lib_vectors: Sequence[np.ndarray],
    nonlib_vectors: Sequence[np.ndarray],
    lib: KnowledgeBase | KbSnapshot,
    grid: Sequence[float],
    downstream_eval: Callable[[float], float] | None = None,
) -> TauLibReport:
    """Sweep tau_lib over labeled held-out functions.

    ``lib_vectors`` are truly-library functions (the filter should fire),
    ``nonlib_vectors`` are functions detection must keep. Per row:
    filter_precision = truly-library fraction of everything removed (1.0
    when nothing fired), malicious_recall = surviving fraction of nonlib,
    reduction = removed fraction overall. Selection prefers downstream F1
    when an evaluator is supplied, then higher malicious recall, then the
    larger (more conservative) tau.
    """
    if not grid:
        raise EmptyGrid("tau_lib grid is empty")
    pos_sims = [phi(v, lib, -2.0)[1] for v in lib_vectors]
    neg_sims = [phi(v, lib, -2.0)[1] for v in nonlib_vectors]
    rows = []
    for tau in grid:
        pos_fired = sum(1 for s in pos_sims if s > tau)
        neg_fired = sum(1 for s in neg_sims if s > tau)
        fired = pos_fired + neg_fired
        precision = pos_fired / fired if fired else 1.0
        recall = 1.0 - neg_fired / len(neg_sims) if neg_sims else 1.0
        total = len(pos_sims) + len(neg_sims)
        reduction = fired / total if total else 0.0
        f1 = downstream_eval(tau) if downstream_eval is not None else None
        rows.append(TauLibRow(
            tau=float(tau), filter_precision=precision,
            malicious_recall=recall, reduction=reduction, downstream_f1=f1,
        ))
    selected = max(rows, key=lambda r: (
        r.downstream_f1 if r.downstream_f1 is not None else 0.0,
        r.malicious_recall,
        r.tau,
    ))
    return TauLibReport(rows=tuple(rows), selected=selected)
