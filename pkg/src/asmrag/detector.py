"""Function-level voting detector with family attribution and evidence
anchors.

Per function, the k nearest KB neighbors vote: alpha is the malicious share
of similarity mass (weights clamped at zero so anti-correlated neighbors
cannot cast negative votes). A function is flagged when alpha strictly
exceeds ``tau_func``; a sample is malicious when the flagged fraction Omega
strictly exceeds ``tau_file``. Attribution and anchor selection use the raw
similarities: there the goal is ranking evidence, not bounding a ratio.

The anchor is the flagged function with the largest total similarity mass
to neighbors of the winning family, not the single best match; one lucky
near-duplicate should not outrank a function whose whole neighborhood
agrees. Its proof is the nearest same-family KB entry, searched over the
full KB rather than the truncated neighborhood.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embedding import ProviderConfig, embed_batch
from .errors import (
    NoFamilyNeighbors,
    NoFunctions,
    NoMaliciousNeighbors,
)
from .ingest import CanonFunction, render_text
from .kb import MALICIOUS, KbSnapshot, Neighborhood
from .libfilter import Blocklist, filter_sample

logger = logging.getLogger(__name__)

VERDICT_MALICIOUS = "malicious"
VERDICT_BENIGN = "benign"

STATUS_OK = "ok"
STATUS_NO_FUNCTIONS = "no_functions"

# below this much total positive similarity the vote is meaningless
DEGENERATE_MASS = 1e-9


@dataclass(frozen=True)
class Thresholds:
    tau_func: float = 0.70
    tau_file: float = 0.15
    k: int = 20

    def __post_init__(self):
        if not 0.0 <= self.tau_func <= 1.0:
            raise ValueError(f"tau_func must lie in [0, 1], got {self.tau_func}")
        if not 0.0 <= self.tau_file <= 1.0:
            raise ValueError(f"tau_file must lie in [0, 1], got {self.tau_file}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


def alpha(sims: Sequence[float], malicious: Sequence[bool]) -> float:
    """Distance-weighted malicious vote share over one neighborhood."""
    w = np.clip(np.asarray(sims, dtype=np.float64), 0.0, None)
    mask = np.asarray(malicious, dtype=bool)
    if w.shape != mask.shape:
        raise ValueError(f"{w.shape[0]} sims but {mask.shape[0]} labels")
    den = float(w.sum())
    if den <= DEGENERATE_MASS:
        logger.warning("neighborhood similarity mass %.3g is degenerate; alpha set to 0", den)
        return 0.0
    num = float(w[mask].sum())
    return num / den


def alpha_for(nb: Neighborhood, snapshot: KbSnapshot) -> float:
    sims = [s for _, s in nb.neighbors]
    mal = [snapshot.entry(eid).label == MALICIOUS for eid, _ in nb.neighbors]
    return alpha(sims, mal)


@dataclass(frozen=True)
class FunctionScore:
    function_name: str
    alpha: float
    flagged: bool
    neighborhood: Neighborhood | None = None
    lines: tuple[str, ...] | None = None
    vector: np.ndarray | None = None


def score_functions(
    pairs: Sequence[tuple[CanonFunction, np.ndarray]],
    snapshot: KbSnapshot,
    thresholds: Thresholds,
) -> list[FunctionScore]:
    scores = []
    for f, v in pairs:
        nb = snapshot.search(v, thresholds.k, query_ref=f.name)
        a = alpha_for(nb, snapshot)
        scores.append(FunctionScore(
            function_name=f.name,
            alpha=a,
            flagged=a > thresholds.tau_func,
            neighborhood=nb,
            lines=f.lines,
            vector=v,
        ))
    return scores


def sample_omega(scores: Sequence[FunctionScore]) -> float:
    """Flagged fraction of the sample's surviving functions."""
    if not scores:
        raise NoFunctions("no functions to score")
    return sum(1 for s in scores if s.flagged) / len(scores)


def attribute_family(
    scores: Sequence[FunctionScore],
    snapshot: KbSnapshot,
) -> tuple[dict[str, float], str]:
    """Accumulate raw similarity per family over the malicious neighbors of
    flagged functions; the best family wins, ties to the lexicographically
    smallest name."""
    totals: dict[str, float] = {}
    for s in scores:
        if not s.flagged or s.neighborhood is None:
            continue
        for eid, sim in s.neighborhood.neighbors:
            e = snapshot.entry(eid)
            if e.label == MALICIOUS:
                totals[e.family] = totals.get(e.family, 0.0) + sim
    if not totals:
        raise NoMaliciousNeighbors("no malicious neighbors among flagged functions")
    c_best = max(sorted(totals), key=lambda fam: totals[fam])
    return totals, c_best


def anchor_mass(score: FunctionScore, snapshot: KbSnapshot, family: str) -> float:
    """Total similarity of one function to same-family neighbors in its own
    stored neighborhood."""
    if score.neighborhood is None:
        return 0.0
    return sum(
        sim for eid, sim in score.neighborhood.neighbors
        if snapshot.entry(eid).family == family
    )


def select_anchor(
    scores: Sequence[FunctionScore],
    snapshot: KbSnapshot,
    family: str,
) -> tuple[int, float]:
    """Pick the flagged function with the largest family mass; ties go to
    the earliest function. Returns (index into scores, mass)."""
    best_idx = None
    best_mass = 0.0
    found = False
    for i, s in enumerate(scores):
        if not s.flagged:
            continue
        m = anchor_mass(s, snapshot, family)
        has_family = s.neighborhood is not None and any(
            snapshot.entry(eid).family == family for eid, _ in s.neighborhood.neighbors
        )
        if not has_family:
            continue
        if not found or m > best_mass:
            best_idx, best_mass, found = i, m, True
    if not found:
        raise NoFamilyNeighbors(f"no flagged function has {family!r} neighbors")
    return best_idx, best_mass


def recall_at_k(ranked_entry_ids: Sequence[int], relevant: set[int], k: int) -> int:
    """1 iff any of the top k ranked entries is relevant."""
    return 1 if any(eid in relevant for eid in ranked_entry_ids[:k]) else 0


@dataclass(frozen=True)
class SampleVerdict:
    sample_id: str
    status: str  # STATUS_OK | STATUS_NO_FUNCTIONS
    verdict: str  # VERDICT_MALICIOUS | VERDICT_BENIGN
    omega: float
    functions_total: int
    functions_filtered: int
    function_scores: tuple[FunctionScore, ...]
    family_scores: dict[str, float] | None = None
    c_best: str | None = None
    anchor_index: int | None = None
    anchor_name: str | None = None
    anchor_mass: float | None = None
    anchor_text: str | None = None
    anchor_vector: np.ndarray | None = None
    proof_entry_id: int | None = None
    proof_sim: float | None = None

    def to_json(self, include_neighborhoods: bool = False) -> dict:
        def _score_json(s: FunctionScore) -> dict:
            d = {"function_name": s.function_name, "alpha": s.alpha, "flagged": s.flagged}
            if include_neighborhoods and s.neighborhood is not None:
                d["neighbors"] = [
                    {"entry_id": eid, "sim": sim} for eid, sim in s.neighborhood.neighbors
                ]
            return d

        return {
            "sample_id": self.sample_id,
            "status": self.status,
            "verdict": self.verdict,
            "omega": self.omega,
            "functions_total": self.functions_total,
            "functions_filtered": self.functions_filtered,
            "function_scores": [_score_json(s) for s in self.function_scores],
            "family_scores": self.family_scores,
            "c_best": self.c_best,
            "anchor_index": self.anchor_index,
            "anchor_name": self.anchor_name,
            "anchor_mass": self.anchor_mass,
            "anchor_text": self.anchor_text,
            "anchor_vector": (
                [float(x) for x in self.anchor_vector]
                if self.anchor_vector is not None else None
            ),
            "proof_entry_id": self.proof_entry_id,
            "proof_sim": self.proof_sim,
        }

    @classmethod
    def from_json(cls, data: dict) -> "SampleVerdict":
        return cls(
            sample_id=data["sample_id"],
            status=data["status"],
            verdict=data["verdict"],
            omega=data["omega"],
            functions_total=data["functions_total"],
            functions_filtered=data["functions_filtered"],
            function_scores=tuple(
                FunctionScore(
                    function_name=s["function_name"],
                    alpha=s["alpha"],
                    flagged=s["flagged"],
                )
                for s in data["function_scores"]
            ),
            family_scores=data.get("family_scores"),
            c_best=data.get("c_best"),
            anchor_index=data.get("anchor_index"),
            anchor_name=data.get("anchor_name"),
            anchor_mass=data.get("anchor_mass"),
            anchor_text=data.get("anchor_text"),
            anchor_vector=(
                np.asarray(data["anchor_vector"], dtype=np.float32)
                if data.get("anchor_vector") is not None else None
            ),
            proof_entry_id=data.get("proof_entry_id"),
            proof_sim=data.get("proof_sim"),
        )


def _benign_verdict(sample_id: str, status: str, omega: float,
                    total: int, filtered: int,
                    scores: tuple[FunctionScore, ...]) -> SampleVerdict:
    return SampleVerdict(
        sample_id=sample_id, status=status, verdict=VERDICT_BENIGN,
        omega=omega, functions_total=total, functions_filtered=filtered,
        function_scores=scores,
    )


def scan_sample(
    funcs: Sequence[CanonFunction],
    snapshot: KbSnapshot,
    thresholds: Thresholds,
    provider: ProviderConfig,
    lib: object | None = None,
    blocklist: Blocklist | None = None,
    tau_lib: float = 0.95,
    vectors: Sequence[np.ndarray] | None = None,
) -> SampleVerdict:
    """Full per-sample pipeline: embed, prefilter, vote, attribute, anchor.

    A sample whose every function is filtered away (or that had none) is
    benign with status ``no_functions`` rather than an error: the pipeline
    saw it and found nothing scoreable, which the verdict should say.
    Callers that already embedded the functions can pass ``vectors``.
    """
    sample_id = funcs[0].sample_id if funcs else "sample"
    if not funcs:
        return _benign_verdict(sample_id, STATUS_NO_FUNCTIONS, 0.0, 0, 0, ())
    if vectors is None:
        vectors = embed_batch([render_text(f) for f in funcs], provider)
    kept, decisions = filter_sample(funcs, vectors, lib, blocklist, tau_lib)
    n_filtered = sum(1 for d in decisions if d.filtered)
    if not kept:
        return _benign_verdict(sample_id, STATUS_NO_FUNCTIONS, 0.0,
                               len(funcs), n_filtered, ())
    scores = score_functions(kept, snapshot, thresholds)
    omega = sample_omega(scores)
    if omega <= thresholds.tau_file:
        return _benign_verdict(sample_id, STATUS_OK, omega,
                               len(funcs), n_filtered, tuple(scores))
    family_scores, c_best = attribute_family(scores, snapshot)
    idx, mass = select_anchor(scores, snapshot, c_best)
    anchor = scores[idx]
    proof = snapshot.nearest_in_family(anchor.vector, c_best)
    if proof is None:
        raise NoFamilyNeighbors(f"family {c_best!r} vanished from the KB")
    proof_id, proof_sim = proof
    return SampleVerdict(
        sample_id=sample_id,
        status=STATUS_OK,
        verdict=VERDICT_MALICIOUS,
        omega=omega,
        functions_total=len(funcs),
        functions_filtered=n_filtered,
        function_scores=tuple(scores),
        family_scores=family_scores,
        c_best=c_best,
        anchor_index=idx,
        anchor_name=anchor.function_name,
        anchor_mass=mass,
        anchor_text="\n".join(anchor.lines) if anchor.lines else None,
        anchor_vector=anchor.vector,
        proof_entry_id=proof_id,
        proof_sim=proof_sim,
    )
