"""Append-only knowledge base of labeled embeddings with exact top-k cosine
retrieval.

Search is an exact scan (float64 accumulation), not ANN: at desk scale it is
fast and every downstream score is oracle-checkable. Ties are broken by
ascending entry id. Persistence layout: ``manifest.json`` (dim, metric,
version, count, checksums), ``vectors.f32le`` (count x dim little-endian
float32) and ``meta.jsonl`` (one metadata object per line, aligned by
index); round trips are bit-exact.

Readers may run concurrently; writers are exclusive. ``snapshot()`` freezes
a view so a whole scan sees one consistent KB state.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass
from datetime import date
from pathlib import Path

import numpy as np

from .errors import (
    CorruptManifest,
    DimMismatch,
    EmptyKb,
    MissingFamily,
    VersionMismatch,
)

FORMAT_VERSION = 1
BENIGN = "benign"
MALICIOUS = "malicious"

ORIGIN_INGESTED = "ingested"
ORIGIN_PROMOTED = "promoted"


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity a.b / (|a||b|), accumulated in float64."""
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape:
        raise DimMismatch(f"vector shapes differ: {av.shape} vs {bv.shape}")
    return float(np.dot(av, bv) / (np.linalg.norm(av) * np.linalg.norm(bv)))


@dataclass(frozen=True)
class KbEntry:
    entry_id: int
    vector: np.ndarray
    label: str  # BENIGN | MALICIOUS
    family: str | None
    sample_id: str
    function_name: str
    first_seen: date | None
    origin: str  # ORIGIN_INGESTED | ORIGIN_PROMOTED
    lines: tuple[str, ...] | None = None  # canonical listing, kept for proof display

    def __post_init__(self):
        if self.label == MALICIOUS and not self.family:
            raise MissingFamily(f"malicious entry {self.entry_id} has no family")
        if self.label == BENIGN and self.family:
            raise ValueError(f"benign entry {self.entry_id} must not carry a family")
        if self.label not in (BENIGN, MALICIOUS):
            raise ValueError(f"unknown label {self.label!r}")


@dataclass(frozen=True)
class Neighborhood:
    """Top-k cosine neighbors, descending similarity, ties by ascending
    entry id."""

    query_ref: str
    neighbors: tuple[tuple[int, float], ...]  # (entry_id, similarity)
    k_requested: int


def _topk(matrix: np.ndarray, norms: np.ndarray, entry_ids: np.ndarray,
          q: np.ndarray, k: int, query_ref: str) -> Neighborhood:
    qv = np.asarray(q, dtype=np.float64)
    # einsum, not matmul: BLAS gemv rounds by row position, so bit-identical
    # rows could land on different sims and dodge the tie rule
    sims = np.einsum("ij,j->i", matrix, qv) / (norms * np.linalg.norm(qv))
    # stable sort on -sims: equal sims keep append order == ascending entry_id
    order = np.argsort(-sims, kind="stable")[: min(k, len(sims))]
    neighbors = tuple((int(entry_ids[i]), float(sims[i])) for i in order)
    return Neighborhood(query_ref=query_ref, neighbors=neighbors, k_requested=k)


@dataclass(frozen=True)
class KbSnapshot:
    """Immutable view of a KB at a point in time; scans run against this so
    concurrent promotions stay invisible mid-scan."""

    dim: int
    entries: tuple[KbEntry, ...]
    _matrix: np.ndarray
    _norms: np.ndarray
    _entry_ids: np.ndarray

    def search(self, q: np.ndarray, k: int, query_ref: str = "") -> Neighborhood:
        if not self.entries:
            raise EmptyKb("search against an empty knowledge base")
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if np.asarray(q).shape != (self.dim,):
            raise DimMismatch(f"query shape {np.asarray(q).shape}, kb dim {self.dim}")
        return _topk(self._matrix, self._norms, self._entry_ids, q, k, query_ref)

    def entry(self, entry_id: int) -> KbEntry:
        i = int(np.searchsorted(self._entry_ids, entry_id))
        if i >= len(self.entries) or self.entries[i].entry_id != entry_id:
            raise KeyError(f"no entry {entry_id}")
        return self.entries[i]

    def nearest_in_family(self, q: np.ndarray, family: str) -> tuple[int, float] | None:
        """Nearest entry restricted to one family, over the whole snapshot."""
        idx = [i for i, e in enumerate(self.entries) if e.family == family]
        if not idx:
            return None
        sub = np.array(idx)
        nb = _topk(self._matrix[sub], self._norms[sub], self._entry_ids[sub], q, 1, "")
        return nb.neighbors[0]


class KnowledgeBase:
    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError(f"dim must be positive, got {dim}")
        self.dim = dim
        self._entries: list[KbEntry] = []
        self._lock = threading.RLock()
        self._matrix: np.ndarray | None = None  # float64 cache, rebuilt lazily
        self._norms: np.ndarray | None = None

    # -- accessors -----------------------------------------------------------

    @property
    def entry_count(self) -> int:
        with self._lock:
            return len(self._entries)

    @property
    def entries(self) -> list[KbEntry]:
        with self._lock:
            return list(self._entries)

    def entry(self, entry_id: int) -> KbEntry:
        with self._lock:
            for e in self._entries:
                if e.entry_id == entry_id:
                    return e
        raise KeyError(f"no entry {entry_id}")

    def next_entry_id(self) -> int:
        with self._lock:
            return self._entries[-1].entry_id + 1 if self._entries else 0

    def manifest(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "dim": self.dim,
            "metric": "cosine",
            "entry_count": self.entry_count,
        }

    def stats(self) -> dict:
        with self._lock:
            by_label: dict[str, int] = {}
            by_family: dict[str, int] = {}
            promoted = 0
            for e in self._entries:
                by_label[e.label] = by_label.get(e.label, 0) + 1
                if e.family:
                    by_family[e.family] = by_family.get(e.family, 0) + 1
                if e.origin == ORIGIN_PROMOTED:
                    promoted += 1
            return {
                "entry_count": len(self._entries),
                "dim": self.dim,
                "metric": "cosine",
                "by_label": by_label,
                "by_family": dict(sorted(by_family.items())),
                "promoted": promoted,
            }

    # -- writes --------------------------------------------------------------

    def insert(
        self,
        vector: np.ndarray,
        label: str,
        family: str | None,
        sample_id: str,
        function_name: str,
        first_seen: date | None = None,
        origin: str = ORIGIN_INGESTED,
        lines: tuple[str, ...] | None = None,
    ) -> int:
        vec = np.asarray(vector, dtype=np.float32)
        if vec.shape != (self.dim,):
            raise DimMismatch(f"vector shape {vec.shape}, kb dim {self.dim}")
        with self._lock:
            entry = KbEntry(
                entry_id=self.next_entry_id(),
                vector=vec,
                label=label,
                family=family,
                sample_id=sample_id,
                function_name=function_name,
                first_seen=first_seen,
                origin=origin,
                lines=lines,
            )
            self._entries.append(entry)
            self._matrix = None
            return entry.entry_id

    def promote(
        self,
        q: np.ndarray,
        family: str,
        sample_id: str,
        function_name: str,
        first_seen: date | None = None,
        lines: tuple[str, ...] | None = None,
    ) -> int:
        """Append a confirmed anchor embedding as a malicious entry."""
        if not family:
            raise MissingFamily("promotion requires a non-empty family")
        return self.insert(
            q, MALICIOUS, family, sample_id, function_name,
            first_seen=first_seen, origin=ORIGIN_PROMOTED, lines=lines,
        )

    # -- search --------------------------------------------------------------

    def _rebuild_cache(self):
        mat = np.stack([e.vector for e in self._entries]).astype(np.float64)
        self._matrix = mat
        self._norms = np.linalg.norm(mat, axis=1)

    def snapshot(self) -> KbSnapshot:
        with self._lock:
            if not self._entries:
                return KbSnapshot(self.dim, (), np.zeros((0, self.dim)), np.zeros(0),
                                  np.zeros(0, dtype=np.int64))
            if self._matrix is None:
                self._rebuild_cache()
            return KbSnapshot(
                dim=self.dim,
                entries=tuple(self._entries),
                _matrix=self._matrix,
                _norms=self._norms,
                _entry_ids=np.array([e.entry_id for e in self._entries], dtype=np.int64),
            )

    def search(self, q: np.ndarray, k: int, query_ref: str = "") -> Neighborhood:
        return self.snapshot().search(q, k, query_ref)

    # -- persistence ---------------------------------------------------------

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with self._lock:
            vec_bytes = b"".join(
                e.vector.astype("<f4").tobytes() for e in self._entries
            )
            meta_lines = []
            for e in self._entries:
                rec = {
                    "entry_id": e.entry_id,
                    "label": e.label,
                    "family": e.family,
                    "sample_id": e.sample_id,
                    "function_name": e.function_name,
                    "first_seen": e.first_seen.isoformat() if e.first_seen else None,
                    "origin": e.origin,
                    "lines": list(e.lines) if e.lines is not None else None,
                }
                meta_lines.append(json.dumps(rec, sort_keys=True))
            meta_bytes = ("\n".join(meta_lines) + "\n" if meta_lines else "").encode()
            manifest = self.manifest()
            manifest["checksums"] = {
                "vectors.f32le": hashlib.sha256(vec_bytes).hexdigest(),
                "meta.jsonl": hashlib.sha256(meta_bytes).hexdigest(),
            }
        (directory / "vectors.f32le").write_bytes(vec_bytes)
        (directory / "meta.jsonl").write_bytes(meta_bytes)
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory: str | Path) -> "KnowledgeBase":
        directory = Path(directory)
        manifest_path = directory / "manifest.json"
        if not manifest_path.exists():
            raise VersionMismatch(f"no manifest in {directory}")
        try:
            manifest = json.loads(manifest_path.read_text())
        except json.JSONDecodeError as exc:
            raise CorruptManifest(f"manifest unreadable: {exc}") from exc
        if manifest.get("format_version") != FORMAT_VERSION:
            raise VersionMismatch(
                f"format_version {manifest.get('format_version')!r}, expected {FORMAT_VERSION}"
            )
        dim = int(manifest["dim"])
        count = int(manifest["entry_count"])
        vec_bytes = (directory / "vectors.f32le").read_bytes()
        meta_bytes = (directory / "meta.jsonl").read_bytes()
        sums = manifest.get("checksums", {})
        if hashlib.sha256(vec_bytes).hexdigest() != sums.get("vectors.f32le"):
            raise CorruptManifest("vectors.f32le checksum mismatch")
        if hashlib.sha256(meta_bytes).hexdigest() != sums.get("meta.jsonl"):
            raise CorruptManifest("meta.jsonl checksum mismatch")
        if len(vec_bytes) != count * dim * 4:
            raise CorruptManifest(
                f"vectors.f32le holds {len(vec_bytes)} bytes, expected {count * dim * 4}"
            )
        vectors = np.frombuffer(vec_bytes, dtype="<f4").reshape(count, dim)
        kb = cls(dim)
        meta_lines = meta_bytes.decode().splitlines()
        if len(meta_lines) != count:
            raise CorruptManifest(f"meta.jsonl holds {len(meta_lines)} records, expected {count}")
        for i, line in enumerate(meta_lines):
            rec = json.loads(line)
            kb._entries.append(
                KbEntry(
                    entry_id=int(rec["entry_id"]),
                    vector=vectors[i].copy(),
                    label=rec["label"],
                    family=rec["family"],
                    sample_id=rec["sample_id"],
                    function_name=rec["function_name"],
                    first_seen=date.fromisoformat(rec["first_seen"]) if rec["first_seen"] else None,
                    origin=rec["origin"],
                    lines=tuple(rec["lines"]) if rec.get("lines") is not None else None,
                )
            )
        return kb
