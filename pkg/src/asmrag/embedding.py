"""Embedding providers: a remote embedding service client and a local
deterministic hash encoder.

Vectors are unit-norm float32 numpy arrays. The hash encoder is a seeded
signed feature hash over whitespace-token n-grams — a stand-in that keeps
the downstream retrieval math verifiable without a served model; it carries
no semantic robustness claims. The remote protocol is
``POST {endpoint}/embed`` with ``{"model": ..., "texts": [...]}`` returning
``{"vectors": [[...], ...]}``; returned vectors are re-normalized client
side. ``ASMRAG_EMBED_ENDPOINT`` overrides the configured endpoint.
"""

from __future__ import annotations

import hashlib
import os
import threading
import time
from dataclasses import dataclass

import numpy as np
import requests

from .errors import DimMismatch, EmptyText, RemoteUnavailable, ZeroVector

ENDPOINT_ENV_VAR = "ASMRAG_EMBED_ENDPOINT"
NORM_TOLERANCE = 1e-5


@dataclass(frozen=True)
class ProviderConfig:
    kind: str = "hash"  # "hash" | "remote"
    dim: int = 256
    # hash encoder
    seed: int = 0
    ngram: int = 2
    # remote
    endpoint: str = ""
    model_name: str = ""
    timeout_ms: int = 10_000
    retries: int = 2
    max_batch: int = 64
    max_inflight: int = 4

    def __post_init__(self):
        if self.kind not in ("hash", "remote"):
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if self.dim < 8:
            raise ValueError(f"dim must be >= 8, got {self.dim}")
        if self.ngram < 1:
            raise ValueError(f"ngram must be >= 1, got {self.ngram}")
        if self.kind == "remote" and not self.resolved_endpoint():
            raise ValueError("remote provider requires a non-empty endpoint")

    def resolved_endpoint(self) -> str:
        return os.environ.get(ENDPOINT_ENV_VAR, "") or self.endpoint


def normalize(v) -> np.ndarray:
    """L2-normalize to a unit float32 vector. Raises ZeroVector below 1e-12."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("expected a non-empty 1-d vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector contains non-finite values")
    norm = float(np.linalg.norm(arr))
    if norm < 1e-12:
        raise ZeroVector(f"cannot normalize vector with norm {norm}")
    return (arr / norm).astype(np.float32)


def _gram_hash(gram: str, seed: int) -> int:
    h = hashlib.blake2b(
        gram.encode("utf-8"), digest_size=8, key=seed.to_bytes(8, "little")
    ).digest()
    return int.from_bytes(h, "little")


def hash_encode(text: str, dim: int, seed: int = 0, ngram: int = 2) -> np.ndarray:
    """Signed feature hash of whitespace-token n-grams, L2-normalized.

    Deterministic across runs and platforms (keyed blake2b, no locale
    dependence). An empty token stream, or full sign cancellation, maps to
    the unit basis vector e_0.
    """
    if dim < 8:
        raise ValueError(f"dim must be >= 8, got {dim}")
    tokens = text.split()
    acc = np.zeros(dim, dtype=np.float64)
    for i in range(len(tokens) - ngram + 1):
        h = _gram_hash(" ".join(tokens[i : i + ngram]), seed)
        bucket = h % dim
        sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
        acc[bucket] += sign
    if float(np.linalg.norm(acc)) < 1e-12:
        out = np.zeros(dim, dtype=np.float32)
        out[0] = 1.0
        return out
    return normalize(acc)


class RemoteEmbeddingClient:
    """Thin client for the embedding service. Requests are idempotent; a
    semaphore bounds in-flight requests."""

    def __init__(self, cfg: ProviderConfig):
        self.cfg = cfg
        self._session = requests.Session()
        self._inflight = threading.Semaphore(cfg.max_inflight)

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for start in range(0, len(texts), self.cfg.max_batch):
            out.extend(self._embed_chunk(texts[start : start + self.cfg.max_batch]))
        return out

    def _embed_chunk(self, texts: list[str]) -> list[np.ndarray]:
        url = self.cfg.resolved_endpoint().rstrip("/") + "/embed"
        payload = {"model": self.cfg.model_name, "texts": texts}
        timeout = self.cfg.timeout_ms / 1000.0
        last_exc: Exception | None = None
        for attempt in range(self.cfg.retries + 1):
            try:
                with self._inflight:
                    resp = self._session.post(url, json=payload, timeout=timeout)
                if resp.status_code >= 500:
                    raise RemoteUnavailable(f"server error {resp.status_code}")
                resp.raise_for_status()
                vectors = resp.json()["vectors"]
                return self._validate(vectors, len(texts))
            except (requests.ConnectionError, requests.Timeout, RemoteUnavailable) as exc:
                last_exc = exc
                if attempt < self.cfg.retries:
                    time.sleep(0.05 * (attempt + 1))
            except (requests.HTTPError, KeyError, ValueError, TypeError) as exc:
                raise RemoteUnavailable(f"bad response from {url}: {exc}") from exc
        raise RemoteUnavailable(f"{url} unreachable after {self.cfg.retries + 1} attempts: {last_exc}")

    def _validate(self, vectors, expected_count: int) -> list[np.ndarray]:
        if len(vectors) != expected_count:
            raise DimMismatch(
                f"service returned {len(vectors)} vectors for {expected_count} texts"
            )
        out = []
        for v in vectors:
            arr = np.asarray(v, dtype=np.float64)
            if arr.shape != (self.cfg.dim,):
                raise DimMismatch(
                    f"service returned width {arr.shape}, expected ({self.cfg.dim},)"
                )
            out.append(normalize(arr))
        return out


def embed_batch(texts: list[str], cfg: ProviderConfig) -> list[np.ndarray]:
    """Embed a batch of texts; output order matches input order."""
    if not texts:
        raise EmptyText("embed_batch requires a non-empty batch")
    for i, t in enumerate(texts):
        if not t:
            raise EmptyText(f"text at index {i} is empty")
    if cfg.kind == "hash":
        return [hash_encode(t, cfg.dim, cfg.seed, cfg.ngram) for t in texts]
    return RemoteEmbeddingClient(cfg).embed(texts)
