"""Differential explanation of an anchor function against its proof entry.

The prompt is a fixed, versioned template over exactly four inputs (anchor
listing, proof listing, family, proof provenance); nothing else is ever
interpolated, and the request digest pins template version plus inputs so
any output can be traced to the exact prompt that produced it.

Two generators. The stub is fully local and only states what it can check:
the mnemonic-multiset overlap between the two listings and the immediate
constants they share after numeric normalization (hex and decimal spellings
of one value unify, so 0x5a matches 90). The remote generator forwards the
prompt to a completion endpoint and returns the body verbatim; since those
claims are not checked, the result carries ``unverified_claims=True``.
"""

from __future__ import annotations

import hashlib
import json
import re
import time
from collections import Counter
from dataclasses import dataclass
from datetime import date
from enum import Enum

import requests

from .errors import EmptyCompletion, RemoteUnavailable

TEMPLATE_VERSION = 1

# hex first so "0x64" is one literal, not "0" then "64"
_NUMERIC_LITERAL_RE = re.compile(r"0x[0-9a-f]+|\b\d+\b", re.IGNORECASE)


class Generator(str, Enum):
    Remote = "remote"
    StubTemplate = "stub"


@dataclass(frozen=True)
class GeneratorConfig:
    kind: str = Generator.StubTemplate.value
    endpoint: str = ""
    model_name: str = "triage-explainer"
    timeout_ms: int = 30_000
    retries: int = 2

    def __post_init__(self):
        if self.kind not in (Generator.Remote.value, Generator.StubTemplate.value):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.kind == Generator.Remote.value and not self.endpoint:
            raise ValueError("remote generator requires an endpoint")


@dataclass(frozen=True)
class ExplanationRequest:
    anchor_text: str
    proof_text: str
    family: str
    proof_sample_id: str
    proof_first_seen: date | None = None

    def __post_init__(self):
        if not self.anchor_text.strip():
            raise ValueError("anchor text is empty")
        if not self.proof_text.strip():
            raise ValueError("proof text is empty")
        if not self.family:
            raise ValueError("family is empty")

    def digest(self) -> str:
        payload = json.dumps({
            "template_version": TEMPLATE_VERSION,
            "anchor_text": self.anchor_text,
            "proof_text": self.proof_text,
            "family": self.family,
            "proof_sample_id": self.proof_sample_id,
            "proof_first_seen": (
                self.proof_first_seen.isoformat() if self.proof_first_seen else None
            ),
        }, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


@dataclass(frozen=True)
class Explanation:
    text: str
    generator: Generator
    request_digest: str
    unverified_claims: bool


def _fence(*texts: str) -> str:
    """A backtick fence strictly longer than any run inside the listings, so
    embedded backticks cannot terminate a block early."""
    longest = 0
    for t in texts:
        for run in re.findall(r"`+", t):
            longest = max(longest, len(run))
    return "`" * max(3, longest + 1)


def build_prompt(req: ExplanationRequest) -> str:
    fence = _fence(req.anchor_text, req.proof_text)
    provenance = req.proof_sample_id
    if req.proof_first_seen is not None:
        provenance += f", first seen {req.proof_first_seen.isoformat()}"
    # the family name appears exactly once, in the question; in particular
    # the PROOF label stays family-free so the answer must earn the link
    return (
        "You are a malware reverse engineer comparing two disassembled "
        "functions. Ignore superficial syntactic differences such as "
        "register reallocation, instruction reordering, and dead code; "
        "focus exclusively on the underlying functional logic the two "
        "listings share. Every claim you make must be grounded in "
        "instructions visible in both listings.\n"
        "\n"
        "ANCHOR (function under triage):\n"
        f"{fence}\n{req.anchor_text}\n{fence}\n"
        "\n"
        f"PROOF (known malicious function; provenance: {provenance}):\n"
        f"{fence}\n{req.proof_text}\n{fence}\n"
        "\n"
        f"Why is this function considered a variant of {req.family}? "
        "Answer by contrasting the shared functional core against the "
        "superficial differences.\n"
    )


def _mnemonics(text: str) -> Counter:
    return Counter(
        line.split()[0] for line in text.splitlines() if line.strip()
    )


def mnemonic_overlap(anchor_text: str, proof_text: str) -> float:
    """Multiset-intersection share of the larger listing, in percent."""
    a, b = _mnemonics(anchor_text), _mnemonics(proof_text)
    shared = sum((a & b).values())
    denom = max(sum(a.values()), sum(b.values()))
    return 100.0 * shared / denom if denom else 0.0


def _literal_values(text: str) -> dict[int, str]:
    """Map numeric value -> first spelling seen, hex and decimal unified."""
    values: dict[int, str] = {}
    for m in _NUMERIC_LITERAL_RE.finditer(text):
        tok = m.group(0)
        val = int(tok, 16) if tok.lower().startswith("0x") else int(tok)
        values.setdefault(val, tok)
    return values


def shared_constants(anchor_text: str, proof_text: str) -> list[tuple[int, str, str]]:
    """Constants present in both listings: (value, anchor spelling, proof
    spelling), ascending by value."""
    a = _literal_values(anchor_text)
    b = _literal_values(proof_text)
    return [(v, a[v], b[v]) for v in sorted(a.keys() & b.keys())]


def _stub_text(req: ExplanationRequest) -> str:
    overlap = mnemonic_overlap(req.anchor_text, req.proof_text)
    consts = shared_constants(req.anchor_text, req.proof_text)
    if consts:
        rendered = ", ".join(
            f"0x{v:x} ({v})" if a.lower().startswith("0x") or p.lower().startswith("0x")
            else str(v)
            for v, a, p in consts
        )
    else:
        rendered = "none"
    lines = [
        f"The anchor function is functionally identical to a known {req.family} "
        f"function (proof: {req.proof_sample_id}); the differences between the "
        "two listings are superficial.",
        f"Shared mnemonic overlap: {overlap:.1f}% of the larger listing's "
        "instructions appear in both, counted with multiplicity.",
        f"Shared immediate constants (hex and decimal spellings unified): {rendered}.",
    ]
    return "\n".join(lines)


def _remote_text(prompt: str, cfg: GeneratorConfig) -> str:
    url = cfg.endpoint.rstrip("/") + "/generate"
    body = {"model": cfg.model_name, "prompt": prompt}
    timeout = cfg.timeout_ms / 1000.0
    last_exc: Exception | None = None
    for attempt in range(cfg.retries + 1):
        try:
            resp = requests.post(url, json=body, timeout=timeout)
            if resp.status_code >= 500:
                raise RemoteUnavailable(f"generation endpoint returned {resp.status_code}")
            resp.raise_for_status()
            return resp.json()["completion"]
        except (requests.ConnectionError, requests.Timeout, RemoteUnavailable) as exc:
            last_exc = exc
            if attempt < cfg.retries:
                time.sleep(0.05 * (2 ** attempt))
        except (requests.HTTPError, KeyError, ValueError) as exc:
            raise RemoteUnavailable(f"generation endpoint rejected the request: {exc}") from exc
    raise RemoteUnavailable(f"generation endpoint unreachable: {last_exc}")


def generate(req: ExplanationRequest, cfg: GeneratorConfig) -> Explanation:
    digest = req.digest()
    if cfg.kind == Generator.StubTemplate.value:
        return Explanation(
            text=_stub_text(req),
            generator=Generator.StubTemplate,
            request_digest=digest,
            unverified_claims=False,
        )
    text = _remote_text(build_prompt(req), cfg)
    if not text.strip():
        raise EmptyCompletion("generation endpoint returned an empty completion")
    return Explanation(
        text=text,
        generator=Generator.Remote,
        request_digest=digest,
        unverified_claims=True,
    )
