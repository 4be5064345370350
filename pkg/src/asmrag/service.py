"""Review-queue service closing the human-in-the-loop promotion cycle.

Scans run against a KB snapshot taken at request start; malicious verdicts
become queue items carrying the anchor listing, the proof listing, and a
generated explanation. An analyst confirms or rejects each item once.
Confirmation promotes the anchor embedding into the live KB.

Durability: every enqueue and resolve is appended to a JSONL audit log,
and on confirm the audit record (naming the KB entry id about to be
created) is flushed to disk before the promotion executes. Replaying the
log therefore reconstructs the exact queue state and re-executes any
promotion a crash interrupted; there is no reachable state where an item
is Confirmed but its KB entry is missing after replay.
"""

from __future__ import annotations

import json
import os
import socket
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .detector import (
    SampleVerdict,
    Thresholds,
    VERDICT_MALICIOUS,
    scan_sample,
)
from .embedding import ProviderConfig
from .errors import (
    AlreadyResolved,
    AsmragError,
    BenignVerdict,
    BindFailure,
    KbLocked,
    UnknownItem,
)
from .explain import (
    Explanation,
    ExplanationRequest,
    Generator,
    GeneratorConfig,
    generate,
)
from .ingest import ListingFormat, canonicalize, parse_listing
from .kb import KnowledgeBase
from .libfilter import Blocklist

STATUS_PENDING = "pending"
STATUS_CONFIRMED = "confirmed"
STATUS_REJECTED = "rejected"

DECISION_CONFIRM = "confirm"
DECISION_REJECT = "reject"

_PROOF_UNAVAILABLE = "(proof listing unavailable)"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass(frozen=True)
class TriageItem:
    item_id: int
    verdict: SampleVerdict
    anchor_text: str
    proof_text: str
    explanation: Explanation
    created_at: str
    status: str = STATUS_PENDING
    resolved_by: str | None = None
    resolved_at: str | None = None
    promoted_entry_id: int | None = None

    def summary(self) -> dict:
        return {
            "item_id": self.item_id,
            "sample_id": self.verdict.sample_id,
            "omega": self.verdict.omega,
            "family": self.verdict.c_best,
            "anchor_name": self.verdict.anchor_name,
            "status": self.status,
            "created_at": self.created_at,
        }

    def to_json(self) -> dict:
        return {
            "item_id": self.item_id,
            "verdict": self.verdict.to_json(),
            "anchor_text": self.anchor_text,
            "proof_text": self.proof_text,
            "explanation": {
                "text": self.explanation.text,
                "generator": self.explanation.generator.value,
                "request_digest": self.explanation.request_digest,
                "unverified_claims": self.explanation.unverified_claims,
            },
            "created_at": self.created_at,
            "status": self.status,
            "resolved_by": self.resolved_by,
            "resolved_at": self.resolved_at,
            "promoted_entry_id": self.promoted_entry_id,
        }


class TriageService:
    def __init__(
        self,
        kb: KnowledgeBase,
        provider: ProviderConfig,
        thresholds: Thresholds | None = None,
        generator: GeneratorConfig | None = None,
        lib: KnowledgeBase | None = None,
        blocklist: Blocklist | None = None,
        tau_lib: float = 0.95,
        audit_path: str | Path | None = None,
    ):
        self.kb = kb
        self.provider = provider
        self.thresholds = thresholds or Thresholds()
        self.generator = generator or GeneratorConfig()
        self.lib = lib
        self.blocklist = blocklist
        self.tau_lib = tau_lib
        self.audit_path = Path(audit_path) if audit_path else None
        self._items: dict[int, TriageItem] = {}
        self._next_item_id = 0
        self._lock = threading.Lock()

    # -- audit ---------------------------------------------------------------

    def _append_audit(self, record: dict) -> None:
        if self.audit_path is None:
            return
        with open(self.audit_path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    # -- pipeline ------------------------------------------------------------

    def scan_text(
        self,
        content: str,
        fmt: ListingFormat,
        sample_id: str,
        addr_low: int | None = None,
        addr_high: int | None = None,
    ) -> dict:
        """Parse, canonicalize, scan, and (for malicious verdicts) enqueue.

        Returns the verdict summary; includes ``item_id`` when queued.
        """
        raw = parse_listing(content, fmt, sample_id=sample_id)
        funcs = [canonicalize(f, addr_low, addr_high) for f in raw]
        snapshot = self.kb.snapshot()
        verdict = scan_sample(
            funcs, snapshot, self.thresholds, self.provider,
            lib=self.lib, blocklist=self.blocklist, tau_lib=self.tau_lib,
        )
        out = {
            "sample_id": verdict.sample_id,
            "status": verdict.status,
            "verdict": verdict.verdict,
            "omega": verdict.omega,
            "family": verdict.c_best,
        }
        if verdict.verdict == VERDICT_MALICIOUS:
            explanation = self._explain(verdict)
            out["item_id"] = self.enqueue(verdict, explanation)
        return out

    def _proof_text(self, verdict: SampleVerdict) -> str:
        if verdict.proof_entry_id is None:
            return _PROOF_UNAVAILABLE
        try:
            entry = self.kb.entry(verdict.proof_entry_id)
        except KeyError:
            return _PROOF_UNAVAILABLE
        return "\n".join(entry.lines) if entry.lines else _PROOF_UNAVAILABLE

    def _explain(self, verdict: SampleVerdict) -> Explanation:
        proof_sample_id = "unknown"
        proof_first_seen = None
        if verdict.proof_entry_id is not None:
            try:
                entry = self.kb.entry(verdict.proof_entry_id)
                proof_sample_id = entry.sample_id
                proof_first_seen = entry.first_seen
            except KeyError:
                pass
        req = ExplanationRequest(
            anchor_text=verdict.anchor_text or "(anchor listing unavailable)",
            proof_text=self._proof_text(verdict),
            family=verdict.c_best,
            proof_sample_id=proof_sample_id,
            proof_first_seen=proof_first_seen,
        )
        return generate(req, self.generator)

    # -- queue ---------------------------------------------------------------

    def enqueue(self, verdict: SampleVerdict, explanation: Explanation) -> int:
        if verdict.verdict != VERDICT_MALICIOUS or verdict.anchor_text is None:
            raise BenignVerdict(
                f"sample {verdict.sample_id} is not a malicious verdict with an anchor"
            )
        with self._lock:
            item = TriageItem(
                item_id=self._next_item_id,
                verdict=verdict,
                anchor_text=verdict.anchor_text,
                proof_text=self._proof_text(verdict),
                explanation=explanation,
                created_at=_now(),
            )
            self._next_item_id += 1
            self._items[item.item_id] = item
            self._append_audit({"event": "enqueue", **item.to_json()})
            return item.item_id

    def queue(self, status: str | None = STATUS_PENDING) -> list[TriageItem]:
        """Items ordered by descending sample density, then arrival."""
        with self._lock:
            items = list(self._items.values())
        if status:
            items = [it for it in items if it.status == status]
        return sorted(items, key=lambda it: (-it.verdict.omega, it.item_id))

    def get(self, item_id: int) -> TriageItem:
        with self._lock:
            if item_id not in self._items:
                raise UnknownItem(f"no queue item {item_id}")
            return self._items[item_id]

    def resolve(self, item_id: int, decision: str, analyst_id: str) -> TriageItem:
        if decision not in (DECISION_CONFIRM, DECISION_REJECT):
            raise ValueError(f"unknown decision {decision!r}")
        with self._lock:
            if item_id not in self._items:
                raise UnknownItem(f"no queue item {item_id}")
            item = self._items[item_id]
            if item.status != STATUS_PENDING:
                raise AlreadyResolved(f"item {item_id} is already {item.status}")
            resolved_at = _now()
            promoted_entry_id = None
            if decision == DECISION_CONFIRM:
                # write-ahead: record the id the promotion will take, land
                # the record on disk, then execute. Replay re-runs any
                # promotion a crash cut off.
                promoted_entry_id = self.kb.next_entry_id()
                self._append_audit({
                    "event": "resolve",
                    "item_id": item_id,
                    "decision": decision,
                    "analyst_id": analyst_id,
                    "resolved_at": resolved_at,
                    "promoted_entry_id": promoted_entry_id,
                })
                assigned = self.kb.promote(
                    item.verdict.anchor_vector,
                    family=item.verdict.c_best,
                    sample_id=item.verdict.sample_id,
                    function_name=item.verdict.anchor_name or "anchor",
                    lines=tuple(item.anchor_text.split("\n")),
                )
                if assigned != promoted_entry_id:
                    raise RuntimeError(
                        f"promotion landed at {assigned}, audit predicted {promoted_entry_id}"
                    )
                status = STATUS_CONFIRMED
            else:
                self._append_audit({
                    "event": "resolve",
                    "item_id": item_id,
                    "decision": decision,
                    "analyst_id": analyst_id,
                    "resolved_at": resolved_at,
                    "promoted_entry_id": None,
                })
                status = STATUS_REJECTED
            item = replace(
                item,
                status=status,
                resolved_by=analyst_id,
                resolved_at=resolved_at,
                promoted_entry_id=promoted_entry_id,
            )
            self._items[item_id] = item
            return item


def replay_audit(service: TriageService) -> int:
    """Rebuild queue state from the audit log; re-execute promotions the
    log promised but the KB never received. Returns replayed event count."""
    if service.audit_path is None or not service.audit_path.exists():
        return 0
    events = 0
    for line in service.audit_path.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        events += 1
        if rec["event"] == "enqueue":
            item = TriageItem(
                item_id=rec["item_id"],
                verdict=SampleVerdict.from_json(rec["verdict"]),
                anchor_text=rec["anchor_text"],
                proof_text=rec["proof_text"],
                explanation=Explanation(
                    text=rec["explanation"]["text"],
                    generator=Generator(rec["explanation"]["generator"]),
                    request_digest=rec["explanation"]["request_digest"],
                    unverified_claims=rec["explanation"]["unverified_claims"],
                ),
                created_at=rec["created_at"],
            )
            service._items[item.item_id] = item
            service._next_item_id = max(service._next_item_id, item.item_id + 1)
        elif rec["event"] == "resolve":
            item = service._items[rec["item_id"]]
            promoted = rec["promoted_entry_id"]
            if rec["decision"] == DECISION_CONFIRM:
                try:
                    service.kb.entry(promoted)
                except KeyError:
                    assigned = service.kb.promote(
                        item.verdict.anchor_vector,
                        family=item.verdict.c_best,
                        sample_id=item.verdict.sample_id,
                        function_name=item.verdict.anchor_name or "anchor",
                        lines=tuple(item.anchor_text.split("\n")),
                    )
                    if assigned != promoted:
                        raise RuntimeError(
                            f"replayed promotion landed at {assigned}, audit says {promoted}"
                        )
                status = STATUS_CONFIRMED
            else:
                status = STATUS_REJECTED
            service._items[rec["item_id"]] = replace(
                item,
                status=status,
                resolved_by=rec["analyst_id"],
                resolved_at=rec["resolved_at"],
                promoted_entry_id=promoted,
            )
    return events


# -- HTTP layer --------------------------------------------------------------

class ScanBody(BaseModel):
    sample_id: str
    format: str = "flatasm"
    content: str
    addr_low: int | str | None = None
    addr_high: int | str | None = None


class ResolveBody(BaseModel):
    decision: str
    analyst_id: str


def _parse_addr(value: int | str | None) -> int | None:
    if value is None:
        return None
    if isinstance(value, int):
        return value
    return int(value, 0)


def create_app(service: TriageService, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="asmrag triage service")

    @app.post("/api/scan")
    def scan(body: ScanBody):
        try:
            fmt = ListingFormat(body.format)
        except ValueError:
            raise HTTPException(status_code=400, detail=f"unknown format {body.format!r}")
        try:
            return service.scan_text(
                body.content, fmt, body.sample_id,
                addr_low=_parse_addr(body.addr_low),
                addr_high=_parse_addr(body.addr_high),
            )
        except (AsmragError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.get("/api/queue")
    def queue(status: str | None = STATUS_PENDING):
        wanted = None if status in (None, "", "all") else status
        return {"items": [it.summary() for it in service.queue(wanted)]}

    @app.get("/api/items/{item_id}")
    def item(item_id: int):
        try:
            return service.get(item_id).to_json()
        except UnknownItem as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.post("/api/items/{item_id}/resolve")
    def resolve(item_id: int, body: ResolveBody):
        try:
            return service.resolve(item_id, body.decision, body.analyst_id).to_json()
        except UnknownItem as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except AlreadyResolved as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.get("/api/kb/stats")
    def kb_stats():
        return service.kb.stats()

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")
    return app


def _check_port(host: str, port: int) -> None:
    try:
        with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
            s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            s.bind((host, port))
    except OSError as exc:
        raise BindFailure(f"cannot bind {host}:{port}: {exc}") from exc


def serve(
    kb_dir: str | Path,
    provider: ProviderConfig,
    host: str = "127.0.0.1",
    port: int = 8787,
    thresholds: Thresholds | None = None,
    generator: GeneratorConfig | None = None,
    lib_dir: str | Path | None = None,
    blocklist_path: str | Path | None = None,
    tau_lib: float = 0.95,
    static_dir: str | Path | None = None,
) -> None:
    """Load the KB, take the directory lock, replay the audit log, serve."""
    import uvicorn

    kb_dir = Path(kb_dir)
    lock_path = kb_dir / ".lock"
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise KbLocked(f"{kb_dir} is locked by another service instance")
    os.write(fd, str(os.getpid()).encode())
    os.close(fd)
    try:
        _check_port(host, port)
        kb = KnowledgeBase.load(kb_dir)
        lib = KnowledgeBase.load(lib_dir) if lib_dir else None
        blocklist = Blocklist.load(blocklist_path) if blocklist_path else None
        service = TriageService(
            kb, provider, thresholds=thresholds, generator=generator,
            lib=lib, blocklist=blocklist, tau_lib=tau_lib,
            audit_path=kb_dir / "audit.jsonl",
        )
        replay_audit(service)
        app = create_app(service, static_dir=static_dir)
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        lock_path.unlink(missing_ok=True)
