"""Disassembler-export parsing and minimal canonicalization.

Two listing formats are supported:

* FlatAsm — plain text. A sentinel line ``;; FUNC <name> @ 0x<hex-addr>``
  opens a function; following non-blank lines are instructions. Other
  ``;;``-prefixed lines are comments and skipped, a trailing ``; ...`` on an
  instruction line is stripped, and label-only lines (``loc_x:``) are
  dropped — they are address artifacts, not instructions.
* FunctionJsonl — one JSON object per line with keys ``sample_id``, ``name``,
  ``address`` (hex string) and ``lines``. Lines pass through verbatim.

Canonicalization rewrites only absolute in-image addresses to ``MEM_PTR``:
hex literals ``0x...`` and bracketed bare-hex operands (``[0040123a]``)
whose value falls inside the supplied image range. Registers, mnemonics and
every other immediate (decimal or hex) are preserved untouched; lines are
lowercased and whitespace-collapsed before hashing. Decimal literals are
never treated as addresses.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

from .errors import DuplicateAddress, EmptyFunction, MalformedHeader

MEM_PTR = "MEM_PTR"

_FUNC_SENTINEL_RE = re.compile(
    r"^;;\s*FUNC\s+(?P<name>\S+)\s+@\s+0x(?P<addr>[0-9a-fA-F]+)\s*$"
)
_HEX_LITERAL_RE = re.compile(r"\b0x(?P<val>[0-9a-f]+)\b")
_BRACKET_BARE_HEX_RE = re.compile(r"\[(?P<val>[0-9a-f]+)\]")
_LABEL_ONLY_RE = re.compile(r"^\S+:$")
_MEM_PTR_SPLIT_RE = re.compile(r"(MEM_PTR)")


class ListingFormat(Enum):
    FlatAsm = "flatasm"
    FunctionJsonl = "jsonl"


@dataclass(frozen=True)
class RawFunction:
    """One function as exported by the disassembler, lines verbatim."""

    sample_id: str
    name: str
    start_address: int
    lines: tuple[str, ...]

    def __post_init__(self):
        if not self.sample_id:
            raise ValueError("sample_id must be non-empty")
        if not self.lines:
            raise EmptyFunction(f"function {self.name!r} has no instruction lines")


@dataclass(frozen=True)
class CanonFunction:
    """Canonicalized function: lowercase, single-spaced, in-image addresses
    rewritten to MEM_PTR. ``content_hash`` is sha256 of the rendering."""

    sample_id: str
    name: str
    start_address: int
    lines: tuple[str, ...]
    content_hash: str
    source_line_count: int


def parse_listing(
    text: str | bytes, fmt: ListingFormat, sample_id: str = "sample"
) -> list[RawFunction]:
    """Parse a listing into RawFunctions, returned in address order.

    ``sample_id`` is used for FlatAsm input, which carries no sample
    identity of its own; FunctionJsonl records carry their own.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    if fmt is ListingFormat.FlatAsm:
        funcs = _parse_flatasm(text, sample_id)
    else:
        funcs = _parse_jsonl(text)
    _check_duplicate_addresses(funcs)
    return sorted(funcs, key=lambda f: (f.sample_id, f.start_address))


def _parse_flatasm(text: str, sample_id: str) -> list[RawFunction]:
    funcs: list[RawFunction] = []
    header: tuple[str, int, int] | None = None  # (name, addr, line_no)
    body: list[str] = []

    def close():
        if header is None:
            return
        name, addr, line_no = header
        if not body:
            raise EmptyFunction(f"function {name!r} (header line {line_no}) is empty")
        funcs.append(RawFunction(sample_id, name, addr, tuple(body)))

    for line_no, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped:
            continue
        if stripped.startswith(";;"):
            m = _FUNC_SENTINEL_RE.match(stripped)
            if m:
                close()
                header = (m.group("name"), int(m.group("addr"), 16), line_no)
                body = []
            elif stripped[2:].lstrip().startswith("FUNC"):
                raise MalformedHeader(f"unparseable FUNC sentinel: {stripped!r}", line_no)
            # other ;;-lines are comments
            continue
        instr = stripped.split(";", 1)[0].strip()
        if not instr:
            continue
        if _LABEL_ONLY_RE.match(instr):
            continue
        if header is None:
            raise MalformedHeader(
                f"instruction before any FUNC sentinel: {instr!r}", line_no
            )
        body.append(instr)
    close()
    return funcs


def _parse_jsonl(text: str) -> list[RawFunction]:
    funcs = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
            sample_id = obj["sample_id"]
            name = obj["name"]
            addr = int(obj["address"], 16)
            lines = tuple(obj["lines"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise MalformedHeader(f"bad jsonl record: {exc}", line_no) from exc
        if not lines:
            raise EmptyFunction(f"record {name!r} (line {line_no}) has no lines")
        funcs.append(RawFunction(sample_id, name, addr, lines))
    return funcs


def _check_duplicate_addresses(funcs: Iterable[RawFunction]):
    seen: set[tuple[str, int]] = set()
    for f in funcs:
        key = (f.sample_id, f.start_address)
        if key in seen:
            raise DuplicateAddress(
                f"sample {f.sample_id!r}: address 0x{f.start_address:x} used twice"
            )
        seen.add(key)


def _lower_keep_mem_ptr(s: str) -> str:
    # lowercase everything except already-inserted MEM_PTR tokens, so a
    # second canonicalization pass is a no-op
    return "".join(
        part if part == MEM_PTR else part.lower()
        for part in _MEM_PTR_SPLIT_RE.split(s)
    )


def canon_line(line: str, addr_low: int | None, addr_high: int | None) -> str:
    """Canonicalize a single instruction line."""
    out = " ".join(line.split())
    out = _lower_keep_mem_ptr(out)
    if addr_low is None or addr_high is None:
        return out

    def repl_hex(m: re.Match) -> str:
        val = int(m.group("val"), 16)
        return MEM_PTR if addr_low <= val <= addr_high else m.group(0)

    def repl_bracket(m: re.Match) -> str:
        val = int(m.group("val"), 16)
        return f"[{MEM_PTR}]" if addr_low <= val <= addr_high else m.group(0)

    out = _HEX_LITERAL_RE.sub(repl_hex, out)
    out = _BRACKET_BARE_HEX_RE.sub(repl_bracket, out)
    return out


def canonicalize(
    f: RawFunction, addr_low: int | None, addr_high: int | None
) -> CanonFunction:
    """Apply minimal canonicalization; [addr_low, addr_high] is the absolute
    address range of the binary image (pass None/None to skip rewriting)."""
    if addr_low is not None and addr_high is not None and addr_low >= addr_high:
        raise ValueError(f"addr_low 0x{addr_low:x} must be < addr_high 0x{addr_high:x}")
    lines = tuple(canon_line(ln, addr_low, addr_high) for ln in f.lines)
    text = "\n".join(lines)
    return CanonFunction(
        sample_id=f.sample_id,
        name=f.name,
        start_address=f.start_address,
        lines=lines,
        content_hash=content_hash_of(text),
        source_line_count=len(f.lines),
    )


def render_text(f: CanonFunction) -> str:
    """Deterministic rendering: lines joined by newline, no trailing one."""
    return "\n".join(f.lines)


def content_hash_of(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def render_flatasm(funcs: Iterable[RawFunction | CanonFunction]) -> str:
    """Inverse of the FlatAsm parser (modulo comments/labels)."""
    chunks = []
    for f in funcs:
        chunks.append(f";; FUNC {f.name} @ 0x{f.start_address:x}")
        chunks.extend(f.lines)
    return "\n".join(chunks) + "\n"


def write_jsonl(funcs: Iterable[RawFunction | CanonFunction]) -> str:
    """Serialize functions as FunctionJsonl (round-trips through parse)."""
    out = []
    for f in funcs:
        out.append(
            json.dumps(
                {
                    "sample_id": f.sample_id,
                    "name": f.name,
                    "address": f"0x{f.start_address:x}",
                    "lines": list(f.lines),
                },
                sort_keys=True,
            )
        )
    return "".join(line + "\n" for line in out)
