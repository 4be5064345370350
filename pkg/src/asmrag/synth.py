"""Synthetic triage corpus with known ground truth.

Construction, not simulation: each family owns a set of base functions
whose operand constants are drawn from a family-private pool, and every
sample carries a lightly perturbed copy of each base. Copies of one base
are therefore near-duplicates of each other while distinct bases share
almost no token n-grams, which makes the clusters separable by any
reasonable encoder and the correct end-to-end metrics derivable on paper.
Benign samples draw from a shared pool of benign bases the same way.

First-seen dates advance on a fixed schedule chosen so the default
chronological cutoffs land every family (and the benign background) in
all three partitions. Everything is a pure function of the parameters and
seed.
"""

from __future__ import annotations

import random
from datetime import date, timedelta

from .evalharness import OPT_LEVELS, CorpusRecord
from .ingest import CanonFunction, content_hash_of

_MNEMONICS = (
    "mov", "add", "sub", "xor", "lea", "cmp", "test", "jne", "je", "jmp",
    "push", "pop", "call", "ret", "shl", "shr", "and", "or", "imul",
    "inc", "dec", "movzx", "nop",
)

_EPOCH = date(2021, 1, 1)
# samples are spread evenly over a fixed 2021..2024 span so the default
# chronological cutoffs slice every family (and the benign background)
# into non-empty KB/val/test parts regardless of corpus size
_MALICIOUS_SPAN_DAYS = 1209  # 31-day steps at the default 40 per family
_BENIGN_SPAN_DAYS = 1194  # 6-day steps at the default 200


def _schedule(index: int, count: int, span_days: int) -> date:
    step = span_days / max(count - 1, 1)
    return _EPOCH + timedelta(days=round(index * step))


def _random_line(rng: random.Random) -> str:
    mnem = rng.choice(_MNEMONICS)
    if mnem in ("ret", "nop"):
        return mnem
    reg = rng.randrange(16)
    const = rng.getrandbits(32)
    return f"{mnem} r{reg}, 0x{const:08x}"


def _base_function(rng: random.Random, lines: int) -> tuple[str, ...]:
    return tuple(_random_line(rng) for _ in range(lines))


def _perturb(base: tuple[str, ...], rng: random.Random, noise: float) -> tuple[str, ...]:
    return tuple(
        _random_line(rng) if rng.random() < noise else line for line in base
    )


def _make_record(
    sample_id: str,
    label: str,
    family: str | None,
    bases: list[tuple[str, ...]],
    rng: random.Random,
    noise: float,
    first_seen: date,
    index: int,
) -> CorpusRecord:
    funcs = []
    for j, base in enumerate(bases):
        lines = _perturb(base, rng, noise)
        funcs.append(CanonFunction(
            sample_id=sample_id,
            name=f"fn_{j:02d}",
            start_address=0x401000 + j * 0x40,
            lines=lines,
            content_hash=content_hash_of("\n".join(lines)),
            source_line_count=len(lines),
        ))
    return CorpusRecord(
        sample_id=sample_id,
        functions=tuple(funcs),
        label=label,
        family=family,
        first_seen=first_seen,
        opt_level=OPT_LEVELS[index % len(OPT_LEVELS)],
        compiler="gcc" if index % 2 == 0 else "clang",
    )


def generate_corpus(
    families: int = 5,
    per_family: int = 40,
    benign: int = 200,
    noise: float = 0.1,
    seed: int = 42,
    funcs_per_sample: int = 12,
    benign_pool: int = 40,
    lines_per_func: int = 16,
) -> tuple[list[CorpusRecord], dict]:
    """Build the corpus; returns (records, parameters used)."""
    if not 0.0 <= noise < 1.0:
        raise ValueError(f"noise must lie in [0, 1), got {noise}")
    if funcs_per_sample > benign_pool:
        raise ValueError("benign pool smaller than functions per sample")
    rng = random.Random(seed)
    family_bases = {
        f"fam{f:02d}": [_base_function(rng, lines_per_func) for _ in range(funcs_per_sample)]
        for f in range(families)
    }
    benign_bases = [_base_function(rng, lines_per_func) for _ in range(benign_pool)]

    records = []
    for fam, bases in family_bases.items():
        for i in range(per_family):
            records.append(_make_record(
                sample_id=f"{fam}-s{i:03d}",
                label="malicious",
                family=fam,
                bases=bases,
                rng=rng,
                noise=noise,
                first_seen=_schedule(i, per_family, _MALICIOUS_SPAN_DAYS),
                index=i,
            ))
    for i in range(benign):
        picked = [benign_bases[b] for b in rng.sample(range(benign_pool), funcs_per_sample)]
        records.append(_make_record(
            sample_id=f"ben-s{i:03d}",
            label="benign",
            family=None,
            bases=picked,
            rng=rng,
            noise=noise,
            first_seen=_schedule(i, benign, _BENIGN_SPAN_DAYS),
            index=i,
        ))
    params = {
        "families": families,
        "per_family": per_family,
        "benign": benign,
        "noise": noise,
        "seed": seed,
        "funcs_per_sample": funcs_per_sample,
        "benign_pool": benign_pool,
        "lines_per_func": lines_per_func,
    }
    return records, params
