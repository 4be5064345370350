"""Command line entry points for the triage pipeline.

One subcommand per pipeline stage; everything reads and writes plain files
(function JSONL, corpus JSONL, KB directories, verdict JSON) so stages can
be chained or swapped freely. JSON goes to --out when given, stdout
otherwise.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import date
from pathlib import Path

from .calibrate import ValidationSample, grid_search
from .detector import SampleVerdict, Thresholds, scan_sample
from .embedding import ENDPOINT_ENV_VAR, ProviderConfig, embed_batch
from .errors import AsmragError
from .evalharness import (
    SplitSpec,
    build_kb_from_records,
    chronological_split,
    evaluate,
    loo_opt_split,
    read_corpus,
    write_corpus,
)
from .explain import ExplanationRequest, GeneratorConfig, build_prompt, generate
from .ingest import (
    ListingFormat,
    canonicalize,
    parse_listing,
    render_text,
    write_jsonl,
)
from .kb import KnowledgeBase
from .libfilter import Blocklist, build_lib_index, filter_sample
from .synth import generate_corpus


# -- shared argument plumbing ------------------------------------------------

def _parse_addr_range(text: str) -> tuple[int, int]:
    try:
        lo_s, hi_s = text.split(":")
        lo, hi = int(lo_s, 16), int(hi_s, 16)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected 0x<lo>:0x<hi>, got {text!r}"
        )
    return lo, hi


def _parse_grid(text: str) -> list[float]:
    """Inclusive a:b:step grid, endpoints rounded away from float drift."""
    try:
        a, b, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a:b:step, got {text!r}")
    if step <= 0 or b < a:
        raise argparse.ArgumentTypeError(f"bad grid bounds {text!r}")
    n = int((b - a) / step + 1e-9) + 1
    return [round(a + i * step, 10) for i in range(n)]


def _parse_ks(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def _add_embed_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("embedding")
    g.add_argument("--embed-endpoint", default="",
                   help=f"remote embedding endpoint (or set {ENDPOINT_ENV_VAR})")
    g.add_argument("--embed-model", default="asm-embedder")
    g.add_argument("--embed-timeout-ms", type=int, default=10_000)
    g.add_argument("--embed-retries", type=int, default=2)
    g.add_argument("--embed-seed", type=int, default=0,
                   help="hash encoder seed (local provider)")
    g.add_argument("--ngram", type=int, default=2,
                   help="hash encoder token n-gram size")


def _provider(args, dim: int) -> ProviderConfig:
    remote = bool(args.embed_endpoint or os.environ.get(ENDPOINT_ENV_VAR))
    return ProviderConfig(
        kind="remote" if remote else "hash",
        dim=dim,
        seed=args.embed_seed,
        ngram=args.ngram,
        endpoint=args.embed_endpoint,
        model_name=args.embed_model,
        timeout_ms=args.embed_timeout_ms,
        retries=args.embed_retries,
    )


def _add_threshold_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("thresholds")
    g.add_argument("--tau-func", type=float, default=0.70)
    g.add_argument("--tau-file", type=float, default=0.15)
    g.add_argument("--k", type=int, default=20)


def _emit(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _read_input(path: str) -> str:
    return sys.stdin.read() if path == "-" else Path(path).read_text()


def _load_canon_funcs(path: str, fmt: ListingFormat, sample_id: str,
                      addr_range: tuple[int, int] | None):
    raw = parse_listing(_read_input(path), fmt, sample_id=sample_id)
    lo, hi = addr_range if addr_range else (None, None)
    return [canonicalize(f, lo, hi) for f in raw]


def _validation_from_corpus(path: str, provider: ProviderConfig) -> list[ValidationSample]:
    samples = []
    for rec in read_corpus(path):
        vectors = embed_batch([render_text(f) for f in rec.functions], provider)
        samples.append(ValidationSample(
            sample_id=rec.sample_id, label=rec.label, vectors=tuple(vectors),
        ))
    return samples


# -- subcommands -------------------------------------------------------------

def _cmd_ingest(args) -> int:
    funcs = _load_canon_funcs(args.input, ListingFormat(args.format),
                              args.sample_id, args.addr_range)
    text = write_jsonl(funcs)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    print(f"ingested {len(funcs)} functions", file=sys.stderr)
    return 0


def _cmd_kb_build(args) -> int:
    records = read_corpus(getattr(args, "from"))
    provider = _provider(args, args.dim)
    kb = build_kb_from_records(records, provider)
    kb.save(args.out)
    _emit(kb.stats(), None)
    return 0


def _cmd_kb_stats(args) -> int:
    _emit(KnowledgeBase.load(args.kb).stats(), None)
    return 0


def _cmd_kb_promote(args) -> int:
    kb = KnowledgeBase.load(args.kb)
    verdict = SampleVerdict.from_json(json.loads(Path(args.verdict).read_text()))
    if verdict.anchor_vector is None or not verdict.c_best:
        print("verdict carries no anchor to promote", file=sys.stderr)
        return 1
    entry_id = kb.promote(
        verdict.anchor_vector,
        family=verdict.c_best,
        sample_id=verdict.sample_id,
        function_name=verdict.anchor_name or "anchor",
        lines=tuple(verdict.anchor_text.split("\n")) if verdict.anchor_text else None,
    )
    kb.save(args.kb)
    _emit({"promoted_entry_id": entry_id, "family": verdict.c_best}, None)
    return 0


def _cmd_libfilter_build(args) -> int:
    funcs = _load_canon_funcs(getattr(args, "from"), ListingFormat.FunctionJsonl,
                              "lib", None)
    provider = _provider(args, args.dim)
    lib = build_lib_index(funcs, provider)
    lib.save(args.out)
    _emit(lib.stats(), None)
    return 0


def _cmd_libfilter_apply(args) -> int:
    lib = KnowledgeBase.load(args.lib)
    blocklist = Blocklist.load(args.blocklist) if args.blocklist else None
    funcs = _load_canon_funcs(args.input, ListingFormat.FunctionJsonl,
                              args.sample_id, None)
    provider = _provider(args, lib.dim)
    vectors = embed_batch([render_text(f) for f in funcs], provider)
    kept, decisions = filter_sample(funcs, vectors, lib, blocklist, args.tau)
    audit = "".join(
        json.dumps({
            "sample_id": d.sample_id,
            "function_name": d.function_name,
            "blocklisted": d.blocklisted,
            "best_lib_sim": d.best_lib_sim,
            "best_lib_entry": d.best_lib_entry,
            "filtered": d.filtered,
        }, sort_keys=True) + "\n"
        for d in decisions
    )
    if args.out:
        Path(args.out).write_text(audit)
    else:
        sys.stdout.write(audit)
    if args.survivors:
        Path(args.survivors).write_text(write_jsonl([f for f, _ in kept]))
    print(f"kept {len(kept)} of {len(funcs)} functions", file=sys.stderr)
    return 0


def _cmd_scan(args) -> int:
    kb = KnowledgeBase.load(args.kb)
    lib = KnowledgeBase.load(args.lib) if args.lib else None
    blocklist = Blocklist.load(args.blocklist) if args.blocklist else None
    provider = _provider(args, kb.dim)
    thresholds = Thresholds(tau_func=args.tau_func, tau_file=args.tau_file, k=args.k)
    funcs = _load_canon_funcs(args.input, ListingFormat(args.format),
                              args.sample_id, args.addr_range)
    verdict = scan_sample(
        funcs, kb.snapshot(), thresholds, provider,
        lib=lib, blocklist=blocklist, tau_lib=args.tau_lib,
    )
    _emit(verdict.to_json(include_neighborhoods=True), args.out)
    return 0


def _cmd_calibrate(args) -> int:
    kb = KnowledgeBase.load(args.kb)
    provider = _provider(args, kb.dim)
    validation = _validation_from_corpus(args.val, provider)
    report = grid_search(
        validation, args.grid_func, args.grid_file, args.fpr_cap, kb, args.k,
    )
    _emit(report.to_json(), args.out)
    return 0


def _cmd_eval(args) -> int:
    kb = KnowledgeBase.load(args.kb)
    lib = KnowledgeBase.load(args.lib) if args.lib else None
    blocklist = Blocklist.load(args.blocklist) if args.blocklist else None
    provider = _provider(args, kb.dim)
    thresholds = Thresholds(tau_func=args.tau_func, tau_file=args.tau_file, k=args.k)
    report = evaluate(
        read_corpus(args.test), kb, thresholds, provider,
        lib=lib, blocklist=blocklist, tau_lib=args.tau_lib,
        recall_ks=tuple(args.recall_ks),
    )
    _emit(report.to_json(), args.out)
    return 0


def _cmd_synth(args) -> int:
    records, params = generate_corpus(
        families=args.families,
        per_family=args.per_family,
        benign=args.benign,
        noise=args.noise,
        seed=args.seed,
        funcs_per_sample=args.funcs_per_sample,
        benign_pool=args.benign_pool,
        lines_per_func=args.lines_per_func,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(records, out / "corpus.jsonl")
    (out / "params.json").write_text(json.dumps(params, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(records)} samples to {out / 'corpus.jsonl'}", file=sys.stderr)
    return 0


def _cmd_split(args) -> int:
    records = read_corpus(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.loo_opt:
        kb_side, test_side = loo_opt_split(records, args.loo_opt)
        write_corpus(kb_side, out / "kb.jsonl")
        write_corpus(test_side, out / "test.jsonl")
        counts = {"kb": len(kb_side), "test": len(test_side)}
    else:
        spec = SplitSpec(
            kb_cutoff=date.fromisoformat(args.kb_cutoff),
            val_start=date.fromisoformat(args.val_start),
            val_end=date.fromisoformat(args.val_end),
            test_start=date.fromisoformat(args.test_start),
        )
        result = chronological_split(records, spec)
        write_corpus(result.kb, out / "kb.jsonl")
        write_corpus(result.val, out / "val.jsonl")
        write_corpus(result.test, out / "test.jsonl")
        if result.unassigned:
            write_corpus(result.unassigned, out / "unassigned.jsonl")
        counts = {
            "kb": len(result.kb), "val": len(result.val),
            "test": len(result.test), "unassigned": len(result.unassigned),
        }
    _emit(counts, None)
    return 0


def _cmd_explain(args) -> int:
    verdict = SampleVerdict.from_json(json.loads(Path(args.verdict).read_text()))
    if verdict.anchor_text is None or not verdict.c_best:
        print("verdict carries no anchor to explain", file=sys.stderr)
        return 1
    proof_text = "(proof listing unavailable)"
    proof_sample_id = "unknown"
    proof_first_seen = None
    if args.kb and verdict.proof_entry_id is not None:
        entry = KnowledgeBase.load(args.kb).entry(verdict.proof_entry_id)
        proof_sample_id = entry.sample_id
        proof_first_seen = entry.first_seen
        if entry.lines:
            proof_text = "\n".join(entry.lines)
    req = ExplanationRequest(
        anchor_text=verdict.anchor_text,
        proof_text=proof_text,
        family=verdict.c_best,
        proof_sample_id=proof_sample_id,
        proof_first_seen=proof_first_seen,
    )
    cfg = GeneratorConfig(kind=args.generator, endpoint=args.endpoint,
                          model_name=args.model)
    explanation = generate(req, cfg)
    _emit({
        "text": explanation.text,
        "generator": explanation.generator.value,
        "request_digest": explanation.request_digest,
        "unverified_claims": explanation.unverified_claims,
        "prompt": build_prompt(req),
    }, args.out)
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    kb = KnowledgeBase.load(args.kb)  # fail fast on a bad KB before binding
    provider = _provider(args, kb.dim)
    static = args.static
    if static is None:
        candidate = Path("frontend") / "dist"
        static = candidate if candidate.is_dir() else None
    serve(
        args.kb,
        provider,
        host=args.host,
        port=args.port,
        thresholds=Thresholds(tau_func=args.tau_func, tau_file=args.tau_file, k=args.k),
        generator=GeneratorConfig(kind=args.generator, endpoint=args.endpoint,
                                  model_name=args.model),
        lib_dir=args.lib,
        blocklist_path=args.blocklist,
        tau_lib=args.tau_lib,
        static_dir=static,
    )
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asmrag",
        description="assembly-level retrieval-augmented malware triage",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a listing into function JSONL")
    p.add_argument("input", help="listing path, or - for stdin")
    p.add_argument("--format", choices=["flatasm", "jsonl"], default="flatasm")
    p.add_argument("--addr-range", type=_parse_addr_range, default=None,
                   metavar="0xLO:0xHI",
                   help="image address range rewritten to MEM_PTR")
    p.add_argument("--sample-id", default="sample")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_ingest)

    kb = sub.add_parser("kb", help="knowledge base operations")
    kbsub = kb.add_subparsers(dest="kb_command", required=True)

    p = kbsub.add_parser("build", help="embed a corpus into a KB directory")
    p.add_argument("--from", required=True, help="corpus JSONL")
    p.add_argument("--out", required=True, help="KB directory")
    p.add_argument("--dim", type=int, default=256)
    _add_embed_flags(p)
    p.set_defaults(func=_cmd_kb_build)

    p = kbsub.add_parser("stats", help="print KB statistics")
    p.add_argument("--kb", required=True)
    p.set_defaults(func=_cmd_kb_stats)

    p = kbsub.add_parser("promote", help="promote a verdict's anchor into the KB")
    p.add_argument("--kb", required=True)
    p.add_argument("--verdict", required=True, help="verdict JSON from scan")
    p.set_defaults(func=_cmd_kb_promote)

    lf = sub.add_parser("libfilter", help="library prefilter operations")
    lfsub = lf.add_subparsers(dest="libfilter_command", required=True)

    p = lfsub.add_parser("build", help="build a library index from function JSONL")
    p.add_argument("--from", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=256)
    _add_embed_flags(p)
    p.set_defaults(func=_cmd_libfilter_build)

    p = lfsub.add_parser("apply", help="filter functions, emit a decision audit")
    p.add_argument("input", help="function JSONL path, or - for stdin")
    p.add_argument("--lib", required=True)
    p.add_argument("--tau", type=float, default=0.95)
    p.add_argument("--blocklist", help="file of one lowercase hex hash per line")
    p.add_argument("--sample-id", default="sample")
    p.add_argument("--out", help="decision audit JSONL (default stdout)")
    p.add_argument("--survivors", help="write surviving functions as JSONL")
    _add_embed_flags(p)
    p.set_defaults(func=_cmd_libfilter_apply)

    p = sub.add_parser("scan", help="scan one sample end to end")
    p.add_argument("input", help="listing path, or - for stdin")
    p.add_argument("--kb", required=True)
    p.add_argument("--lib")
    p.add_argument("--blocklist")
    p.add_argument("--tau-lib", type=float, default=0.95)
    p.add_argument("--format", choices=["flatasm", "jsonl"], default="flatasm")
    p.add_argument("--addr-range", type=_parse_addr_range, default=None,
                   metavar="0xLO:0xHI")
    p.add_argument("--sample-id", default="sample")
    p.add_argument("--out")
    _add_threshold_flags(p)
    _add_embed_flags(p)
    p.set_defaults(func=_cmd_scan)

    p = sub.add_parser("calibrate", help="grid-search detection thresholds")
    p.add_argument("--kb", required=True)
    p.add_argument("--val", required=True, help="labeled validation corpus JSONL")
    p.add_argument("--grid-func", type=_parse_grid, default=_parse_grid("0.5:0.85:0.05"))
    p.add_argument("--grid-file", type=_parse_grid, default=_parse_grid("0.05:0.30:0.05"))
    p.add_argument("--fpr-cap", type=float, default=0.01)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--out")
    _add_embed_flags(p)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("eval", help="evaluate a KB against a labeled test corpus")
    p.add_argument("--kb", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--lib")
    p.add_argument("--blocklist")
    p.add_argument("--tau-lib", type=float, default=0.95)
    p.add_argument("--recall-ks", "--ks", dest="recall_ks", type=_parse_ks,
                   default=[1, 5, 10, 20, 50], metavar="1,5,10,20,50")
    p.add_argument("--out")
    _add_threshold_flags(p)
    _add_embed_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--families", type=int, default=5)
    p.add_argument("--per-family", type=int, default=40)
    p.add_argument("--benign", type=int, default=200)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--funcs-per-sample", type=int, default=12)
    p.add_argument("--benign-pool", type=int, default=40)
    p.add_argument("--lines-per-func", type=int, default=16)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("split", help="split a corpus chronologically or by opt level")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--kb-cutoff", default="2022-06-01")
    p.add_argument("--val-start", default="2022-06-01")
    p.add_argument("--val-end", default="2023-05-31")
    p.add_argument("--test-start", default="2023-06-01")
    p.add_argument("--loo-opt", choices=["O0", "O1", "O2", "O3", "Os"],
                   help="hold out one optimization level instead of splitting by date")
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("explain", help="explain a verdict's anchor/proof pair")
    p.add_argument("--verdict", required=True, help="verdict JSON from scan")
    p.add_argument("--generator", choices=["stub", "remote"], default="stub")
    p.add_argument("--kb", help="KB directory for proof listing lookup")
    p.add_argument("--endpoint", default="", help="remote generation endpoint")
    p.add_argument("--model", default="triage-explainer")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_explain)

    p = sub.add_parser("serve", help="run the triage review service")
    p.add_argument("--kb", required=True)
    p.add_argument("--lib")
    p.add_argument("--blocklist")
    p.add_argument("--tau-lib", type=float, default=0.95)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--static", help="UI bundle directory (default frontend/dist if present)")
    p.add_argument("--generator", choices=["stub", "remote"], default="stub")
    p.add_argument("--endpoint", default="", help="remote generation endpoint")
    p.add_argument("--model", default="triage-explainer")
    _add_threshold_flags(p)
    _add_embed_flags(p)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AsmragError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
