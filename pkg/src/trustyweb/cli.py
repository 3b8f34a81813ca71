"""Command line front end for the trustyweb package.

Exit codes: 0 success, 1 usage error, 2 I/O or network error, 3 digest
mismatch, 4 quorum rejected, 5 untrusted resolution.

Every option that takes a value can also come from an environment variable
named ``TRUSTY_<OPTION>`` (``--store`` -> ``TRUSTY_STORE``); the flag wins.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Callable, Optional

from .corpus import BenchMode, CorpusError, UnitKind, bench_chunking, bench_hash, format_table, ingest, publish_corpus
from .digest import InvalidUri, Match, TrustyUri, compute_digest, mint, verify
from .net import FetchError, Service, http_fetch, parse_listen
from .resolver import LinkIndexOutOfRange, ResolutionError, ResolutionTrace, Resolver
from .search import CrawlEmpty, SearchApp, SearchIndex, read_seeds
from .store import PublisherStore, StoreApp, StoreClient, StoreClientError, StoreError
from .trust import Action, PropagationFromUntrusted, TrustContext
from .validator import AllValidatorsUnreachable, SeenLedger, Validator, ValidatorApp, quorum_validate

log = logging.getLogger("trustyweb")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_MISMATCH, EXIT_REJECTED, EXIT_UNTRUSTED = range(6)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _env(name: str, default: Any = None) -> Any:
    return os.environ.get(f"TRUSTY_{name.upper().replace('-', '_')}", default)


class _Out:
    def __init__(self, mode: str) -> None:
        self.mode = mode

    def emit(self, payload: Any, text: Optional[str] = None) -> None:
        if self.mode == "json":
            print(json.dumps(payload, ensure_ascii=False, indent=2))
        else:
            print(text if text is not None else json.dumps(payload, ensure_ascii=False, indent=2))


def _require(args: argparse.Namespace, *names: str) -> None:
    missing = [n for n in names if getattr(args, n.replace("-", "_")) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join(f"--{n}" for n in missing))


def _load_ctx(args: argparse.Namespace) -> TrustContext:
    if not args.config:
        raise UsageError("--config (a trust context JSON file) is required")
    try:
        return TrustContext.load(args.config)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read trust context {args.config}: {exc}") from exc


# -- subcommands -------------------------------------------------------------


def cmd_mint(args, out: _Out) -> int:
    _require(args, "base")
    uri = mint(args.base, Path(args.file).read_bytes())
    out.emit({"uri": str(uri), "digest": uri.digest.hex}, str(uri))
    return EXIT_OK


def cmd_verify(args, out: _Out) -> int:
    uri = TrustyUri.parse(args.uri)
    data = Path(args.file).read_bytes() if args.file else http_fetch(args.uri).content
    outcome = verify(uri, data)
    if isinstance(outcome, Match):
        out.emit({"result": "Match", "digest": outcome.digest.hex}, "Match")
        return EXIT_OK
    out.emit(
        {"result": "Mismatch", "expected": outcome.expected.hex, "actual": outcome.actual.hex},
        f"Mismatch\n  expected {outcome.expected.hex}\n  actual   {outcome.actual.hex}",
    )
    return EXIT_MISMATCH


def cmd_publish(args, out: _Out) -> int:
    _require(args, "store", "author")
    client = StoreClient(args.store)
    record, created = client.publish(
        Path(args.file).read_bytes(),
        args.author,
        args.media_type,
        args.parent,
        external_parent=args.external_parent,
    )
    out.emit(record.to_json() | {"created": created})
    return EXIT_OK


def _serve(app: Any, listen: str, what: str) -> int:
    host, port = parse_listen(listen)
    service = Service(app, host, port)
    if callable(app):  # deferred construction, once the bound address is known
        service.httpd.app = app(service)
    print(f"{what} listening on {service.url}", file=sys.stderr, flush=True)
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        service.httpd.server_close()
    return EXIT_OK


def cmd_serve_store(args, out: _Out) -> int:
    _require(args, "listen", "data")
    if args.base:
        mint(args.base, b"")  # reject a bad base before binding
    return _serve(
        lambda service: StoreApp(PublisherStore(args.data, args.base or service.url + "/")),
        args.listen,
        "publisher store",
    )


def cmd_serve_validator(args, out: _Out) -> int:
    _require(args, "listen", "data")
    ledger = SeenLedger(Path(args.data) / "seen.jsonl")
    return _serve(
        lambda service: ValidatorApp(Validator(args.id or service.authority, ledger)),
        args.listen,
        "validator",
    )


def cmd_serve_index(args, out: _Out) -> int:
    _require(args, "listen", "index")
    return _serve(SearchApp(SearchIndex.load(args.index)), args.listen, "search index")


def cmd_crawl(args, out: _Out) -> int:
    _require(args, "index", "seeds")
    index = SearchIndex.load(args.index, verify=not args.naive)
    try:
        report = index.crawl(read_seeds(args.seeds), int(args.budget))
    except CrawlEmpty as exc:
        log.error("%s", exc)
        return EXIT_IO
    index.save(args.index)
    out.emit(
        report.to_json(),
        f"indexed {report.indexed}, rejected {len(report.rejected)}, "
        f"failed {len(report.failed)}, pending {len(report.pending)}",
    )
    return EXIT_OK


def cmd_search(args, out: _Out) -> int:
    _require(args, "index")
    hits = SearchIndex.load(args.index).search(args.terms)
    payload = [{"uri": str(e.uri), "score": s, "verified_at": e.verified_at} for e, s in hits]
    out.emit(payload, "\n".join(f"{h['score']:>4}  {h['uri']}" for h in payload))
    return EXIT_OK


def cmd_validate(args, out: _Out) -> int:
    _require(args, "validators")
    endpoints = [v.strip() for v in args.validators.split(",") if v.strip()]
    threshold = int(args.threshold) if args.threshold else None
    try:
        outcome = quorum_validate(TrustyUri.parse(args.uri), endpoints, threshold)
    except AllValidatorsUnreachable as exc:
        log.error("no validator reachable: %s", exc)
        return EXIT_IO
    verdict = "accepted" if outcome.accepted else "rejected"
    out.emit(outcome.to_json(), f"{verdict}: {outcome.agreeing}/{len(endpoints)} agree (need {outcome.threshold})")
    return EXIT_OK if outcome.accepted else EXIT_REJECTED


def _emit_trace(trace: ResolutionTrace, args, out: _Out) -> int:
    if args.trace_out:
        Path(args.trace_out).write_text(trace.dumps(), "utf-8")
    if out.mode == "json":
        sys.stdout.write(trace.dumps())
    else:
        for step in trace.steps:
            flag = "" if step.verified is None else (" [verified]" if step.verified else " [MISMATCH]")
            note = f" ({step.note})" if step.note else ""
            print(f"{step.action:>9}  {step.peer:<22} {step.subject}{flag}{note}")
        final = trace.final
        print(f"=> {final.verdict.value} ({final.rationale.value}, action {final.required_action.value})")
    return EXIT_OK if trace.trusted else EXIT_UNTRUSTED


def _resolver(args) -> Resolver:
    return Resolver(
        _load_ctx(args),
        paranoid=getattr(args, "paranoid", False),
        unverified_host_action=(
            Action.REVALIDATE_VIA_TRUSTED if getattr(args, "revalidate_first", False) else Action.LOCAL_DIGEST_CHECK
        ),
    )


def cmd_resolve(args, out: _Out) -> int:
    target = " ".join(args.target)
    if len(args.target) == 1 and "://" in target:
        target = TrustyUri.parse(target)
    try:
        trace = _resolver(args).resolve(target, source=args.source)
    except ResolutionError as exc:
        trace = exc.trace
    return _emit_trace(trace, args, out)


def cmd_navigate(args, out: _Out) -> int:
    trace = ResolutionTrace.loads(Path(args.trace_file).read_text("utf-8"))
    try:
        result = _resolver(args).navigate(trace, int(args.link_index))
    except ResolutionError as exc:
        result = exc.trace
    except (LinkIndexOutOfRange, PropagationFromUntrusted) as exc:
        raise UsageError(str(exc)) from exc
    return _emit_trace(result, args, out)


def cmd_ingest(args, out: _Out) -> int:
    units, stats = ingest(args.corpus)
    if args.stats:
        out.emit(stats.to_json(), "\n".join(f"{k}: {v}" for k, v in stats.to_json().items()))
    else:
        listing = [{"unit": u.label, "kind": u.kind.value, "digest": compute_digest(u.data).hex} for u in units]
        out.emit(listing, "\n".join(f"{x['kind']:<8} {x['unit']:<8} {x['digest']}" for x in listing))
    return EXIT_OK


def cmd_bench(args, out: _Out) -> int:
    units, _ = ingest(args.corpus)
    kinds = {UnitKind(k) for k in args.kinds.split(",")} if args.kinds else set(UnitKind)
    units = [u for u in units if u.kind in kinds]
    results = bench_hash(units, int(args.reps), BenchMode(args.mode))
    payload: dict[str, Any] = {"mode": args.mode, "results": {k.value: r.to_json() for k, r in results.items()}}
    text = format_table(results)
    if args.chunk_demo:
        full = next((u for u in units if u.kind is UnitKind.FULL_TEXT), units[-1])
        chunking = bench_chunking(full.data)
        payload["chunking"] = chunking.to_json()
        text += (
            f"\n\n1-octet streaming {chunking.chunked_ms:.3f} ms vs whole buffer "
            f"{chunking.whole_ms:.3f} ms over {chunking.size} octets (x{chunking.ratio:.1f})"
        )
    out.emit(payload, text)
    return EXIT_OK if all(r.digest_consistency for r in results.values()) else EXIT_MISMATCH


def cmd_publish_corpus(args, out: _Out) -> int:
    _require(args, "store")
    units, _ = ingest(args.corpus)
    summary = publish_corpus(units, StoreClient(args.store), author=args.author)
    out.emit(
        summary.to_json(),
        f"units {summary.units}, created {summary.created}, already present {summary.existing}, "
        f"errors {len(summary.errors)}",
    )
    return EXIT_OK if not summary.errors else EXIT_IO


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="trust context JSON (TRUSTY_CONFIG)")
    common.add_argument("--output", choices=("json", "text"), default=argparse.SUPPRESS)
    common.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)

    parser = _Parser(prog="trustyweb", description=__doc__.split("\n\n")[0], parents=[common])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name: str, func: Callable, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help, description=help, parents=[common])
        p.set_defaults(func=func)
        return p

    p = add("mint", cmd_mint, "print the trusty URI of a file under a base URI")
    p.add_argument("--base", default=_env("base"))
    p.add_argument("file")

    p = add("verify", cmd_verify, "check a file (or the fetched URI) against a trusty URI")
    p.add_argument("uri")
    p.add_argument("file", nargs="?")

    p = add("publish", cmd_publish, "publish a file to a publisher store")
    p.add_argument("--store", default=_env("store"))
    p.add_argument("--author", default=_env("author"))
    p.add_argument("--parent", default=_env("parent"))
    p.add_argument("--external-parent", action="store_true", help="parent lives outside this store")
    p.add_argument("--media-type", default=_env("media_type", "application/octet-stream"))
    p.add_argument("file")

    p = add("serve-store", cmd_serve_store, "run the publisher HTTP service")
    p.add_argument("--listen", default=_env("listen", "127.0.0.1:8080"))
    p.add_argument("--base", default=_env("base"), help="URI prefix for minted URIs (default: the listen URL)")
    p.add_argument("--data", default=_env("data"))

    p = add("serve-validator", cmd_serve_validator, "run a validator HTTP service")
    p.add_argument("--listen", default=_env("listen", "127.0.0.1:8090"))
    p.add_argument("--data", default=_env("data"))
    p.add_argument("--id", default=_env("id"), help="validator id (default: listen address)")

    p = add("serve-index", cmd_serve_index, "serve a crawled index over HTTP")
    p.add_argument("--listen", default=_env("listen", "127.0.0.1:8070"))
    p.add_argument("--index", default=_env("index"))

    p = add("crawl", cmd_crawl, "crawl from seed URIs into an index directory")
    p.add_argument("--index", default=_env("index"))
    p.add_argument("--seeds", default=_env("seeds"), help="file with one trusty URI per line")
    p.add_argument("--budget", type=int, default=_env("budget", "100"))
    p.add_argument("--naive", action="store_true", help="index without verifying (test fixture)")

    p = add("search", cmd_search, "query an index directory")
    p.add_argument("--index", default=_env("index"))
    p.add_argument("terms", nargs="+")

    p = add("validate", cmd_validate, "ask a validator quorum about a trusty URI")
    p.add_argument("--validators", default=_env("validators"), help="comma-separated endpoints")
    p.add_argument("--threshold", default=_env("threshold"))
    p.add_argument("uri")

    for name, func, help in (
        ("resolve", cmd_resolve, "resolve search terms or a trusty URI"),
        ("navigate", cmd_navigate, "follow a trusty link of a resolved page"),
    ):
        p = add(name, func, help)
        p.add_argument("--paranoid", action="store_true", help="never fetch first from an untrusted host")
        p.add_argument("--revalidate-first", action="store_true", help="prefer trusted re-fetch over local check")
        p.add_argument("--trace-out", default=_env("trace_out"), help="also write the trace to this file")
        if name == "resolve":
            p.add_argument("--source", default=_env("source"), help="search service to ask (default: a trusted one)")
            p.add_argument("target", nargs="+", help="search terms or one trusty URI")
        else:
            p.add_argument("trace_file")
            p.add_argument("link_index", type=int)

    p = add("ingest", cmd_ingest, "parse a surah|ayah|text corpus and print statistics")
    p.add_argument("corpus")
    p.add_argument("--stats", action="store_true")

    p = add("bench", cmd_bench, "time digest computation over a corpus")
    p.add_argument("corpus")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--mode", choices=[m.value for m in BenchMode], default=BenchMode.IN_MEMORY.value)
    p.add_argument("--kinds", help="comma-separated subset of Ayah,Surah,FullText")
    p.add_argument("--chunk-demo", action="store_true", help="also compare 1-octet streaming with whole-buffer")

    p = add("publish-corpus", cmd_publish_corpus, "publish every corpus unit to a store")
    p.add_argument("corpus")
    p.add_argument("--store", default=_env("store"))
    p.add_argument("--author", default=_env("author", "corpus"))
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.config = getattr(args, "config", None) or _env("config")
    args.output = getattr(args, "output", None) or _env("output", "text")
    args.verbose = getattr(args, "verbose", False)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    if args.output not in ("json", "text"):
        print("trustyweb: error: --output must be json or text", file=sys.stderr)
        return EXIT_USAGE
    out = _Out(args.output)
    try:
        return args.func(args, out)
    except UsageError as exc:
        print(f"trustyweb: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CorpusError as exc:
        print(f"trustyweb: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (InvalidUri, ValueError) as exc:
        print(f"trustyweb: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FetchError, StoreError, StoreClientError) as exc:
        print(f"trustyweb: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
