"""Exit criteria for the package, one test per criterion.

Each test prints a ``criterion N PASS|FAIL`` line; the lines are repeated in
the pytest terminal summary. Run just these with ``pytest -m acceptance``.
"""

import contextlib
import io
import itertools
import json
import random
import time

import pytest
import requests

from conftest import ACCEPTANCE
from goldens import CASES, expected_lines
from oracles import DATA, nist_short_vectors, sha256_reference, sha256sum_many
from trustyweb.corpus import BenchMode, UnitKind, bench_chunking, bench_hash, ingest
from trustyweb.digest import Match, Mismatch, compute_digest, compute_digest_streaming, mint, verify
from trustyweb.harness import SCENARIOS, FixtureNetwork, MirrorApp, run_scenario
from trustyweb.net import Service
from trustyweb.resource import Resource
from trustyweb.search import SearchIndex
from trustyweb.store import PublisherStore, StoreApp
from trustyweb.trust import Action, Case, TrustContext, Verdict, assess
from trustyweb.validator import Validator, quorum_validate

pytestmark = pytest.mark.acceptance

CORPUS = DATA / "quran-uthmani.txt"
MIB = 1 << 20
REPORTED_DIGEST = "5c79fc50b16917aeb6e153f51d1c92c1abbef2f43ea5d3a96cdb643617ee70f0"


@contextlib.contextmanager
def criterion(number: int | str, title: str, limit_s: float | None = None):
    """Time the block, then record and assert a single pass/fail line."""
    notes: list[str] = []
    start = time.perf_counter()

    def record(ok: bool, detail: str) -> None:
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE.append(line)
        print(line)

    try:
        yield notes
    except BaseException as exc:
        record(False, f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        raise
    elapsed = time.perf_counter() - start
    within = limit_s is None or elapsed < limit_s
    timing = f"{elapsed:.1f} s" + (f" (limit {limit_s:.0f} s)" if limit_s else "")
    record(within, "; ".join(notes + [timing]))
    assert within, f"criterion {number} took {elapsed:.1f} s"


def test_01_digest_matches_independent_oracles():
    with criterion(1, "digest oracle equivalence", limit_s=10) as notes:
        vectors = nist_short_vectors()
        bad = [md for msg, md in vectors if compute_digest(msg).hex != md]
        assert not bad, f"{len(bad)} NIST vectors differ"
        notes.append(f"{len(vectors)} NIST vectors exact")

        rng = random.Random(20240101)
        pool = rng.randbytes(2 * MIB)
        sizes = [0, 1, 55, 56, 63, 64, 65, MIB] + [rng.randint(0, MIB) for _ in range(992)]
        blobs = []
        for n in sizes:
            off = rng.randint(0, len(pool) - n)
            blobs.append(pool[off : off + n])
        ours = [compute_digest(b).hex for b in blobs]
        reference = sha256sum_many(blobs)
        differing = sum(a != b for a, b in zip(ours, reference))
        assert differing == 0, f"{differing} of {len(blobs)} random inputs differ from sha256sum"
        small = [b for b in blobs if len(b) <= 2048]
        assert all(compute_digest(b).hex == sha256_reference(b) for b in small)
        notes.append(f"{len(blobs)} random inputs up to 1 MiB exact vs coreutils sha256sum")


def _mutate(rng: random.Random, data: bytes) -> bytes:
    choice = rng.randrange(3) if data else 2
    if choice == 0:  # flip one bit
        i = rng.randrange(len(data))
        return data[:i] + bytes([data[i] ^ (1 << rng.randrange(8))]) + data[i + 1 :]
    if choice == 1:  # drop one octet
        i = rng.randrange(len(data))
        return data[:i] + data[i + 1 :]
    i = rng.randint(0, len(data))  # insert one octet
    return data[:i] + bytes([rng.randrange(256)]) + data[i:]


def test_02_roundtrip_and_tamper_property():
    with criterion(2, "roundtrip + tamper property", limit_s=30) as notes:
        rng = random.Random(7)
        hosts = ["example.org", "h1.test:8080", "127.0.0.1:9", "xn--nxasmq6b.example"]
        failures = 0
        for _ in range(10_000):
            content = rng.randbytes(rng.randint(0, 4096))
            prefix = "/".join(f"p{rng.randrange(100)}" for _ in range(rng.randrange(3)))
            base = f"{rng.choice(['http', 'https'])}://{rng.choice(hosts)}/{prefix}"
            uri = mint(base, content)
            ok = isinstance(verify(uri, content), Match)
            ok &= isinstance(verify(uri, _mutate(rng, content)), Mismatch)
            failures += not ok
        assert failures == 0, f"{failures} failing pairs"
        notes.append("10000 pairs, 0 failures")


def test_03_streaming_equals_in_memory(tmp_path):
    with criterion(3, "streaming equivalence") as notes:
        rng = random.Random(3)
        files = [CORPUS]
        for n in (0, 1, 4095, 4096, 65537, 300_000):
            path = tmp_path / f"random-{n}.bin"
            path.write_bytes(rng.randbytes(n))
            files.append(path)
        reference = sha256sum_many([p.read_bytes() for p in files])
        checked = 0
        for path, ref in zip(files, reference):
            whole = compute_digest(path.read_bytes())
            assert whole.hex == ref
            for chunk in (1, 7, 4096, 65536):
                with open(path, "rb") as fh:
                    assert compute_digest_streaming(fh, chunk) == whole, f"{path.name} chunk {chunk}"
                checked += 1
        units, _ = ingest(CORPUS)
        full = next(u for u in units if u.kind is UnitKind.FULL_TEXT).data
        for chunk in (1, 7, 4096, 65536):
            assert compute_digest_streaming(io.BytesIO(full), chunk) == compute_digest(full)
        notes.append(f"{checked} file/chunk combinations plus the full text, all equal")


def test_04_corpus_counts():
    with criterion(4, "corpus counts") as notes:
        units, stats = ingest(CORPUS)
        assert (stats.surah_count, stats.ayah_count) == (114, 6236), stats
        notes.append(f"surahs {stats.surah_count}, ayahs {stats.ayah_count}")
        notes.append(
            f"informational: words {stats.total_words} (reported 78245), "
            f"distinct {stats.distinct_words} (reported 14870)"
        )
        full = next(u for u in units if u.kind is UnitKind.FULL_TEXT).data
        candidates = {compute_digest(CORPUS.read_bytes()).hex, compute_digest(full).hex}
        notes.append(f"informational: reported corpus digest {REPORTED_DIGEST[:8]} "
                     f"{'reproduced' if REPORTED_DIGEST in candidates else 'not reproduced with these bytes'}")


@pytest.fixture(scope="module")
def published(tmp_path_factory):
    """A store holding one page, plus a mirror serving that page with one octet altered."""
    host = Service()
    store = PublisherStore(tmp_path_factory.mktemp("store"), host.url)
    host.httpd.app = StoreApp(store)
    with host, Service(MirrorApp(store, tampering=True)) as mirror:
        record = store.publish(Resource(b"<p>first edition</p>", "text/html; charset=utf-8"), "ann")
        yield store, record, mint(mirror.url, b"<p>first edition</p>")


def test_05a_publish_once(published):
    store, original, _ = published
    with criterion("5a", "publish-once: republish and revision") as notes:
        size = len(store)
        again = store.publish(Resource(b"<p>first edition</p>", original.media_type), "ann")
        assert again == original and len(store) == size
        revised = store.publish(Resource(b"<p>second edition</p>", original.media_type), "ann", original.uri)
        assert revised.uri != original.uri and len(store) == size + 1
        notes.append("republish leaves size unchanged, revision gets a new URI")


def test_05b_tamper_caught_by_verify(published):
    _, original, tampered_uri = published
    with criterion("5b", "publish-once: tamper caught by verify") as notes:
        assert tampered_uri.digest == original.digest
        served = requests.get(str(tampered_uri), timeout=5).content
        assert served != original_bytes(published)
        assert isinstance(verify(tampered_uri, served), Mismatch)
        notes.append("Mismatch on bytes served by the mirror")


def test_05c_tamper_caught_by_crawler(published):
    _, _, tampered_uri = published
    with criterion("5c", "publish-once: tamper caught by crawler") as notes:
        report = SearchIndex().crawl([tampered_uri], budget=3)
        assert [u for u, _ in report.rejected] == [tampered_uri] and report.indexed == 0
        notes.append("URI on the rejected list, nothing indexed")


def test_05d_tamper_caught_by_validator(published):
    _, _, tampered_uri = published
    with criterion("5d", "publish-once: tamper caught by validator") as notes:
        assert Validator("v").validate(tampered_uri).match is False
        notes.append("validator report match=false")


def original_bytes(published):
    store, record, _ = published
    return store.fetch(record.digest)[0].content


def test_06_trust_matrix():
    with criterion(6, "trust-matrix table") as notes:
        uri = mint("https://h1/", b"x")
        ctx = TrustContext.create(["s1"], ["h1"])
        table = {
            ("s1", "h1"): (Verdict.TRUSTED, Action.NONE, Case.S_PLUS_H_PLUS),
            ("s1", "h2"): (Verdict.TRUSTED_URI_CONTENT_UNVERIFIED, Action.LOCAL_DIGEST_CHECK, Case.S_PLUS_H_MINUS),
            ("s2", "h1"): (Verdict.TRUSTED, Action.NONE, Case.S_MINUS_H_PLUS),
            ("s2", "h2"): (Verdict.UNTRUSTED, Action.REVALIDATE_VIA_TRUSTED, Case.S_MINUS_H_MINUS),
        }
        for (s, h), expected in table.items():
            d = assess(s, h, uri, ctx)
            assert (d.verdict, d.required_action, d.rationale) == expected, (s, h)
        notes.append("4 cells exact")

        rank = {Verdict.UNTRUSTED: 0, Verdict.TRUSTED_URI_CONTENT_UNVERIFIED: 1, Verdict.TRUSTED: 2}
        names = ["a", "b", "c"]
        subsets = [frozenset(c) for r in range(4) for c in itertools.combinations(names, r)]
        pairs = 0
        for s_small, h_small in itertools.product(subsets, repeat=2):
            small = TrustContext(s_small, h_small)
            for s_big, h_big in itertools.product(subsets, repeat=2):
                if not (s_small <= s_big and h_small <= h_big):
                    continue
                big = TrustContext(s_big, h_big)
                for s, h in itertools.product(names, repeat=2):
                    assert rank[assess(s, h, uri, big).verdict] >= rank[assess(s, h, uri, small).verdict]
                    pairs += 1
        notes.append(f"monotone under context growth over {pairs} exhaustive cases")


def test_07_golden_traces():
    with criterion(7, "golden-trace scenarios A-E", limit_s=60) as notes:
        nets = {}
        try:
            for stem, (scenario, options) in CASES.items():
                key = tuple(sorted(options.items()))
                if key not in nets:
                    nets[key] = FixtureNetwork(**options).start()
                net = nets[key]
                assert net.normalize(run_scenario(scenario, net)) == expected_lines(stem), stem
            notes.append(f"{len(CASES)} traces equal their goldens")

            tampered = 0
            for key, net in nets.items():
                if not dict(key).get("tamper_h2"):
                    continue
                for scenario in SCENARIOS:
                    trace = run_scenario(scenario, net)
                    if trace.trusted:
                        assert compute_digest(trace.content.content) == trace.uri.digest
                    tampered += 1
            notes.append(f"{tampered} tampering-host runs never Trusted with tampered bytes")
        finally:
            for net in nets.values():
                net.stop()


def test_08_quorum():
    with criterion(8, "quorum behaviour") as notes:
        seen = []
        for corrupted, expected in ((0, True), (1, True), (2, False)):
            with FixtureNetwork(corrupted_validators=corrupted) as net:
                outcome = quorum_validate(net.uri("E", "H1"), list(net.ctx.validators))
            assert outcome.threshold == 2 and outcome.accepted is expected, (corrupted, outcome.to_json())
            seen.append(f"{corrupted} corrupted -> {'accepted' if outcome.accepted else 'rejected'}")
        notes.append(", ".join(seen))


def test_09_timing_properties():
    with criterion(9, "timing properties", limit_s=120) as notes:
        units, _ = ingest(CORPUS)
        longest = {k: max(len(u.data) for u in units if u.kind is k) for k in UnitKind}
        assert longest[UnitKind.FULL_TEXT] > longest[UnitKind.SURAH] > longest[UnitKind.AYAH]

        in_memory = bench_hash(units, 20, BenchMode.IN_MEMORY)
        streaming = bench_hash(units, 20, BenchMode.STREAMING)
        assert all(r.digest_consistency for r in [*in_memory.values(), *streaming.values()])
        notes.append("digests consistent in both modes")

        for mode, results in (("in-memory", in_memory), ("streaming", streaming)):
            fmax, smax, amax = (results[k].max_ms for k in (UnitKind.FULL_TEXT, UnitKind.SURAH, UnitKind.AYAH))
            assert fmax >= smax >= amax, f"{mode}: {fmax} {smax} {amax}"
            notes.append(f"{mode} max ms FullText {fmax:.3f} >= Surah {smax:.3f} >= Ayah {amax:.4f}")

        full = next(u for u in units if u.kind is UnitKind.FULL_TEXT).data
        assert len(full) >= 1_000_000
        chunking = bench_chunking(full, chunk_size=1, repetitions=3)
        assert chunking.same_digest and chunking.ratio >= 5, chunking.to_json()
        notes.append(f"1-octet streaming {chunking.ratio:.0f}x slower than whole-buffer on {len(full)} octets")


def test_10_end_to_end(cli, spawn, tmp_path):
    with criterion(10, "end-to-end pipeline", limit_s=30) as notes:
        toy = tmp_path / "toy.txt"
        toy.write_text("1|1|A B\n1|2|B C\n", "utf-8")
        store = spawn("serve-store", "--listen", "127.0.0.1:0", "--data", tmp_path / "store")
        r = cli("--output", "json", "publish-corpus", toy, "--store", store)
        assert r.code == 0 and json.loads(r.out)["created"] == 4, r.out

        listing = json.loads(cli("--output", "json", "ingest", toy).out)
        unit_uris = [f"{store}/{row['digest']}" for row in listing]
        article = tmp_path / "article.html"
        article.write_text(
            f'<p>An article quoting <a href="{unit_uris[0]}">the first verse</a>.</p>', "utf-8"
        )
        r = cli("--output", "json", "publish", "--store", store, "--author", "writer",
                "--media-type", "text/html; charset=utf-8", article)
        assert r.code == 0, r.err
        article_uri = json.loads(r.out)["uri"]

        seeds = tmp_path / "seeds.txt"
        seeds.write_text("\n".join([article_uri, *unit_uris[1:]]) + "\n", "utf-8")
        r = cli("crawl", "--index", tmp_path / "index", "--seeds", seeds, "--budget", "20")
        assert r.code == 0 and r.out.startswith("indexed 5"), r.out
        hits = json.loads(cli("--output", "json", "search", "--index", tmp_path / "index", "B").out)
        assert {h["uri"] for h in hits} == set(unit_uris)
        notes.append(f"published 4 units + article, crawled 5, query returned {len(hits)}")

        index = spawn("serve-index", "--listen", "127.0.0.1:0", "--index", tmp_path / "index")
        config = tmp_path / "ctx.json"
        config.write_text(json.dumps({"trusted_sources": [index], "trusted_hosts": [store]}), "utf-8")
        trace_file = tmp_path / "article.jsonl"
        r = cli("--config", config, "resolve", "article", "--trace-out", trace_file)
        assert r.code == 0 and "=> Trusted (S+H+" in r.out, r.out
        r = cli("--config", config, "--output", "json", "navigate", trace_file, "0")
        final = json.loads(r.out.splitlines()[-1])
        assert r.code == 0 and final["final"]["verdict"] == "Trusted" and final["uri"] == unit_uris[0]
        notes.append("resolve S+H+ Trusted, navigate link 0 Trusted")
