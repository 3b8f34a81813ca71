import json

import pytest

from oracles import DATA, sha256_reference
from trustyweb.harness import FixtureNetwork, tamper

EMPTY = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


@pytest.fixture
def files(tmp_path):
    (tmp_path / "empty.txt").write_bytes(b"")
    (tmp_path / "abc.txt").write_bytes(b"abc")
    (tmp_path / "abd.txt").write_bytes(b"abd")
    return tmp_path


def test_mint_empty_file(cli, files):
    r = cli("mint", "--base", "https://h/", files / "empty.txt")
    assert r.code == 0 and r.out.strip() == f"https://h/{EMPTY}"


def test_mint_json_and_env(cli, files, monkeypatch):
    monkeypatch.setenv("TRUSTY_BASE", "https://env.example/")
    monkeypatch.setenv("TRUSTY_OUTPUT", "json")
    r = cli("mint", files / "abc.txt")
    assert json.loads(r.out) == {"uri": f"https://env.example/{sha256_reference(b'abc')}", "digest": sha256_reference(b"abc")}
    r = cli("mint", "--base", "https://flag.example/", "--output", "text", files / "abc.txt")
    assert r.out.startswith("https://flag.example/")


def test_verify_exit_codes(cli, files):
    uri = f"https://h/{sha256_reference(b'abc')}"
    assert cli("verify", uri, files / "abc.txt").code == 0
    r = cli("--output", "json", "verify", uri, files / "abd.txt")
    assert r.code == 3
    assert json.loads(r.out) == {
        "result": "Mismatch",
        "expected": sha256_reference(b"abc"),
        "actual": sha256_reference(b"abd"),
    }


@pytest.mark.parametrize(
    "argv",
    [
        ("bogus",),
        (),
        ("mint", "x.txt"),
        ("verify", "https://h/not-trusty", "x"),
        ("crawl", "--index", "i", "--seeds", "s", "--budget", "many"),
        ("mint", "--base", "ftp://h/", "{empty}"),
    ],
)
def test_usage_errors(cli, files, argv):
    argv = [a.replace("{empty}", str(files / "empty.txt")) for a in argv]
    assert cli(*argv).code == 1


def test_io_errors(cli, files):
    assert cli("mint", "--base", "https://h/", files / "missing.txt").code == 2
    assert cli("verify", f"http://127.0.0.1:1/{EMPTY}").code == 2
    bad = files / "bad.txt"
    bad.write_text("1|x|y\n")
    assert cli("ingest", bad).code == 2


def test_ingest(cli):
    r = cli("ingest", DATA / "quran-uthmani.txt", "--stats")
    assert r.code == 0
    assert "surah_count: 114" in r.out and "ayah_count: 6236" in r.out
    r = cli("--output", "json", "ingest", DATA / "quran-uthmani.txt", "--stats")
    assert json.loads(r.out)["ayah_count"] == 6236


def test_ingest_listing(cli, tmp_path):
    toy = tmp_path / "toy.txt"
    toy.write_text("1|1|A B\n1|2|B C\n")
    rows = json.loads(cli("--output", "json", "ingest", toy).out)
    assert [(r["unit"], r["digest"]) for r in rows] == [
        ("1:1", sha256_reference(b"A B")),
        ("1:2", sha256_reference(b"B C")),
        ("1", sha256_reference(b"A B B C")),
        ("full", sha256_reference(b"A B B C\n")),
    ]


def test_bench(cli, tmp_path):
    toy = tmp_path / "toy.txt"
    toy.write_text("1|1|A B\n1|2|B C\n")
    r = cli("--output", "json", "bench", toy, "--reps", "2", "--mode", "streaming_from_file", "--chunk-demo")
    payload = json.loads(r.out)
    assert r.code == 0 and set(payload["results"]) == {"Ayah", "Surah", "FullText"}
    assert payload["chunking"]["same_digest"]
    assert cli("bench", toy, "--kinds", "Ayah", "--reps", "1").code == 0


def test_validate_and_resolve_against_fixture(cli, tmp_path):
    with FixtureNetwork(s1_knows_e=False) as net:
        validators = ",".join(net.ctx.validators)
        e_h2 = str(net.uri("E", "H2"))
        r = cli("--output", "json", "validate", "--validators", validators, e_h2)
        assert r.code == 0 and json.loads(r.out)["accepted"]

        config = tmp_path / "ctx.json"
        net.ctx.save(config)
        trace_file = tmp_path / "a.jsonl"
        r = cli("--config", config, "resolve", "alpha", "--trace-out", trace_file)
        assert r.code == 0 and "=> Trusted (S+H+" in r.out
        r = cli("--config", config, "--output", "json", "navigate", trace_file, "0")
        lines = [json.loads(line) for line in r.out.splitlines()]
        assert r.code == 0 and lines[-1]["final"]["verdict"] == "Trusted"
        assert cli("--config", config, "navigate", trace_file, "3").code == 1
        assert cli("resolve", "alpha").code == 1  # no trust context

    with FixtureNetwork(s1_knows_e=False, tamper_h2=True) as net:
        config = tmp_path / "ctx2.json"
        net.ctx.save(config)
        e_h2 = str(net.uri("E", "H2"))
        assert cli("validate", "--validators", ",".join(net.ctx.validators), e_h2).code == 4
        r = cli("--config", config, "resolve", "--source", net.services["S2"].url, "echo")
        assert r.code == 5 and "=> Untrusted" in r.out
        r = cli("--config", config, "verify", e_h2)
        assert r.code == 3
        assert cli("validate", "--validators", "http://127.0.0.1:1", e_h2).code == 2


def test_publish_crawl_search_with_services(cli, spawn, tmp_path):
    store = spawn("serve-store", "--listen", "127.0.0.1:0", "--data", tmp_path / "store")
    page = tmp_path / "page.html"
    page.write_bytes(b"<p>kiwi banana</p>")
    r = cli("--output", "json", "publish", "--store", store, "--author", "ann", "--media-type", "text/html", page)
    record = json.loads(r.out)
    assert r.code == 0 and record["created"] and record["uri"] == f"{store}/{sha256_reference(page.read_bytes())}"
    r = cli("--output", "json", "publish", "--store", store, "--author", "ann", page)
    assert json.loads(r.out)["created"] is False
    other = tmp_path / "other.txt"
    other.write_bytes(b"other")
    r = cli("publish", "--store", store, "--author", "ann", "--parent", f"{store}/{'0' * 64}", other)
    assert r.code == 2 and "ParentNotFound" in r.err

    seeds = tmp_path / "seeds.txt"
    seeds.write_text(record["uri"] + "\n")
    r = cli("crawl", "--index", tmp_path / "idx", "--seeds", seeds, "--budget", "5")
    assert r.code == 0 and r.out.startswith("indexed 1")
    r = cli("--output", "json", "search", "--index", tmp_path / "idx", "KIWI")
    assert [h["uri"] for h in json.loads(r.out)] == [record["uri"]]

    # the index can be served and used as a search source
    index = spawn("serve-index", "--listen", "127.0.0.1:0", "--index", tmp_path / "idx")
    validator = spawn("serve-validator", "--listen", "127.0.0.1:0", "--data", tmp_path / "v")
    config = tmp_path / "ctx.json"
    config.write_text(json.dumps({"trusted_sources": [index], "trusted_hosts": [store], "validators": [validator]}))
    r = cli("--config", config, "resolve", "kiwi")
    assert r.code == 0 and "=> Trusted (S+H+" in r.out
    r = cli("--output", "json", "validate", "--validators", validator, record["uri"])
    assert r.code == 0 and json.loads(r.out)["reports"][0]["validator_id"] == validator.split("://")[1]


def test_tamper_helper_changes_one_octet():
    assert tamper(b"abc") == b"`bc" and tamper(b"") == b"\x01"
