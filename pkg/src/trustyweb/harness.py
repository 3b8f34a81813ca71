"""In-process fixture networks for protocol tests.

A :class:`FixtureNetwork` runs, on loopback ephemeral ports:

* ``H1``, a trusted publisher host holding resources A-E (A links to B);
* ``H2``, an untrusted mirror of H1, honest or tampering;
* ``M``, an always-tampering mirror, used to give validators a corrupted view;
* ``S1``, a trusted, verifying search engine;
* ``S2``, an untrusted search engine that indexes without verifying;
* ``V1``..``Vn``, validators, the first ``corrupted_validators`` of which
  fetch everything through ``M``.

Tampering flips the lowest bit of the first body octet, so the change is
always detectable and the body stays decodable text.
"""

from __future__ import annotations

import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional
from urllib.parse import urlsplit, urlunsplit

from .digest import Digest, TrustyUri
from .net import Fetched, Service, ServiceHandler, http_fetch
from .resolver import ResolutionError, ResolutionTrace, Resolver
from .resource import Resource
from .search import SearchApp, SearchIndex
from .store import PublicationRecord, PublisherStore, StoreApp, StoreError, record_headers
from .trust import TrustContext
from .validator import Validator, ValidatorApp

SCENARIOS = ("A", "B", "C", "D", "E")

_PAGE = """<!DOCTYPE html>
<html>
<body>
<h1>Resource {name}</h1>
<p>{word} is a trusty resource.</p>
{extra}</body>
</html>
"""

WORDS = {"A": "alpha", "B": "bravo", "C": "charlie", "D": "delta", "E": "echo"}


class FixtureMisconfigured(Exception):
    pass


def tamper(data: bytes) -> bytes:
    if not data:
        return b"\x01"
    return bytes([data[0] ^ 0x01]) + data[1:]


class MirrorApp:
    """Serves a store's objects from another authority, optionally tampered."""

    def __init__(self, store: PublisherStore, tampering: bool = False) -> None:
        self.store = store
        self.tampering = tampering

    def handle(self, h: ServiceHandler, method: str, path: str, query: dict) -> None:
        if method != "GET" or len(path) != 65:
            return h.send_error_json(404, "NotFound", path)
        try:
            resource, record = self.store.fetch(Digest.from_hex(path[1:]))
        except (StoreError, ValueError) as exc:
            return h.send_error_json(404, "NotFound", str(exc))
        body = tamper(resource.content) if self.tampering else resource.content
        h.send_bytes(200, body, record.media_type, record_headers(record))


def redirecting_fetch(target_authority: str):
    """A fetcher that sends every request to ``target_authority`` instead."""

    def fetch(uri: str) -> Fetched:
        parts = urlsplit(uri)
        return http_fetch(urlunsplit(parts._replace(netloc=target_authority)))

    return fetch


def page(name: str, link_to: Optional[Digest] = None) -> bytes:
    extra = ""
    if link_to is not None:
        extra = (
            '<p title="Trusty Resource">\n'
            f'<a href="/{link_to.hex}">This is a link to a Trusty Resource</a>\n'
            "</p>\n"
        )
    return _PAGE.format(name=name, word=WORDS[name], extra=extra).encode("utf-8")


@dataclass
class FixtureNetwork:
    tamper_h2: bool = False
    s1_knows_e: bool = True
    validator_count: int = 3
    corrupted_validators: int = 0
    services: dict[str, Service] = field(default_factory=dict)
    records: dict[str, PublicationRecord] = field(default_factory=dict)
    ctx: TrustContext = field(default_factory=TrustContext)
    _tmp: Optional[tempfile.TemporaryDirectory] = None

    def start(self) -> "FixtureNetwork":
        if not 0 <= self.corrupted_validators <= self.validator_count:
            raise FixtureMisconfigured("more corrupted validators than validators")
        self._tmp = tempfile.TemporaryDirectory(prefix="trustyweb-fixture-")
        root = Path(self._tmp.name)
        try:
            self._build(root)
        except Exception:
            self.stop()
            raise
        return self

    def _build(self, root: Path) -> None:
        h1 = Service()
        store = PublisherStore(root / "h1", h1.url + "/")
        h1.httpd.app = StoreApp(store)
        self.store = store
        self.services["H1"] = h1.start()
        self.services["H2"] = Service(MirrorApp(store, tampering=self.tamper_h2)).start()
        self.services["M"] = Service(MirrorApp(store, tampering=True)).start()

        html = "text/html; charset=utf-8"
        b = store.publish(Resource(page("B"), html), "fixture")
        a = store.publish(Resource(page("A", link_to=b.digest), html), "fixture", b.uri)
        c = store.publish(Resource(page("C"), html), "fixture", a.uri)
        d = store.publish(Resource(page("D"), html), "fixture", c.uri)
        e = store.publish(Resource(page("E"), html), "fixture", d.uri)
        self.records = {"A": a, "B": b, "C": c, "D": d, "E": e}

        s1 = SearchIndex(verify=True)
        seeds = [self.uri(n, "H1") for n in ("A", "C", "D")]
        if self.s1_knows_e:
            seeds.append(self.uri("E", "H1"))
        s1.crawl(seeds, budget=20)
        s2 = SearchIndex(verify=False)
        s2.crawl([self.uri("D", "H1"), self.uri("E", "H2")], budget=20)
        self.indexes = {"S1": s1, "S2": s2}
        self.services["S1"] = Service(SearchApp(s1)).start()
        self.services["S2"] = Service(SearchApp(s2)).start()

        validators = []
        for i in range(self.validator_count):
            svc = Service()
            fetch = redirecting_fetch(self.authority("M")) if i < self.corrupted_validators else http_fetch
            svc.httpd.app = ValidatorApp(Validator(svc.authority, fetch=fetch))
            self.services[f"V{i + 1}"] = svc.start()
            validators.append(svc.url)

        self.ctx = TrustContext.create(
            trusted_sources=[self.authority("S1")],
            trusted_hosts=[self.authority("H1")],
            validators=validators,
        )

    def stop(self) -> None:
        for svc in self.services.values():
            svc.stop()
        self.services.clear()
        if self._tmp is not None:
            self._tmp.cleanup()
            self._tmp = None

    def __enter__(self) -> "FixtureNetwork":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def authority(self, role: str) -> str:
        try:
            return self.services[role].authority
        except KeyError:
            raise FixtureMisconfigured(f"no service {role!r}") from None

    def uri(self, name: str, role: str = "H1") -> TrustyUri:
        try:
            record = self.records[name]
        except KeyError:
            raise FixtureMisconfigured(f"no resource {name!r}") from None
        return TrustyUri("http", self.authority(role), (), record.digest)

    @property
    def roles(self) -> dict[str, str]:
        return {svc.authority: role for role, svc in self.services.items()}

    def resolver(self, **kwargs) -> Resolver:
        return Resolver(self.ctx, **kwargs)

    def normalize(self, trace: ResolutionTrace) -> list[str]:
        """Trace lines with loopback authorities replaced by role names."""
        pattern = re.compile(
            "|".join(re.escape(a) + r"(?![0-9])" for a in sorted(self.roles, key=len, reverse=True))
        )
        roles = self.roles
        return [pattern.sub(lambda m: roles[m.group(0)], line) for line in trace.to_lines()]


def run_scenario(name: str, net: FixtureNetwork, **resolver_kwargs) -> ResolutionTrace:
    """Replay one of the lettered scenarios and return the resolver's trace.

    A: terms via S1, hosted on H1.      B: link from A, hosted on H1.
    C: URI from S1, hosted on H2.       D: terms via S2, hosted on H1.
    E: terms via S2, hosted on H2.

    Unsuccessful resolutions return their (Untrusted) trace rather than raise.
    """
    if name not in SCENARIOS:
        raise FixtureMisconfigured(f"unknown scenario {name!r}")
    if not net.services:
        raise FixtureMisconfigured("network is not running")
    resolver = net.resolver(**resolver_kwargs)
    s1, s2 = net.services["S1"].url, net.services["S2"].url
    try:
        if name == "A":
            return resolver.resolve(WORDS["A"], source=s1)
        if name == "B":
            return resolver.navigate(resolver.resolve(WORDS["A"], source=s1), 0)
        if name == "C":
            return resolver.resolve(net.uri("C", "H2"), source=s1)
        if name == "D":
            return resolver.resolve(WORDS["D"], source=s2)
        return resolver.resolve(WORDS["E"], source=s2)
    except ResolutionError as exc:
        return exc.trace
