"""A trusty search engine: a verifying crawler plus a keyword index.

The crawler fetches pages by trusty URI, checks each against the digest in
its URI, and indexes only pages that match. Only trusty links of verified
pages are followed. A ``verify=False`` index exists to play an untrusted,
naive search engine in protocol tests.
"""

from __future__ import annotations

import json
import logging
import threading
from collections import Counter, deque
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

import requests

from .digest import Mismatch, TrustyUri, verify
from .net import DEFAULT_TIMEOUT, FetchError, Fetcher, ServiceHandler, http_fetch
from .resource import LinkSet, Resource, UndecodableContent, extract_links, format_timestamp, utcnow, visible_text

log = logging.getLogger(__name__)


class CrawlEmpty(Exception):
    """No seed could be fetched at all."""


def tokenize(text: str) -> list[str]:
    return [tok.lower() for tok in text.split()]


@dataclass(frozen=True)
class IndexEntry:
    uri: TrustyUri
    host: str
    term_counts: dict[str, int]
    verified_at: str
    outbound: LinkSet
    verified: bool = True

    @property
    def terms(self) -> frozenset[str]:
        return frozenset(self.term_counts)

    def score(self, tokens: list[str]) -> int:
        """Occurrences of the query tokens; 0 unless every token is present.

        A token equal to the entry's digest hex matches once, which lets a
        client look up every indexed copy of one digest.
        """
        total = 0
        for tok in tokens:
            if tok == self.uri.digest.hex:
                total += 1
            elif tok in self.term_counts:
                total += self.term_counts[tok]
            else:
                return 0
        return total

    def to_json(self) -> dict:
        return {
            "uri": str(self.uri),
            "host": self.host,
            "term_counts": self.term_counts,
            "verified_at": self.verified_at,
            "outbound": self.outbound.to_json(),
            "verified": self.verified,
        }

    @classmethod
    def from_json(cls, data: dict) -> "IndexEntry":
        return cls(
            TrustyUri.parse(data["uri"]),
            data["host"],
            dict(data["term_counts"]),
            data["verified_at"],
            LinkSet.from_json(data["outbound"]),
            data.get("verified", True),
        )


@dataclass
class CrawlReport:
    indexed: int = 0
    rejected: list[tuple[TrustyUri, Mismatch]] = field(default_factory=list)
    failed: list[tuple[TrustyUri, str]] = field(default_factory=list)
    pending: list[TrustyUri] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "indexed": self.indexed,
            "rejected": [
                {"uri": str(u), "expected": m.expected.hex, "actual": m.actual.hex} for u, m in self.rejected
            ],
            "failed": [{"uri": str(u), "reason": r} for u, r in self.failed],
            "pending": [str(u) for u in self.pending],
        }


@dataclass
class CrawlFrontier:
    pending: deque = field(default_factory=deque)
    visited: set = field(default_factory=set)
    per_host_budget: dict[str, int] = field(default_factory=dict)


class SearchIndex:
    def __init__(self, verify: bool = True, clock: Callable[[], datetime] = utcnow) -> None:
        self.verify = verify
        self.clock = clock
        self._entries: dict[str, IndexEntry] = {}
        self._lock = threading.Lock()
        self.last_crawl: Optional[CrawlReport] = None

    def __len__(self) -> int:
        return len(self._entries)

    def entries(self) -> list[IndexEntry]:
        return list(self._entries.values())

    def add(self, entry: IndexEntry) -> None:
        with self._lock:
            # entries are immutable: content cannot change under a trusty URI
            self._entries.setdefault(str(entry.uri), entry)

    def _snapshot(self) -> list[IndexEntry]:
        with self._lock:
            return list(self._entries.values())

    def search(self, terms: Iterable[str]) -> list[tuple[IndexEntry, int]]:
        tokens = [t for term in terms for t in tokenize(term)]
        if not tokens:
            return []
        hits = [(e, e.score(tokens)) for e in self._snapshot()]
        hits = [(e, s) for e, s in hits if s > 0]
        # score desc, newest first, then URI text for a total order
        hits.sort(key=lambda es: str(es[0].uri))
        hits.sort(key=lambda es: es[0].verified_at, reverse=True)
        hits.sort(key=lambda es: es[1], reverse=True)
        return hits

    def query(self, terms: Iterable[str]) -> list[TrustyUri]:
        return [e.uri for e, _ in self.search(terms)]

    def crawl(
        self,
        seeds: list[TrustyUri],
        budget: int,
        fetch: Fetcher = http_fetch,
        per_host_budget: Optional[dict[str, int]] = None,
    ) -> CrawlReport:
        """Breadth-first crawl from ``seeds``, fetching at most ``budget`` pages.

        Fetches run one at a time, which also satisfies the one-request-per-host
        politeness limit.
        """
        if not seeds:
            raise ValueError("crawl needs at least one seed")
        if budget < 1:
            raise ValueError("budget must be at least 1")
        frontier = CrawlFrontier(deque(seeds), set(), dict(per_host_budget or {}))
        report = CrawlReport()
        seed_keys = {str(s) for s in seeds}
        seed_attempts = seed_failures = 0
        remaining = budget

        while frontier.pending:
            uri = frontier.pending.popleft()
            if uri.digest in frontier.visited or str(uri) in self._entries:
                continue
            host_left = frontier.per_host_budget.get(uri.authority, remaining)
            if remaining <= 0 or host_left <= 0:
                if uri not in report.pending:
                    report.pending.append(uri)
                continue
            remaining -= 1
            if uri.authority in frontier.per_host_budget:
                frontier.per_host_budget[uri.authority] -= 1
            frontier.visited.add(uri.digest)

            is_seed = str(uri) in seed_keys
            seed_attempts += is_seed
            try:
                fetched = fetch(str(uri))
                resource = Resource(fetched.content, _clean_media_type(fetched.media_type))
            except (FetchError, ValueError) as exc:
                log.warning("crawl: skipping %s: %s", uri, exc)
                report.failed.append((uri, str(exc)))
                seed_failures += is_seed
                continue

            outcome = verify(uri, resource.content)
            if isinstance(outcome, Mismatch) and self.verify:
                log.warning("crawl: rejected %s (digest mismatch)", uri)
                report.rejected.append((uri, outcome))
                continue

            try:
                links = extract_links(resource, str(uri))
                terms = Counter(tokenize(visible_text(resource)))
            except UndecodableContent as exc:
                report.failed.append((uri, str(exc)))
                continue
            self.add(
                IndexEntry(
                    uri=uri,
                    host=uri.authority,
                    term_counts=dict(terms),
                    verified_at=format_timestamp(self.clock()),
                    outbound=links,
                    verified=not isinstance(outcome, Mismatch),
                )
            )
            report.indexed += 1
            for link in links.trusty_links:
                if link.digest not in frontier.visited:
                    frontier.pending.append(link)

        self.last_crawl = report
        if seed_attempts and seed_failures == seed_attempts and report.indexed == 0:
            raise CrawlEmpty("no seed could be fetched")
        return report

    def recheck(self, fetch: Fetcher = http_fetch) -> list[tuple[TrustyUri, str]]:
        """Re-fetch every entry; returns those that are gone or no longer match."""
        problems = []
        for entry in self._snapshot():
            try:
                fetched = fetch(str(entry.uri))
            except FetchError as exc:
                problems.append((entry.uri, f"unavailable: {exc}"))
                continue
            if isinstance(verify(entry.uri, fetched.content), Mismatch):
                problems.append((entry.uri, "mismatch"))
        return problems

    def status(self) -> dict:
        entries = self._snapshot()
        return {
            "entries": len(entries),
            "hosts": sorted({e.host for e in entries}),
            "verifying": self.verify,
            "last_crawl": self.last_crawl.to_json() if self.last_crawl else None,
        }

    def save(self, directory: Union[str, Path]) -> Path:
        path = Path(directory)
        path.mkdir(parents=True, exist_ok=True)
        target = path / "index.json"
        payload = {"verify": self.verify, "entries": [e.to_json() for e in self._snapshot()]}
        tmp = target.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(payload, ensure_ascii=False), "utf-8")
        tmp.replace(target)
        return target

    @classmethod
    def load(cls, directory: Union[str, Path], **kwargs) -> "SearchIndex":
        target = Path(directory) / "index.json"
        if not target.exists():
            return cls(**kwargs)
        payload = json.loads(target.read_text("utf-8"))
        kwargs.setdefault("verify", payload.get("verify", True))
        index = cls(**kwargs)
        for item in payload["entries"]:
            index.add(IndexEntry.from_json(item))
        return index


def _clean_media_type(media_type: str) -> str:
    try:
        Resource(b"", media_type)
        return media_type
    except ValueError:
        return "application/octet-stream"


def read_seeds(path: Union[str, Path]) -> list[TrustyUri]:
    seeds = []
    for line in Path(path).read_text("utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            seeds.append(TrustyUri.parse(line))
    return seeds


class SearchApp:
    def __init__(self, index: SearchIndex) -> None:
        self.index = index

    def handle(self, h: ServiceHandler, method: str, path: str, query: dict) -> None:
        if method == "GET" and path == "/search":
            hits = self.index.search([query.get("q", "")])
            return h.send_json(
                200, [{"uri": str(e.uri), "score": s, "verified_at": e.verified_at} for e, s in hits]
            )
        if method == "GET" and path == "/status":
            return h.send_json(200, self.index.status())
        h.send_error_json(404, "NotFound", path)


@dataclass
class SearchHit:
    uri: TrustyUri
    score: int
    verified_at: str


def http_search(endpoint: str, terms: str, timeout: float = DEFAULT_TIMEOUT) -> list[SearchHit]:
    """Query a search service; raises :class:`FetchError` when unreachable."""
    try:
        resp = requests.get(f"{endpoint.rstrip('/')}/search", params={"q": terms}, timeout=timeout)
    except requests.RequestException as exc:
        raise FetchError(f"{endpoint}: {exc}") from exc
    if resp.status_code != 200:
        raise FetchError(f"{endpoint}: HTTP {resp.status_code}")
    hits = []
    for item in resp.json():
        hits.append(SearchHit(TrustyUri.parse(item["uri"]), int(item["score"]), item["verified_at"]))
    return hits
