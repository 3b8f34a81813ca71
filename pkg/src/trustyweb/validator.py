"""Validators: recompute a resource digest and compare it to its URI.

A validator keeps an append-only seen-ledger recording when each digest was
first observed to match. ``quorum_validate`` fans a directive-mode check out
to several validators and accepts on a majority by default.
"""

from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import requests

from .digest import Digest, InvalidUri, TrustyUri, compute_digest
from .net import DEFAULT_TIMEOUT, FetchError, Fetcher, ServiceHandler, http_fetch
from .resource import format_timestamp, utcnow

log = logging.getLogger(__name__)


class FetchFailed(Exception):
    pass


class AllValidatorsUnreachable(Exception):
    pass


@dataclass(frozen=True)
class ValidationReport:
    uri: TrustyUri
    expected: Digest
    actual: Digest
    match: bool
    first_seen: Optional[str]
    validator_id: str

    def __post_init__(self) -> None:
        if self.match != (self.expected == self.actual):
            raise ValueError("match must equal (expected == actual)")

    def to_json(self) -> dict:
        return {
            "uri": str(self.uri),
            "expected": self.expected.hex,
            "actual": self.actual.hex,
            "match": self.match,
            "first_seen": self.first_seen,
            "validator_id": self.validator_id,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ValidationReport":
        return cls(
            TrustyUri.parse(data["uri"]),
            Digest.from_hex(data["expected"]),
            Digest.from_hex(data["actual"]),
            bool(data["match"]),
            data.get("first_seen"),
            data["validator_id"],
        )


class SeenLedger:
    """digest -> first successful validation time; entries are never rewritten."""

    def __init__(self, path: Optional[Union[str, Path]] = None) -> None:
        self.path = Path(path) if path else None
        self._seen: dict[str, str] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            for line in self.path.read_text("utf-8").splitlines():
                if line.strip():
                    item = json.loads(line)
                    self._seen.setdefault(item["digest"], item["first_seen"])

    def get(self, digest: Digest) -> Optional[str]:
        return self._seen.get(digest.hex)

    def record(self, digest: Digest, when: str) -> str:
        with self._lock:
            if digest.hex in self._seen:
                return self._seen[digest.hex]
            self._seen[digest.hex] = when
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"digest": digest.hex, "first_seen": when}) + "\n")
            return when


class Validator:
    def __init__(
        self,
        validator_id: str,
        ledger: Optional[SeenLedger] = None,
        fetch: Fetcher = http_fetch,
        clock: Callable[[], datetime] = utcnow,
    ) -> None:
        self.validator_id = validator_id
        self.ledger = ledger or SeenLedger()
        self.fetch = fetch
        self.clock = clock

    def validate(self, uri: TrustyUri, content: Optional[bytes] = None) -> ValidationReport:
        """Check ``content`` against ``uri``; with no content, fetch the URI first."""
        if content is None:
            try:
                content = self.fetch(str(uri)).content
            except FetchError as exc:
                raise FetchFailed(str(exc)) from exc
        actual = compute_digest(content)
        match = actual == uri.digest
        if match:
            first_seen = self.ledger.record(uri.digest, format_timestamp(self.clock()))
        else:
            first_seen = self.ledger.get(uri.digest)
        return ValidationReport(uri, uri.digest, actual, match, first_seen, self.validator_id)


class ValidatorApp:
    def __init__(self, validator: Validator) -> None:
        self.validator = validator

    def handle(self, h: ServiceHandler, method: str, path: str, query: dict) -> None:
        try:
            if path == "/validate" and method == "POST":
                uri = TrustyUri.parse(h.headers.get("X-Trusty-Uri", ""))
                return h.send_json(200, self.validator.validate(uri, h.read_body()).to_json())
            if path == "/validate" and method == "GET":
                uri = TrustyUri.parse(query.get("uri", ""))
                try:
                    report = self.validator.validate(uri)
                except FetchFailed as exc:
                    return h.send_error_json(502, "FetchFailed", str(exc))
                return h.send_json(200, report.to_json())
            if path.startswith("/seen/") and method == "GET":
                first_seen = self.validator.ledger.get(Digest.from_hex(path[len("/seen/"):]))
                if first_seen is None:
                    return h.send_error_json(404, "NotFound", path)
                return h.send_json(200, {"first_seen": first_seen})
        except (InvalidUri, ValueError) as exc:
            return h.send_error_json(400, "BadRequest", str(exc))
        h.send_error_json(404, "NotFound", path)


def default_threshold(n: int) -> int:
    return n // 2 + 1


@dataclass
class QuorumOutcome:
    reports: list[ValidationReport]
    threshold: int
    unreachable: list[str] = field(default_factory=list)
    fetch_failed: list[str] = field(default_factory=list)
    # endpoint -> report, or "unreachable" / "fetch_failed", in request order
    answers: dict[str, Union[ValidationReport, str]] = field(default_factory=dict)

    @property
    def agreeing(self) -> int:
        return sum(r.match for r in self.reports)

    @property
    def accepted(self) -> bool:
        return self.agreeing >= self.threshold

    def to_json(self) -> dict:
        return {
            "reports": [r.to_json() for r in self.reports],
            "agreeing": self.agreeing,
            "threshold": self.threshold,
            "accepted": self.accepted,
            "unreachable": self.unreachable,
            "fetch_failed": self.fetch_failed,
        }


def _ask(endpoint: str, uri: TrustyUri, timeout: float) -> Union[ValidationReport, str]:
    """One directive-mode request: a report, ``"fetch_failed"``, or ``"unreachable"``."""
    try:
        resp = requests.get(f"{endpoint.rstrip('/')}/validate", params={"uri": str(uri)}, timeout=timeout)
    except requests.RequestException as exc:
        log.info("validator %s unreachable: %s", endpoint, exc)
        return "unreachable"
    if resp.status_code == 502:
        return "fetch_failed"
    if resp.status_code != 200:
        return "unreachable"
    try:
        return ValidationReport.from_json(resp.json())
    except (ValueError, KeyError):
        return "unreachable"


def quorum_validate(
    uri: TrustyUri,
    validators: Sequence[str],
    threshold: Optional[int] = None,
    timeout: float = DEFAULT_TIMEOUT,
) -> QuorumOutcome:
    """Ask every validator to fetch and check ``uri``; count matching reports.

    Validators that cannot be reached, or whose fetch failed, count as not
    agreeing. Reports keep the order of ``validators``.
    """
    if not validators:
        raise ValueError("at least one validator endpoint is required")
    if threshold is None:
        threshold = default_threshold(len(validators))
    if not 1 <= threshold <= len(validators):
        raise ValueError(f"threshold must be within 1..{len(validators)}")
    with ThreadPoolExecutor(max_workers=len(validators)) as pool:
        answers = list(pool.map(lambda ep: _ask(ep, uri, timeout), validators))
    outcome = QuorumOutcome([], threshold)
    for endpoint, answer in zip(validators, answers):
        outcome.answers[endpoint] = answer
        if answer == "unreachable":
            outcome.unreachable.append(endpoint)
        elif answer == "fetch_failed":
            outcome.fetch_failed.append(endpoint)
        else:
            outcome.reports.append(answer)
    if len(outcome.unreachable) == len(validators):
        raise AllValidatorsUnreachable(", ".join(validators))
    return outcome
