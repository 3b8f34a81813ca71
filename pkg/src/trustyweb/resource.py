"""Resources, outbound link extraction, and publication metadata."""

from __future__ import annotations

import codecs
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from html.parser import HTMLParser
from typing import Optional, Union
from urllib.parse import urljoin

from .digest import PlainUri, TrustyUri, classify_uri

HTML_TYPES = frozenset({"text/html", "application/xhtml+xml"})
CLOCK_TOLERANCE = timedelta(minutes=5)

_TOKEN = r"[!#$%&'*+.^_`|~0-9A-Za-z-]+"
_MEDIA_TYPE = re.compile(
    rf"^{_TOKEN}/{_TOKEN}(\s*;\s*{_TOKEN}=({_TOKEN}|\"[^\"]*\"))*\s*$"
)


class UndecodableContent(ValueError):
    pass


class InvalidTimestamp(ValueError):
    pass


def parse_media_type(media_type: str) -> tuple[str, dict[str, str]]:
    if not _MEDIA_TYPE.match(media_type):
        raise ValueError(f"invalid media type: {media_type!r}")
    head, *params = media_type.split(";")
    parsed = {}
    for param in params:
        key, _, value = param.strip().partition("=")
        parsed[key.lower()] = value.strip('"')
    return head.strip().lower(), parsed


@dataclass(frozen=True)
class Resource:
    content: bytes
    media_type: str = "application/octet-stream"

    def __post_init__(self) -> None:
        parse_media_type(self.media_type)

    @property
    def size(self) -> int:
        return len(self.content)

    @property
    def essence(self) -> str:
        return parse_media_type(self.media_type)[0]

    @property
    def charset(self) -> str:
        return parse_media_type(self.media_type)[1].get("charset", "utf-8")

    @property
    def is_html(self) -> bool:
        return self.essence in HTML_TYPES

    def text(self) -> str:
        try:
            codecs.lookup(self.charset)
            return self.content.decode(self.charset)
        except (LookupError, UnicodeDecodeError) as exc:
            raise UndecodableContent(f"cannot decode content as {self.charset!r}") from exc


@dataclass
class LinkSet:
    trusty_links: list[TrustyUri] = field(default_factory=list)
    plain_links: list[PlainUri] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.trusty_links) + len(self.plain_links)

    def to_json(self) -> dict:
        return {
            "trusty_links": [str(u) for u in self.trusty_links],
            "plain_links": [str(u) for u in self.plain_links],
        }

    @classmethod
    def from_json(cls, data: dict) -> "LinkSet":
        return cls(
            [TrustyUri.parse(u) for u in data.get("trusty_links", [])],
            [PlainUri(u) for u in data.get("plain_links", [])],
        )


class _AnchorScanner(HTMLParser):
    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.hrefs: list[str] = []
        self.text_parts: list[str] = []
        self._skip = 0

    def handle_starttag(self, tag, attrs):
        if tag == "a":
            for name, value in attrs:
                if name == "href" and value is not None:
                    self.hrefs.append(value.strip())
                    break
        elif tag in ("script", "style"):
            self._skip += 1

    def handle_endtag(self, tag):
        if tag in ("script", "style") and self._skip:
            self._skip -= 1

    def handle_data(self, data):
        if not self._skip:
            self.text_parts.append(data)


def _scan(resource: Resource) -> _AnchorScanner:
    scanner = _AnchorScanner()
    scanner.feed(resource.text())
    scanner.close()
    return scanner


def extract_links(resource: Resource, base_uri: Optional[str] = None) -> LinkSet:
    """Collect anchor ``href`` values in document order, classified.

    Relative references are resolved against ``base_uri``. Hrefs that still do
    not form an absolute URI (relative with no base, or garbage) are dropped.
    Non-HTML resources have no links.
    """
    links = LinkSet()
    if not resource.is_html:
        return links
    for href in _scan(resource).hrefs:
        if not href:
            continue
        try:
            uri = classify_uri(urljoin(base_uri, href) if base_uri else href)
        except ValueError:  # InvalidUri, or urljoin choking on a malformed href
            continue
        if isinstance(uri, TrustyUri):
            links.trusty_links.append(uri)
        else:
            links.plain_links.append(uri)
    return links


def visible_text(resource: Resource) -> str:
    if resource.is_html:
        return " ".join(_scan(resource).text_parts)
    return resource.text()


@dataclass(frozen=True)
class PublisherRoot:
    """Marker for the publisher's main page, the root of every author chain."""

    base_uri: str

    def __str__(self) -> str:
        return self.base_uri


Parent = Union[TrustyUri, PublisherRoot]


def format_timestamp(moment: datetime) -> str:
    if moment.tzinfo is None:
        raise InvalidTimestamp("timestamps must be timezone-aware")
    moment = moment.astimezone(timezone.utc)
    if moment.microsecond:
        return moment.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    return moment.strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_timestamp(text: str) -> datetime:
    if not re.match(r"^\d{4}-\d\d-\d\d[Tt]\d\d:\d\d:\d\d(\.\d+)?([Zz]|[+-]\d\d:\d\d)$", text):
        raise InvalidTimestamp(f"not an RFC 3339 timestamp: {text!r}")
    normalized = text.upper().replace("Z", "+00:00")
    if "." in normalized:
        head, rest = normalized.split(".", 1)
        frac, offset = rest[:-6], rest[-6:]
        normalized = f"{head}.{frac[:6].ljust(6, '0')}{offset}"
    try:
        return datetime.fromisoformat(normalized).astimezone(timezone.utc)
    except ValueError as exc:
        raise InvalidTimestamp(f"not an RFC 3339 timestamp: {text!r}") from exc


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


def parent_from_text(text: str, root: PublisherRoot) -> Parent:
    if text in ("", "root"):
        return root
    parsed = classify_uri(text)
    if isinstance(parsed, TrustyUri):
        return parsed
    return PublisherRoot(text)


@dataclass(frozen=True)
class PublicationMeta:
    published_at: str
    parent: Parent
    author_id: str

    @property
    def is_first(self) -> bool:
        return isinstance(self.parent, PublisherRoot)

    def check_clock(self, now: datetime, tolerance: timedelta = CLOCK_TOLERANCE) -> None:
        if parse_timestamp(self.published_at) > now + tolerance:
            raise InvalidTimestamp(f"publication time {self.published_at} is in the future")

    def to_json(self) -> dict:
        return {
            "published_at": self.published_at,
            "parent": str(self.parent),
            "author_id": self.author_id,
        }

    @classmethod
    def from_json(cls, data: dict) -> "PublicationMeta":
        parent_text = data["parent"]
        parsed = classify_uri(parent_text)
        parent = parsed if isinstance(parsed, TrustyUri) else PublisherRoot(parent_text)
        parse_timestamp(data["published_at"])
        return cls(data["published_at"], parent, data["author_id"])


def build_chain_entry(content: Resource, parent: Parent, author: str, now: datetime) -> PublicationMeta:
    # content is accepted for symmetry with publish; metadata never depends on it
    return PublicationMeta(format_timestamp(now), parent, author)
