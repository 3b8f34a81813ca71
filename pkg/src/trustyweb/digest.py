"""Content digests and trusty URIs.

A trusty URI is an ``http`` or ``https`` URI whose final path segment is the
lowercase hex SHA-256 digest of the referenced bytes::

    <scheme>://<authority>[/<prefix segment>...]/<hex64>

The digest covers the exact octets of the artifact. Nothing is canonicalized,
and the digest segment is never part of the hashed input.
"""

from __future__ import annotations

import enum
import hashlib
import re
from dataclasses import dataclass
from typing import BinaryIO, Union
from urllib.parse import urlsplit

HEX64 = re.compile(r"^[0-9a-f]{64}$")
_SCHEMES = ("http", "https")
_FORBIDDEN = re.compile(r"[\s\x00-\x1f\x7f<>\"{}|\\^`]")


class InvalidUri(ValueError):
    """Raised for text that is not a usable absolute URI."""


class DigestAlgorithm(enum.Enum):
    SHA256 = "sha256"

    @property
    def size(self) -> int:
        return {DigestAlgorithm.SHA256: 32}[self]

    def new(self):
        return hashlib.new(self.value)


class DigestFormat(enum.Enum):
    """Textual encodings of a digest. Only hex is emitted today."""

    HEX = "hex"


@dataclass(frozen=True)
class Digest:
    value: bytes
    algorithm: DigestAlgorithm = DigestAlgorithm.SHA256

    def __post_init__(self) -> None:
        if len(self.value) != self.algorithm.size:
            raise ValueError(
                f"{self.algorithm.value} digest must be {self.algorithm.size} bytes, "
                f"got {len(self.value)}"
            )

    @property
    def hex(self) -> str:
        return self.value.hex()

    @classmethod
    def from_hex(cls, text: str) -> "Digest":
        if not HEX64.match(text):
            raise ValueError(f"not a lowercase 64-character hex digest: {text!r}")
        return cls(bytes.fromhex(text))

    def encode(self, fmt: DigestFormat = DigestFormat.HEX) -> str:
        if fmt is DigestFormat.HEX:
            return self.hex
        raise NotImplementedError(fmt)

    def __str__(self) -> str:
        return self.hex


def compute_digest(content: bytes) -> Digest:
    return Digest(hashlib.sha256(content).digest())


def compute_digest_streaming(content_reader: BinaryIO, chunk_size: int = 65536) -> Digest:
    """Digest everything ``content_reader.read`` yields, ``chunk_size`` octets at a time.

    The result is identical to :func:`compute_digest` over the concatenated
    bytes for every chunk size. Read errors propagate to the caller.
    """
    if chunk_size < 1:
        raise ValueError("chunk_size must be a positive integer")
    h = hashlib.sha256()
    while True:
        chunk = content_reader.read(chunk_size)
        if not chunk:
            break
        h.update(chunk)
    return Digest(h.digest())


@dataclass(frozen=True)
class TrustyUri:
    scheme: str
    authority: str
    prefix_path: tuple[str, ...]
    digest: Digest

    def __str__(self) -> str:
        segments = "/".join(self.prefix_path + (self.digest.hex,))
        return f"{self.scheme}://{self.authority}/{segments}"

    @property
    def base(self) -> str:
        path = "".join(seg + "/" for seg in self.prefix_path)
        return f"{self.scheme}://{self.authority}/{path}"

    @classmethod
    def parse(cls, raw: str) -> "TrustyUri":
        parsed = classify_uri(raw)
        if not isinstance(parsed, TrustyUri):
            raise InvalidUri(f"not a trusty URI: {raw!r}")
        return parsed


@dataclass(frozen=True)
class PlainUri:
    raw: str

    def __str__(self) -> str:
        return self.raw


AnyUri = Union[TrustyUri, PlainUri]


def _split(raw: str):
    if not isinstance(raw, str) or not raw or _FORBIDDEN.search(raw):
        raise InvalidUri(f"unparseable URI: {raw!r}")
    try:
        parts = urlsplit(raw)
        parts.port  # noqa: B018 - validates the port
    except ValueError as exc:
        raise InvalidUri(f"unparseable URI: {raw!r}") from exc
    if not re.match(r"^[A-Za-z][A-Za-z0-9+.\-]*$", parts.scheme or ""):
        raise InvalidUri(f"URI has no scheme: {raw!r}")
    return parts


def classify_uri(raw: str) -> AnyUri:
    """Syntactic split into trusty and plain URIs; says nothing about content."""
    parts = _split(raw)
    scheme = parts.scheme.lower()
    if scheme not in _SCHEMES or not parts.netloc or parts.query or parts.fragment:
        return PlainUri(raw)
    if "?" in raw or "#" in raw:
        return PlainUri(raw)
    segments = parts.path.split("/")[1:]
    if not segments or not HEX64.match(segments[-1]) or any(s == "" for s in segments[:-1]):
        return PlainUri(raw)
    return TrustyUri(scheme, parts.netloc, tuple(segments[:-1]), Digest.from_hex(segments[-1]))


def _parse_base(base: str) -> tuple[str, str, tuple[str, ...]]:
    parts = _split(base)
    scheme = parts.scheme.lower()
    if scheme not in _SCHEMES:
        raise InvalidUri(f"base URI must be http or https: {base!r}")
    if not parts.netloc:
        raise InvalidUri(f"base URI has no authority: {base!r}")
    if parts.query or parts.fragment or "?" in base or "#" in base:
        raise InvalidUri(f"base URI may not carry a query or fragment: {base!r}")
    stripped = parts.path.removeprefix("/").removesuffix("/")
    prefix = tuple(stripped.split("/")) if stripped else ()
    if any(seg == "" for seg in prefix):
        raise InvalidUri(f"base URI has an empty path segment: {base!r}")
    if prefix and HEX64.match(prefix[-1]):
        raise InvalidUri(f"base URI already ends in a digest segment: {base!r}")
    return scheme, parts.netloc, prefix


def mint(base: str, content: bytes) -> TrustyUri:
    scheme, authority, prefix = _parse_base(base)
    return TrustyUri(scheme, authority, prefix, compute_digest(content))


@dataclass(frozen=True)
class Match:
    digest: Digest

    ok = True


@dataclass(frozen=True)
class Mismatch:
    expected: Digest
    actual: Digest

    ok = False


VerificationOutcome = Union[Match, Mismatch]


def verify(uri: TrustyUri, content: bytes) -> VerificationOutcome:
    actual = compute_digest(content)
    if actual == uri.digest:
        return Match(actual)
    return Mismatch(expected=uri.digest, actual=actual)
