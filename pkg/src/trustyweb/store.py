"""Append-only, digest-addressed publisher store with publish-once semantics.

On-disk layout under the storage root::

    objects/ab/cdef...<62 hex>.bin    content bytes
    objects/ab/cdef...<62 hex>.json   PublicationRecord sidecar
    journal.jsonl                     one committed digest per line, in order

A record exists once its journal line is written; object files without a
journal line are leftovers of an interrupted publish and get overwritten.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Callable, Optional, Union

import requests

from .digest import Digest, InvalidUri, TrustyUri, compute_digest, mint
from .net import ServiceHandler
from .resource import (
    CLOCK_TOLERANCE,
    InvalidTimestamp,
    Parent,
    PublicationMeta,
    PublisherRoot,
    Resource,
    build_chain_entry,
    parent_from_text,
    parse_timestamp,
    utcnow,
)

log = logging.getLogger(__name__)


class StoreError(Exception):
    status = 500


class NotFound(StoreError):
    status = 404


class IntegrityFailure(StoreError):
    status = 500


class ParentNotFound(StoreError):
    status = 422


class ClockSkew(StoreError):
    status = 400


class ProvableCollision(StoreError):
    status = 409


class StorageFailure(StoreError):
    status = 500


@dataclass(frozen=True)
class PublicationRecord:
    digest: Digest
    uri: TrustyUri
    meta: PublicationMeta
    media_type: str
    size: int

    def to_json(self) -> dict:
        return {
            "digest": self.digest.hex,
            "uri": str(self.uri),
            "meta": self.meta.to_json(),
            "media_type": self.media_type,
            "size": self.size,
        }

    @classmethod
    def from_json(cls, data: dict) -> "PublicationRecord":
        return cls(
            Digest.from_hex(data["digest"]),
            TrustyUri.parse(data["uri"]),
            PublicationMeta.from_json(data["meta"]),
            data["media_type"],
            int(data["size"]),
        )


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


class PublisherStore:
    def __init__(
        self,
        root: Union[str, Path],
        base_uri: str,
        clock: Callable[[], datetime] = utcnow,
    ) -> None:
        self.root = Path(root)
        self.base_uri = base_uri if base_uri.endswith("/") else base_uri + "/"
        mint(self.base_uri, b"")  # validates the base early
        self.clock = clock
        self.publisher_root = PublisherRoot(self.base_uri)
        self._lock = threading.Lock()
        self._by_digest: dict[Digest, PublicationRecord] = {}
        self._by_author: dict[str, list[Digest]] = {}
        try:
            (self.root / "objects").mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageFailure(str(exc)) from exc
        self._journal = self.root / "journal.jsonl"
        self._load()

    def _load(self) -> None:
        if not self._journal.exists():
            return
        for line in self._journal.read_text("utf-8").splitlines():
            if not line.strip():
                continue
            digest = Digest.from_hex(json.loads(line)["digest"])
            sidecar = json.loads(self._path(digest, ".json").read_text("utf-8"))
            self._index(PublicationRecord.from_json(sidecar))

    def _index(self, record: PublicationRecord) -> None:
        self._by_digest[record.digest] = record
        self._by_author.setdefault(record.meta.author_id, []).append(record.digest)

    def _path(self, digest: Digest, suffix: str) -> Path:
        return self.root / "objects" / digest.hex[:2] / (digest.hex[2:] + suffix)

    def __len__(self) -> int:
        return len(self._by_digest)

    def __contains__(self, digest: Digest) -> bool:
        return digest in self._by_digest

    def records(self) -> list[PublicationRecord]:
        return list(self._by_digest.values())

    def by_author(self, author_id: str) -> list[Digest]:
        return list(self._by_author.get(author_id, ()))

    def record(self, digest: Digest) -> PublicationRecord:
        try:
            return self._by_digest[digest]
        except KeyError:
            raise NotFound(digest.hex) from None

    def publish(
        self,
        content: Resource,
        author: str,
        parent: Optional[Parent] = None,
        *,
        external_parent: bool = False,
        claimed_published_at: Optional[str] = None,
    ) -> PublicationRecord:
        return self.publish_with_status(
            content,
            author,
            parent,
            external_parent=external_parent,
            claimed_published_at=claimed_published_at,
        )[0]

    def publish_with_status(
        self,
        content: Resource,
        author: str,
        parent: Optional[Parent] = None,
        *,
        external_parent: bool = False,
        claimed_published_at: Optional[str] = None,
    ) -> tuple[PublicationRecord, bool]:
        """Publish ``content``; returns ``(record, created)``.

        Byte-identical content returns the existing record with
        ``created=False`` whatever author or parent is passed this time.
        """
        digest = compute_digest(content.content)
        if parent is None:
            parent = self.publisher_root
        now = self.clock()
        if claimed_published_at is not None:
            try:
                claimed = parse_timestamp(claimed_published_at)
            except InvalidTimestamp as exc:
                raise ClockSkew(str(exc)) from exc
            if abs(claimed - now) > CLOCK_TOLERANCE:
                raise ClockSkew(f"{claimed_published_at} is outside the accepted window")

        with self._lock:
            existing = self._by_digest.get(digest)
            if existing is not None:
                stored = self._read(digest)
                if stored != content.content:
                    raise ProvableCollision(digest.hex)
                return existing, False

            if isinstance(parent, TrustyUri) and parent.digest not in self._by_digest:
                if not external_parent:
                    raise ParentNotFound(str(parent))

            meta = build_chain_entry(content, parent, author, now)
            record = PublicationRecord(
                digest=digest,
                uri=mint(self.base_uri, content.content),
                meta=meta,
                media_type=content.media_type,
                size=content.size,
            )
            try:
                self._path(digest, "").parent.mkdir(exist_ok=True)
                _atomic_write(self._path(digest, ".bin"), content.content)
                sidecar = json.dumps(record.to_json(), ensure_ascii=False).encode("utf-8")
                _atomic_write(self._path(digest, ".json"), sidecar)
                with open(self._journal, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"digest": digest.hex}) + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
            except OSError as exc:
                raise StorageFailure(str(exc)) from exc
            self._index(record)
            log.info("published %s by %s", record.uri, author)
            return record, True

    def _read(self, digest: Digest) -> bytes:
        try:
            return self._path(digest, ".bin").read_bytes()
        except FileNotFoundError:
            raise IntegrityFailure(f"{digest.hex}: content file missing") from None
        except OSError as exc:
            raise StorageFailure(str(exc)) from exc

    def fetch(self, digest: Digest) -> tuple[Resource, PublicationRecord]:
        record = self.record(digest)
        data = self._read(digest)
        if compute_digest(data) != digest:
            raise IntegrityFailure(f"{digest.hex}: stored bytes no longer match")
        return Resource(data, record.media_type), record

    def chain_of(self, digest: Digest) -> list[PublicationRecord]:
        """Records from ``digest`` up its parent links, newest first.

        Ends at the record whose parent is the publisher root or a trusty URI
        outside this store (an external parent).
        """
        chain = [self.record(digest)]
        while True:
            parent = chain[-1].meta.parent
            if not isinstance(parent, TrustyUri) or parent.digest not in self._by_digest:
                return chain
            chain.append(self._by_digest[parent.digest])

    def is_external(self, parent: Parent) -> bool:
        return isinstance(parent, TrustyUri) and parent.digest not in self._by_digest


def record_headers(record: PublicationRecord) -> dict[str, str]:
    parent = record.meta.parent
    return {
        "X-Trusty-Parent": "root" if isinstance(parent, PublisherRoot) else str(parent),
        "X-Trusty-Published": record.meta.published_at,
    }


def _truthy(value: Optional[str]) -> bool:
    return (value or "").strip().lower() in ("1", "true", "yes")


class StoreApp:
    """HTTP routes for a :class:`PublisherStore`."""

    def __init__(self, store: PublisherStore) -> None:
        self.store = store

    def handle(self, h: ServiceHandler, method: str, path: str, query: dict) -> None:
        try:
            if method == "POST" and path == "/publish":
                return self._publish(h)
            if method == "GET" and path.startswith("/chain/"):
                digest = Digest.from_hex(path[len("/chain/"):])
                return h.send_json(200, [r.to_json() for r in self.store.chain_of(digest)])
            if method == "GET" and len(path) == 65:
                resource, record = self.store.fetch(Digest.from_hex(path[1:]))
                return h.send_bytes(200, resource.content, record.media_type, record_headers(record))
        except StoreError as exc:
            return h.send_error_json(exc.status, type(exc).__name__, str(exc))
        except ValueError as exc:
            return h.send_error_json(400, "BadRequest", str(exc))
        h.send_error_json(404, "NotFound", path)

    def _publish(self, h: ServiceHandler) -> None:
        body = h.read_body()
        author = h.headers.get("X-Trusty-Author")
        if not author:
            return h.send_error_json(400, "BadRequest", "X-Trusty-Author header is required")
        try:
            parent = parent_from_text(h.headers.get("X-Trusty-Parent", ""), self.store.publisher_root)
            resource = Resource(body, h.headers.get("Content-Type", "application/octet-stream"))
        except (InvalidUri, ValueError) as exc:
            return h.send_error_json(400, "BadRequest", str(exc))
        record, created = self.store.publish_with_status(
            resource,
            author,
            parent,
            external_parent=_truthy(h.headers.get("X-Trusty-Parent-External")),
            claimed_published_at=h.headers.get("X-Trusty-Published"),
        )
        h.send_json(201 if created else 200, record.to_json())


class StoreClientError(Exception):
    def __init__(self, status: int, error: str, detail: str = "") -> None:
        super().__init__(f"{status} {error}: {detail}")
        self.status = status
        self.error = error


class StoreClient:
    """Talks to a publisher over HTTP."""

    def __init__(self, endpoint: str, timeout: float = 30.0) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.session = requests.Session()

    @staticmethod
    def _raise(resp: requests.Response) -> None:
        try:
            body = resp.json()
        except ValueError:
            body = {}
        raise StoreClientError(resp.status_code, body.get("error", "HTTPError"), body.get("detail", ""))

    def publish(
        self,
        content: bytes,
        author: str,
        media_type: str = "application/octet-stream",
        parent: Optional[Union[TrustyUri, str]] = None,
        external_parent: bool = False,
        published_at: Optional[str] = None,
    ) -> tuple[PublicationRecord, bool]:
        headers = {"X-Trusty-Author": author, "Content-Type": media_type}
        if parent is not None:
            headers["X-Trusty-Parent"] = str(parent)
        if external_parent:
            headers["X-Trusty-Parent-External"] = "true"
        if published_at is not None:
            headers["X-Trusty-Published"] = published_at
        resp = self.session.post(f"{self.endpoint}/publish", data=content, headers=headers, timeout=self.timeout)
        if resp.status_code not in (200, 201):
            self._raise(resp)
        return PublicationRecord.from_json(resp.json()), resp.status_code == 201

    def fetch(self, digest: Digest) -> requests.Response:
        resp = self.session.get(f"{self.endpoint}/{digest.hex}", timeout=self.timeout)
        if resp.status_code != 200:
            self._raise(resp)
        return resp

    def chain(self, digest: Digest) -> list[PublicationRecord]:
        resp = self.session.get(f"{self.endpoint}/chain/{digest.hex}", timeout=self.timeout)
        if resp.status_code != 200:
            self._raise(resp)
        return [PublicationRecord.from_json(r) for r in resp.json()]
