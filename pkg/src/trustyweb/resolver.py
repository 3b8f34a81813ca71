"""Client-side resolution: search, fetch, decide, and follow up.

The resolver plays the reader's browser plugin. Every message it exchanges is
appended to a :class:`ResolutionTrace` so a run can be compared step by step
with the expected protocol transcript.

Responses are always digest-checked, even from trusted hosts; the result is
recorded on the ``response`` step as ``verified`` and never adds a step of
its own. A trace only ends ``Trusted`` with content whose digest matched.
"""

from __future__ import annotations

import base64
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union
from urllib.parse import urlsplit

from .digest import InvalidUri, Match, TrustyUri, classify_uri, verify
from .net import FetchError, Fetcher, http_fetch
from .resource import LinkSet, Resource, extract_links
from .search import SearchHit, http_search
from .trust import (
    Action,
    Case,
    LinkTrust,
    TrustContext,
    TrustDecision,
    Verdict,
    assess,
    propagate,
)
from .validator import AllValidatorsUnreachable, QuorumOutcome, ValidationReport, quorum_validate

log = logging.getLogger(__name__)

ACTIONS = ("search", "resultSet", "request", "response", "check", "validate")
USER = "user"


@dataclass(frozen=True)
class Step:
    action: str
    peer: str
    subject: str
    verified: Optional[bool] = None
    note: Optional[str] = None

    def __post_init__(self) -> None:
        if self.action not in ACTIONS:
            raise ValueError(f"unknown trace action {self.action!r}")

    def to_json(self) -> dict:
        data = {"action": self.action, "peer": self.peer, "subject": self.subject}
        if self.verified is not None:
            data["verified"] = self.verified
        if self.note is not None:
            data["note"] = self.note
        return data

    @classmethod
    def from_json(cls, data: dict) -> "Step":
        return cls(data["action"], data["peer"], data["subject"], data.get("verified"), data.get("note"))


@dataclass
class ResolutionTrace:
    steps: list[Step]
    final: TrustDecision
    content: Optional[Resource] = None
    uri: Optional[TrustyUri] = None

    @property
    def actions(self) -> list[str]:
        return [s.action for s in self.steps]

    @property
    def trusted(self) -> bool:
        return self.final.verdict is Verdict.TRUSTED

    def to_lines(self) -> list[str]:
        lines = [json.dumps(s.to_json(), ensure_ascii=False, sort_keys=True) for s in self.steps]
        tail = {"final": self.final.to_json(), "uri": str(self.uri) if self.uri else None}
        if self.content is not None:
            tail["media_type"] = self.content.media_type
            tail["content_b64"] = base64.b64encode(self.content.content).decode("ascii")
        lines.append(json.dumps(tail, ensure_ascii=False, sort_keys=True))
        return lines

    def dumps(self) -> str:
        return "\n".join(self.to_lines()) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ResolutionTrace":
        items = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not items or "final" not in items[-1]:
            raise ValueError("trace has no final line")
        tail = items.pop()
        content = None
        if tail.get("content_b64") is not None:
            content = Resource(base64.b64decode(tail["content_b64"]), tail["media_type"])
        uri = TrustyUri.parse(tail["uri"]) if tail.get("uri") else None
        return cls([Step.from_json(i) for i in items], TrustDecision.from_json(tail["final"]), content, uri)


class ResolutionError(Exception):
    def __init__(self, message: str, trace: ResolutionTrace) -> None:
        super().__init__(message)
        self.trace = trace


class NotFoundAnywhere(ResolutionError):
    pass


class UntrustedUnverifiable(ResolutionError):
    pass


class LinkIndexOutOfRange(IndexError):
    pass


def _authority(endpoint: str) -> str:
    return urlsplit(endpoint).netloc if "://" in endpoint else endpoint


@dataclass
class _Run:
    steps: list[Step] = field(default_factory=list)
    got_bytes: bool = False


Searcher = Callable[[str, str], Sequence[SearchHit]]
Quorum = Callable[..., QuorumOutcome]


class Resolver:
    """Resolves search terms or trusty URIs under a :class:`TrustContext`.

    ``paranoid`` skips the initial fetch from an untrusted host when both the
    source and the host are untrusted. ``unverified_host_action`` selects the
    first follow-up for a trusted source with an untrusted host.
    """

    def __init__(
        self,
        ctx: TrustContext,
        *,
        fetch: Fetcher = http_fetch,
        search: Searcher = http_search,
        quorum: Quorum = quorum_validate,
        paranoid: bool = False,
        unverified_host_action: Action = Action.LOCAL_DIGEST_CHECK,
        threshold: Optional[int] = None,
        scheme: str = "http",
    ) -> None:
        self.ctx = ctx
        self.fetch = fetch
        self.search = search
        self.quorum = quorum
        self.paranoid = paranoid
        self.unverified_host_action = unverified_host_action
        self.threshold = threshold
        self.scheme = scheme

    def _endpoint(self, source: str) -> str:
        return source if "://" in source else f"{self.scheme}://{source}"

    def resolve(
        self, target: Union[str, TrustyUri, Sequence[str]], source: Optional[str] = None
    ) -> ResolutionTrace:
        """Resolve search terms (via ``source``) or a trusty URI.

        For a URI, ``source`` names the search service it was obtained from,
        if any; no search is performed.
        """
        run = _Run()
        uri = _as_trusty(target)
        if uri is None:
            terms = target if isinstance(target, str) else " ".join(target)
            if source is None:
                if not self.ctx.trusted_sources:
                    raise ValueError("no source given and no trusted source configured")
                source = sorted(self.ctx.trusted_sources)[0]
            hits = self._search(run, source, terms)
            if not hits:
                decision = TrustDecision(Verdict.UNTRUSTED, Action.REVALIDATE_VIA_TRUSTED, Case.S_MINUS_H_MINUS)
                raise NotFoundAnywhere(f"no results for {terms!r}", ResolutionTrace(run.steps, decision))
            uri = hits[0].uri
        source_id = _authority(source) if source else None
        return self._resolve_uri(run, uri, source_id, self.ctx)

    def navigate(self, trace: ResolutionTrace, link_index: int) -> ResolutionTrace:
        """Follow the ``link_index``-th trusty link of a trusted page.

        The link inherits URI-binding trust from the page, so no search is
        made; the fetched content is still assessed and digest-checked.
        """
        if trace.content is None or trace.uri is None:
            propagate(trace.final, LinkSet())  # raises for untrusted parents
            raise ValueError("trace carries no content to navigate from")
        links = extract_links(trace.content, str(trace.uri))
        bindings = propagate(trace.final, links)
        if not 0 <= link_index < len(links.trusty_links):
            raise LinkIndexOutOfRange(f"link {link_index} of {len(links.trusty_links)} trusty links")
        link = links.trusty_links[link_index]
        assert bindings[link] is LinkTrust.URI_BINDING_TRUSTED
        referrer = trace.uri.authority
        return self._resolve_uri(_Run(), link, referrer, self.ctx.with_source(referrer), Case.LINK_PROPAGATION)

    # -- protocol messages -------------------------------------------------

    def _search(self, run: _Run, source: str, terms: str) -> list[SearchHit]:
        peer = _authority(source)
        run.steps.append(Step("search", peer, terms))
        try:
            hits = list(self.search(self._endpoint(source), terms))
        except FetchError as exc:
            log.info("search at %s failed: %s", peer, exc)
            run.steps.append(Step("resultSet", peer, "", note="unreachable"))
            return []
        run.steps.append(Step("resultSet", peer, " ".join(str(h.uri) for h in hits)))
        return hits

    def _request(self, run: _Run, uri: TrustyUri) -> tuple[Optional[Resource], bool]:
        run.steps.append(Step("request", uri.authority, str(uri)))
        try:
            fetched = self.fetch(str(uri))
            resource = Resource(fetched.content, _media_type(fetched.media_type))
        except (FetchError, ValueError) as exc:
            log.info("request %s failed: %s", uri, exc)
            run.steps.append(Step("response", uri.authority, str(uri), verified=False, note="unreachable"))
            return None, False
        run.got_bytes = True
        ok = isinstance(verify(uri, resource.content), Match)
        run.steps.append(Step("response", uri.authority, str(uri), verified=ok))
        return resource, ok

    def _revalidate(self, run: _Run, uri: TrustyUri, ctx: TrustContext) -> Optional[tuple[Resource, TrustyUri]]:
        """Re-find the digest through trusted sources and fetch it from a trusted host."""
        for source in sorted(ctx.trusted_sources):
            hits = self._search(run, source, uri.digest.hex)
            for hit in hits:
                cand = hit.uri
                if cand.digest != uri.digest or not ctx.host_trusted(cand.authority):
                    continue
                resource, ok = self._request(run, cand)
                if ok:
                    return resource, cand
        return None

    def _quorum(self, run: _Run, uri: TrustyUri, ctx: TrustContext) -> bool:
        if not ctx.validators:
            return False
        try:
            outcome = self.quorum(uri, list(ctx.validators), self.threshold)
        except AllValidatorsUnreachable:
            for endpoint in ctx.validators:
                run.steps.append(Step("validate", _authority(endpoint), str(uri), note="unreachable"))
            return False
        for endpoint in ctx.validators:
            answer = outcome.answers.get(endpoint, "unreachable")
            if isinstance(answer, ValidationReport):
                run.steps.append(Step("validate", _authority(endpoint), str(uri), verified=answer.match))
            else:
                run.steps.append(Step("validate", _authority(endpoint), str(uri), note=answer))
        return outcome.accepted

    # -- decision procedure ------------------------------------------------

    def _resolve_uri(
        self,
        run: _Run,
        uri: TrustyUri,
        source: Optional[str],
        ctx: TrustContext,
        rationale: Optional[Case] = None,
    ) -> ResolutionTrace:
        decision = assess(source, uri.authority, uri, ctx, unverified_host_action=self.unverified_host_action)
        label = rationale or decision.rationale

        def done(content: Resource, where: TrustyUri) -> ResolutionTrace:
            return ResolutionTrace(run.steps, TrustDecision(Verdict.TRUSTED, Action.NONE, label), content, where)

        local: Optional[Resource] = None
        if decision.verdict is Verdict.TRUSTED:
            resource, ok = self._request(run, uri)
            if ok:
                return done(resource, uri)
        elif decision.rationale is Case.S_PLUS_H_MINUS:
            if decision.required_action is Action.LOCAL_DIGEST_CHECK:
                found = self._local_check(run, uri)
                if found is not None:
                    return done(found, uri)
                found = self._revalidate(run, uri, ctx)
            else:
                found = self._revalidate(run, uri, ctx) or _pair(self._local_check(run, uri), uri)
            if found is not None:
                return done(*found)
        else:
            if not self.paranoid:
                resource, ok = self._request(run, uri)
                local = resource if ok else None
            found = self._revalidate(run, uri, ctx)
            if found is not None:
                return done(*found)

        if decision.verdict is Verdict.TRUSTED:
            found = self._revalidate(run, uri, ctx)
            if found is not None:
                return done(*found)

        if self._quorum(run, uri, ctx):
            if local is None:
                resource, ok = self._request(run, uri)
                local = resource if ok else None
            if local is not None:
                return done(local, uri)

        action = decision.required_action if decision.required_action is not Action.NONE else Action.VALIDATOR_QUORUM
        trace = ResolutionTrace(run.steps, TrustDecision(Verdict.UNTRUSTED, action, label))
        if not run.got_bytes:
            raise NotFoundAnywhere(f"{uri} could not be retrieved", trace)
        raise UntrustedUnverifiable(f"{uri} could not be verified", trace)

    def _local_check(self, run: _Run, uri: TrustyUri) -> Optional[Resource]:
        resource, ok = self._request(run, uri)
        if resource is None:
            return None
        run.steps.append(Step("check", USER, str(uri), verified=ok))
        return resource if ok else None


def _pair(resource: Optional[Resource], uri: TrustyUri) -> Optional[tuple[Resource, TrustyUri]]:
    return None if resource is None else (resource, uri)


def _as_trusty(target) -> Optional[TrustyUri]:
    if isinstance(target, TrustyUri):
        return target
    if isinstance(target, str) and "://" in target:
        try:
            parsed = classify_uri(target.strip())
        except InvalidUri:
            return None
        if isinstance(parsed, TrustyUri):
            return parsed
        raise ValueError(f"not a trusty URI: {target}")
    return None


def _media_type(value: str) -> str:
    try:
        Resource(b"", value)
        return value
    except ValueError:
        return "application/octet-stream"


def resolve(target, ctx: TrustContext, source: Optional[str] = None, **kwargs) -> ResolutionTrace:
    return Resolver(ctx, **kwargs).resolve(target, source)


def navigate(trace: ResolutionTrace, link_index: int, ctx: TrustContext, **kwargs) -> ResolutionTrace:
    return Resolver(ctx, **kwargs).navigate(trace, link_index)
