"""Trust decisions over (source, host) pairs and link-trust propagation.

Trust is binary set membership. The source is the authority of the search
service that produced a URI; the host is the authority of the URI itself.

=========  ==========  ================================  ===================
source     host        verdict                           required action
=========  ==========  ================================  ===================
trusted    trusted     Trusted                           none
trusted    untrusted   TrustedUriContentUnverified       local digest check
untrusted  trusted     Trusted                           none
untrusted  untrusted   Untrusted                         revalidate via a
                                                         trusted pair, else
                                                         validator quorum
=========  ==========  ================================  ===================

The untrusted-source/trusted-host row accepts content without any evidence
that the URI itself is the one the user wanted. That is a known weakness of
the protocol, kept as is.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Union

from .digest import TrustyUri
from .resource import LinkSet


class Verdict(str, enum.Enum):
    TRUSTED = "Trusted"
    TRUSTED_URI_CONTENT_UNVERIFIED = "TrustedUriContentUnverified"
    UNTRUSTED = "Untrusted"


class Action(str, enum.Enum):
    NONE = "None"
    LOCAL_DIGEST_CHECK = "LocalDigestCheck"
    REVALIDATE_VIA_TRUSTED = "RevalidateViaTrusted"
    VALIDATOR_QUORUM = "ValidatorQuorum"


class Case(str, enum.Enum):
    S_PLUS_H_PLUS = "S+H+"
    S_PLUS_H_MINUS = "S+H-"
    S_MINUS_H_PLUS = "S-H+"
    S_MINUS_H_MINUS = "S-H-"
    LINK_PROPAGATION = "LinkPropagation"


class LinkTrust(str, enum.Enum):
    URI_BINDING_TRUSTED = "UriBindingTrusted"


class PropagationFromUntrusted(ValueError):
    pass


class UntrustedAttestor(ValueError):
    pass


def normalize_authority(authority: str) -> str:
    """Lowercase, drop userinfo, and elide the default http/https ports."""
    authority = authority.strip().lower()
    if "://" in authority:
        authority = authority.split("://", 1)[1].split("/", 1)[0]
    authority = authority.rpartition("@")[2]
    for port in (":80", ":443"):
        if authority.endswith(port):
            return authority[: -len(port)]
    return authority


@dataclass(frozen=True)
class TrustContext:
    trusted_sources: frozenset[str] = frozenset()
    trusted_hosts: frozenset[str] = frozenset()
    validators: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "trusted_sources", frozenset(map(normalize_authority, self.trusted_sources)))
        object.__setattr__(self, "trusted_hosts", frozenset(map(normalize_authority, self.trusted_hosts)))
        object.__setattr__(self, "validators", tuple(self.validators))

    @classmethod
    def create(
        cls,
        trusted_sources: Iterable[str] = (),
        trusted_hosts: Iterable[str] = (),
        validators: Iterable[str] = (),
    ) -> "TrustContext":
        return cls(frozenset(trusted_sources), frozenset(trusted_hosts), tuple(validators))

    def source_trusted(self, source: Optional[str]) -> bool:
        return source is not None and normalize_authority(source) in self.trusted_sources

    def host_trusted(self, host: str) -> bool:
        return normalize_authority(host) in self.trusted_hosts

    def with_source(self, source: str) -> "TrustContext":
        return replace(self, trusted_sources=self.trusted_sources | {source})

    def to_json(self) -> dict:
        return {
            "trusted_sources": sorted(self.trusted_sources),
            "trusted_hosts": sorted(self.trusted_hosts),
            "validators": list(self.validators),
        }

    @classmethod
    def from_json(cls, data: dict) -> "TrustContext":
        return cls.create(
            data.get("trusted_sources", ()),
            data.get("trusted_hosts", ()),
            data.get("validators", ()),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TrustContext":
        return cls.from_json(json.loads(Path(path).read_text("utf-8")))

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2), "utf-8")


@dataclass(frozen=True)
class TrustDecision:
    verdict: Verdict
    required_action: Action
    rationale: Case
    alternatives: tuple[Action, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        if (self.verdict is Verdict.TRUSTED) != (self.required_action is Action.NONE):
            raise ValueError(f"verdict {self.verdict.value} inconsistent with {self.required_action.value}")

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "required_action": self.required_action.value,
            "rationale": self.rationale.value,
        }

    @classmethod
    def from_json(cls, data: dict) -> "TrustDecision":
        return cls(Verdict(data["verdict"]), Action(data["required_action"]), Case(data["rationale"]))


def assess(
    source: Optional[str],
    host: str,
    uri: TrustyUri,
    ctx: TrustContext,
    *,
    unverified_host_action: Action = Action.LOCAL_DIGEST_CHECK,
) -> TrustDecision:
    """Place a (source, host) pair in the four-case matrix.

    ``source=None`` means the URI did not come from any search service and
    counts as untrusted. ``unverified_host_action`` picks between the two
    follow-ups for a trusted source paired with an untrusted host.
    """
    if not isinstance(uri, TrustyUri):
        raise TypeError("only trusty URIs can be assessed")
    s_ok = ctx.source_trusted(source)
    h_ok = ctx.host_trusted(host)
    if s_ok and h_ok:
        return TrustDecision(Verdict.TRUSTED, Action.NONE, Case.S_PLUS_H_PLUS)
    if s_ok:
        if unverified_host_action not in (Action.LOCAL_DIGEST_CHECK, Action.REVALIDATE_VIA_TRUSTED):
            raise ValueError(f"unsupported action for an untrusted host: {unverified_host_action}")
        other = (
            Action.REVALIDATE_VIA_TRUSTED
            if unverified_host_action is Action.LOCAL_DIGEST_CHECK
            else Action.LOCAL_DIGEST_CHECK
        )
        return TrustDecision(
            Verdict.TRUSTED_URI_CONTENT_UNVERIFIED, unverified_host_action, Case.S_PLUS_H_MINUS, (other,)
        )
    if h_ok:
        return TrustDecision(Verdict.TRUSTED, Action.NONE, Case.S_MINUS_H_PLUS)
    if ctx.trusted_sources and ctx.trusted_hosts:
        return TrustDecision(
            Verdict.UNTRUSTED, Action.REVALIDATE_VIA_TRUSTED, Case.S_MINUS_H_MINUS, (Action.VALIDATOR_QUORUM,)
        )
    return TrustDecision(Verdict.UNTRUSTED, Action.VALIDATOR_QUORUM, Case.S_MINUS_H_MINUS)


def propagate(parent_decision: TrustDecision, parent_links: LinkSet) -> dict[TrustyUri, LinkTrust]:
    """URI-binding trust for every trusty link of a trusted page.

    Content fetched through these links still has to be assessed and
    digest-verified; plain links get nothing.
    """
    if parent_decision.verdict is not Verdict.TRUSTED:
        raise PropagationFromUntrusted(f"parent verdict is {parent_decision.verdict.value}")
    return {uri: LinkTrust.URI_BINDING_TRUSTED for uri in parent_links.trusty_links}


def promote_host(ctx: TrustContext, host: str, attestor: str) -> TrustContext:
    if not ctx.host_trusted(attestor):
        raise UntrustedAttestor(f"{attestor} is not a trusted host")
    if ctx.host_trusted(host):
        return ctx
    return replace(ctx, trusted_hosts=ctx.trusted_hosts | {host})
