"""Scientist agents: persona prompts, invitation decisions, mention detection."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Sequence

from .corpus import AuthorProfile, profile_text
from .errors import TemplateError
from .llm import CallKey, UsageLedger, complete, make_request, parse_decision, parse_structured, reprompt_request, FieldSpec
from .templates import PromptTemplates, join_sections

_UNRESOLVED_RE = re.compile(r"\{\w+\}")


@dataclass(frozen=True)
class ScientistAgent:
    profile: AuthorProfile
    system_prompt: str
    is_guest: bool = False

    @property
    def name(self) -> str:
        return self.profile.masked_name


@dataclass(frozen=True)
class InvitationDecision:
    accept: bool
    reasoning: str
    parse_failed: bool = False

    def __post_init__(self):
        if not self.reasoning:
            raise ValueError("an invitation decision must carry reasoning")


def profile_fields(profile: AuthorProfile, name_by_id: Mapping[str, str] | None = None) -> dict[str, str]:
    """Template substitution values derived from one profile."""
    name_by_id = name_by_id or {}
    if profile.collaboration_history:
        ordered = sorted(profile.collaboration_history.items(), key=lambda kv: (-kv[1], kv[0]))
        collab = "; ".join(f"{name_by_id.get(cid, cid)} ({cnt} joint papers)" for cid, cnt in ordered)
    else:
        collab = "none"
    return {
        "name": profile.masked_name,
        "affiliations": ", ".join(profile.affiliations) if profile.affiliations else "unaffiliated",
        "citation_count": str(profile.citation_count),
        "research_interests": ", ".join(profile.research_interests),
        "paper_count": str(profile.paper_count),
        "collaboration_history": collab,
    }


def render_system_prompt(
    profile: AuthorProfile, template: str, name_by_id: Mapping[str, str] | None = None
) -> str:
    """Substitute profile fields into a persona template.

    An unknown placeholder is a fatal template error, and no unresolved
    {placeholder} marker may survive in the output.
    """
    values = profile_fields(profile, name_by_id)
    try:
        rendered = template.format(**values)
    except (KeyError, IndexError, ValueError) as exc:
        raise TemplateError(f"template references unknown placeholder: {exc}") from exc
    leftover = _UNRESOLVED_RE.search(rendered)
    if leftover:
        raise TemplateError(f"unresolved placeholder {leftover.group()!r} in rendered prompt")
    return rendered


def make_agent(
    profile: AuthorProfile,
    templates: PromptTemplates,
    name_by_id: Mapping[str, str] | None = None,
    is_guest: bool = False,
) -> ScientistAgent:
    return ScientistAgent(
        profile=profile,
        system_prompt=render_system_prompt(profile, templates.scientist, name_by_id),
        is_guest=is_guest,
    )


_DECISION_SCHEMA = (FieldSpec("reasoning", label="REASONING", required=False),)


def decide_invitation(
    agent: ScientistAgent,
    leader_profile: AuthorProfile,
    team_profiles: Sequence[AuthorProfile],
    backend,
    ledger: UsageLedger,
    templates: PromptTemplates,
    name_by_id: Mapping[str, str],
    attempt: int,
    model: str,
    temperature: float,
    recorder=None,
) -> InvitationDecision:
    """Ask an invited scientist whether to join the team.

    One corrective re-prompt on an unparseable reply; if that also fails
    the invitation counts as rejected, flagged as a parse failure. The
    optional recorder receives (stage, turn, agent, name, kind, text) for
    every prompt and response, so callers can keep a full transcript; the
    candidate is logged with agent index -1 because it is not (yet) part
    of the roster.
    """
    members = "\n\n".join(profile_text(p, name_by_id) for p in team_profiles) or "(none yet)"
    content = join_sections(
        [
            ("Task", templates.invite),
            ("Team leader", profile_text(leader_profile, name_by_id)),
            ("Current team members", members),
        ]
    )
    request = make_request(model, agent.system_prompt, content, temperature)
    key = CallKey("invite", attempt, 0)
    if recorder:
        recorder(key.stage, key.turn, -1, agent.name, "prompt", content)
    response = complete(backend, request, key, ledger)
    if recorder:
        recorder(key.stage, key.turn, -1, agent.name, "response", response)
    accept = parse_decision(response)
    if accept is None:
        instruction = "Reply with 'DECISION: ACCEPT' or 'DECISION: REJECT' on its own line, then 'REASONING: ...'."
        retry_key = key.retry()
        if recorder:
            recorder(retry_key.stage, retry_key.turn, -1, agent.name, "prompt", instruction)
        response = complete(backend, reprompt_request(request, response, instruction), retry_key, ledger)
        if recorder:
            recorder(retry_key.stage, retry_key.turn, -1, agent.name, "response", response)
        accept = parse_decision(response)
        if accept is None:
            return InvitationDecision(accept=False, reasoning=response, parse_failed=True)
    parsed = parse_structured(response, _DECISION_SCHEMA)
    return InvitationDecision(accept=accept, reasoning=parsed.get("reasoning") or response)


def detect_mentions(
    response: str, candidates: Sequence[AuthorProfile], exclude_ids: frozenset[str] | set[str] = frozenset()
) -> list[str]:
    """Ids of non-team scientists whose masked name appears verbatim.

    Matching is exact and case-sensitive; results are deduplicated and
    ordered by first occurrence in the response.
    """
    hits = []
    for p in candidates:
        if p.id in exclude_ids:
            continue
        pos = response.find(p.masked_name)
        if pos >= 0:
            hits.append((pos, p.masked_name, p.id))
    hits.sort()
    return [pid for _, _, pid in hits]
