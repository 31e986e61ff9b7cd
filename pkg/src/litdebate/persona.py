"""Corpus-driven persona induction.

A persona is distilled from a bounded excerpt of an evidence pool's
rendering and becomes the system prompt that conditions a debater.
The induction response must arrive in a delimited key/value block;
one re-ask with a format reminder is allowed, then a hard error, since
a silently defaulted persona would skew condition comparisons.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Mapping

from .canonical import normalize_text, sha256_hex
from .errors import PersonaParseError, ValidationError
from .gateway import ChatMessage, Gateway, make_request
from .templates import TemplatePack

logger = logging.getLogger(__name__)

PERSONA_BLOCK_PATTERN = re.compile(r"PERSONA:\s*\n(.*?)\nEND PERSONA", re.DOTALL)
REQUIRED_FIELDS = ("name", "focus", "keywords", "patterns", "priorities")


@dataclass(frozen=True)
class PersonaProfile:
    """A distilled viewpoint: vocabulary, moves, and priorities."""

    persona_name: str
    domain_focus: str
    keyword_signatures: tuple[str, ...]
    problem_solving_patterns: tuple[str, ...]
    reasoning_priorities: tuple[str, ...]
    source_excerpt_digest: str

    def __post_init__(self):
        for label, values in (
            ("keyword_signatures", self.keyword_signatures),
            ("problem_solving_patterns", self.problem_solving_patterns),
            ("reasoning_priorities", self.reasoning_priorities),
        ):
            if not values:
                raise ValidationError(f"persona field {label} must be nonempty")
        if not self.source_excerpt_digest:
            raise ValidationError("persona must carry its source excerpt digest")

    def to_dict(self) -> dict:
        return {
            "persona_name": self.persona_name,
            "domain_focus": self.domain_focus,
            "keyword_signatures": list(self.keyword_signatures),
            "problem_solving_patterns": list(self.problem_solving_patterns),
            "reasoning_priorities": list(self.reasoning_priorities),
            "source_excerpt_digest": self.source_excerpt_digest,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "PersonaProfile":
        return cls(
            persona_name=payload["persona_name"],
            domain_focus=payload["domain_focus"],
            keyword_signatures=tuple(payload["keyword_signatures"]),
            problem_solving_patterns=tuple(payload["problem_solving_patterns"]),
            reasoning_priorities=tuple(payload["reasoning_priorities"]),
            source_excerpt_digest=payload["source_excerpt_digest"],
        )

    def digest(self) -> str:
        from .canonical import digest_payload

        return digest_payload(self.to_dict())


def _split_list(value: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in value.split(";") if part.strip())


def parse_persona_response(raw: str) -> dict:
    """Extract persona fields from the first delimited block in ``raw``.

    Surrounding prose is tolerated; a second block is ignored with a
    warning.  Returns a field dict without the excerpt digest.
    """
    if not raw.strip():
        raise PersonaParseError("empty persona response")
    blocks = PERSONA_BLOCK_PATTERN.findall(raw)
    if not blocks:
        raise PersonaParseError("no PERSONA: ... END PERSONA block found")
    if len(blocks) > 1:
        logger.warning("persona response contained %d blocks; using the first", len(blocks))
    fields: dict[str, str] = {}
    for line in blocks[0].splitlines():
        line = line.strip()
        if not line or ":" not in line:
            continue
        key, _, value = line.partition(":")
        key = key.strip().lower()
        if key in REQUIRED_FIELDS and key not in fields:
            fields[key] = value.strip()
    missing = [name for name in REQUIRED_FIELDS if not fields.get(name)]
    if missing:
        raise PersonaParseError(f"persona block missing required fields: {missing}")
    parsed = {
        "persona_name": fields["name"],
        "domain_focus": fields["focus"],
        "keyword_signatures": _split_list(fields["keywords"]),
        "problem_solving_patterns": _split_list(fields["patterns"]),
        "reasoning_priorities": _split_list(fields["priorities"]),
    }
    for label in ("keyword_signatures", "problem_solving_patterns", "reasoning_priorities"):
        if not parsed[label]:
            raise PersonaParseError(f"persona field {label} parsed to an empty list")
    return parsed


def induce_persona(
    excerpt: str,
    role_hint: str,
    *,
    gateway: Gateway,
    templates: TemplatePack,
    model_id: str,
    stage_label: str,
    experimental_temperature: float | None = None,
) -> PersonaProfile:
    """One induction call (plus at most one format re-ask) to the gateway."""
    if not excerpt.strip():
        raise ValidationError("induction excerpt must be nonempty")
    if not role_hint.strip():
        raise ValidationError("role hint must be nonempty")
    system_text = templates.fill("persona_system")
    user_text = templates.fill("persona_induction", role_hint=role_hint, excerpt=excerpt)
    request = make_request(
        stage_label,
        [ChatMessage("system", system_text), ChatMessage("user", user_text)],
        model_id=model_id,
        experimental_temperature=experimental_temperature,
    )
    raw = gateway.complete(request)
    try:
        parsed = parse_persona_response(raw)
    except PersonaParseError as first_error:
        logger.warning("persona parse failed at %s, re-asking: %s", stage_label, first_error)
        reask_text = user_text + templates.fill(
            "persona_reask", parse_error=str(first_error)
        )
        retry = make_request(
            f"{stage_label}-reask",
            [ChatMessage("system", system_text), ChatMessage("user", reask_text)],
            model_id=model_id,
            experimental_temperature=experimental_temperature,
        )
        parsed = parse_persona_response(gateway.complete(retry))
    return PersonaProfile(
        source_excerpt_digest=sha256_hex(normalize_text(excerpt)), **parsed
    )


def render_system_prompt(
    profile: PersonaProfile, agent_role: str, templates: TemplatePack
) -> str:
    """The debater system prompt for a persona-conditioned agent.

    Pure function of its inputs: persona fields appear verbatim, the
    citation contract is pinned to the agent's own pool prefix.
    """
    return templates.fill(
        "persona_debater_system",
        persona_name=profile.persona_name,
        agent_role=agent_role,
        domain_focus=profile.domain_focus,
        keywords="; ".join(profile.keyword_signatures),
        patterns="; ".join(profile.problem_solving_patterns),
        priorities="; ".join(profile.reasoning_priorities),
        cite_role=agent_role,
        cite_example=f"{agent_role}-001",
    )
