"""Three-round, two-agent debate with citation validation and synthesis.

The turn order is fixed: within each round agent A speaks, then agent
B.  Every turn's citations are checked against the agent's own pool;
an unresolved citation triggers one repair re-ask, after which invalid
ids are stripped and the turn is flagged.  The moderator's final plan
must cite evidence from both pools or the run fails.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .canonical import digest_payload, read_json, write_json_atomic
from .errors import (
    BothSidesError,
    DigestMismatchError,
    ParseError,
    TimeLockError,
    TurnFormatError,
    ValidationError,
)
from .gateway import ChatMessage, Gateway, make_request
from .persona import PersonaProfile, render_system_prompt
from .snapshot import CaseSpec, EvidencePool, render_context, validate_time_lock
from .templates import TemplatePack

logger = logging.getLogger(__name__)

TURN_ORDER = ((1, "A"), (1, "B"), (2, "A"), (2, "B"), (3, "A"), (3, "B"))
CITATION_PATTERN = re.compile(r"\[(?:A|B|MERGED)-\d+\]")
TRANSCRIPT_SCHEMA = "transcript_v1"


@dataclass(frozen=True)
class DebatePolicy:
    """Knobs for citation restriction and prompt context budget."""

    own_pool_only: bool = True
    include_critiques_in_history: bool = False
    moderator_full_pools: bool = False
    allow_empty_pools: bool = False


@dataclass(frozen=True)
class CitationCheck:
    evidence_id: str
    resolved: bool
    pool_role: str | None = None

    def __post_init__(self):
        if self.resolved != (self.pool_role is not None):
            raise ValidationError(
                f"check for {self.evidence_id}: resolved flag and pool_role disagree"
            )

    def to_dict(self) -> dict:
        return {
            "evidence_id": self.evidence_id,
            "resolved": self.resolved,
            "pool_role": self.pool_role,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "CitationCheck":
        return cls(
            evidence_id=payload["evidence_id"],
            resolved=payload["resolved"],
            pool_role=payload.get("pool_role"),
        )


@dataclass(frozen=True)
class DebateTurn:
    round: int
    agent: str
    critique_text: str
    proposal_text: str
    citations: tuple[str, ...]
    citation_checks: tuple[CitationCheck, ...]
    repaired: bool
    audit_note: str | None = None

    def __post_init__(self):
        if not self.proposal_text:
            raise ValidationError(f"turn ({self.round},{self.agent}): empty proposal")
        checked = [c.evidence_id for c in self.citation_checks]
        for evidence_id in self.citations:
            if checked.count(evidence_id) != 1:
                raise ValidationError(
                    f"turn ({self.round},{self.agent}): citation {evidence_id} "
                    f"checked {checked.count(evidence_id)} times"
                )

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "agent": self.agent,
            "critique_text": self.critique_text,
            "proposal_text": self.proposal_text,
            "citations": list(self.citations),
            "citation_checks": [c.to_dict() for c in self.citation_checks],
            "repaired": self.repaired,
            "audit_note": self.audit_note,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "DebateTurn":
        return cls(
            round=payload["round"],
            agent=payload["agent"],
            critique_text=payload["critique_text"],
            proposal_text=payload["proposal_text"],
            citations=tuple(payload["citations"]),
            citation_checks=tuple(
                CitationCheck.from_dict(c) for c in payload["citation_checks"]
            ),
            repaired=payload["repaired"],
            audit_note=payload.get("audit_note"),
        )


@dataclass(frozen=True)
class FinalPlan:
    synthesis_text: str
    citations: tuple[str, ...]
    cited_roles: frozenset[str]
    citation_checks: tuple[CitationCheck, ...]

    def to_dict(self) -> dict:
        return {
            "synthesis_text": self.synthesis_text,
            "citations": list(self.citations),
            "cited_roles": sorted(self.cited_roles),
            "citation_checks": [c.to_dict() for c in self.citation_checks],
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "FinalPlan":
        return cls(
            synthesis_text=payload["synthesis_text"],
            citations=tuple(payload["citations"]),
            cited_roles=frozenset(payload["cited_roles"]),
            citation_checks=tuple(
                CitationCheck.from_dict(c) for c in payload["citation_checks"]
            ),
        )


@dataclass(frozen=True)
class DebateTranscript:
    case_id: int
    condition_label: str
    turns: tuple[DebateTurn, ...]
    final_plan: FinalPlan
    provenance: dict

    def __post_init__(self):
        shape = tuple((t.round, t.agent) for t in self.turns)
        if shape != TURN_ORDER:
            raise ValidationError(f"transcript turn order {shape} != {TURN_ORDER}")

    def content_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "condition_label": self.condition_label,
            "turns": [t.to_dict() for t in self.turns],
            "final_plan": self.final_plan.to_dict(),
            "provenance": self.provenance,
        }

    @property
    def digest(self) -> str:
        return digest_payload(self.content_dict())


def save_transcript(transcript: DebateTranscript, destination: str | Path) -> Path:
    doc = {
        "schema": TRANSCRIPT_SCHEMA,
        "digest": transcript.digest,
        **transcript.content_dict(),
    }
    return write_json_atomic(destination, doc)


def load_transcript(source: str | Path) -> DebateTranscript:
    doc = read_json(source)
    if doc.get("schema") != TRANSCRIPT_SCHEMA:
        raise ParseError(f"{source}: unsupported transcript schema {doc.get('schema')!r}")
    transcript = DebateTranscript(
        case_id=doc["case_id"],
        condition_label=doc["condition_label"],
        turns=tuple(DebateTurn.from_dict(t) for t in doc["turns"]),
        final_plan=FinalPlan.from_dict(doc["final_plan"]),
        provenance=doc["provenance"],
    )
    if transcript.digest != doc["digest"]:
        raise DigestMismatchError(
            f"{source}: stored digest {doc['digest']} != recomputed {transcript.digest}"
        )
    return transcript


def extract_citations(text: str) -> list[str]:
    """Bracketed evidence ids in order of first appearance, deduplicated."""
    seen: list[str] = []
    for match in CITATION_PATTERN.finditer(text):
        evidence_id = match.group(0)[1:-1]
        if evidence_id not in seen:
            seen.append(evidence_id)
    return seen


def validate_citations(
    ids: Sequence[str],
    pools: Mapping[str, EvidencePool],
    allowed_roles: set[str] | None = None,
) -> list[CitationCheck]:
    """Resolve each id against the available pools.

    ``allowed_roles`` applies the own-pool restriction: ids with other
    prefixes are reported unresolved for this speaker even if some pool
    contains them.  None means no restriction (the moderator's view).
    """
    if not pools:
        raise ValidationError("citation validation needs at least one pool")
    ids_by_role = {role: set(pool.evidence_ids()) for role, pool in pools.items()}
    checks: list[CitationCheck] = []
    for evidence_id in ids:
        prefix = evidence_id.rsplit("-", 1)[0]
        permitted = allowed_roles is None or prefix in allowed_roles
        if permitted and prefix in ids_by_role and evidence_id in ids_by_role[prefix]:
            checks.append(CitationCheck(evidence_id, True, prefix))
        else:
            checks.append(CitationCheck(evidence_id, False, None))
    return checks


def parse_turn_response(raw: str, opening: bool) -> tuple[str, str]:
    """Split a turn response into (critique, proposal).

    The PROPOSAL: marker is mandatory.  A critique is mandatory on
    every turn except the debate's very first.
    """
    marker = "PROPOSAL:"
    index = raw.find(marker)
    if index < 0:
        raise TurnFormatError("turn response has no PROPOSAL: section")
    proposal = raw[index + len(marker):].strip()
    if not proposal:
        raise TurnFormatError("turn response has an empty PROPOSAL: section")
    critique = ""
    critique_marker = "CRITIQUE:"
    critique_index = raw.find(critique_marker)
    if 0 <= critique_index < index:
        critique = raw[critique_index + len(critique_marker):index].strip()
    if not opening and not critique:
        raise TurnFormatError("non-opening turn is missing its CRITIQUE: section")
    return critique, proposal


def _pool_headers(pool: EvidencePool) -> str:
    lines = [
        f"[{item.evidence_id}] {item.work.title} ({item.work.publication_year})"
        for item in pool.items
    ]
    return "\n".join(lines) if lines else "(empty pool)"


def _history_section(
    turns: Sequence[DebateTurn], skip: DebateTurn | None, include_critiques: bool
) -> str:
    parts: list[str] = []
    for turn in turns:
        if turn is skip:
            continue
        entry = f"[Round {turn.round}, agent {turn.agent}]\n{turn.proposal_text}"
        if include_critiques and turn.critique_text:
            entry = (
                f"[Round {turn.round}, agent {turn.agent}]\n"
                f"Critique: {turn.critique_text}\n{turn.proposal_text}"
            )
        parts.append(entry)
    if not parts:
        return ""
    return "\nEarlier proposals:\n\n" + "\n\n".join(parts) + "\n"


def _latest_proposal_by(turns: Sequence[DebateTurn], agent: str) -> DebateTurn | None:
    for turn in reversed(turns):
        if turn.agent == agent:
            return turn
    return None


def generate_turn(
    state: Sequence[DebateTurn],
    agent: str,
    case: CaseSpec,
    pools: Mapping[str, EvidencePool],
    persona: PersonaProfile | None,
    *,
    gateway: Gateway,
    templates: TemplatePack,
    model_id: str,
    policy: DebatePolicy = DebatePolicy(),
    experimental_temperature: float | None = None,
) -> DebateTurn:
    """Produce the next turn in the fixed order, with citation repair."""
    index = len(state)
    if index >= len(TURN_ORDER):
        raise ValidationError("debate already has all 6 turns")
    round_number, expected_agent = TURN_ORDER[index]
    if agent != expected_agent:
        raise ValidationError(
            f"turn {index} belongs to agent {expected_agent}, not {agent}"
        )
    own_pool = pools.get(agent)
    if own_pool is None:
        raise ValidationError(f"no evidence pool available for agent {agent}")
    if not own_pool.items and not policy.allow_empty_pools:
        raise ValidationError(f"agent {agent} has an empty pool and opt-in is not set")

    if persona is not None:
        system_text = render_system_prompt(persona, agent, templates)
    else:
        system_text = templates.fill(
            "debater_system",
            agent_role=agent,
            cite_role=agent,
            cite_example=f"{agent}-001",
        )
    guidance = templates.fill(f"guidance_round{round_number}")
    opening = index == 0
    if opening:
        user_text = templates.fill(
            "turn_opening",
            problem_statement=case.problem_statement,
            round_guidance=guidance,
            pool_render=render_context(own_pool),
            cite_example=f"{agent}-001",
        )
    else:
        opponent = "B" if agent == "A" else "A"
        opponent_turn = _latest_proposal_by(state, opponent)
        if opponent_turn is None:
            raise ValidationError(f"no opponent turn found for agent {agent}")
        user_text = templates.fill(
            "turn_critique_revise",
            problem_statement=case.problem_statement,
            round_guidance=guidance,
            opponent_proposal=opponent_turn.proposal_text,
            history_section=_history_section(
                state, opponent_turn, policy.include_critiques_in_history
            ),
            pool_render=render_context(own_pool),
            cite_example=f"{agent}-001",
        )

    stage_label = f"round{round_number}-agent{agent}"
    allowed = {agent} if policy.own_pool_only else None
    request = make_request(
        stage_label,
        [ChatMessage("system", system_text), ChatMessage("user", user_text)],
        model_id=model_id,
        experimental_temperature=experimental_temperature,
    )
    raw = gateway.complete(request)
    critique, proposal = parse_turn_response(raw, opening)
    citations = extract_citations(raw)
    checks = validate_citations(citations, pools, allowed)

    repaired = False
    audit_note = None
    invalid = [c.evidence_id for c in checks if not c.resolved]
    if invalid:
        logger.warning(
            "stage %s cited unresolved ids %s; issuing repair re-ask", stage_label, invalid
        )
        repair_text = user_text + templates.fill(
            "turn_repair", invalid_ids=", ".join(invalid), cite_role=agent
        )
        retry = make_request(
            f"{stage_label}-repair",
            [ChatMessage("system", system_text), ChatMessage("user", repair_text)],
            model_id=model_id,
            experimental_temperature=experimental_temperature,
        )
        raw = gateway.complete(retry)
        critique, proposal = parse_turn_response(raw, opening)
        citations = extract_citations(raw)
        checks = validate_citations(citations, pools, allowed)
        still_invalid = [c.evidence_id for c in checks if not c.resolved]
        if still_invalid:
            citations = [c.evidence_id for c in checks if c.resolved]
            repaired = True
            audit_note = (
                "unresolved citations stripped after failed repair re-ask: "
                + ", ".join(still_invalid)
            )
        else:
            audit_note = "citation repair re-ask succeeded"
    return DebateTurn(
        round=round_number,
        agent=agent,
        critique_text=critique,
        proposal_text=proposal,
        citations=tuple(citations),
        citation_checks=tuple(checks),
        repaired=repaired,
        audit_note=audit_note,
    )


def synthesize(
    turns: Sequence[DebateTurn],
    case: CaseSpec,
    pools: Mapping[str, EvidencePool],
    *,
    gateway: Gateway,
    templates: TemplatePack,
    model_id: str,
    policy: DebatePolicy = DebatePolicy(),
    experimental_temperature: float | None = None,
) -> FinalPlan:
    """Moderator synthesis over the completed 6-turn debate.

    The plan must cite at least one id from each side's pool; one
    re-ask is granted, then the run fails.
    """
    if len(turns) != len(TURN_ORDER):
        raise ValidationError(f"synthesis requires 6 turns, got {len(turns)}")
    if "A" not in pools or "B" not in pools:
        raise ValidationError("synthesis requires both role pools (two-pool runs only)")
    round3_a = turns[4].proposal_text
    round3_b = turns[5].proposal_text
    if policy.moderator_full_pools:
        pool_view = render_context(pools["A"]) + "\n\n" + render_context(pools["B"])
    else:
        pool_view = (
            f"Pool A:\n{_pool_headers(pools['A'])}\n\nPool B:\n{_pool_headers(pools['B'])}"
        )
    system_text = templates.fill("moderator_system")
    user_text = templates.fill(
        "synthesis",
        problem_statement=case.problem_statement,
        round3_a=round3_a,
        round3_b=round3_b,
        history_section=_history_section(
            turns[:4], None, policy.include_critiques_in_history
        ),
        pool_headers=pool_view,
    )
    request = make_request(
        "synthesis",
        [ChatMessage("system", system_text), ChatMessage("user", user_text)],
        model_id=model_id,
        experimental_temperature=experimental_temperature,
    )
    raw = gateway.complete(request)

    def assess(text: str) -> tuple[list[str], list[CitationCheck], set[str]]:
        ids = extract_citations(text)
        checks = validate_citations(ids, pools, allowed_roles=None)
        roles = {c.pool_role for c in checks if c.resolved}
        return ids, checks, roles

    citations, checks, roles = assess(raw)
    if not {"A", "B"} <= roles:
        cited = ", ".join(sorted(roles)) if roles else "no pool"
        logger.warning("synthesis cited %s; issuing both-sides re-ask", cited)
        reask_text = user_text + templates.fill("synthesis_reask", cited_roles=cited)
        retry = make_request(
            "synthesis-reask",
            [ChatMessage("system", system_text), ChatMessage("user", reask_text)],
            model_id=model_id,
            experimental_temperature=experimental_temperature,
        )
        raw = gateway.complete(retry)
        citations, checks, roles = assess(raw)
        if not {"A", "B"} <= roles:
            raise BothSidesError(
                f"final plan cites roles {sorted(roles)} after re-ask; "
                "evidence from both pools is required"
            )
    return FinalPlan(
        synthesis_text=raw.strip(),
        citations=tuple(citations),
        cited_roles=frozenset(roles),
        citation_checks=tuple(checks),
    )


def run_debate(
    case: CaseSpec,
    pool_a: EvidencePool,
    pool_b: EvidencePool,
    persona_a: PersonaProfile | None,
    persona_b: PersonaProfile | None,
    *,
    gateway: Gateway,
    templates: TemplatePack,
    model_id: str,
    policy: DebatePolicy = DebatePolicy(),
    seed: int = 0,
    condition_label: str = "MPDS",
    experimental_temperature: float | None = None,
) -> DebateTranscript:
    """The full fixed sequence: 6 turns then moderator synthesis."""
    if (persona_a is None) != (persona_b is None):
        raise ValidationError("personas must be supplied for both agents or neither")
    for pool in (pool_a, pool_b):
        report = validate_time_lock(pool, case)
        if not report.ok:
            raise TimeLockError(
                f"pool {pool.role_tag} fails the time lock for case {case.case_id}",
                violations=[v["reason"] for v in report.violations],
            )
    pools = {"A": pool_a, "B": pool_b}
    personas = {"A": persona_a, "B": persona_b}
    turns: list[DebateTurn] = []
    for _, agent in TURN_ORDER:
        turns.append(
            generate_turn(
                turns,
                agent,
                case,
                pools,
                personas[agent],
                gateway=gateway,
                templates=templates,
                model_id=model_id,
                policy=policy,
                experimental_temperature=experimental_temperature,
            )
        )
    final_plan = synthesize(
        turns,
        case,
        pools,
        gateway=gateway,
        templates=templates,
        model_id=model_id,
        policy=policy,
        experimental_temperature=experimental_temperature,
    )
    provenance = {
        "pool_digests": {"A": pool_a.digest, "B": pool_b.digest},
        "persona_digests": {
            "A": persona_a.digest() if persona_a else "none",
            "B": persona_b.digest() if persona_b else "none",
        },
        "template_version": templates.version,
        "template_digest": templates.digest(),
        "provider_mode": gateway.mode,
        "provider_fixture": str(gateway.fixture_path) if gateway.fixture_path else "none",
        "seed": seed,
    }
    if experimental_temperature is not None:
        provenance["temperature_override"] = experimental_temperature
    return DebateTranscript(
        case_id=case.case_id,
        condition_label=condition_label,
        turns=tuple(turns),
        final_plan=final_plan,
        provenance=provenance,
    )
