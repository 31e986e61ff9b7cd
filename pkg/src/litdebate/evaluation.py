"""Ablation matrix, blinded judging, score parsing, and aggregation.

Five conditions share one case: a parametric-only baseline (RAW_LLM),
single-pass over merged evidence (EO), the same plus induced personas
(EOP), a persona-free debate over split pools (DS), and the full
persona debate with moderator synthesis (MPDS).  Final outputs are
anonymized, scored blind on a four-dimension rubric, and aggregated;
debate transcripts can additionally be re-scored stage by stage.
"""

from __future__ import annotations

import logging
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .canonical import digest_payload, read_json, write_json_atomic
from .debate import DebatePolicy, DebateTranscript, run_debate
from .errors import (
    DigestMismatchError,
    IhqParseError,
    ParseError,
    ResourceError,
    TimeLockError,
    ValidationError,
)
from .gateway import ChatMessage, Gateway, make_request
from .persona import PersonaProfile, induce_persona
from .snapshot import (
    CaseSpec,
    EvidencePool,
    excerpt_for_induction,
    render_context,
    validate_time_lock,
)
from .templates import TemplatePack

logger = logging.getLogger(__name__)

CONDITION_LABELS = ("RAW_LLM", "EO", "EOP", "DS", "MPDS")
# label -> (evidence_mode, personas, debate, moderator)
CONDITION_MATRIX = {
    "RAW_LLM": ("none", False, False, False),
    "EO": ("merged", False, False, False),
    "EOP": ("merged", True, False, False),
    "DS": ("split", False, True, True),
    "MPDS": ("split", True, True, True),
}
STAGE_LABELS = ("ROUND1", "ROUND2", "ROUND3", "FINAL")
STAGE_JOINER = "\n\n---\n\n"
OUTPUT_SCHEMA = "output_v1"
SCORES_SCHEMA = "scores_v1"
SEALED_KEY_SCHEMA = "sealed_key_v1"
REPORT_SCHEMA = "report_v1"

# published means for orientation in reports; never asserted anywhere
REFERENCE_MEANS = {"MPDS": 13.27, "DS": 12.67, "EOP": 9.00, "RAW_LLM": 8.93, "EO": 6.90}

BLIND_VOCABULARY = (
    "RAW_LLM",
    "MPDS",
    "EOP",
    "EO",
    "DS",
    "ROUND1",
    "ROUND2",
    "ROUND3",
    "FINAL",
    "SYNTHESIS",
    "STAGE",
)
_VOCAB_PATTERN = re.compile(
    r"\b(?:" + "|".join(sorted(BLIND_VOCABULARY, key=len, reverse=True)) + r")\b"
)

IHQ_DIMENSIONS = (
    ("idea_novelty", "Idea Novelty"),
    ("mechanistic_originality", "Mechanistic Originality"),
    ("tradeoff_reframing", "Trade-off Reframing"),
    ("cross_perspective_integration", "Cross-Perspective Integration"),
)


@dataclass(frozen=True)
class Condition:
    """One cell of the ablation matrix; flags must match the label."""

    label: str
    evidence_mode: str
    personas_enabled: bool
    debate_enabled: bool
    moderator_enabled: bool

    def __post_init__(self):
        expected = CONDITION_MATRIX.get(self.label)
        if expected is None:
            raise ValidationError(f"unknown condition label {self.label!r}")
        actual = (
            self.evidence_mode,
            self.personas_enabled,
            self.debate_enabled,
            self.moderator_enabled,
        )
        if actual != expected:
            raise ValidationError(
                f"condition {self.label} flags {actual} contradict the matrix {expected}"
            )


def make_condition(label: str) -> Condition:
    if label not in CONDITION_MATRIX:
        raise ValidationError(f"unknown condition label {label!r}")
    mode, personas, debate, moderator = CONDITION_MATRIX[label]
    return Condition(label, mode, personas, debate, moderator)


@dataclass(frozen=True)
class ConditionSettings:
    """Run-scoped knobs shared by all conditions of one invocation."""

    model_id: str
    excerpt_chars: int = 70_000
    policy: DebatePolicy = field(default_factory=DebatePolicy)
    seed: int = 0
    eop_single_persona: bool = False
    experimental_temperature: float | None = None


@dataclass(frozen=True)
class ConditionOutput:
    """The final hypothesis text of one (case, condition) run."""

    case_id: int
    label: str
    final_text: str
    provenance: dict
    transcript: DebateTranscript | None = None
    personas: dict | None = None

    def content_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "label": self.label,
            "final_text": self.final_text,
            "provenance": self.provenance,
            "personas": self.personas,
        }


def save_output(output: ConditionOutput, destination: str | Path) -> Path:
    doc = {
        "schema": OUTPUT_SCHEMA,
        "digest": digest_payload(output.content_dict()),
        **output.content_dict(),
    }
    return write_json_atomic(destination, doc)


def load_output(source: str | Path) -> ConditionOutput:
    doc = read_json(source)
    if doc.get("schema") != OUTPUT_SCHEMA:
        raise ParseError(f"{source}: unsupported output schema {doc.get('schema')!r}")
    output = ConditionOutput(
        case_id=doc["case_id"],
        label=doc["label"],
        final_text=doc["final_text"],
        provenance=doc["provenance"],
        personas=doc.get("personas"),
    )
    if digest_payload(output.content_dict()) != doc["digest"]:
        raise DigestMismatchError(f"{source}: output digest mismatch")
    return output


def _require_pool(
    pools: Mapping[str, EvidencePool], role: str, case: CaseSpec, label: str
) -> EvidencePool:
    pool = pools.get(role)
    if pool is None:
        raise ResourceError(
            f"condition {label} needs a {role} pool for case {case.case_id}"
        )
    report = validate_time_lock(pool, case)
    if not report.ok:
        raise TimeLockError(
            f"{role} pool fails the time lock for case {case.case_id}",
            violations=[v["reason"] for v in report.violations],
        )
    return pool


def _base_provenance(gateway: Gateway, templates: TemplatePack, settings) -> dict:
    provenance = {
        "template_version": templates.version,
        "template_digest": templates.digest(),
        "provider_mode": gateway.mode,
        "provider_fixture": str(gateway.fixture_path) if gateway.fixture_path else "none",
        "seed": settings.seed,
    }
    if settings.experimental_temperature is not None:
        provenance["temperature_override"] = settings.experimental_temperature
    return provenance


def run_condition(
    case: CaseSpec,
    condition: Condition,
    pools: Mapping[str, EvidencePool],
    *,
    gateway: Gateway,
    templates: TemplatePack,
    settings: ConditionSettings,
) -> ConditionOutput:
    """Execute one matrix cell and return its final hypothesis text.

    Call budget per cell: RAW_LLM and EO use 1 generation; EOP adds up
    to two persona inductions; DS runs the 7-call debate; MPDS the
    9-call persona debate.  Repairs and re-asks add calls on top.
    """
    label = condition.label
    temperature = settings.experimental_temperature
    provenance = _base_provenance(gateway, templates, settings)

    if label == "RAW_LLM":
        request = make_request(
            f"singlepass-{label}",
            [
                ChatMessage("system", templates.fill("singlepass_raw_system")),
                ChatMessage(
                    "user",
                    templates.fill(
                        "singlepass_user_plain", problem_statement=case.problem_statement
                    ),
                ),
            ],
            model_id=settings.model_id,
            experimental_temperature=temperature,
        )
        text = gateway.complete(request)
        return ConditionOutput(case.case_id, label, text.strip(), provenance)

    if label in ("EO", "EOP"):
        merged = _require_pool(pools, "MERGED", case, label)
        provenance["pool_digests"] = {"MERGED": merged.digest}
        user_text = templates.fill(
            "singlepass_user_evidence",
            problem_statement=case.problem_statement,
            pool_render=render_context(merged),
        )
        personas_dict = None
        if label == "EO":
            system_text = templates.fill("singlepass_evidence_system")
        else:
            excerpt = excerpt_for_induction(merged, settings.excerpt_chars)
            roles = ("A",) if settings.eop_single_persona else ("A", "B")
            profiles: dict[str, PersonaProfile] = {}
            for role in roles:
                profiles[role] = induce_persona(
                    excerpt,
                    case.persona_hints[role],
                    gateway=gateway,
                    templates=templates,
                    model_id=settings.model_id,
                    stage_label=f"induce-{role}",
                    experimental_temperature=temperature,
                )
            sections = []
            for number, role in enumerate(roles, start=1):
                profile = profiles[role]
                sections.append(
                    f"Viewpoint {number}: {profile.persona_name} "
                    f"({profile.domain_focus})\n"
                    f"Priorities: {'; '.join(profile.reasoning_priorities)}"
                )
            system_text = templates.fill(
                "singlepass_persona_system", viewpoint_sections="\n\n".join(sections)
            )
            personas_dict = {role: profiles[role].to_dict() for role in roles}
            provenance["persona_digests"] = {
                role: profiles[role].digest() for role in roles
            }
        request = make_request(
            f"singlepass-{label}",
            [ChatMessage("system", system_text), ChatMessage("user", user_text)],
            model_id=settings.model_id,
            experimental_temperature=temperature,
        )
        text = gateway.complete(request)
        return ConditionOutput(
            case.case_id, label, text.strip(), provenance, personas=personas_dict
        )

    # DS and MPDS run the full debate over split pools
    pool_a = _require_pool(pools, "A", case, label)
    pool_b = _require_pool(pools, "B", case, label)
    persona_a = persona_b = None
    if condition.personas_enabled:
        persona_a = induce_persona(
            excerpt_for_induction(pool_a, settings.excerpt_chars),
            case.persona_hints["A"],
            gateway=gateway,
            templates=templates,
            model_id=settings.model_id,
            stage_label="induce-A",
            experimental_temperature=temperature,
        )
        persona_b = induce_persona(
            excerpt_for_induction(pool_b, settings.excerpt_chars),
            case.persona_hints["B"],
            gateway=gateway,
            templates=templates,
            model_id=settings.model_id,
            stage_label="induce-B",
            experimental_temperature=temperature,
        )
    transcript = run_debate(
        case,
        pool_a,
        pool_b,
        persona_a,
        persona_b,
        gateway=gateway,
        templates=templates,
        model_id=settings.model_id,
        policy=settings.policy,
        seed=settings.seed,
        condition_label=label,
        experimental_temperature=temperature,
    )
    provenance["pool_digests"] = {"A": pool_a.digest, "B": pool_b.digest}
    if persona_a and persona_b:
        provenance["persona_digests"] = {"A": persona_a.digest(), "B": persona_b.digest()}
    personas_dict = (
        {"A": persona_a.to_dict(), "B": persona_b.to_dict()} if persona_a else None
    )
    return ConditionOutput(
        case.case_id,
        label,
        transcript.final_plan.synthesis_text,
        provenance,
        transcript=transcript,
        personas=personas_dict,
    )


@dataclass(frozen=True)
class BlindItem:
    blind_id: str
    output_text: str


def scrub_markers(text: str) -> str:
    """Strip condition/stage vocabulary and banner remnants from text.

    Word-bounded, case-sensitive removal; a line reduced to pure
    decoration by the removal is dropped entirely.
    """
    lines: list[str] = []
    for line in text.split("\n"):
        scrubbed = _VOCAB_PATTERN.sub("", line)
        if scrubbed != line:
            if not re.search(r"\w", scrubbed):
                continue
            scrubbed = re.sub(r" {2,}", " ", scrubbed).strip()
        lines.append(scrubbed)
    return "\n".join(lines)


def anonymize(
    outputs: Sequence[tuple[int, str, str]], seed: int
) -> tuple[list[BlindItem], dict]:
    """Blind a batch of (case_id, label, text) outputs.

    Returns shuffled BlindItems plus the sealed key mapping blind_id
    back to (case_id, label); the key must be persisted separately and
    never shown to the judge.
    """
    if not outputs:
        raise ValidationError("nothing to anonymize")
    rng = random.Random(seed)
    items: list[BlindItem] = []
    key: dict[str, dict] = {}
    for case_id, label, text in outputs:
        blind_id = f"{rng.getrandbits(48):012x}"
        while blind_id in key:
            blind_id = f"{rng.getrandbits(48):012x}"
        key[blind_id] = {"case_id": case_id, "label": label}
        items.append(BlindItem(blind_id=blind_id, output_text=scrub_markers(text)))
    rng.shuffle(items)
    return items, key


def unblind(key: Mapping[str, Mapping], blind_id: str) -> tuple[int, str]:
    try:
        entry = key[blind_id]
    except KeyError:
        raise ValidationError(f"blind id {blind_id} not in sealed key") from None
    return entry["case_id"], entry["label"]


def judge(
    item: BlindItem,
    *,
    gateway: Gateway,
    templates: TemplatePack,
    model_id: str,
    problem_statement: str | None = None,
    experimental_temperature: float | None = None,
) -> str:
    """One rubric-scored judging call; returns the raw judge text."""
    problem_section = ""
    if problem_statement:
        problem_section = (
            f"Design problem (context only, do not score it):\n{problem_statement}\n\n"
        )
    request = make_request(
        "judge",
        [
            ChatMessage("system", templates.fill("judge_system")),
            ChatMessage(
                "user",
                templates.fill(
                    "judge_user",
                    problem_section=problem_section,
                    output_text=item.output_text,
                ),
            ),
        ],
        model_id=model_id,
        experimental_temperature=experimental_temperature,
    )
    return gateway.complete(request)


@dataclass(frozen=True)
class IhqScore:
    idea_novelty: int
    mechanistic_originality: int
    tradeoff_reframing: int
    cross_perspective_integration: int
    total: int
    justifications: dict

    def __post_init__(self):
        for attr, label in IHQ_DIMENSIONS:
            value = getattr(self, attr)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ValidationError(f"{label} score must be an integer")
            if not 0 <= value <= 5:
                raise ValidationError(f"{label} score {value} outside [0, 5]")
        total = sum(getattr(self, attr) for attr, _ in IHQ_DIMENSIONS)
        if self.total != total:
            raise ValidationError(f"total {self.total} != dimension sum {total}")

    def dimensions(self) -> dict[str, int]:
        return {attr: getattr(self, attr) for attr, _ in IHQ_DIMENSIONS}

    def to_dict(self) -> dict:
        return {**self.dimensions(), "total": self.total, "justifications": self.justifications}

    @classmethod
    def from_dict(cls, payload: Mapping) -> "IhqScore":
        return cls(
            idea_novelty=payload["idea_novelty"],
            mechanistic_originality=payload["mechanistic_originality"],
            tradeoff_reframing=payload["tradeoff_reframing"],
            cross_perspective_integration=payload["cross_perspective_integration"],
            total=payload["total"],
            justifications=dict(payload.get("justifications", {})),
        )


def parse_ihq(raw: str, allow_sum_override: bool = False) -> IhqScore:
    """Strict parse of the judge's labeled score block.

    Every dimension must appear with an integer in [0, 5].  A stated
    Total that contradicts the dimension sum is rejected unless the
    sum-override flag is set, in which case the sum wins.
    """
    if not raw.strip():
        raise IhqParseError("empty judge response")
    values: dict[str, int] = {}
    justifications: dict[str, str] = {}
    for attr, label in IHQ_DIMENSIONS:
        match = re.search(
            rf"^[ \t]*{re.escape(label)}[ \t]*:[ \t]*(.+?)[ \t]*$", raw, re.MULTILINE
        )
        if not match:
            raise IhqParseError(f"missing dimension: {label}")
        token = match.group(1)
        if not re.fullmatch(r"[+-]?\d+", token):
            raise IhqParseError(f"{label}: non-integer score {token!r}")
        value = int(token)
        if not 0 <= value <= 5:
            raise IhqParseError(f"{label}: score {value} outside [0, 5]")
        values[attr] = value
        tail = raw[match.end():]
        just_match = re.search(
            r"^[ \t]*Justification[ \t]*:[ \t]*(.*?)[ \t]*$", tail, re.MULTILINE
        )
        justifications[attr] = just_match.group(1) if just_match else ""
    computed = sum(values.values())
    total_match = re.search(r"^[ \t]*Total[ \t]*:[ \t]*(.+?)[ \t]*$", raw, re.MULTILINE)
    if total_match:
        token = total_match.group(1)
        if not re.fullmatch(r"[+-]?\d+", token):
            raise IhqParseError(f"Total: non-integer value {token!r}")
        stated = int(token)
        if stated != computed:
            if not allow_sum_override:
                raise IhqParseError(
                    f"stated total {stated} contradicts dimension sum {computed}"
                )
            logger.warning(
                "judge stated total %d; using dimension sum %d", stated, computed
            )
    return IhqScore(total=computed, justifications=justifications, **values)


def save_scores(
    entries: Sequence[tuple[BlindItem, str, IhqScore]],
    sealed_key: Mapping[str, Mapping],
    destination: str | Path,
    metadata: Mapping,
) -> tuple[Path, Path]:
    """Persist the blind score table plus the sealed key as a sibling file."""
    destination = Path(destination)
    scores_doc = {
        "schema": SCORES_SCHEMA,
        "metadata": dict(metadata),
        "entries": [
            {
                "blind_id": item.blind_id,
                "raw_text": raw,
                "score": score.to_dict(),
            }
            for item, raw, score in entries
        ],
    }
    key_doc = {"schema": SEALED_KEY_SCHEMA, "key": {k: dict(v) for k, v in sealed_key.items()}}
    scores_path = write_json_atomic(destination, scores_doc)
    key_path = write_json_atomic(destination.with_suffix(".key.json"), key_doc)
    return scores_path, key_path


def load_scores(source: str | Path) -> tuple[list[dict], dict]:
    doc = read_json(source)
    if doc.get("schema") != SCORES_SCHEMA:
        raise ParseError(f"{source}: unsupported scores schema {doc.get('schema')!r}")
    return list(doc["entries"]), dict(doc.get("metadata", {}))


def load_sealed_key(source: str | Path) -> dict:
    doc = read_json(source)
    if doc.get("schema") != SEALED_KEY_SCHEMA:
        raise ParseError(f"{source}: unsupported key schema {doc.get('schema')!r}")
    return dict(doc["key"])


@dataclass(frozen=True)
class EvaluationReport:
    """Aggregated means over a (case, label) score table, gaps listed."""

    rows: tuple[dict, ...]
    label_means: dict
    dimension_means: dict
    gaps: tuple[dict, ...]
    metadata: dict

    def to_dict(self) -> dict:
        return {
            "rows": list(self.rows),
            "label_means": self.label_means,
            "dimension_means": self.dimension_means,
            "gaps": list(self.gaps),
            "metadata": self.metadata,
        }


def aggregate(
    scores: Mapping[tuple[int, str], IhqScore],
    labels: Sequence[str] | None = None,
    case_ids: Sequence[int] | None = None,
    metadata: Mapping | None = None,
) -> EvaluationReport:
    """Exact arithmetic means per label and per dimension.

    Cells expected by the (case_ids x labels) grid but absent from the
    table become gap entries; gaps are never imputed into any mean.  A
    label with no cells at all gets a null mean.
    """
    if not scores:
        raise ValidationError("empty score table")
    if labels is None:
        labels = sorted({label for _, label in scores}, key=_label_sort_key)
    if case_ids is None:
        case_ids = sorted({case_id for case_id, _ in scores})
    rows = [
        {"case_id": case_id, "label": label, **scores[(case_id, label)].to_dict()}
        for case_id, label in sorted(scores, key=lambda k: (k[0], _label_sort_key(k[1])))
    ]
    gaps = [
        {"case_id": case_id, "label": label}
        for case_id in case_ids
        for label in labels
        if (case_id, label) not in scores
    ]
    label_means: dict[str, float | None] = {}
    dimension_means: dict[str, dict[str, float] | None] = {}
    for label in labels:
        cells = [scores[key] for key in scores if key[1] == label]
        if not cells:
            label_means[label] = None
            dimension_means[label] = None
            continue
        label_means[label] = sum(c.total for c in cells) / len(cells)
        dimension_means[label] = {
            attr: sum(getattr(c, attr) for c in cells) / len(cells)
            for attr, _ in IHQ_DIMENSIONS
        }
    return EvaluationReport(
        rows=tuple(rows),
        label_means=label_means,
        dimension_means=dimension_means,
        gaps=tuple(gaps),
        metadata=dict(metadata or {}),
    )


def _label_sort_key(label: str):
    order = {name: i for i, name in enumerate(CONDITION_LABELS)}
    stage_order = {name: i for i, name in enumerate(STAGE_LABELS)}
    if label in order:
        return (0, order[label])
    if label in stage_order:
        return (1, stage_order[label])
    return (2, label)


def render_report(report: EvaluationReport, include_reference: bool = False) -> str:
    """Plain-text report; means shown to 2 decimals, gaps called out."""
    lines = ["Aggregate results (mean total out of 20)", ""]
    for label, mean in report.label_means.items():
        if mean is None:
            lines.append(f"  {label:<8} no scored cells (gap)")
            continue
        count = sum(1 for row in report.rows if row["label"] == label)
        lines.append(f"  {label:<8} {mean:6.2f}   (n={count})")
    if include_reference:
        lines.append("")
        lines.append("Published reference means, shown for orientation only:")
        for label, value in REFERENCE_MEANS.items():
            lines.append(f"  {label:<8} {value:6.2f}   (reference)")
    lines.append("")
    lines.append("Per-dimension means:")
    for label, dims in report.dimension_means.items():
        if dims is None:
            continue
        rendered = ", ".join(
            f"{name}={dims[attr]:.2f}" for attr, name in IHQ_DIMENSIONS
        )
        lines.append(f"  {label:<8} {rendered}")
    if report.gaps:
        lines.append("")
        lines.append("Gaps (expected but unscored cells):")
        for gap in report.gaps:
            lines.append(f"  case {gap['case_id']} / {gap['label']}")
    return "\n".join(lines) + "\n"


def save_report(
    destination: str | Path,
    conditions: EvaluationReport,
    stagewise: EvaluationReport | None = None,
) -> Path:
    doc = {
        "schema": REPORT_SCHEMA,
        "conditions": conditions.to_dict(),
        "stagewise": stagewise.to_dict() if stagewise else None,
    }
    return write_json_atomic(destination, doc)


def stagewise_extract(transcript: DebateTranscript) -> list[tuple[str, str]]:
    """Per-stage texts of a complete debate: three round pairs + FINAL.

    Each round stage joins that round's A and B proposals in speaking
    order; FINAL is the synthesis text verbatim.
    """
    stages: list[tuple[str, str]] = []
    for number, stage in enumerate(("ROUND1", "ROUND2", "ROUND3"), start=1):
        pair = [t.proposal_text for t in transcript.turns if t.round == number]
        stages.append((stage, STAGE_JOINER.join(pair)))
    stages.append(("FINAL", transcript.final_plan.synthesis_text))
    return stages
