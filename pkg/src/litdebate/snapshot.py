"""Role-tagged, time-locked evidence pools.

A pool freezes an ordered list of retrieved works under a role tag (A,
B, or MERGED), assigns stable evidence identifiers, and carries a
content digest so replayed runs can prove they saw identical evidence.
Rendering and excerpting are deterministic functions of pool content.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .canonical import digest_payload, normalize_text, read_json, write_json_atomic
from .errors import (
    ConfigError,
    DigestMismatchError,
    ParseError,
    TimeLockError,
    ValidationError,
)
from .scholarly import Work

logger = logging.getLogger(__name__)

ROLE_TAGS = ("A", "B", "MERGED")
POOL_CAPS = {"A": 500, "B": 500, "MERGED": 1000}
SNAPSHOT_SCHEMA = "snapshot_v1"
CASES_SCHEMA = "cases_v1"
INDUCTION_EXCERPT_CHARS = 70_000
EVIDENCE_ID_PATTERN = re.compile(r"^(A|B|MERGED)-(\d{3})$")


def make_evidence_id(role_tag: str, index: int) -> str:
    """Identifier for the item at 0-based ``index``: role + 3-digit ordinal."""
    return f"{role_tag}-{index + 1:03d}"


@dataclass(frozen=True)
class EvidenceItem:
    evidence_id: str
    work: Work

    def to_dict(self) -> dict:
        return {"evidence_id": self.evidence_id, "work": self.work.to_dict()}


@dataclass(frozen=True)
class Provenance:
    """Where and when a pool's works came from."""

    keywords: tuple[str, ...]
    cutoff_year: int
    retrieved_at: str
    base_url: str

    def to_dict(self) -> dict:
        return {
            "keywords": list(self.keywords),
            "cutoff_year": self.cutoff_year,
            "retrieved_at": self.retrieved_at,
            "base_url": self.base_url,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "Provenance":
        return cls(
            keywords=tuple(payload["keywords"]),
            cutoff_year=payload["cutoff_year"],
            retrieved_at=payload["retrieved_at"],
            base_url=payload["base_url"],
        )


@dataclass(frozen=True)
class EvidencePool:
    role_tag: str
    provenance: Provenance
    items: tuple[EvidenceItem, ...]
    digest: str

    def evidence_ids(self) -> list[str]:
        return [item.evidence_id for item in self.items]

    def find(self, evidence_id: str) -> EvidenceItem | None:
        for item in self.items:
            if item.evidence_id == evidence_id:
                return item
        return None

    def content_dict(self) -> dict:
        return {
            "role_tag": self.role_tag,
            "provenance": self.provenance.to_dict(),
            "items": [item.to_dict() for item in self.items],
        }


def pool_digest(role_tag: str, provenance: Provenance, items: Iterable[EvidenceItem]) -> str:
    return digest_payload(
        {
            "role_tag": role_tag,
            "provenance": provenance.to_dict(),
            "items": [item.to_dict() for item in items],
        }
    )


def build_pool(works: list[Work], role_tag: str, provenance: Provenance) -> EvidencePool:
    """Assemble a pool, assigning evidence ids in the works' given order.

    Refuses works that break the time lock and duplicate work ids; an
    empty works list yields a valid empty pool.
    """
    if role_tag not in ROLE_TAGS:
        raise ValidationError(f"unknown role tag {role_tag!r}")
    cap = POOL_CAPS[role_tag]
    if len(works) > cap:
        raise ValidationError(f"{role_tag} pool holds {len(works)} works, cap is {cap}")
    violations = [
        f"{work.work_id}: publication_year {work.publication_year} "
        f"exceeds cutoff {provenance.cutoff_year}"
        for work in works
        if work.publication_year > provenance.cutoff_year
    ]
    if violations:
        raise TimeLockError("works violate the time lock", violations=violations)
    seen: set[str] = set()
    for work in works:
        if work.work_id in seen:
            raise ValidationError(f"duplicate work_id in pool input: {work.work_id}")
        seen.add(work.work_id)
    items = tuple(
        EvidenceItem(evidence_id=make_evidence_id(role_tag, index), work=work)
        for index, work in enumerate(works)
    )
    digest = pool_digest(role_tag, provenance, items)
    return EvidencePool(role_tag=role_tag, provenance=provenance, items=items, digest=digest)


@dataclass(frozen=True)
class CaseSpec:
    """One benchmark design problem with its held-out reference paper.

    The cutoff is pinned one year before the reference so retrieved
    evidence can never include the answer or its contemporaries.
    """

    case_id: int
    problem_statement: str
    reference_citation: str
    reference_year: int
    cutoff_year: int
    role_queries: dict[str, list[str]]
    reference_work_id: str | None = None
    persona_hints: dict[str, str] = field(
        default_factory=lambda: {"A": "materials-focused", "B": "process-focused"}
    )

    def __post_init__(self):
        if not self.problem_statement.strip():
            raise ValidationError(f"case {self.case_id}: empty problem statement")
        if self.cutoff_year != self.reference_year - 1:
            raise ValidationError(
                f"case {self.case_id}: cutoff_year {self.cutoff_year} must be "
                f"reference_year - 1 = {self.reference_year - 1}"
            )
        for role in ("A", "B"):
            if role not in self.role_queries or not self.role_queries[role]:
                raise ConfigError(f"case {self.case_id}: missing role query for {role!r}")

    @classmethod
    def from_dict(cls, payload: Mapping) -> "CaseSpec":
        kwargs = {
            "case_id": payload["case_id"],
            "problem_statement": payload["problem_statement"],
            "reference_citation": payload["reference_citation"],
            "reference_year": payload["reference_year"],
            "cutoff_year": payload["cutoff_year"],
            "role_queries": {
                role: tuple(terms) for role, terms in payload["role_queries"].items()
            },
            "reference_work_id": payload.get("reference_work_id"),
        }
        if "persona_hints" in payload:
            kwargs["persona_hints"] = dict(payload["persona_hints"])
        return cls(**kwargs)


def load_cases(path: str | Path) -> list[CaseSpec]:
    doc = read_json(path)
    if doc.get("schema") != CASES_SCHEMA:
        raise ParseError(f"{path}: unsupported case-file schema {doc.get('schema')!r}")
    return [CaseSpec.from_dict(entry) for entry in doc["cases"]]


@dataclass(frozen=True)
class TimeLockReport:
    """Violations found when checking a pool against a case; empty means pass."""

    violations: tuple[dict, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_time_lock(pool: EvidencePool, case: CaseSpec) -> TimeLockReport:
    """Check every item against the case's cutoff and reference identity."""
    if pool.provenance.cutoff_year != case.cutoff_year:
        raise ValidationError(
            f"pool cutoff {pool.provenance.cutoff_year} does not match "
            f"case cutoff {case.cutoff_year}"
        )
    violations: list[dict] = []
    for item in pool.items:
        if item.work.publication_year > case.cutoff_year:
            violations.append(
                {
                    "evidence_id": item.evidence_id,
                    "work_id": item.work.work_id,
                    "reason": (
                        f"publication_year {item.work.publication_year} "
                        f"exceeds cutoff {case.cutoff_year}"
                    ),
                }
            )
        if case.reference_work_id and item.work.work_id == case.reference_work_id:
            violations.append(
                {
                    "evidence_id": item.evidence_id,
                    "work_id": item.work.work_id,
                    "reason": "item is the held-out reference work",
                }
            )
    return TimeLockReport(violations=tuple(violations))


def save_pool(pool: EvidencePool, destination: str | Path) -> Path:
    doc = {"schema": SNAPSHOT_SCHEMA, "digest": pool.digest, **pool.content_dict()}
    return write_json_atomic(destination, doc)


def load_pool(source: str | Path) -> EvidencePool:
    """Read a stored pool, verifying digest and structural invariants."""
    doc = read_json(source)
    if doc.get("schema") != SNAPSHOT_SCHEMA:
        raise ParseError(f"{source}: unsupported snapshot schema {doc.get('schema')!r}")
    try:
        role_tag = doc["role_tag"]
        provenance = Provenance.from_dict(doc["provenance"])
        items = tuple(
            EvidenceItem(
                evidence_id=entry["evidence_id"], work=Work.from_dict(entry["work"])
            )
            for entry in doc["items"]
        )
        stored_digest = doc["digest"]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{source}: malformed snapshot: {exc}") from exc
    recomputed = pool_digest(role_tag, provenance, items)
    if recomputed != stored_digest:
        raise DigestMismatchError(
            f"{source}: stored digest {stored_digest} != recomputed {recomputed}"
        )
    pool = EvidencePool(
        role_tag=role_tag, provenance=provenance, items=items, digest=stored_digest
    )
    _check_pool_invariants(pool, source)
    return pool


def _check_pool_invariants(pool: EvidencePool, source) -> None:
    if pool.role_tag not in ROLE_TAGS:
        raise ValidationError(f"{source}: unknown role tag {pool.role_tag!r}")
    if len(pool.items) > POOL_CAPS[pool.role_tag]:
        raise ValidationError(
            f"{source}: {len(pool.items)} items exceeds cap "
            f"{POOL_CAPS[pool.role_tag]} for role {pool.role_tag}"
        )
    seen_ids: set[str] = set()
    seen_works: set[str] = set()
    for index, item in enumerate(pool.items):
        match = EVIDENCE_ID_PATTERN.match(item.evidence_id)
        if not match or match.group(1) != pool.role_tag:
            raise ValidationError(f"{source}: malformed evidence_id {item.evidence_id!r}")
        if int(match.group(2)) != index + 1:
            raise ValidationError(
                f"{source}: evidence_id {item.evidence_id!r} out of order at index {index}"
            )
        if item.evidence_id in seen_ids:
            raise ValidationError(f"{source}: duplicate evidence_id {item.evidence_id!r}")
        if item.work.work_id in seen_works:
            raise ValidationError(f"{source}: duplicate work_id {item.work.work_id!r}")
        seen_ids.add(item.evidence_id)
        seen_works.add(item.work.work_id)
        if item.work.publication_year > pool.provenance.cutoff_year:
            raise TimeLockError(
                f"{source}: item {item.evidence_id} breaks the time lock",
                violations=[
                    f"{item.work.work_id}: publication_year {item.work.publication_year} "
                    f"exceeds cutoff {pool.provenance.cutoff_year}"
                ],
            )


def render_context(pool: EvidencePool) -> str:
    """Deterministic long-context rendering of a pool.

    One block per item in order: bracketed evidence id, title, year,
    then the abstract, with blank-line delimiters.  An empty pool
    renders to its header line alone.
    """
    header = (
        f"# Evidence pool {pool.role_tag} | cutoff {pool.provenance.cutoff_year} "
        f"| {len(pool.items)} items"
    )
    if not pool.items:
        return header
    blocks = [
        f"[{item.evidence_id}] {item.work.title} ({item.work.publication_year})\n"
        f"{item.work.abstract_text}"
        for item in pool.items
    ]
    return header + "\n\n" + "\n\n".join(blocks)


def excerpt_for_induction(pool: EvidencePool, limit: int = INDUCTION_EXCERPT_CHARS) -> str:
    """First ``limit`` characters of the rendering.

    Characters are counted in encoding-independent units (code points),
    so the cut can never land inside a multi-byte encoded character.
    """
    if limit <= 0:
        raise ValidationError(f"excerpt limit must be positive, got {limit}")
    return render_context(pool)[:limit]


def merge_pools(a: EvidencePool, b: EvidencePool) -> EvidencePool:
    """Concatenate two pools into a MERGED pool, deduplicating on work_id.

    First occurrence wins; a's items come first.  Merged provenance
    keeps a's base URL, unions the keywords in order, and takes the
    later of the two retrieval timestamps.
    """
    if a.provenance.cutoff_year != b.provenance.cutoff_year:
        raise ValidationError(
            f"cannot merge pools with different cutoffs: "
            f"{a.provenance.cutoff_year} != {b.provenance.cutoff_year}"
        )
    merged_keywords: list[str] = []
    for keyword in (*a.provenance.keywords, *b.provenance.keywords):
        if keyword not in merged_keywords:
            merged_keywords.append(keyword)
    provenance = Provenance(
        keywords=tuple(merged_keywords),
        cutoff_year=a.provenance.cutoff_year,
        retrieved_at=max(a.provenance.retrieved_at, b.provenance.retrieved_at),
        base_url=a.provenance.base_url,
    )
    works: list[Work] = []
    seen: set[str] = set()
    for item in (*a.items, *b.items):
        if item.work.work_id in seen:
            continue
        seen.add(item.work.work_id)
        works.append(item.work)
    return build_pool(works, "MERGED", provenance)
