#!/usr/bin/env python3
"""Generate the synthetic scholarly fixture pages for the offline demo.

Deterministic: the same seed always produces byte-identical pages, so
the fixtures can be regenerated at will.  The case-1 role-A stream
deliberately spans two cursor pages and carries two planted records
that must never survive retrieval: a same-year-as-reference work and
the reference work itself.  It also carries records with missing
abstracts and years to exercise the skip paths.
"""

from __future__ import annotations

import random
from pathlib import Path

from litdebate.scholarly import build_work_query, invert_abstract, write_fixture_page
from litdebate.snapshot import load_cases

ROOT = Path(__file__).resolve().parents[1]
FIXTURE_DIR = ROOT / "data" / "fixtures" / "scholarly"
CASE_FILE = ROOT / "data" / "cases.json"
RETRIEVED_AT = "2026-08-01T00:00:00+00:00"
PAGE_SIZE = 200
MAX_WORKS = 500

VENUES = (
    "Journal of Applied Energy Materials",
    "Electrochemical Frontiers",
    "Advanced Storage Research",
    "Materials Synthesis Letters",
)

# role A banks lean toward composition and mechanism, role B toward synthesis
TOPIC_WORDS = {
    "A": [
        "conversion", "intercalation", "redox", "diffusion", "capacity",
        "electrode", "nanostructure", "composite", "heterostructure", "buffering",
        "porosity", "conductivity", "cycling", "stability", "kinetics",
    ],
    "B": [
        "spray", "pyrolysis", "drying", "calcination", "precursor",
        "droplet", "scalable", "yield", "densification", "annealing",
        "template-free", "one-pot", "powder", "granulation", "processing",
    ],
}
CASE_CHEMISTRY = {
    1: ["sulfide", "selenide", "sodium", "microsphere", "nanovoid"],
    2: ["layered oxide", "solid electrolyte", "cathode", "composite", "pressing"],
    6: ["vanadium", "graphene", "zinc", "microsphere", "nanoconfinement"],
}


def make_abstract(rng: random.Random, case_id: int, role: str) -> str:
    words = TOPIC_WORDS[role] + CASE_CHEMISTRY[case_id]
    sentences = []
    for _ in range(rng.randint(4, 6)):
        length = rng.randint(9, 14)
        picked = [rng.choice(words) for _ in range(length)]
        sentences.append(" ".join(picked).capitalize() + ".")
    return " ".join(sentences)


def make_record(rng: random.Random, case_id: int, role: str, ordinal: int, year: int) -> dict:
    chem = rng.choice(CASE_CHEMISTRY[case_id])
    topic = rng.choice(TOPIC_WORDS[role])
    title = f"Study of {chem} {topic} architectures ({case_id}-{role}-{ordinal:03d})"
    return {
        "id": f"W-{case_id}-{role}-{ordinal:04d}",
        "title": title,
        "display_name": title,
        "publication_year": year,
        "publication_date": f"{year}-0{rng.randint(1, 9)}-15",
        "abstract_inverted_index": invert_abstract(make_abstract(rng, case_id, role)),
        "primary_location": {"source": {"display_name": rng.choice(VENUES)}},
    }


def records_for(rng: random.Random, case_id: int, role: str, count: int, cutoff: int) -> list[dict]:
    out = []
    for ordinal in range(1, count + 1):
        year = rng.randint(cutoff - 10, cutoff)
        out.append(make_record(rng, case_id, role, ordinal, year))
    return out


def main() -> None:
    cases = load_cases(CASE_FILE)
    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    written = 0
    for case in cases:
        for role in ("A", "B"):
            rng = random.Random(case.case_id * 100 + ord(role))
            query = build_work_query(
                case.role_queries[role], case.cutoff_year, MAX_WORKS
            )
            if case.case_id == 1 and role == "A":
                # two pages; page 2 carries the planted violations and skip cases
                page1 = records_for(rng, case.case_id, role, 9, case.cutoff_year)
                page2 = records_for(rng, case.case_id, role, 5, case.cutoff_year)
                for record in page2:
                    record["id"] = record["id"].replace("-A-", "-A2-")
                planted_same_year = make_record(
                    rng, case.case_id, role, 901, case.reference_year
                )
                planted_reference = make_record(
                    rng, case.case_id, role, 902, case.reference_year
                )
                planted_reference["id"] = case.reference_work_id
                planted_reference["title"] = case.reference_citation
                planted_reference["display_name"] = case.reference_citation
                no_abstract = {
                    "id": f"W-{case.case_id}-{role}-no-abstract",
                    "title": "Record without any abstract",
                    "publication_year": case.cutoff_year - 1,
                }
                no_year = {
                    "id": f"W-{case.case_id}-{role}-no-year",
                    "title": "Record without a publication year",
                    "abstract_inverted_index": invert_abstract("placeholder text only"),
                }
                page2.extend([planted_same_year, planted_reference, no_abstract, no_year])
                write_fixture_page(
                    FIXTURE_DIR, query, "*", PAGE_SIZE, page1, "cursor-2", RETRIEVED_AT
                )
                write_fixture_page(
                    FIXTURE_DIR, query, "cursor-2", PAGE_SIZE, page2, None, RETRIEVED_AT
                )
                written += 2
            else:
                records = records_for(rng, case.case_id, role, 11, case.cutoff_year)
                write_fixture_page(
                    FIXTURE_DIR, query, "*", PAGE_SIZE, records, None, RETRIEVED_AT
                )
                written += 1
    print(f"wrote {written} fixture pages under {FIXTURE_DIR}")


if __name__ == "__main__":
    main()
