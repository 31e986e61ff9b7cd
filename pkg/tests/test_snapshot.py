"""Evidence pools: ids, digests, persistence, rendering, merging, the lock."""

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from litdebate.errors import (
    ConfigError,
    DigestMismatchError,
    ParseError,
    TimeLockError,
    ValidationError,
)
from litdebate.snapshot import (
    INDUCTION_EXCERPT_CHARS,
    POOL_CAPS,
    CaseSpec,
    EvidencePool,
    Provenance,
    build_pool,
    excerpt_for_induction,
    load_cases,
    load_pool,
    make_evidence_id,
    merge_pools,
    pool_digest,
    render_context,
    save_pool,
    validate_time_lock,
)


class TestBuildPool:
    def test_ids_are_sequential_and_role_tagged(self, pool_factory):
        pool = pool_factory(role="B", size=4)
        assert pool.evidence_ids() == ["B-001", "B-002", "B-003", "B-004"]

    def test_empty_pool_is_valid(self, pool_factory):
        pool = pool_factory(size=0)
        assert pool.items == ()
        assert pool.digest == pool_digest("A", pool.provenance, ())

    def test_unknown_role_rejected(self, work_factory):
        provenance = Provenance(("k",), 2016, "t", "u")
        with pytest.raises(ValidationError):
            build_pool([work_factory()], "C", provenance)

    def test_cap_enforced(self, work_factory):
        provenance = Provenance(("k",), 2016, "t", "u")
        works = [work_factory(i) for i in range(1, POOL_CAPS["A"] + 2)]
        with pytest.raises(ValidationError):
            build_pool(works, "A", provenance)

    def test_duplicate_work_ids_rejected(self, work_factory):
        provenance = Provenance(("k",), 2016, "t", "u")
        with pytest.raises(ValidationError):
            build_pool([work_factory(1), work_factory(1)], "A", provenance)

    def test_year_beyond_cutoff_rejected(self, work_factory):
        provenance = Provenance(("k",), 2016, "t", "u")
        with pytest.raises(TimeLockError):
            build_pool([work_factory(1, year=2017)], "A", provenance)

    def test_digest_tracks_content(self, pool_factory):
        first = pool_factory(size=2)
        second = pool_factory(size=3)
        assert first.digest != second.digest
        assert first.digest == pool_factory(size=2).digest


class TestPersistence:
    def test_save_load_round_trip(self, pool_factory, tmp_path):
        pool = pool_factory(size=3)
        path = tmp_path / "pool.json"
        save_pool(pool, path)
        loaded = load_pool(path)
        assert loaded == pool
        assert loaded.digest == pool.digest

    def test_tampered_file_is_detected(self, pool_factory, tmp_path):
        pool = pool_factory(size=3)
        path = tmp_path / "pool.json"
        save_pool(pool, path)
        text = path.read_text(encoding="utf-8")
        path.write_text(text.replace("alpha beta", "alpha betb", 1), encoding="utf-8")
        with pytest.raises(DigestMismatchError):
            load_pool(path)

    def test_wrong_schema_rejected(self, pool_factory, tmp_path):
        pool = pool_factory()
        path = tmp_path / "pool.json"
        save_pool(pool, path)
        doc = json.loads(path.read_text(encoding="utf-8"))
        doc["schema"] = "something_else"
        path.write_text(json.dumps(doc), encoding="utf-8")
        with pytest.raises(ParseError):
            load_pool(path)


class TestRendering:
    def test_block_format(self, pool_factory):
        pool = pool_factory(size=2, cutoff=2016)
        rendered = render_context(pool)
        lines = rendered.split("\n")
        assert lines[0] == "# Evidence pool A | cutoff 2016 | 2 items"
        assert "[A-001] Sample work 1 (2015)" in rendered
        assert "alpha beta gamma" in rendered

    def test_empty_pool_renders_header_only(self, pool_factory):
        pool = pool_factory(size=0)
        assert render_context(pool) == "# Evidence pool A | cutoff 2016 | 0 items"

    def test_excerpt_equals_render_when_short(self, pool_factory):
        pool = pool_factory(size=3)
        assert excerpt_for_induction(pool) == render_context(pool)

    def test_excerpt_truncates_at_limit(self, pool_factory):
        pool = pool_factory(size=3)
        excerpt = excerpt_for_induction(pool, limit=40)
        assert len(excerpt) == 40
        assert render_context(pool).startswith(excerpt)

    def test_default_limit_constant(self):
        assert INDUCTION_EXCERPT_CHARS == 70_000


class TestMerge:
    def test_merge_order_and_ids(self, pool_factory):
        merged = merge_pools(pool_factory(role="A", size=2), pool_factory(role="B", size=2))
        assert merged.role_tag == "MERGED"
        assert merged.evidence_ids() == [
            "MERGED-001",
            "MERGED-002",
            "MERGED-003",
            "MERGED-004",
        ]
        sources = [item.work.work_id for item in merged.items]
        assert sources == ["A-src-0001", "A-src-0002", "B-src-0001", "B-src-0002"]

    def test_merge_deduplicates_on_work_id(self, work_factory):
        provenance = Provenance(("k",), 2016, "2026-01-01T00:00:00+00:00", "u")
        a = build_pool([work_factory(1), work_factory(2)], "A", provenance)
        b = build_pool([work_factory(2), work_factory(3)], "B", provenance)
        merged = merge_pools(a, b)
        assert [item.work.work_id for item in merged.items] == [
            "W0001",
            "W0002",
            "W0003",
        ]

    def test_merge_unions_keywords_and_takes_latest_timestamp(self, work_factory):
        prov_a = Provenance(("k1", "shared"), 2016, "2026-01-01T00:00:00+00:00", "u")
        prov_b = Provenance(("shared", "k2"), 2016, "2026-02-01T00:00:00+00:00", "u")
        a = build_pool([work_factory(1)], "A", prov_a)
        b = build_pool([work_factory(2)], "B", prov_b)
        merged = merge_pools(a, b)
        assert merged.provenance.keywords == ("k1", "shared", "k2")
        assert merged.provenance.retrieved_at == "2026-02-01T00:00:00+00:00"

    def test_merge_requires_matching_cutoffs(self, pool_factory):
        with pytest.raises(ValidationError):
            merge_pools(pool_factory(role="A", cutoff=2016), pool_factory(role="B", cutoff=2015, year=2014))


class TestTimeLock:
    def test_clean_pool_passes(self, pool_factory, case_factory):
        report = validate_time_lock(pool_factory(), case_factory())
        assert report.ok
        assert report.violations == ()

    def test_cutoff_mismatch_is_an_error(self, pool_factory, case_factory):
        with pytest.raises(ValidationError):
            validate_time_lock(pool_factory(cutoff=2016), case_factory(cutoff=2015))

    def test_flags_year_and_reference_identity(self, work_factory, case_factory):
        case = case_factory(cutoff=2016, reference_work_id="W0002")
        provenance = Provenance(("k",), 2016, "t", "u")
        items = build_pool(
            [work_factory(1), work_factory(2), work_factory(3)], "A", provenance
        ).items
        late = work_factory(9, year=2018)
        tampered = EvidencePool(
            role_tag="A",
            provenance=provenance,
            items=items + (type(items[0])(evidence_id="A-004", work=late),),
            digest="",
        )
        tampered = EvidencePool(
            role_tag="A",
            provenance=provenance,
            items=tampered.items,
            digest=pool_digest("A", provenance, tampered.items),
        )
        report = validate_time_lock(tampered, case)
        assert not report.ok
        flagged = {(v["evidence_id"], v["reason"]) for v in report.violations}
        assert ("A-004", "publication_year 2018 exceeds cutoff 2016") in flagged
        assert ("A-002", "item is the held-out reference work") in flagged


class TestCases:
    def write_cases(self, tmp_path, mutate=None):
        doc = {
            "schema": "cases_v1",
            "cases": [
                {
                    "case_id": 3,
                    "problem_statement": "How should the widget be structured?",
                    "reference_citation": "Widget et al. (2017)",
                    "reference_year": 2017,
                    "cutoff_year": 2016,
                    "role_queries": {"A": ["alpha"], "B": ["beta"]},
                    "reference_work_id": "W-REF-3",
                }
            ],
        }
        if mutate:
            mutate(doc)
        path = tmp_path / "cases.json"
        path.write_text(json.dumps(doc), encoding="utf-8")
        return path

    def test_load_round_trip(self, tmp_path):
        cases = load_cases(self.write_cases(tmp_path))
        assert len(cases) == 1
        case = cases[0]
        assert case.case_id == 3
        assert case.cutoff_year == 2016
        assert case.role_queries["A"] == ("alpha",)
        assert case.persona_hints["A"]

    def test_missing_role_query_is_a_config_error(self, tmp_path):
        def drop_b(doc):
            del doc["cases"][0]["role_queries"]["B"]

        with pytest.raises(ConfigError):
            load_cases(self.write_cases(tmp_path, drop_b))

    def test_cutoff_must_trail_reference_year(self, tmp_path):
        def bad_cutoff(doc):
            doc["cases"][0]["cutoff_year"] = 2015

        with pytest.raises(ValidationError):
            load_cases(self.write_cases(tmp_path, bad_cutoff))


class TestEvidenceIds:
    @given(st.sampled_from(["A", "B", "MERGED"]), st.integers(min_value=0, max_value=998))
    def test_id_shape(self, role, index):
        evidence_id = make_evidence_id(role, index)
        prefix, ordinal = evidence_id.rsplit("-", 1)
        assert prefix == role
        assert int(ordinal) == index + 1
        assert len(ordinal) == 3
