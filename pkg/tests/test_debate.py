"""Debate engine: citations, repair, the both-sides rule, transcripts."""

import pytest

from litdebate.errors import (
    BothSidesError,
    TimeLockError,
    TurnFormatError,
    ValidationError,
)
from litdebate.debate import (
    TURN_ORDER,
    CitationCheck,
    DebatePolicy,
    DebateTranscript,
    DebateTurn,
    FinalPlan,
    extract_citations,
    generate_turn,
    load_transcript,
    parse_turn_response,
    run_debate,
    save_transcript,
    synthesize,
    validate_citations,
)


def make_turn(index, proposal="A plan [A-001]", citations=("A-001",)):
    round_number, agent = TURN_ORDER[index]
    role = citations[0].rsplit("-", 1)[0] if citations else "A"
    return DebateTurn(
        round=round_number,
        agent=agent,
        critique_text="" if index == 0 else "a critique",
        proposal_text=proposal,
        citations=tuple(citations),
        citation_checks=tuple(
            CitationCheck(c, True, c.rsplit("-", 1)[0]) for c in citations
        ),
        repaired=False,
        audit_note=None,
    )


def six_turns():
    return [
        make_turn(i, citations=("A-001",) if agent == "A" else ("B-001",))
        for i, (_, agent) in enumerate(TURN_ORDER)
    ]


class TestCitationExtraction:
    def test_order_preserved_and_deduped(self):
        text = "First [B-002] then [A-001], again [B-002], merged [MERGED-010]."
        assert extract_citations(text) == ["B-002", "A-001", "MERGED-010"]

    def test_unknown_prefixes_ignored(self):
        assert extract_citations("see [C-001] and [ref-12]") == []

    def test_no_citations(self):
        assert extract_citations("plain text") == []


class TestCitationValidation:
    def test_own_pool_restriction(self, pool_factory):
        pools = {"A": pool_factory(role="A"), "B": pool_factory(role="B")}
        checks = validate_citations(["A-001", "B-001"], pools, allowed_roles={"A"})
        by_id = {c.evidence_id: c for c in checks}
        assert by_id["A-001"].resolved and by_id["A-001"].pool_role == "A"
        assert not by_id["B-001"].resolved

    def test_unknown_ordinal_unresolved(self, pool_factory):
        pools = {"A": pool_factory(role="A", size=2)}
        checks = validate_citations(["A-003"], pools)
        assert not checks[0].resolved

    def test_merged_citation(self, pool_factory):
        merged = pool_factory(role="A", size=2)
        from litdebate.snapshot import merge_pools

        pools = {"MERGED": merge_pools(merged, pool_factory(role="B", size=1))}
        checks = validate_citations(["MERGED-003"], pools)
        assert checks[0].resolved and checks[0].pool_role == "MERGED"


class TestTurnParsing:
    def test_opening_turn_without_critique(self):
        critique, proposal = parse_turn_response("PROPOSAL:\nthe plan", opening=True)
        assert critique == ""
        assert proposal == "the plan"

    def test_non_opening_requires_critique(self):
        with pytest.raises(TurnFormatError):
            parse_turn_response("PROPOSAL:\nthe plan", opening=False)

    def test_critique_then_proposal(self):
        raw = "CRITIQUE:\nweak point\n\nPROPOSAL:\nbetter plan"
        critique, proposal = parse_turn_response(raw, opening=False)
        assert critique == "weak point"
        assert proposal == "better plan"

    def test_missing_proposal_rejected(self):
        with pytest.raises(TurnFormatError):
            parse_turn_response("CRITIQUE:\nonly critique", opening=False)

    def test_empty_proposal_rejected(self):
        with pytest.raises(TurnFormatError):
            parse_turn_response("PROPOSAL:\n   ", opening=True)


class TestGenerateTurn:
    def pools(self, pool_factory):
        return {"A": pool_factory(role="A"), "B": pool_factory(role="B")}

    def test_successful_repair_reask(
        self, pool_factory, case_factory, scripted_gateway_factory, templates
    ):
        stages = {
            "round1-agentA": "PROPOSAL:\nLean on [A-001] and [A-999].",
            "round1-agentA-repair": "PROPOSAL:\nLean on [A-001].",
        }
        gateway = scripted_gateway_factory(stages)
        turn = generate_turn(
            [],
            "A",
            case_factory(),
            self.pools(pool_factory),
            None,
            gateway=gateway,
            templates=templates,
            model_id="m",
        )
        assert turn.citations == ("A-001",)
        assert turn.repaired is False
        assert turn.audit_note == "citation repair re-ask succeeded"
        assert gateway.call_count("round1-agentA-repair") == 1

    def test_failed_repair_strips_invalid_ids(
        self, pool_factory, case_factory, scripted_gateway_factory, templates
    ):
        stages = {
            "round1-agentA": "PROPOSAL:\nLean on [A-001] and [A-999].",
            "round1-agentA-repair": "PROPOSAL:\nStill [A-001] and [A-999].",
        }
        gateway = scripted_gateway_factory(stages)
        turn = generate_turn(
            [],
            "A",
            case_factory(),
            self.pools(pool_factory),
            None,
            gateway=gateway,
            templates=templates,
            model_id="m",
        )
        assert turn.repaired is True
        assert turn.citations == ("A-001",)
        assert "A-999" in (turn.audit_note or "")

    def test_cross_pool_citation_triggers_repair(
        self, pool_factory, case_factory, scripted_gateway_factory, templates
    ):
        stages = {
            "round1-agentA": "PROPOSAL:\nBorrowing [B-001].",
            "round1-agentA-repair": "PROPOSAL:\nBack to [A-001].",
        }
        gateway = scripted_gateway_factory(stages)
        turn = generate_turn(
            [],
            "A",
            case_factory(),
            self.pools(pool_factory),
            None,
            gateway=gateway,
            templates=templates,
            model_id="m",
        )
        assert turn.citations == ("A-001",)

    def test_format_violation_is_fatal(
        self, pool_factory, case_factory, scripted_gateway_factory, templates
    ):
        gateway = scripted_gateway_factory({"round1-agentA": "no marker at all"})
        with pytest.raises(TurnFormatError):
            generate_turn(
                [],
                "A",
                case_factory(),
                self.pools(pool_factory),
                None,
                gateway=gateway,
                templates=templates,
                model_id="m",
            )

    def test_wrong_agent_for_slot(self, pool_factory, case_factory, scripted_gateway_factory, templates):
        gateway = scripted_gateway_factory({})
        with pytest.raises(ValidationError):
            generate_turn(
                [],
                "B",
                case_factory(),
                self.pools(pool_factory),
                None,
                gateway=gateway,
                templates=templates,
                model_id="m",
            )

    def test_empty_pool_needs_opt_in(self, pool_factory, case_factory, scripted_gateway_factory, templates):
        pools = {"A": pool_factory(role="A", size=0), "B": pool_factory(role="B")}
        gateway = scripted_gateway_factory({"round1-agentA": "PROPOSAL:\nno evidence"})
        with pytest.raises(ValidationError):
            generate_turn(
                [], "A", case_factory(), pools, None,
                gateway=gateway, templates=templates, model_id="m",
            )
        turn = generate_turn(
            [], "A", case_factory(), pools, None,
            gateway=gateway, templates=templates, model_id="m",
            policy=DebatePolicy(allow_empty_pools=True),
        )
        assert turn.citations == ()


class TestSynthesis:
    def test_both_sides_rule_enforced_after_one_reask(
        self, pool_factory, case_factory, scripted_gateway_factory, templates
    ):
        stages = {
            "synthesis": "Plan citing only [A-001].",
            "synthesis-reask": "Still only [A-001].",
        }
        gateway = scripted_gateway_factory(stages)
        with pytest.raises(BothSidesError):
            synthesize(
                six_turns(),
                case_factory(),
                {"A": pool_factory(role="A"), "B": pool_factory(role="B")},
                gateway=gateway,
                templates=templates,
                model_id="m",
            )
        assert gateway.call_count("synthesis") == 2

    def test_reask_can_recover(
        self, pool_factory, case_factory, scripted_gateway_factory, templates
    ):
        stages = {
            "synthesis": "Plan citing only [A-001].",
            "synthesis-reask": "Now [A-001] and [B-001].",
        }
        gateway = scripted_gateway_factory(stages)
        plan = synthesize(
            six_turns(),
            case_factory(),
            {"A": pool_factory(role="A"), "B": pool_factory(role="B")},
            gateway=gateway,
            templates=templates,
            model_id="m",
        )
        assert plan.cited_roles == frozenset({"A", "B"})

    def test_compliant_first_pass_is_one_call(
        self, pool_factory, case_factory, scripted_gateway_factory, templates
    ):
        stages = {"synthesis": "Merge [A-001] with [B-002]."}
        gateway = scripted_gateway_factory(stages)
        plan = synthesize(
            six_turns(),
            case_factory(),
            {"A": pool_factory(role="A"), "B": pool_factory(role="B")},
            gateway=gateway,
            templates=templates,
            model_id="m",
        )
        assert gateway.call_count() == 1
        assert plan.citations == ("A-001", "B-002")

    def test_requires_all_six_turns(self, pool_factory, case_factory, scripted_gateway_factory, templates):
        gateway = scripted_gateway_factory({"synthesis": "[A-001] [B-001]"})
        with pytest.raises(ValidationError):
            synthesize(
                six_turns()[:4],
                case_factory(),
                {"A": pool_factory(role="A"), "B": pool_factory(role="B")},
                gateway=gateway,
                templates=templates,
                model_id="m",
            )


class TestRunDebate:
    def full_stages(self):
        return {
            "round1-agentA": "PROPOSAL:\nOpening [A-001].",
            "round1-agentB": "CRITIQUE:\ntoo vague\n\nPROPOSAL:\nCounter [B-001].",
            "round2-agentA": "CRITIQUE:\nmisses cost\n\nPROPOSAL:\nRevised [A-002].",
            "round2-agentB": "CRITIQUE:\nstill narrow\n\nPROPOSAL:\nRevised [B-002].",
            "round3-agentA": "CRITIQUE:\nconverging\n\nPROPOSAL:\nJoint [A-001] [A-002].",
            "round3-agentB": "CRITIQUE:\nagreed\n\nPROPOSAL:\nJoint [B-001] [B-002].",
            "synthesis": "Final plan mixing [A-001] and [B-002].",
        }

    def test_full_run_shape_and_provenance(
        self, pool_factory, case_factory, scripted_gateway_factory, templates
    ):
        gateway = scripted_gateway_factory(self.full_stages())
        transcript = run_debate(
            case_factory(),
            pool_factory(role="A"),
            pool_factory(role="B"),
            None,
            None,
            gateway=gateway,
            templates=templates,
            model_id="m",
            condition_label="DS",
        )
        assert [(t.round, t.agent) for t in transcript.turns] == list(TURN_ORDER)
        assert transcript.final_plan.cited_roles == frozenset({"A", "B"})
        assert transcript.provenance["persona_digests"] == {"A": "none", "B": "none"}
        assert gateway.call_count() == 7

    def test_time_lock_checked_before_any_call(
        self, work_factory, pool_factory, case_factory, scripted_gateway_factory, templates
    ):
        from litdebate.snapshot import EvidencePool, Provenance, pool_digest

        provenance = Provenance(("k",), 2016, "t", "u")
        late = work_factory(1, year=2019)
        item = type(pool_factory().items[0])(evidence_id="A-001", work=late)
        bad_pool = EvidencePool(
            role_tag="A",
            provenance=provenance,
            items=(item,),
            digest=pool_digest("A", provenance, (item,)),
        )
        gateway = scripted_gateway_factory(self.full_stages())
        with pytest.raises(TimeLockError):
            run_debate(
                case_factory(),
                bad_pool,
                pool_factory(role="B"),
                None,
                None,
                gateway=gateway,
                templates=templates,
                model_id="m",
            )
        assert gateway.call_count() == 0

    def test_single_persona_rejected(
        self, pool_factory, case_factory, scripted_gateway_factory, templates
    ):
        from litdebate.canonical import sha256_hex
        from litdebate.persona import PersonaProfile

        lone = PersonaProfile(
            persona_name="Lonely",
            domain_focus="x",
            keyword_signatures=("k",),
            problem_solving_patterns=("p",),
            reasoning_priorities=("r",),
            source_excerpt_digest=sha256_hex("e"),
        )
        gateway = scripted_gateway_factory(self.full_stages())
        with pytest.raises(ValidationError):
            run_debate(
                case_factory(),
                pool_factory(role="A"),
                pool_factory(role="B"),
                lone,
                None,
                gateway=gateway,
                templates=templates,
                model_id="m",
            )


class TestTranscriptPersistence:
    def build(self):
        plan = FinalPlan(
            synthesis_text="final [A-001] [B-001]",
            citations=("A-001", "B-001"),
            cited_roles=frozenset({"A", "B"}),
            citation_checks=(
                CitationCheck("A-001", True, "A"),
                CitationCheck("B-001", True, "B"),
            ),
        )
        return DebateTranscript(
            case_id=1,
            condition_label="DS",
            turns=tuple(six_turns()),
            final_plan=plan,
            provenance={"seed": 0},
        )

    def test_round_trip(self, tmp_path):
        transcript = self.build()
        path = tmp_path / "transcript.json"
        save_transcript(transcript, path)
        loaded = load_transcript(path)
        assert loaded.content_dict() == transcript.content_dict()
        assert loaded.digest == transcript.digest

    def test_tampering_is_detected(self, tmp_path):
        from litdebate.errors import DigestMismatchError

        transcript = self.build()
        path = tmp_path / "transcript.json"
        save_transcript(transcript, path)
        text = path.read_text(encoding="utf-8")
        path.write_text(text.replace("final [A-001]", "final [A-002]"), encoding="utf-8")
        with pytest.raises(DigestMismatchError):
            load_transcript(path)

    def test_turn_order_is_enforced(self):
        turns = six_turns()
        turns[0], turns[1] = turns[1], turns[0]
        plan = self.build().final_plan
        with pytest.raises(ValidationError):
            DebateTranscript(
                case_id=1,
                condition_label="DS",
                turns=tuple(turns),
                final_plan=plan,
                provenance={},
            )
