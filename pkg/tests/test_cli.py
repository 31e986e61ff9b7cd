"""Command-line surface: exit codes, artifact naming, error reporting."""

import json
from pathlib import Path

import pytest

from litdebate.cli import EXIT_CODES, exit_code_for, main
from litdebate.errors import (
    BothSidesError,
    ConfigError,
    ContextOverflowError,
    DigestMismatchError,
    IhqParseError,
    PageFetchError,
    ParseError,
    ProviderError,
    ReplayMissError,
    ResourceError,
    TimeLockError,
    TurnFormatError,
    ValidationError,
    WorkParseError,
)


class TestExitCodes:
    @pytest.mark.parametrize(
        "error,code",
        [
            (ConfigError("x"), 2),
            (ResourceError("x"), 3),
            (ValidationError("x"), 4),
            (TimeLockError("x"), 4),
            (DigestMismatchError("x"), 4),
            (BothSidesError("x"), 4),
            (ProviderError("x"), 5),
            (ReplayMissError("x"), 5),
            (ContextOverflowError("x"), 5),
            (PageFetchError("x"), 5),
            (ParseError("x"), 6),
            (WorkParseError("x"), 6),
            (TurnFormatError("x"), 6),
            (IhqParseError("x"), 6),
        ],
    )
    def test_mapping(self, error, code):
        assert exit_code_for(error) == code

    def test_documented_codes(self):
        assert [code for _, code in EXIT_CODES] == [2, 3, 4, 5, 6]


class TestArgumentHandling:
    def test_no_command_prints_help(self, capsys):
        assert main([]) == 2
        assert "usage" in capsys.readouterr().out

    def test_missing_config_file(self, capsys):
        code = main(["--config", "/nonexistent/config.json", "snapshot", "--case", "1", "--role", "A"])
        assert code == 2
        assert "ConfigError" in capsys.readouterr().err


class TestPipelineErrors:
    def test_snapshot_without_fixture_page_is_a_provider_error(
        self, demo_config_file, tmp_path, capsys
    ):
        empty = tmp_path / "empty_fixtures"
        empty.mkdir()
        config = demo_config_file("nofix", paths={"fixture_dir": str(empty)})
        code = main(["--config", str(config), "snapshot", "--case", "1", "--role", "A"])
        assert code == 5
        assert "ReplayMissError" in capsys.readouterr().err

    def test_persona_before_snapshot_is_a_resource_error(self, demo_config_file, capsys):
        config = demo_config_file("nopool")
        code = main(["--config", str(config), "persona", "--case", "1", "--role", "A"])
        assert code == 3

    def test_evaluate_without_outputs_is_a_resource_error(self, demo_config_file, capsys):
        config = demo_config_file("noout")
        code = main(["--config", str(config), "evaluate", "--cases", "1", "--conditions", "MPDS"])
        assert code == 3
        assert "case 1" in capsys.readouterr().err

    def test_tampered_pool_is_a_validation_error(self, demo_config_file, capsys):
        config = demo_config_file("tamper")
        assert main(["--config", str(config), "snapshot", "--case", "1", "--role", "A"]) == 0
        assert main(["--config", str(config), "snapshot", "--case", "1", "--role", "B"]) == 0
        snapshot_dir = Path(json.loads(config.read_text())["paths"]["snapshot_dir"])
        pool_file = snapshot_dir / "case001_A.json"
        text = pool_file.read_text(encoding="utf-8")
        pool_file.write_text(text.replace("architectures", "architectureZ", 1), encoding="utf-8")
        code = main(["--config", str(config), "snapshot", "--case", "1", "--role", "MERGED"])
        assert code == 4
        assert "DigestMismatchError" in capsys.readouterr().err

    def test_missing_script_stage_is_a_provider_error(
        self, demo_config_file, tmp_path, capsys
    ):
        script = tmp_path / "empty_script.json"
        script.write_text(json.dumps({"schema": "script_v1", "stages": {}}))
        config = demo_config_file("nostage", paths={"script_file": str(script)})
        code = main(["--config", str(config), "run", "--case", "1", "--condition", "RAW_LLM"])
        assert code == 5
        assert "UnknownStageError" in capsys.readouterr().err

    def test_corrupt_script_is_a_parse_error(self, demo_config_file, tmp_path, capsys):
        script = tmp_path / "broken_script.json"
        script.write_text("{not json")
        config = demo_config_file("badscript", paths={"script_file": str(script)})
        code = main(["--config", str(config), "run", "--case", "1", "--condition", "RAW_LLM"])
        assert code == 6

    def test_replay_verify_rejects_record_mode(self, demo_config_file, tmp_path, capsys):
        config = demo_config_file(
            "recmode",
            provider={"mode": "record", "llm_base_url": "https://example.org"},
            paths={"gateway_fixture": str(tmp_path / "fx.jsonl")},
        )
        code = main(["--config", str(config), "replay-verify", "--case", "1", "--condition", "MPDS"])
        assert code == 2

    def test_unknown_case_id(self, demo_config_file, capsys):
        config = demo_config_file("nocase")
        code = main(["--config", str(config), "snapshot", "--case", "42", "--role", "A"])
        assert code in (2, 3)


class TestHappyPath:
    def test_snapshot_then_persona(self, demo_config_file, capsys):
        config = demo_config_file("happy")
        assert main(["--config", str(config), "snapshot", "--case", "6", "--role", "A"]) == 0
        out = capsys.readouterr().out
        assert "case006_A.json" in out
        assert "digest" in out
        assert main(["--config", str(config), "persona", "--case", "6", "--role", "A"]) == 0
        assert "Materials Strategist" in capsys.readouterr().out

    def test_run_writes_output_and_transcript(self, demo_config_file, capsys):
        config = demo_config_file("runs")
        for role in ("A", "B"):
            assert main(["--config", str(config), "snapshot", "--case", "6", "--role", role]) == 0
        assert main(["--config", str(config), "run", "--case", "6", "--condition", "DS"]) == 0
        out = capsys.readouterr().out
        assert "case006_DS_output.json" in out
        assert "case006_DS_transcript.json" in out
