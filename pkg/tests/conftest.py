"""Shared fixtures: network lockout, factories, acceptance summary lines."""

from __future__ import annotations

import json
import socket
from pathlib import Path

import pytest
from hypothesis import settings

from litdebate.gateway import Gateway, ScriptedProvider
from litdebate.scholarly import Work
from litdebate.snapshot import CaseSpec, Provenance, build_pool
from litdebate.templates import TemplatePack

ROOT = Path(__file__).resolve().parents[1]

settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")

_acceptance_results: dict[int, tuple[str, bool]] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(num, desc): ties a test to one acceptance criterion"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    num, desc = marker.args
    previous_ok = _acceptance_results.get(num, (desc, True))[1]
    _acceptance_results[num] = (desc, previous_ok and report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(_acceptance_results):
        desc, ok = _acceptance_results[num]
        verdict = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[acceptance {num:2d}] {verdict}: {desc}")


@pytest.fixture(autouse=True)
def no_network(monkeypatch):
    """Any attempt to open a socket fails the test immediately."""

    def guard(*args, **kwargs):
        raise RuntimeError("test tried to open a network socket")

    monkeypatch.setattr(socket, "socket", guard)
    monkeypatch.setattr(socket, "create_connection", guard)


@pytest.fixture
def work_factory():
    def make(ordinal=1, year=2015, abstract="alpha beta gamma", prefix="W", title=None):
        return Work(
            work_id=f"{prefix}{ordinal:04d}",
            title=title or f"Sample work {ordinal}",
            abstract_text=abstract,
            publication_year=year,
            publication_date=f"{year}-01-01",
            venue="Test Venue",
            relevance_rank=ordinal,
        )

    return make


@pytest.fixture
def pool_factory(work_factory):
    def make(role="A", size=3, cutoff=2016, year=2015, keywords=("alpha", "beta")):
        works = [
            work_factory(i + 1, year=year, prefix=f"{role}-src-") for i in range(size)
        ]
        provenance = Provenance(
            keywords=tuple(keywords),
            cutoff_year=cutoff,
            retrieved_at="2026-08-01T00:00:00+00:00",
            base_url="https://api.example.org/works",
        )
        return build_pool(works, role, provenance)

    return make


@pytest.fixture
def case_factory():
    def make(case_id=1, cutoff=2016, reference_work_id="W-REF-TEST"):
        return CaseSpec(
            case_id=case_id,
            problem_statement="How should the widget be structured?",
            reference_citation="Widget et al.",
            reference_year=cutoff + 1,
            cutoff_year=cutoff,
            role_queries={"A": ("alpha", "beta"), "B": ("gamma", "delta")},
            reference_work_id=reference_work_id,
        )

    return make


@pytest.fixture
def templates():
    return TemplatePack()


@pytest.fixture
def scripted_gateway_factory():
    def make(stages):
        return Gateway("scripted", provider=ScriptedProvider(stages))

    return make


@pytest.fixture
def demo_config_file(tmp_path):
    """A config pointing at the bundled demo data but writing under tmp."""

    def make(subdir="work", **extra):
        base = tmp_path / subdir
        doc = {
            "paths": {
                "case_file": str(ROOT / "data" / "cases.json"),
                "fixture_dir": str(ROOT / "data" / "fixtures" / "scholarly"),
                "script_file": str(ROOT / "data" / "scripts" / "demo_script.json"),
                "snapshot_dir": str(base / "snapshots"),
                "output_dir": str(base / "runs"),
            },
            "provider": {"mode": "scripted", "llm_model_id": "demo-model"},
            "seed": 7,
        }
        for section, payload in extra.items():
            doc.setdefault(section, {})
            if isinstance(payload, dict):
                doc[section].update(payload)
            else:
                doc[section] = payload
        path = tmp_path / f"config_{subdir}.json"
        path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
        return path

    return make
