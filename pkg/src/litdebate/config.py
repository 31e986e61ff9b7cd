"""Run configuration: paths, provider settings, limits, and policy.

Loaded from a JSON file with env-var overrides for endpoint and auth
settings.  The sampling temperature is deliberately absent; it is fixed
in the request factory, and the only escape hatch is an experimental
env var that taints every artifact it touches.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .canonical import read_json
from .debate import DebatePolicy
from .errors import ConfigError
from .gateway import (
    DEFAULT_CONTEXT_CHAR_WINDOW,
    DEFAULT_MAX_INFLIGHT,
    Gateway,
    HttpProvider,
    ScriptedProvider,
)
from .scholarly import (
    DEFAULT_BASE_URL,
    FixtureTransport,
    LiveTransport,
    MAX_SNAPSHOT_WORKS,
    RecordingTransport,
)
from .templates import TEMPLATE_VERSION, TemplatePack

logger = logging.getLogger(__name__)

GATEWAY_MODES = ("live", "record", "replay", "scripted")
EXPERIMENTAL_TEMPERATURE_ENV = "LITDEBATE_EXPERIMENTAL_TEMPERATURE"


@dataclass(frozen=True)
class PathsConfig:
    case_file: str = "data/cases.json"
    snapshot_dir: str = "artifacts/snapshots"
    fixture_dir: str = "data/fixtures/scholarly"
    gateway_fixture: str = "artifacts/gateway_fixture.jsonl"
    script_file: str = "data/scripts/demo_script.json"
    template_dir: str | None = None
    output_dir: str = "artifacts/runs"


@dataclass(frozen=True)
class ProviderConfig:
    mode: str = "scripted"
    scholarly_base_url: str = DEFAULT_BASE_URL
    contact_email: str | None = None
    llm_base_url: str | None = None
    llm_api_key: str | None = None
    llm_model_id: str = "scripted-model"


@dataclass(frozen=True)
class LimitsConfig:
    page_size: int = 200
    max_inflight: int = DEFAULT_MAX_INFLIGHT
    excerpt_chars: int = 70_000
    max_works: int = MAX_SNAPSHOT_WORKS
    max_context_chars: int = DEFAULT_CONTEXT_CHAR_WINDOW
    allow_tail_truncation: bool = False
    fallback_by_stage: bool = False


@dataclass(frozen=True)
class EvaluationConfig:
    judge_include_problem: bool = False
    allow_sum_override: bool = False
    eop_single_persona: bool = False


@dataclass(frozen=True)
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    limits: LimitsConfig = field(default_factory=LimitsConfig)
    debate: DebatePolicy = field(default_factory=DebatePolicy)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    seed: int = 0
    experimental_temperature: float | None = None

    def __post_init__(self):
        if self.provider.mode not in GATEWAY_MODES:
            raise ConfigError(f"provider mode must be one of {GATEWAY_MODES}")
        if self.limits.excerpt_chars <= 0:
            raise ConfigError("excerpt_chars must be positive")
        if not 1 <= self.limits.max_works <= MAX_SNAPSHOT_WORKS:
            raise ConfigError(f"max_works must be in [1, {MAX_SNAPSHOT_WORKS}]")
        if self.limits.page_size < 1:
            raise ConfigError("page_size must be at least 1")

    def make_templates(self) -> TemplatePack:
        if self.paths.template_dir:
            return TemplatePack(version=TEMPLATE_VERSION, root=self.paths.template_dir)
        return TemplatePack(version=TEMPLATE_VERSION)

    def make_gateway(self) -> Gateway:
        mode = self.provider.mode
        provider = None
        fixture_path = None
        if mode in ("live", "record"):
            if not self.provider.llm_base_url:
                raise ConfigError(f"mode {mode!r} needs llm_base_url (or LLM_BASE_URL)")
            provider = HttpProvider(
                self.provider.llm_base_url, api_key=self.provider.llm_api_key
            )
        if mode == "scripted":
            script = Path(self.paths.script_file)
            if not script.exists():
                raise ConfigError(f"script file not found: {script}")
            provider = ScriptedProvider.from_file(script)
        if mode in ("record", "replay"):
            fixture_path = self.paths.gateway_fixture
        return Gateway(
            mode=mode,
            provider=provider,
            fixture_path=fixture_path,
            fallback_by_stage=self.limits.fallback_by_stage,
            max_context_chars=self.limits.max_context_chars,
            allow_tail_truncation=self.limits.allow_tail_truncation,
            max_inflight=self.limits.max_inflight,
        )

    def make_scholarly_transport(self):
        """Live transport only in live/record mode; fixtures otherwise."""
        mode = self.provider.mode
        if mode == "live":
            return LiveTransport(
                base_url=self.provider.scholarly_base_url,
                contact_email=self.provider.contact_email,
            )
        if mode == "record":
            live = LiveTransport(
                base_url=self.provider.scholarly_base_url,
                contact_email=self.provider.contact_email,
            )
            return RecordingTransport(live, self.paths.fixture_dir)
        return FixtureTransport(self.paths.fixture_dir)


def _section(doc: Mapping, name: str) -> dict:
    value = doc.get(name, {})
    if not isinstance(value, Mapping):
        raise ConfigError(f"config section {name!r} must be an object")
    return dict(value)


def _build(cls, payload: dict, section: str):
    known = set(cls.__dataclass_fields__)
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown keys in config section {section!r}: {sorted(unknown)}")
    return cls(**payload)


def load_config(path: str | Path | None = None) -> RunConfig:
    """Read a config file (or use defaults) and apply env overrides."""
    doc: dict = {}
    if path is not None:
        file_path = Path(path)
        if not file_path.exists():
            raise ConfigError(f"config file not found: {file_path}")
        doc = read_json(file_path)
        if not isinstance(doc, dict):
            raise ConfigError(f"{file_path}: config must be a JSON object")
    provider_payload = _section(doc, "provider")
    env_overrides = {
        "scholarly_base_url": os.environ.get("SCHOLARLY_BASE_URL"),
        "contact_email": os.environ.get("SCHOLARLY_CONTACT_EMAIL"),
        "llm_base_url": os.environ.get("LLM_BASE_URL"),
        "llm_api_key": os.environ.get("LLM_API_KEY"),
        "llm_model_id": os.environ.get("LLM_MODEL_ID"),
    }
    for key, value in env_overrides.items():
        if value:
            provider_payload[key] = value
    experimental = doc.get("experimental_temperature")
    env_temperature = os.environ.get(EXPERIMENTAL_TEMPERATURE_ENV)
    if env_temperature:
        try:
            experimental = float(env_temperature)
        except ValueError as exc:
            raise ConfigError(
                f"{EXPERIMENTAL_TEMPERATURE_ENV} must be a number, got {env_temperature!r}"
            ) from exc
        logger.warning(
            "experimental temperature override %.3f active; artifacts will be tainted",
            experimental,
        )
    return RunConfig(
        paths=_build(PathsConfig, _section(doc, "paths"), "paths"),
        provider=_build(ProviderConfig, provider_payload, "provider"),
        limits=_build(LimitsConfig, _section(doc, "limits"), "limits"),
        debate=_build(DebatePolicy, _section(doc, "debate"), "debate"),
        evaluation=_build(EvaluationConfig, _section(doc, "evaluation"), "evaluation"),
        seed=doc.get("seed", 0),
        experimental_temperature=experimental,
    )
