"""Command-line entry points.

Subcommands: snapshot (build role pools), persona (induce a profile),
run (one condition cell), evaluate (judge a case/condition grid),
report (re-render aggregates), replay-verify (determinism check).
Exit codes: 0 success, 2 config, 3 missing resource, 4 validation,
5 provider, 6 parse.
"""

from __future__ import annotations

import argparse
import logging
import sys
import tempfile
from pathlib import Path

from .canonical import file_digest, write_json_atomic
from .config import RunConfig, load_config
from .debate import save_transcript, load_transcript
from .errors import (
    ConfigError,
    ParseError,
    PipelineError,
    ProviderError,
    ResourceError,
    TimeLockError,
    ValidationError,
)
from .evaluation import (
    CONDITION_LABELS,
    STAGE_LABELS,
    ConditionSettings,
    IhqScore,
    aggregate,
    anonymize,
    judge,
    load_output,
    load_scores,
    load_sealed_key,
    make_condition,
    parse_ihq,
    render_report,
    run_condition,
    save_output,
    save_report,
    save_scores,
    stagewise_extract,
    unblind,
)
from .persona import induce_persona
from .scholarly import build_work_query, fetch_works
from .snapshot import (
    CaseSpec,
    Provenance,
    build_pool,
    excerpt_for_induction,
    load_cases,
    load_pool,
    merge_pools,
    save_pool,
    validate_time_lock,
)

logger = logging.getLogger(__name__)

EXIT_CODES = (
    (ConfigError, 2),
    (ResourceError, 3),
    (ValidationError, 4),
    (ProviderError, 5),
    (ParseError, 6),
)


def exit_code_for(exc: PipelineError) -> int:
    for cls, code in EXIT_CODES:
        if isinstance(exc, cls):
            return code
    return 1


def _load_case(config: RunConfig, case_id: int) -> CaseSpec:
    case_file = Path(config.paths.case_file)
    if not case_file.exists():
        raise ResourceError(f"case file not found: {case_file}")
    for case in load_cases(case_file):
        if case.case_id == case_id:
            return case
    raise ResourceError(f"case {case_id} not found in {case_file}")


def _pool_path(config: RunConfig, case_id: int, role: str) -> Path:
    return Path(config.paths.snapshot_dir) / f"case{case_id:03d}_{role}.json"


def _load_pool_file(config: RunConfig, case_id: int, role: str):
    path = _pool_path(config, case_id, role)
    if not path.exists():
        raise ResourceError(f"{role} pool for case {case_id} not found at {path}")
    return load_pool(path)


def _settings(config: RunConfig) -> ConditionSettings:
    return ConditionSettings(
        model_id=config.provider.llm_model_id,
        excerpt_chars=config.limits.excerpt_chars,
        policy=config.debate,
        seed=config.seed,
        eop_single_persona=config.evaluation.eop_single_persona,
        experimental_temperature=config.experimental_temperature,
    )


def cmd_snapshot(args, config: RunConfig) -> int:
    case = _load_case(config, args.case)
    role = args.role
    if role == "MERGED":
        pool_a = _load_pool_file(config, case.case_id, "A")
        pool_b = _load_pool_file(config, case.case_id, "B")
        pool = merge_pools(pool_a, pool_b)
    else:
        query = build_work_query(
            case.role_queries[role], case.cutoff_year, config.limits.max_works
        )
        transport = config.make_scholarly_transport()
        works = fetch_works(query, transport=transport, page_size=config.limits.page_size)
        provenance = Provenance(
            keywords=query.keywords,
            cutoff_year=case.cutoff_year,
            retrieved_at=transport.last_retrieved_at or "",
            base_url=config.provider.scholarly_base_url,
        )
        pool = build_pool(works, role, provenance)
    report = validate_time_lock(pool, case)
    if not report.ok:
        for violation in report.violations:
            print(
                f"violation: {violation['evidence_id']} ({violation['work_id']}): "
                f"{violation['reason']}",
                file=sys.stderr,
            )
        raise TimeLockError(
            f"pool {role} for case {case.case_id} fails the time lock",
            violations=[v["reason"] for v in report.violations],
        )
    path = save_pool(pool, _pool_path(config, case.case_id, role))
    print(f"wrote {path}")
    print(f"items {len(pool.items)}")
    print(f"digest {pool.digest}")
    return 0


def cmd_persona(args, config: RunConfig) -> int:
    case = _load_case(config, args.case)
    role = args.role
    pool = _load_pool_file(config, case.case_id, role)
    excerpt = excerpt_for_induction(pool, config.limits.excerpt_chars)
    gateway = config.make_gateway()
    templates = config.make_templates()
    profile = induce_persona(
        excerpt,
        case.persona_hints[role],
        gateway=gateway,
        templates=templates,
        model_id=config.provider.llm_model_id,
        stage_label=f"induce-{role}",
        experimental_temperature=config.experimental_temperature,
    )
    out = Path(config.paths.output_dir) / f"case{case.case_id:03d}_persona_{role}.json"
    doc = {
        "schema": "persona_v1",
        "case_id": case.case_id,
        "role": role,
        "digest": profile.digest(),
        "profile": profile.to_dict(),
        "template_version": templates.version,
    }
    write_json_atomic(out, doc)
    print(f"wrote {out}")
    print(f"persona {profile.persona_name}")
    print(f"digest {profile.digest()}")
    return 0


def _pools_for_condition(config: RunConfig, case: CaseSpec, label: str) -> dict:
    mode = {"RAW_LLM": "none", "EO": "merged", "EOP": "merged", "DS": "split", "MPDS": "split"}[
        label
    ]
    if mode == "none":
        return {}
    if mode == "merged":
        return {"MERGED": _load_pool_file(config, case.case_id, "MERGED")}
    return {
        "A": _load_pool_file(config, case.case_id, "A"),
        "B": _load_pool_file(config, case.case_id, "B"),
    }


def _run_one(config: RunConfig, case: CaseSpec, label: str, output_dir: Path) -> list[Path]:
    condition = make_condition(label)
    pools = _pools_for_condition(config, case, label)
    gateway = config.make_gateway()
    templates = config.make_templates()
    output = run_condition(
        case,
        condition,
        pools,
        gateway=gateway,
        templates=templates,
        settings=_settings(config),
    )
    written = [
        save_output(output, output_dir / f"case{case.case_id:03d}_{label}_output.json")
    ]
    if output.transcript is not None:
        written.append(
            save_transcript(
                output.transcript,
                output_dir / f"case{case.case_id:03d}_{label}_transcript.json",
            )
        )
    return written


def cmd_run(args, config: RunConfig) -> int:
    case = _load_case(config, args.case)
    label = args.condition
    written = _run_one(config, case, label, Path(config.paths.output_dir))
    for path in written:
        print(f"wrote {path}")
        print(f"digest {file_digest(path)}")
    return 0


def _parse_cases(raw: str) -> list[int]:
    try:
        return [int(part) for part in raw.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad case list {raw!r}: {exc}") from exc


def _parse_conditions(raw: str) -> list[str]:
    if raw == "all":
        return list(CONDITION_LABELS)
    labels = [part.strip() for part in raw.split(",") if part.strip()]
    unknown = [label for label in labels if label not in CONDITION_LABELS]
    if unknown:
        raise ConfigError(f"unknown condition labels: {unknown}")
    return labels


def _judge_batch(config: RunConfig, items, sealed_key, case_lookup):
    """Judge every blind item and parse its score."""
    gateway = config.make_gateway()
    templates = config.make_templates()
    entries = []
    for item in items:
        problem = None
        if config.evaluation.judge_include_problem:
            case_id, _ = unblind(sealed_key, item.blind_id)
            problem = case_lookup[case_id].problem_statement
        raw = judge(
            item,
            gateway=gateway,
            templates=templates,
            model_id=config.provider.llm_model_id,
            problem_statement=problem,
            experimental_temperature=config.experimental_temperature,
        )
        score = parse_ihq(raw, allow_sum_override=config.evaluation.allow_sum_override)
        entries.append((item, raw, score))
    return entries, templates, gateway


def _score_table(entries, sealed_key) -> dict:
    table = {}
    for item, _, score in entries:
        case_id, label = unblind(sealed_key, item.blind_id)
        table[(case_id, label)] = score
    return table


def cmd_evaluate(args, config: RunConfig) -> int:
    case_ids = _parse_cases(args.cases)
    labels = _parse_conditions(args.conditions)
    output_dir = Path(config.paths.output_dir)
    cases = {case_id: _load_case(config, case_id) for case_id in case_ids}

    outputs = []
    missing = []
    for case_id in case_ids:
        for label in labels:
            path = output_dir / f"case{case_id:03d}_{label}_output.json"
            if not path.exists():
                missing.append(f"case {case_id} / {label} ({path})")
                continue
            record = load_output(path)
            outputs.append((case_id, label, record.final_text))
    if missing and not args.allow_gaps:
        raise ResourceError(
            "missing outputs for cells (re-run or pass --allow-gaps):\n  "
            + "\n  ".join(missing)
        )
    if not outputs:
        raise ResourceError("no outputs found to evaluate")

    items, sealed_key = anonymize(outputs, config.seed)
    entries, templates, _ = _judge_batch(config, items, sealed_key, cases)
    metadata = {
        "judge_model_id": config.provider.llm_model_id,
        "rubric_version": templates.version,
        "template_digest": templates.digest(),
        "seed": config.seed,
        "provider_mode": config.provider.mode,
    }
    scores_path, key_path = save_scores(
        entries, sealed_key, output_dir / "scores.json", metadata
    )
    print(f"wrote {scores_path}")
    print(f"wrote {key_path}")
    report = aggregate(
        _score_table(entries, sealed_key), labels=labels, case_ids=case_ids, metadata=metadata
    )

    stage_report = None
    if args.stagewise:
        stage_outputs = []
        for case_id in case_ids:
            path = output_dir / f"case{case_id:03d}_MPDS_transcript.json"
            if not path.exists():
                if args.allow_gaps:
                    continue
                raise ResourceError(f"MPDS transcript for case {case_id} not found at {path}")
            transcript = load_transcript(path)
            for stage, text in stagewise_extract(transcript):
                stage_outputs.append((case_id, stage, text))
        if stage_outputs:
            # separate blind-id stream from the condition batch
            stage_items, stage_key = anonymize(stage_outputs, config.seed + 1)
            stage_entries, _, _ = _judge_batch(config, stage_items, stage_key, cases)
            stage_scores_path, stage_key_path = save_scores(
                stage_entries, stage_key, output_dir / "scores_stagewise.json", metadata
            )
            print(f"wrote {stage_scores_path}")
            print(f"wrote {stage_key_path}")
            stage_report = aggregate(
                _score_table(stage_entries, stage_key),
                labels=STAGE_LABELS,
                case_ids=sorted({case_id for case_id, _, _ in stage_outputs}),
                metadata=metadata,
            )

    report_path = save_report(output_dir / "report.json", report, stage_report)
    print(f"wrote {report_path}")
    print()
    print(render_report(report, include_reference=args.reference))
    if stage_report is not None:
        print("Stage-wise re-scoring:")
        print(render_report(stage_report, include_reference=False))
    return 0


def _table_from_scores_file(path: Path) -> tuple[dict, dict]:
    if not path.exists():
        raise ResourceError(f"scores file not found: {path}")
    entries, metadata = load_scores(path)
    key_path = path.with_suffix(".key.json")
    if not key_path.exists():
        raise ResourceError(f"sealed key file not found: {key_path}")
    sealed_key = load_sealed_key(key_path)
    table = {}
    for entry in entries:
        case_id, label = unblind(sealed_key, entry["blind_id"])
        table[(case_id, label)] = IhqScore.from_dict(entry["score"])
    return table, metadata


def cmd_report(args, config: RunConfig) -> int:
    scores_path = Path(args.scores or Path(config.paths.output_dir) / "scores.json")
    table, metadata = _table_from_scores_file(scores_path)
    report = aggregate(table, metadata=metadata)
    stage_report = None
    if args.stagewise_scores:
        stage_table, stage_metadata = _table_from_scores_file(Path(args.stagewise_scores))
        stage_report = aggregate(
            stage_table, labels=STAGE_LABELS, metadata=stage_metadata
        )
    if args.out:
        path = save_report(Path(args.out), report, stage_report)
        print(f"wrote {path}")
        print()
    print(render_report(report, include_reference=args.reference))
    if stage_report is not None:
        print("Stage-wise re-scoring:")
        print(render_report(stage_report, include_reference=False))
    return 0


def cmd_replay_verify(args, config: RunConfig) -> int:
    if config.provider.mode not in ("replay", "scripted"):
        raise ConfigError(
            "replay-verify requires a deterministic provider mode (replay or scripted), "
            f"not {config.provider.mode!r}"
        )
    case = _load_case(config, args.case)
    digests: list[dict[str, str]] = []
    with tempfile.TemporaryDirectory(prefix="replay-verify-") as tmp:
        for attempt in ("first", "second"):
            run_dir = Path(tmp) / attempt
            run_dir.mkdir()
            written = _run_one(config, case, args.condition, run_dir)
            digests.append({path.name: file_digest(path) for path in written})
    first, second = digests
    all_match = first == second
    for name in sorted(first):
        status = "identical" if first[name] == second.get(name) else "DIFFERS"
        print(f"{name}: {status} ({first[name]})")
    if not all_match:
        raise ValidationError(
            f"replay of case {case.case_id} / {args.condition} is not deterministic"
        )
    print("replay verified: identical artifact digests")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="litdebate",
        description="Literature-grounded debate pipeline for materials design problems.",
    )
    parser.add_argument("--config", help="path to a JSON config file")
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="enable debug logging"
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("snapshot", help="build and save a role evidence pool")
    p.add_argument("--case", type=int, required=True)
    p.add_argument("--role", choices=("A", "B", "MERGED"), required=True)
    p.set_defaults(handler=cmd_snapshot)

    p = sub.add_parser("persona", help="induce a persona from a pool excerpt")
    p.add_argument("--case", type=int, required=True)
    p.add_argument("--role", choices=("A", "B"), required=True)
    p.set_defaults(handler=cmd_persona)

    p = sub.add_parser("run", help="run one (case, condition) cell")
    p.add_argument("--case", type=int, required=True)
    p.add_argument("--condition", choices=CONDITION_LABELS, required=True)
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("evaluate", help="judge a case/condition grid blind")
    p.add_argument("--cases", required=True, help="comma-separated case ids")
    p.add_argument("--conditions", default="all", help="comma-separated labels or 'all'")
    p.add_argument("--stagewise", action="store_true", help="also re-score MPDS stages")
    p.add_argument("--allow-gaps", action="store_true", help="tolerate missing cells")
    p.add_argument("--reference", action="store_true", help="show published reference means")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("report", help="re-render aggregates from a scores file")
    p.add_argument("--scores", help="scores file (default: <output_dir>/scores.json)")
    p.add_argument("--stagewise-scores", help="stage-wise scores file")
    p.add_argument("--reference", action="store_true", help="show published reference means")
    p.add_argument("--out", help="also write a machine-readable report file")
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("replay-verify", help="run a cell twice and compare digests")
    p.add_argument("--case", type=int, required=True)
    p.add_argument("--condition", choices=CONDITION_LABELS, required=True)
    p.set_defaults(handler=cmd_replay_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handler = getattr(args, "handler", None)
    if handler is None:
        parser.print_help()
        return 2
    try:
        config = load_config(args.config)
        return handler(args, config)
    except PipelineError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
