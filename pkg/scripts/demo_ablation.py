#!/usr/bin/env python3
"""Run the whole ablation offline, end to end, against bundled fixtures.

Builds every snapshot pool, induces both personas per case, runs all
five conditions on all demo cases, then judges the outputs blind with
stage-wise re-scoring.  No network access is needed; retrieval replays
the bundled scholarly fixtures and the language model is scripted.
"""

from __future__ import annotations

import sys
from pathlib import Path

from litdebate.cli import main
from litdebate.evaluation import CONDITION_LABELS

ROOT = Path(__file__).resolve().parents[1]
CONFIG = ROOT / "configs" / "scripted.json"
CASES = (1, 2, 6)


def run(*args: str) -> None:
    argv = ["--config", str(CONFIG), *args]
    code = main(argv)
    if code != 0:
        print(f"step failed (exit {code}): {' '.join(args)}", file=sys.stderr)
        raise SystemExit(code)


def main_demo() -> None:
    for case in CASES:
        for role in ("A", "B", "MERGED"):
            run("snapshot", "--case", str(case), "--role", role)
        for role in ("A", "B"):
            run("persona", "--case", str(case), "--role", role)
        for condition in CONDITION_LABELS:
            run("run", "--case", str(case), "--condition", condition)
    run(
        "evaluate",
        "--cases", ",".join(str(case) for case in CASES),
        "--stagewise",
        "--reference",
    )
    run("replay-verify", "--case", str(CASES[0]), "--condition", "MPDS")


if __name__ == "__main__":
    main_demo()
