"""Drive the full pipeline against the committed golden fixtures.

The committed goldens are the canonical forms of each artifact (volatile
timing/timestamp fields stripped, sorted keys, compact separators), so they
are stable across machines, reruns, and parallelism settings.

Regenerate after an intentional behavior change with:

    python3 tests/golden_utils.py
"""

from __future__ import annotations

import sys
from pathlib import Path

from subalign.cli import main as cli_main
from subalign.manifest import canonical_file_bytes

GOLDEN_DIR = Path(__file__).parent / "golden"
CONFIG = GOLDEN_DIR / "config.json"
DATASET = GOLDEN_DIR / "dataset_12.jsonl"
EXPECTED_DIR = GOLDEN_DIR / "expected"

GOLDEN_ARTIFACTS = ("queries.json", "report.json", "predictions.jsonl", "scores.json")


def run_golden_pipeline(run_dir: Path, parallelism: int = 1, cache_dir: Path | None = None) -> None:
    """retrieve -> report -> classify -> evaluate, all in-process."""
    run_dir = Path(run_dir)
    base = ["--config", str(CONFIG), "--run-dir", str(run_dir)]
    if cache_dir is not None:
        base += ["--cache-dir", str(cache_dir)]
    if parallelism != 1:
        base += ["--parallelism", str(parallelism)]

    assert cli_main(["retrieve", *base]) == 0
    assert cli_main(["report", *base]) == 0
    assert cli_main(["classify", *base, "--report", str(run_dir / "report.json")]) == 0
    assert (
        cli_main(
            [
                "evaluate",
                "--predictions",
                str(run_dir / "predictions.jsonl"),
                "--dataset",
                str(DATASET),
                "--out",
                str(run_dir / "scores.json"),
            ]
        )
        == 0
    )


def canonical_artifacts(run_dir: Path) -> dict:
    return {name: canonical_file_bytes(Path(run_dir) / name) for name in GOLDEN_ARTIFACTS}


def expected_artifacts() -> dict:
    return {name: (EXPECTED_DIR / name).read_bytes() for name in GOLDEN_ARTIFACTS}


def regenerate() -> None:
    import tempfile

    EXPECTED_DIR.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        run_dir = Path(tmp) / "run"
        run_golden_pipeline(run_dir, parallelism=1)
        for name, data in canonical_artifacts(run_dir).items():
            (EXPECTED_DIR / name).write_bytes(data)
            print(f"wrote {EXPECTED_DIR / name} ({len(data)} bytes)")


if __name__ == "__main__":
    sys.exit(regenerate())
