"""Run every property suite and write one CSV per suite into --out-dir."""
import argparse
from pathlib import Path

from lowrank_lab import io
from lowrank_lab.cli import CHECK_COLUMNS, DEFAULT_TRIALS
from lowrank_lab.suites import SUITES, run_suite


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", type=Path, default=Path("checks"))
    args = ap.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)
    failed = 0
    for name in SUITES:
        rows = run_suite(name, DEFAULT_TRIALS[name], args.seed)
        bad = sum(not r["holds"] for r in rows)
        failed += bad
        print(f"{name:7s} {len(rows) - bad}/{len(rows)} hold")
        io.write_csv(args.out_dir / f"{name}.csv", CHECK_COLUMNS, rows)
    raise SystemExit(3 if failed else 0)


if __name__ == "__main__":
    main()
