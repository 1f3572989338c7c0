"""Cross-check every formulation against the enumeration oracle on a small grid.

    python scripts/verify_grid.py                      # configs/verify_grid.cfg
    python scripts/verify_grid.py --set grid=6x2 --set seeds=1

Exits 1 and lists each mismatch (instance, formulation, values) on failure.
"""

import argparse
import sys
import time
from pathlib import Path

from envyloc.bench import ExperimentConfig, verify_small

DEFAULT = Path(__file__).resolve().parent.parent / "configs" / "verify_grid.cfg"


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(DEFAULT))
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()
    overrides = {k.strip(): v.strip() for k, v in (kv.split("=", 1) for kv in args.set)}
    cfg = ExperimentConfig.from_file(args.config, overrides)
    start = time.perf_counter()
    report = verify_small(cfg)
    for m in report.mismatches:
        print(f"MISMATCH {m}")
    print(f"{report.runs} runs, {len(report.mismatches)} mismatches, "
          f"{time.perf_counter() - start:.1f} s")
    return 0 if report.ok else 1


if __name__ == "__main__":
    sys.exit(main())
