"""Run one or more bench configs and write their CSV rows and markdown tables.

    python scripts/run_tables.py configs/formulations.cfg configs/preprocess.cfg
    python scripts/run_tables.py configs/cuts.cfg --set seeds=1 --set time_limit=60

Rows already present in a config's CSV are skipped, so an interrupted run
picks up where it stopped.
"""

import argparse
import sys
import time
from pathlib import Path

from envyloc.bench import ExperimentConfig, aggregate, cells_to_csv, gap_trend, render_markdown, run_experiment


def run(path: str, overrides: dict[str, str], quiet: bool) -> None:
    cfg = ExperimentConfig.from_file(path, overrides)
    total = sum(1 for _ in cfg.tasks())
    done = [0]
    start = time.perf_counter()

    def progress(row):
        done[0] += 1
        if not quiet:
            print(f"[{done[0]}/{total} {time.perf_counter() - start:7.1f}s] {row.variant} "
                  f"{row.regime} M={row.M} p={row.p} seed={row.seed}: {row.status} "
                  f"value={row.value:g} t={row.time_s:.2f}s n={row.nodes}", flush=True)

    rows = run_experiment(cfg, progress)
    cells = aggregate(rows)
    text = render_markdown(cells, cfg.time_limit)
    trend = gap_trend(cells)
    if trend:
        ok = sum(t[-1] for t in trend)
        text += f"\nLP gap trend (F2 >= others): {'pass' if ok == len(trend) else 'warn'} ({ok}/{len(trend)})\n"
    report = Path(cfg.report_path or Path(path).with_suffix(".md").name)
    report.parent.mkdir(parents=True, exist_ok=True)
    report.write_text(text)
    report.with_suffix(".cells.csv").write_text(cells_to_csv(cells))
    print(f"{path}: {len(rows)} rows, tables in {report}")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("configs", nargs="+")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--quiet", action="store_true")
    args = ap.parse_args()
    overrides = dict(kv.split("=", 1) for kv in args.set)
    for path in args.configs:
        run(path, {k.strip(): v.strip() for k, v in overrides.items()}, args.quiet)
    return 0


if __name__ == "__main__":
    sys.exit(main())
