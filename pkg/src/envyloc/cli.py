"""Command line: ``envy-loc gen|build|solve|bench|verify|report``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from envyloc.bench import (TIME_LIMIT_ENV, ExperimentConfig, aggregate, cells_to_csv, gap_trend,
                           read_rows, render_markdown, verify_small)
from envyloc.bnb import SolveConfig, branch_and_bound
from envyloc.fileio import export_lp, export_mps, read_model, write_model
from envyloc.formulations import CutMode, FormulationId, build, family
from envyloc.instance import Regime, dumps, generate_instance, greedy_interchange, read_instance
from envyloc.preprocess import preprocess


def _families(text: str | None) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()] if text else []


def _time_limit(arg: float | None) -> float:
    env = os.environ.get(TIME_LIMIT_ENV)
    if env:
        return float(env)
    return 3600.0 if arg is None else arg


def cmd_gen(args) -> int:
    inst = generate_instance(args.seed, args.M, args.p, Regime.parse(args.regime))
    text = dumps(inst)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_build(args) -> int:
    form = build(args.formulation, read_instance(args.instance))
    extra = [family(form, f) for f in _families(args.families)]
    model = form.model
    static = [c for fam in extra if fam.mode is CutMode.STATIC for c in fam.constraints]
    if static:
        model = model.copy()
        for c in static:
            model.add_constraint(c)
        model.seal()
    if args.out:
        write_model(model, args.out)
    else:
        sys.stdout.write(export_mps(model) if args.mps else export_lp(model))
    return 0


def cmd_solve(args) -> int:
    form = None
    if args.instance:
        fid = args.formulation
        if fid is None and args.model:
            fid = read_model(args.model).metadata.get("formulation")
        if fid is None:
            raise SystemExit("solve: --formulation is required with --instance")
        form = build(fid, read_instance(args.instance))
    if args.model:
        model = read_model(args.model)
        needs_form = args.families or args.preprocess or model.metadata.get("formulation") in (
            FormulationId.F1R.value, FormulationId.F5_1.value, FormulationId.F5_2.value)
        if form is None and needs_form:
            raise SystemExit("solve: this model needs --instance to rebuild its cut families")
        if form is not None and [v.name for v in model.variables] != [v.name for v in form.model.variables]:
            raise SystemExit("solve: model file does not match the rebuilt formulation")
    elif form is not None:
        model = form.model
    else:
        raise SystemExit("solve: give --model or --instance with --formulation")

    families = list(form.families) if form else []
    extra = [family(form, f) for f in _families(args.families)] if form else []
    families += extra
    report = None
    if args.preprocess:
        model, report = preprocess(form, extra, args.probe_passes, args.lp_backend)
    warm = None
    if form is not None:
        x0 = form.lift(greedy_interchange(form.instance).open)
        if model.evaluate(x0).feasible:
            warm = x0
    config = SolveConfig(time_limit=_time_limit(args.time_limit), separate_in_tree=args.sep,
                         lp_backend=args.lp_backend)
    res = branch_and_bound(model, families, config, warm)
    out = res.to_json()
    if form is not None:
        out["envy"] = form.reported_value(res.value)
        out["open"] = [j + 1 for j in form.decode_open(res.incumbent)] if res.incumbent is not None else []
    if report is not None:
        out["preprocess"] = report.to_json()
    if args.json:
        print(json.dumps(out, sort_keys=False))
    else:
        for key, val in out.items():
            print(f"{key:>10}: {val}")
    return 0


def _config(args) -> ExperimentConfig:
    overrides = dict(kv.split("=", 1) for kv in args.set or [])
    overrides = {k.strip(): v.strip() for k, v in overrides.items()}
    if args.csv:
        overrides["csv"] = args.csv
    if args.config:
        return ExperimentConfig.from_file(args.config, overrides)
    return ExperimentConfig.from_mapping(overrides)


def _write_report(rows, cfg: ExperimentConfig, out: str | None) -> str:
    cells = aggregate(rows)
    text = render_markdown(cells, cfg.time_limit if cfg else 3600.0)
    trend = gap_trend(cells)
    if trend:
        ok = sum(t[-1] for t in trend)
        text += f"\nLP gap trend (F2 >= others): {'pass' if ok == len(trend) else 'warn'} ({ok}/{len(trend)})\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
        Path(out).with_suffix(".cells.csv").write_text(cells_to_csv(cells))
    return text


def cmd_bench(args) -> int:
    from envyloc.bench import run_experiment
    cfg = _config(args)

    def progress(row):
        if not args.quiet:
            print(",".join(row.to_csv()), flush=True)

    rows = run_experiment(cfg, progress)
    text = _write_report(rows, cfg, cfg.report_path)
    if args.quiet or not cfg.report_path:
        print(text)
    return 0


def cmd_verify(args) -> int:
    cfg = _config(args)
    rep = verify_small(cfg)
    for m in rep.mismatches:
        print(f"MISMATCH {m}", file=sys.stderr)
    print(f"{rep.runs} runs, {len(rep.mismatches)} mismatches")
    return 0 if rep.ok else 1


def cmd_report(args) -> int:
    rows = read_rows(args.csv)
    if not rows:
        raise SystemExit(f"report: no rows in {args.csv}")
    limit = _time_limit(args.time_limit)
    cells = aggregate(rows)
    text = render_markdown(cells, limit)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    if args.cells_csv:
        Path(args.cells_csv).write_text(cells_to_csv(cells))
    return 0


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="envy-loc", description="Minimum-envy location models and benchmarks")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate an instance")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--M", "-M", type=int, required=True)
    g.add_argument("--p", "-p", type=int, required=True)
    g.add_argument("--regime", default=Regime.RANDOM_PREFS.value,
                   help="CloserSelfService, CloserNoSelfService or RandomPrefs")
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen)

    b = sub.add_parser("build", help="export a formulation as LP or MPS text")
    b.add_argument("--formulation", required=True)
    b.add_argument("--instance", required=True)
    b.add_argument("--families", help="static families to add as rows, e.g. p101,p102")
    b.add_argument("--out", help="file.lp or file.mps (stdout when omitted)")
    b.add_argument("--mps", action="store_true", help="MPS on stdout")
    b.set_defaults(func=cmd_build)

    s = sub.add_parser("solve", help="solve a model with branch-and-bound")
    s.add_argument("--model", help="LP or MPS file")
    s.add_argument("--instance")
    s.add_argument("--formulation")
    s.add_argument("--families", help="comma list, e.g. p101,p104")
    s.add_argument("--time-limit", type=float)
    s.add_argument("--json", action="store_true")
    s.add_argument("--preprocess", action="store_true")
    s.add_argument("--probe-passes", type=int, default=1)
    s.add_argument("--sep", action="store_true", help="separate lazy families at every node")
    s.add_argument("--lp-backend", choices=("simplex", "highs"), default="simplex")
    s.set_defaults(func=cmd_solve)

    for name, func, helptext in (("bench", cmd_bench, "run an experiment grid"),
                                 ("verify", cmd_verify, "check every run against enumeration")):
        c = sub.add_parser(name, help=helptext)
        c.add_argument("--config", help="key = value file")
        c.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        c.add_argument("--csv")
        if name == "bench":
            c.add_argument("--quiet", action="store_true")
        c.set_defaults(func=func)

    r = sub.add_parser("report", help="aggregate a bench CSV into tables")
    r.add_argument("--csv", required=True)
    r.add_argument("--out")
    r.add_argument("--cells-csv")
    r.add_argument("--time-limit", type=float)
    r.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"envy-loc: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
