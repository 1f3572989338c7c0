"""Experiment grid runner, CSV streaming, aggregation and table rendering."""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from math import comb
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from envyloc.bnb import MipStatus, SolveConfig, branch_and_bound, gap_percent
from envyloc.formulations import FamilyId, FormulationId, build, family
from envyloc.instance import (DEFAULT_ENUMERATION_CAP, Instance, Regime, enumerate_optimum,
                              generate_instance, greedy_interchange)
from envyloc.preprocess import preprocess

TIME_LIMIT_ENV = "ENVYLOC_TIME_LIMIT"


# -----------------------------------------------------------------------------
# variants

@dataclass(frozen=True)
class Variant:
    """A formulation plus extra cut families, in-tree separation and preprocessing flags."""

    formulation: FormulationId
    families: tuple[FamilyId, ...] = ()
    sep: bool = False
    pre: bool = False

    @classmethod
    def parse(cls, text: str) -> "Variant":
        head, *rest = [t for t in text.strip().split("+") if t]
        fams, sep, pre = [], False, False
        for tok in rest:
            tok = tok.strip().lower()
            if tok == "sep":
                sep = True
            elif tok == "pre":
                pre = True
            else:
                fams.append(FamilyId.parse(tok))
        order = list(FamilyId)
        fams = sorted(set(fams), key=order.index)
        return cls(FormulationId.parse(head), tuple(fams), sep, pre)

    @property
    def cuts(self) -> str:
        return "+".join(f.value for f in self.families) or "none"

    @property
    def label(self) -> str:
        parts = [f"({self.formulation.value})"] + [f.value for f in self.families]
        if self.sep:
            parts.append("sep")
        if self.pre:
            parts.append("pre")
        return "+".join(parts)

    def __str__(self) -> str:
        return "+".join([self.formulation.value] + [f.value for f in self.families]
                        + (["sep"] if self.sep else []) + (["pre"] if self.pre else []))


ALL_FORMULATIONS = tuple(Variant(f) for f in FormulationId)


# -----------------------------------------------------------------------------
# config

def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class ExperimentConfig:
    grid: list[tuple[int, int]]
    regimes: list[Regime] = field(default_factory=lambda: list(Regime))
    variants: list[Variant] = field(default_factory=lambda: list(ALL_FORMULATIONS))
    seeds: int = 5
    first_seed: int = 1
    time_limit: float = 3600.0
    csv_path: str | None = None
    report_path: str | None = None
    workers: int = 1
    oracle: bool = False
    warm_start: bool = True
    lp_backend: str = "simplex"
    probe_passes: int = 1

    def __post_init__(self) -> None:
        if not self.grid:
            raise ValueError("experiment grid is empty")
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")
        if not self.regimes or not self.variants:
            raise ValueError("need at least one regime and one variant")
        if self.time_limit <= 0 or self.workers < 1 or self.probe_passes < 1:
            raise ValueError("time_limit, workers and probe_passes must be positive")
        env = os.environ.get(TIME_LIMIT_ENV)
        if env:
            self.time_limit = float(env)

    @property
    def seed_list(self) -> list[int]:
        return list(range(self.first_seed, self.first_seed + self.seeds))

    def tasks(self) -> Iterator[tuple[Variant, Regime, int, int, int]]:
        for M, p in self.grid:
            for regime in self.regimes:
                for seed in self.seed_list:
                    for variant in self.variants:
                        yield variant, regime, M, p, seed

    @classmethod
    def parse(cls, text: str, overrides: dict[str, str] | None = None) -> "ExperimentConfig":
        """``key = value`` lines; ``#`` starts a comment."""
        values: dict[str, str] = {}
        for n, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {n}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
        values.update(overrides or {})
        return cls.from_mapping(values)

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "ExperimentConfig":
        known = {"grid", "regimes", "variants", "formulations", "seeds", "first_seed",
                 "time_limit", "csv", "report", "workers", "oracle", "warm_start",
                 "lp_backend", "probe_passes"}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        kw: dict = {}
        if "grid" not in values:
            raise ValueError("config needs a grid, e.g. 'grid = 10:2, 10:3'")
        kw["grid"] = parse_grid(values["grid"])
        if "regimes" in values:
            kw["regimes"] = [Regime.parse(r) for r in _items(values["regimes"])]
        spec = values.get("variants", values.get("formulations"))
        if spec:
            kw["variants"] = [Variant.parse(v) for v in _items(spec)]
        for key in ("seeds", "first_seed", "workers", "probe_passes"):
            if key in values:
                kw[key] = int(values[key])
        if "time_limit" in values:
            kw["time_limit"] = float(values["time_limit"])
        for key in ("oracle", "warm_start"):
            if key in values:
                kw[key] = _bool(values[key])
        if "csv" in values:
            kw["csv_path"] = values["csv"]
        if "report" in values:
            kw["report_path"] = values["report"]
        if "lp_backend" in values:
            kw["lp_backend"] = values["lp_backend"]
        return cls(**kw)

    @classmethod
    def from_file(cls, path, overrides: dict[str, str] | None = None) -> "ExperimentConfig":
        return cls.parse(Path(path).read_text(), overrides)


def _items(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def parse_grid(text: str) -> list[tuple[int, int]]:
    """``10:2, 10:3`` or cross products like ``6,8x2,3``."""
    if "x" in text:
        ms, ps = text.split("x", 1)
        return [(int(M), int(p)) for M in _items(ms) for p in _items(ps)]
    out = []
    for item in _items(text):
        M, p = item.split(":")
        out.append((int(M), int(p)))
    return out


# -----------------------------------------------------------------------------
# rows

@dataclass
class BenchRow:
    formulation: str
    cuts: str
    sep: int
    pre: int
    regime: str
    M: int
    p: int
    seed: int
    lp_gap_percent: float
    time_s: float
    nodes: int
    status: str
    value: float
    oracle: int | None = None
    t_pre: float | None = None
    pct_v0: float | None = None
    pct_v1: float | None = None

    @property
    def key(self) -> tuple:
        return (self.formulation, self.cuts, self.sep, self.pre, self.regime, self.M, self.p,
                self.seed)

    @property
    def variant(self) -> Variant:
        extra = [] if self.cuts == "none" else self.cuts.split("+")
        extra += ["sep"] * self.sep + ["pre"] * self.pre
        return Variant.parse("+".join([self.formulation] + extra))

    def to_csv(self) -> list[str]:
        return [_fmt(getattr(self, f.name), f.name) for f in fields(self)]

    @classmethod
    def from_csv(cls, rec: dict[str, str]) -> "BenchRow":
        def opt(conv, text):
            return None if text == "" else conv(text)
        return cls(rec["formulation"], rec["cuts"], int(rec["sep"]), int(rec["pre"]), rec["regime"],
                   int(rec["M"]), int(rec["p"]), int(rec["seed"]), float(rec["lp_gap_percent"]),
                   float(rec["time_s"]), int(rec["nodes"]), rec["status"], float(rec["value"]),
                   opt(int, rec["oracle"]), opt(float, rec["t_pre"]), opt(float, rec["pct_v0"]),
                   opt(float, rec["pct_v1"]))


FIELDS = [f.name for f in fields(BenchRow)]
TIME_FIELDS = ("time_s", "t_pre")


def _fmt(v, name: str) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if name in TIME_FIELDS:
            return f"{v:.3f}"
        if v.is_integer():
            return str(int(v))
        return f"{v:.6f}" if name != "value" else repr(v)
    return str(v)


def solve_task(variant: Variant, inst: Instance, time_limit: float, oracle: bool = False,
               warm_start: bool = True, lp_backend: str = "simplex",
               probe_passes: int = 1) -> BenchRow:
    form = build(variant.formulation, inst)
    extra = [family(form, f) for f in variant.families]
    families = list(form.families) + extra
    model = form.model
    t_pre = pct0 = pct1 = None
    if variant.pre:
        model, rep = preprocess(form, extra, probe_passes, lp_backend)
        t_pre, pct0, pct1 = rep.probe_time, rep.pct_zero, rep.pct_one
    start = None
    if warm_start:
        x0 = form.lift(greedy_interchange(inst).open)
        if model.evaluate(x0).feasible:
            start = x0
    config = SolveConfig(time_limit=time_limit, separate_in_tree=variant.sep, lp_backend=lp_backend)
    res = branch_and_bound(model, families, config, start)
    value = form.reported_value(res.value)
    root = form.reported_value(res.root_lp)
    gap = gap_percent(value, root) if math.isfinite(value) else float("nan")
    status = res.status.value
    want_oracle = oracle and comb(inst.M, inst.p) <= DEFAULT_ENUMERATION_CAP
    return BenchRow(variant.formulation.value, variant.cuts, int(variant.sep), int(variant.pre),
                    inst.regime.value, inst.M, inst.p, inst.seed, round(gap, 6), res.wall_time,
                    res.nodes, status, value,
                    enumerate_optimum(inst).envy if want_oracle else None, t_pre, pct0, pct1)


def _run_one(args) -> BenchRow:
    variant, regime, M, p, seed, cfg = args
    inst = generate_instance(seed, M, p, regime)
    return solve_task(variant, inst, cfg.time_limit, cfg.oracle, cfg.warm_start, cfg.lp_backend,
                      cfg.probe_passes)


def read_rows(path) -> list[BenchRow]:
    path = Path(path)
    if not path.exists():
        return []
    text = path.read_text()
    if text and not text.endswith("\n"):
        # a crash mid-append leaves a partial line; drop it
        text = text[: text.rfind("\n") + 1]
        path.write_text(text)
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames and reader.fieldnames != FIELDS:
        raise ValueError(f"{path}: CSV header does not match the bench schema")
    return [BenchRow.from_csv(rec) for rec in reader]


class _Writer:
    """Appends one complete line per row and flushes it to disk."""

    def __init__(self, path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fresh = not self.path.exists() or self.path.stat().st_size == 0
        self.fh = open(self.path, "a", newline="")
        if fresh:
            self._line(FIELDS)

    def _line(self, cells: Sequence[str]) -> None:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerow(cells)
        self.fh.write(buf.getvalue())
        self.fh.flush()
        os.fsync(self.fh.fileno())

    def write(self, row: BenchRow) -> None:
        self._line(row.to_csv())

    def close(self) -> None:
        self.fh.close()


def rows_to_csv(rows: Iterable[BenchRow], drop: Sequence[str] = ()) -> str:
    keep = [i for i, name in enumerate(FIELDS) if name not in drop]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([FIELDS[i] for i in keep])
    for row in rows:
        cells = row.to_csv()
        w.writerow([cells[i] for i in keep])
    return buf.getvalue()


def run_experiment(config: ExperimentConfig, progress=None) -> list[BenchRow]:
    """Solve every task of the config, skipping those already in the CSV.

    Returns the config's rows in task order (previous and new).
    """
    done = {r.key: r for r in read_rows(config.csv_path)} if config.csv_path else {}
    tasks = list(config.tasks())

    def key_of(t) -> tuple:
        v, regime, M, p, seed = t
        return (v.formulation.value, v.cuts, int(v.sep), int(v.pre), regime.value, M, p, seed)

    todo = [t for t in tasks if key_of(t) not in done]
    writer = _Writer(config.csv_path) if config.csv_path else None
    try:
        args = [(*t, config) for t in todo]
        if config.workers > 1 and len(args) > 1:
            with ProcessPoolExecutor(config.workers) as pool:
                results = pool.map(_run_one, args)
                for row in results:
                    done[row.key] = row
                    if writer:
                        writer.write(row)
                    if progress:
                        progress(row)
        else:
            for a in args:
                row = _run_one(a)
                done[row.key] = row
                if writer:
                    writer.write(row)
                if progress:
                    progress(row)
    finally:
        if writer:
            writer.close()
    return [done[key_of(t)] for t in tasks]


# -----------------------------------------------------------------------------
# aggregation

@dataclass
class Cell:
    variant: str
    regime: str
    M: int
    p: int
    count: int
    timeouts: int
    lp_mean: float
    t_mean: float
    t_std: float
    n_mean: float
    t_pre: float | None = None
    pct_v0: float | None = None
    pct_v1: float | None = None

    @property
    def key(self) -> tuple:
        return (self.variant, self.regime, self.M, self.p)


CELL_FIELDS = [f.name for f in fields(Cell)]


def aggregate(rows: Sequence[BenchRow]) -> list[Cell]:
    """Per (variant, regime, M, p): mean LP gap and time, population std of time, mean nodes."""
    groups: dict[tuple, list[BenchRow]] = {}
    for r in rows:
        if not isinstance(r, BenchRow):
            raise TypeError(f"aggregate expects BenchRow records, got {type(r).__name__}")
        groups.setdefault((r.variant.label, r.regime, r.M, r.p), []).append(r)
    cells = []
    for (label, regime, M, p), grp in groups.items():
        t = np.array([r.time_s for r in grp])
        pre = [r for r in grp if r.t_pre is not None]
        cells.append(Cell(
            label, regime, M, p, len(grp), sum(r.status != MipStatus.OPTIMAL.value for r in grp),
            float(np.mean([r.lp_gap_percent for r in grp])), float(t.mean()), float(t.std()),
            float(np.mean([r.nodes for r in grp])),
            float(np.mean([r.t_pre for r in pre])) if pre else None,
            float(np.mean([r.pct_v0 for r in pre])) if pre else None,
            float(np.mean([r.pct_v1 for r in pre])) if pre else None))
    return cells


def cells_to_csv(cells: Iterable[Cell]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CELL_FIELDS)
    for c in cells:
        w.writerow(["" if getattr(c, f) is None else
                    (repr(getattr(c, f)) if isinstance(getattr(c, f), float) else getattr(c, f))
                    for f in CELL_FIELDS])
    return buf.getvalue()


def cells_from_csv(text: str) -> list[Cell]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != CELL_FIELDS:
        raise ValueError("aggregate CSV header does not match the cell schema")
    out = []
    for rec in reader:
        def f(name):
            return None if rec[name] == "" else float(rec[name])
        out.append(Cell(rec["variant"], rec["regime"], int(rec["M"]), int(rec["p"]),
                        int(rec["count"]), int(rec["timeouts"]), f("lp_mean"), f("t_mean"),
                        f("t_std"), f("n_mean"), f("t_pre"), f("pct_v0"), f("pct_v1")))
    return out


def limit_label(limit: float) -> str:
    if limit % 3600 == 0:
        return f">{int(limit // 3600)}H"
    return f">{limit:g}s"


def render_markdown(cells: Sequence[Cell], time_limit: float = 3600.0) -> str:
    """One table per regime: M blocks as column groups, p blocks as row groups.

    LP is the mean root gap in percent of the optimum; %v0/%v1 are relative
    to the probed variables.
    """
    out = []
    regimes = list(dict.fromkeys(c.regime for c in cells))
    for regime in regimes:
        rc = [c for c in cells if c.regime == regime]
        Ms = sorted({c.M for c in rc})
        ps_of = {M: sorted({c.p for c in rc if c.M == M}) for M in Ms}
        variants = list(dict.fromkeys(c.variant for c in rc))
        with_pre = any(c.t_pre is not None for c in rc)
        sub = ["p", "LP", "t̄", "σ_t", "n"] + (["t̄_P", "%v0", "%v1"] if with_pre else [])
        index = {c.key: c for c in rc}
        out.append(f"### {regime}\n")
        header = [""] + [f"M={M} {s}" if s == "p" else s for M in Ms for s in sub]
        out.append("| " + " | ".join(header) + " |")
        out.append("|" + "---|" * len(header))
        blocks = max(len(v) for v in ps_of.values())
        for b in range(blocks):
            for vi, variant in enumerate(variants):
                line = [variant]
                for M in Ms:
                    p = ps_of[M][b] if b < len(ps_of[M]) else None
                    cell = index.get((variant, regime, M, p)) if p is not None else None
                    line.append(str(p) if p is not None and vi == 0 else "")
                    line += _cell_text(cell, with_pre, time_limit)
                out.append("| " + " | ".join(line) + " |")
        out.append("")
    if cells:
        legend = "LP: root gap in % of the optimum. t̄, σ_t: mean and population std of solve seconds. n: mean nodes."
        if any(c.t_pre is not None for c in cells):
            legend += " t̄_P: probing seconds. %v0, %v1: % of probed variables fixed to 0 and 1."
        out.append(legend + "\n")
    return "\n".join(out)


def _cell_text(cell: Cell | None, with_pre: bool, limit: float) -> list[str]:
    width = 4 + (3 if with_pre else 0)
    if cell is None:
        return [""] * width
    if cell.timeouts:
        vals = [f"{cell.lp_mean:.1f}", limit_label(limit), "-", "-"]
    else:
        vals = [f"{cell.lp_mean:.1f}", f"{cell.t_mean:.1f}", f"{cell.t_std:.1f}", f"{cell.n_mean:.1f}"]
    if with_pre:
        if cell.t_pre is None:
            vals += ["", "", ""]
        else:
            vals += [f"{cell.t_pre:.1f}", f"{cell.pct_v0:.1f}", f"{cell.pct_v1:.1f}"]
    return vals


# -----------------------------------------------------------------------------
# trend check and oracle verification

def gap_trend(cells: Sequence[Cell], over: Sequence[str] = ("F1", "F3", "F5.1", "F5.2"),
              target: str = "F2") -> list[tuple[str, int, int, str, bool]]:
    """Per cell: whether the target's mean gap is at least each other formulation's."""
    index = {c.key: c for c in cells}
    out = []
    for c in cells:
        if c.variant != f"({target})":
            continue
        for other in over:
            o = index.get((f"({other})", c.regime, c.M, c.p))
            if o is not None:
                out.append((c.regime, c.M, c.p, other, c.lp_mean >= o.lp_mean - 1e-9))
    return out


@dataclass
class Mismatch:
    instance: str
    formulation: str
    value: float
    expected: int

    def __str__(self) -> str:
        return f"{self.instance}: {self.formulation} gave {self.value}, oracle {self.expected}"


@dataclass
class VerifyReport:
    runs: int
    mismatches: list[Mismatch]
    rows: list[BenchRow]

    @property
    def ok(self) -> bool:
        return not self.mismatches


def verify_small(config: ExperimentConfig, progress=None) -> VerifyReport:
    """Every run must hit the enumeration optimum, hence also agree across formulations."""
    for M, p in config.grid:
        if comb(M, p) > DEFAULT_ENUMERATION_CAP:
            raise ValueError(f"M={M}, p={p} is beyond the enumeration cap")
    cfg = ExperimentConfig(**{**config.__dict__, "oracle": True, "csv_path": None})
    rows = run_experiment(cfg, progress)
    bad = []
    for r in rows:
        if r.status != MipStatus.OPTIMAL.value or r.value != r.oracle:
            bad.append(Mismatch(f"{r.regime} M={r.M} p={r.p} seed={r.seed}",
                                str(r.variant), r.value, r.oracle))
    return VerifyReport(len(rows), bad, rows)
