"""Acceptance criteria, one test each.

Every test records a one-line verdict; the lines are printed in the terminal
summary (see ``conftest.py``) and when this file is run as a script.
"""

import itertools
import math
import random
import time

import numpy as np
import pytest

from envyloc.bench import (ExperimentConfig, Variant, aggregate, gap_trend, render_markdown,
                           rows_to_csv, run_experiment)
from envyloc.bnb import branch_and_bound, root_lp_value
from envyloc.formulations import FamilyId, FormulationId, all_families, build, family
from envyloc.instance import Regime, enumerate_optimum, envy_value, sorted_envy_value
from envyloc.lp import LpStatus
from envyloc.preprocess import preprocess
from envyloc.separation import separate_sorted_sum

from conftest import grid_instances

RESULTS: list[str] = []

GRID_MP = [(6, 2), (6, 3), (8, 2), (8, 3), (10, 2), (10, 3)]
SEEDS = (1, 2, 3)


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    RESULTS.append(line)
    print(line)


def grid():
    return grid_instances(Ms=(6, 8, 10), ps=(2, 3), seeds=SEEDS)


def grid_config(csv_path) -> ExperimentConfig:
    return ExperimentConfig(grid=GRID_MP, regimes=list(Regime), seeds=len(SEEDS),
                            first_seed=SEEDS[0], oracle=True, csv_path=str(csv_path))


@pytest.fixture(scope="session")
def grid_run(tmp_path_factory):
    path = tmp_path_factory.mktemp("grid") / "rows.csv"
    start = time.perf_counter()
    rows = run_experiment(grid_config(path))
    return rows, time.perf_counter() - start, path


@pytest.mark.slow
def test_criterion_1_oracle_equivalence(grid_run):
    rows, elapsed, _ = grid_run
    instances = {(r.regime, r.M, r.p, r.seed) for r in rows}
    bad = [r for r in rows if r.status != "Optimal" or r.value != r.oracle
           or not float(r.value).is_integer()]
    ok = len(instances) == 54 and len(rows) == 432 and not bad and elapsed < 600
    record(1, ok, f"{len(rows) - len(bad)}/{len(rows)} runs equal the oracle over "
                  f"{len(instances)} instances in {elapsed:.0f} s")
    assert len(instances) == 54 and len(rows) == 54 * 8
    assert not bad, bad[:5]
    assert elapsed < 600


def test_criterion_2_identity_suite():
    rnd = random.Random(20240601)
    failures = 0
    for _ in range(1000):
        n = rnd.randint(2, 40)
        z = [rnd.randint(1, 40) for _ in range(n)]
        failures += sorted_envy_value(z) != envy_value(z)
    record(2, failures == 0, f"{1000 - failures}/1000 rank vectors agree")
    assert failures == 0


@pytest.mark.slow
def test_criterion_3_weak_duality():
    worst = -math.inf
    checked = 0
    for inst in grid():
        opt = enumerate_optimum(inst).envy
        for fid in FormulationId:
            form = build(fid, inst)
            sol = root_lp_value(form.model, form.families)
            assert sol.status is LpStatus.OPTIMAL
            worst = max(worst, form.reported_value(sol.objective) - opt)
            checked += 1
    ok = checked == 432 and worst <= 1e-6
    record(3, ok, f"{checked} root LPs, max(root LP - optimum) = {worst:.2e}")
    assert ok


def test_criterion_4_cut_validity():
    violated = 0
    members = 0
    for inst in grid():
        opt = enumerate_optimum(inst)
        forms = [build(f, inst) for f in (FormulationId.F2, FormulationId.F5_1,
                                          FormulationId.F5_2, FormulationId.F1R)]
        for form in forms:
            x = form.lift(opt.open)
            for fam in all_families(form):
                for cut in fam.members():
                    members += 1
                    violated += cut.violation(x) != 0.0
    record(4, violated == 0, f"{members} family members at 54 oracle optima, {violated} violated")
    assert violated == 0


@pytest.mark.slow
def test_criterion_5_cut_monotonicity():
    names = (FamilyId.P101, FamilyId.P102, FamilyId.P103, FamilyId.P105)
    worst = math.inf
    runs = 0
    for inst in grid():
        form = build(FormulationId.F2, inst)
        fams = {f: family(form, f) for f in names}
        base = root_lp_value(form.model).objective
        for r in range(1, 5):
            for sub in itertools.combinations(names, r):
                value = root_lp_value(form.model, [fams[f] for f in sub]).objective
                worst = min(worst, value - base)
                runs += 1
    ok = runs == 54 * 15 and worst >= -1e-6
    record(5, ok, f"{runs} subset runs, min(root with cuts - root without) = {worst:.2e}")
    assert ok


def _brute_violated(z, lhs_sum, s, combos, tol):
    return float(z[combos].sum(axis=1).max()) - lhs_sum > tol


def test_criterion_6_separation_exactness():
    rng = np.random.default_rng(6)
    agree = total = 0
    combo_cache = {}
    for inst in grid():
        M, top = inst.M, inst.max_rank
        z_ids = list(range(M))
        for _ in range(100):
            z = rng.uniform(1, top, M)
            x = np.sort(z) + rng.normal(0, 0.25, M)
            point = np.concatenate([z, x])
            for k in range(1, M + 1):
                s = M - k + 1
                combos = combo_cache.setdefault((M, s), np.array(
                    list(itertools.combinations(range(M), s))))
                lhs = [M + i for i in range(k - 1, M)]
                greedy = separate_sorted_sum(point, k, z_ids, lhs, 1e-4) is not None
                brute = _brute_violated(z, float(point[lhs].sum()), s, combos, 1e-4)
                agree += greedy == brute
                total += 1
    record(6, agree == total, f"{agree}/{total} (point, k) verdicts agree over 54 instances")
    assert agree == total


def preprocessing_instances():
    chosen = grid_instances(Ms=(6, 8, 10), ps=(2, 3), seeds=(1,))
    chosen += grid_instances(Ms=(8, 10), ps=(2, 3), seeds=(2,))
    return chosen


@pytest.mark.slow
def test_criterion_7_preprocessing_safety():
    instances = preprocessing_instances()
    mismatches = []
    inconsistent = 0
    for inst in instances:
        for fid in (FormulationId.F2, FormulationId.F5_1):
            form = build(fid, inst)
            before = form.reported_value(branch_and_bound(form.model, form.families).value)
            reduced, rep = preprocess(form)
            after = form.reported_value(branch_and_bound(reduced, form.families).value)
            if before != after:
                mismatches.append((inst.regime.value, inst.M, inst.p, inst.seed, fid.value))
            inconsistent += not (0 <= rep.pct_zero and 0 <= rep.pct_one
                                 and rep.pct_zero + rep.pct_one <= 100)
    ok = len(instances) == 30 and not mismatches and inconsistent == 0
    record(7, ok, f"{2 * len(instances) - len(mismatches)}/{2 * len(instances)} reduced optima "
                  f"unchanged, {inconsistent} inconsistent reports")
    assert len(instances) == 30
    assert not mismatches, mismatches
    assert inconsistent == 0


TABLE_VARIANTS = ["F1", "F2", "F3", "F5.1", "F5.2", "F2+pre", "F5.1+pre"]


@pytest.mark.slow
def test_criterion_8_table_schema(tmp_path):
    cfg = ExperimentConfig(grid=[(10, 2), (15, 2), (20, 2)], regimes=list(Regime), seeds=1,
                           time_limit=10, variants=[Variant.parse(v) for v in TABLE_VARIANTS],
                           lp_backend="highs", csv_path=str(tmp_path / "tables.csv"))
    rows = run_experiment(cfg)
    cells = aggregate(rows)
    text = render_markdown(cells, cfg.time_limit)
    lines = text.splitlines()
    headers = [l for l in lines if l.startswith("| ") and "M=10 p" in l]
    schema = ["LP", "t̄", "σ_t", "n", "t̄_P", "%v0", "%v1"]
    schema_ok = len(headers) == 3 and all(
        h.count(f" {col} ") == 3 for h in headers for col in schema) and all(
        f"M={M} p" in h for h in headers for M in (10, 15, 20))
    labels = {Variant.parse(v).label for v in TABLE_VARIANTS}
    body_ok = all(sum(l.startswith(f"| {lab} |") for l in lines) == 3 for lab in labels)
    pre_ok = all(r.t_pre is not None and 0 <= r.pct_v0 + r.pct_v1 <= 100 for r in rows if r.pre)
    trend = gap_trend(cells)
    holds = sum(t[-1] for t in trend)
    verdict = "pass" if holds == len(trend) else "warn"
    ok = schema_ok and body_ok and pre_ok and len(rows) == 63
    record(8, ok, f"tables for M in {{10, 15, 20}} with columns {', '.join(schema)}; "
                  f"LP gap trend {verdict} ({holds}/{len(trend)} comparisons)")
    print(text)
    assert schema_ok and body_ok and pre_ok
    assert len(rows) == 63


def _rows_without_time(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    keep = [i for i, name in enumerate(header) if name not in ("time_s", "t_pre")]
    return [",".join(line.split(",")[i] for i in keep) for line in lines]


@pytest.mark.slow
def test_criterion_9_determinism(grid_run, tmp_path):
    first, _, path = grid_run
    again = tmp_path / "again.csv"
    second = run_experiment(grid_config(again))
    a, b = _rows_without_time(path), _rows_without_time(again)
    differing = sum(x != y for x, y in zip(a, b)) + abs(len(a) - len(b))
    same = a == b and rows_to_csv(first, ("time_s", "t_pre")) == rows_to_csv(second, ("time_s", "t_pre"))
    record(9, same, f"{len(second)} rows rerun, {differing} CSV lines differ outside the time columns")
    assert same


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
