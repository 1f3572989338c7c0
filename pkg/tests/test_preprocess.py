import itertools

import numpy as np
import pytest

from envyloc.bnb import branch_and_bound
from envyloc.formulations import FormulationId, build, family
from envyloc.instance import Regime, enumerate_optimum, generate_instance, solution_for
from envyloc.lp import NumericError, Relaxation
from envyloc.preprocess import (FixReport, incumbent_for, preprocess, preprocess_f2,
                                preprocess_f5_1, probe_fix)

from conftest import grid_instances

GRID = grid_instances(Ms=(6, 7), ps=(2, 3), seeds=(1,))


def optimum_after(form, model):
    res = branch_and_bound(model, form.families)
    return form.reported_value(res.value)


def changed_bounds(before, after):
    lo0, hi0 = before.bounds()
    lo1, hi1 = after.bounds()
    return lo0, hi0, lo1, hi1


@pytest.mark.parametrize("fid", [FormulationId.F2, FormulationId.F5_1])
@pytest.mark.parametrize("inst", GRID, ids=lambda i: f"{i.regime.value}-M{i.M}-p{i.p}")
def test_reduced_optimum_is_unchanged(fid, inst):
    form = build(fid, inst)
    reduced, report = preprocess(form)
    assert optimum_after(form, reduced) == enumerate_optimum(inst).envy
    assert not report.infeasible_detected
    assert 0 <= report.pct_zero + report.pct_one <= 100


@pytest.mark.parametrize("inst", GRID[:6], ids=lambda i: f"{i.regime.value}-M{i.M}-p{i.p}")
def test_f2_counts_match_fixed_bounds(inst):
    form = build(FormulationId.F2, inst)
    reduced, report = preprocess_f2(form)
    lo0, hi0, lo1, hi1 = changed_bounds(form.model, reduced)
    probed = list(form.zk.values()) + list(form.x.values())
    zeros = {v for v in probed if hi1[v] == 0 and hi0[v] == 1}
    ones = {v for v in probed if lo1[v] == 1 and lo0[v] == 0}
    assert zeros.isdisjoint(ones)
    assert (len(zeros), len(ones)) == (report.fixed_to_zero, report.fixed_to_one)
    assert report.probed == len(probed)
    others = set(range(form.model.n_vars)) - set(probed)
    assert all(lo0[v] == lo1[v] and hi0[v] == hi1[v] for v in others)


@pytest.mark.parametrize("inst", GRID[:6], ids=lambda i: f"{i.regime.value}-M{i.M}-p{i.p}")
def test_f5_1_counts_match_window_shrinkage(inst):
    form = build(FormulationId.F5_1, inst)
    reduced, report = preprocess_f5_1(form)
    lo0, hi0, lo1, hi1 = changed_bounds(form.model, reduced)
    z = list(form.z)
    assert report.fixed_to_zero == int(sum(hi0[z] - hi1[z]))
    assert report.fixed_to_one == int(sum(lo1[z] - lo0[z]))
    assert report.probed == inst.M * (inst.M - inst.p)


def unique_optimum(inst):
    vals = sorted((solution_for(inst, s).envy, s)
                  for s in itertools.combinations(range(inst.M), inst.p))
    return vals[0][1] if vals[0][0] < vals[1][0] else None


def test_fixings_agree_with_unique_optimum():
    checked = 0
    for inst in grid_instances(Ms=(6, 7), ps=(2, 3), seeds=(1, 2, 3)):
        sites = unique_optimum(inst)
        if sites is None:
            continue
        form = build(FormulationId.F2, inst)
        reduced, _ = preprocess_f2(form)
        x = form.lift(sites)
        lo, hi = reduced.bounds()
        assert np.all(x >= lo) and np.all(x <= hi)
        checked += 1
    assert checked >= 5


def test_all_open_report_well_formed():
    inst = generate_instance(1, 5, 5, Regime.RANDOM_PREFS)
    form = build(FormulationId.F2, inst)
    assert incumbent_for(form) == 0
    reduced, report = preprocess_f2(form)
    assert report.pct_zero + report.pct_one <= 100
    assert optimum_after(form, reduced) == 0


def test_with_families_safe():
    inst = generate_instance(2, 7, 2, Regime.CLOSER_SELF_SERVICE)
    form = build(FormulationId.F2, inst)
    fams = [family(form, f) for f in ("p101", "p104")]
    reduced, plain = preprocess_f2(form)
    reduced_cut, report = preprocess_f2(form, fams)
    assert report.fixed_to_zero + report.fixed_to_one >= plain.fixed_to_zero + plain.fixed_to_one
    assert optimum_after(form, reduced_cut) == enumerate_optimum(inst).envy


def test_numeric_failure_skips_instead_of_fixing(monkeypatch):
    inst = generate_instance(3, 6, 2, Regime.RANDOM_PREFS)
    form = build(FormulationId.F2, inst)
    real = Relaxation.solve
    calls = {"n": 0}

    def flaky(self, *args, **kw):
        calls["n"] += 1
        if calls["n"] > 1:
            raise NumericError("forced")
        return real(self, *args, **kw)

    monkeypatch.setattr(Relaxation, "solve", flaky)
    reduced, report = probe_fix(form.model, list(form.zk.values()), incumbent_for(form))
    assert report.skipped > 0
    lo0, hi0 = form.model.bounds()
    lo1, hi1 = reduced.bounds()
    # only probes answered by the LP-optimum pool may have survived
    assert report.fixed_to_zero + report.fixed_to_one == int(np.sum((lo0 != lo1) | (hi0 != hi1)))


def test_more_passes_never_fix_less():
    inst = generate_instance(4, 7, 2, Regime.RANDOM_PREFS)
    form = build(FormulationId.F2, inst)
    _, one = preprocess_f2(form)
    reduced, two = preprocess_f2(form, passes=3)
    assert two.fixed_to_zero + two.fixed_to_one >= one.fixed_to_zero + one.fixed_to_one
    assert optimum_after(form, reduced) == enumerate_optimum(inst).envy


def test_wrong_formulation_rejected():
    form = build(FormulationId.F1, generate_instance(1, 6, 2, Regime.RANDOM_PREFS))
    for fn in (preprocess, preprocess_f2, preprocess_f5_1):
        with pytest.raises(ValueError):
            fn(form)


def test_report_json():
    rep = FixReport(10, 3, 1, 0.5)
    out = rep.to_json()
    assert out["pct_v0_of_probed"] == 30.0 and out["pct_v1_of_probed"] == 10.0
    assert FixReport(0, 0, 0, 0.0).pct_zero == 0.0
