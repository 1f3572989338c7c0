import numpy as np
import pytest

from envyloc.bnb import SolveConfig, branch_and_bound
from envyloc.formulations import (CutMode, FamilyId, FormulationId, all_families, build, family)
from envyloc.instance import Regime, enumerate_optimum, generate_instance, solution_for
from envyloc.milp import VarKind

from conftest import cyclic_instance, grid_instances

SMALL = grid_instances(Ms=(5, 7), ps=(2, 3), seeds=(1,)) + [
    generate_instance(2, 6, 6, Regime.RANDOM_PREFS),
    generate_instance(3, 6, 5, Regime.CLOSER_NO_SELF_SERVICE),
    generate_instance(4, 5, 1, Regime.CLOSER_SELF_SERVICE),
]


def ids(inst):
    return f"{inst.regime.value}-M{inst.M}-p{inst.p}-s{inst.seed}"


@pytest.mark.parametrize("inst", SMALL, ids=ids)
@pytest.mark.parametrize("fid", list(FormulationId))
def test_oracle_point_is_exactly_feasible(fid, inst):
    form = build(fid, inst)
    opt = enumerate_optimum(inst)
    x = form.lift(opt.open)
    ev = form.model.evaluate(x)
    assert ev.feasible and ev.max_violation == 0
    assert form.model.is_integral(x)
    assert form.reported_value(ev.objective) == opt.envy
    assert form.decode_open(x) == opt.open
    assert tuple(form.decode_ranks(x)) == opt.z


@pytest.mark.parametrize("inst", SMALL, ids=ids)
def test_every_family_member_holds_at_integral_points(inst):
    rng = np.random.default_rng(inst.seed)
    opens = [enumerate_optimum(inst).open] + [
        tuple(sorted(rng.choice(inst.M, inst.p, replace=False))) for _ in range(3)]
    for fid in (FormulationId.F2, FormulationId.F5_1, FormulationId.F5_2, FormulationId.F1R):
        form = build(fid, inst)
        for sites in opens:
            x = form.lift(sites)
            for fam in all_families(form):
                assert max((c.violation(x) for c in fam.members()), default=0.0) == 0.0, fam.id


def test_f1_census():
    for M, p in ((3, 1), (6, 2), (9, 4)):
        model = build("F1", generate_instance(1, M, p, Regime.RANDOM_PREFS)).model
        assert model.n_vars == M * (M - 1) // 2 + 2 * M
        assert model.count(VarKind.BINARY) == M and model.count(VarKind.INTEGER) == M


def test_f4_census():
    for M, p in ((5, 2), (7, 3)):
        model = build("F4", generate_instance(1, M, p, Regime.RANDOM_PREFS)).model
        assert model.n_vars == M * (M - p) + M * (M - 1) + (M - 1) + M
        assert model.constant == M * (1 - M)


def test_f2_layout_one_indicator_per_customer_when_p_is_m_minus_1():
    form = build("F2", generate_instance(1, 6, 5, Regime.RANDOM_PREFS))
    assert {k for _, k in form.zk} == {2}
    assert {k for _, k in form.x} == {2}


def test_p101_count():
    for M, p in ((6, 2), (8, 3)):
        form = build("F2", generate_instance(1, M, p, Regime.RANDOM_PREFS))
        assert len(family(form, "p101").constraints) == M * (M - p - 1)


def test_family_modes():
    form = build("F2", generate_instance(1, 6, 2, Regime.RANDOM_PREFS))
    modes = {fid: family(form, fid).mode for fid in ("p101", "p102", "p103", "p104", "p105")}
    assert modes.pop("p104") is CutMode.SEPARATED
    assert set(modes.values()) == {CutMode.STATIC}


def test_p104_full_subset_is_column_sum_direction():
    inst = generate_instance(2, 6, 2, Regime.RANDOM_PREFS)
    form = build("F2", inst)
    M = inst.M
    full = [c for c in family(form, "p104").members() if len(c.terms) == 2 * M]
    for cut in full:
        plus = {v for c, v in cut.terms if c > 0}
        minus = {v for c, v in cut.terms if c < 0}
        k = int(form.model.variables[next(iter(minus))].name.split("_")[2])
        assert plus == {form.x[i, k] for i in range(M)}
        assert minus == {form.zk[i, k] for i in range(M)}


def test_indicator_families_need_indicator_layout():
    form = build("F1", generate_instance(1, 6, 2, Regime.RANDOM_PREFS))
    for fid in ("p101", "p102", "p103", "p104", "p105"):
        with pytest.raises(ValueError):
            family(form, fid)


def test_exponential_families_not_materialized_for_large_m():
    form = build("F5.1", generate_instance(1, 13, 2, Regime.RANDOM_PREFS))
    with pytest.raises(ValueError):
        next(family(form, FamilyId.SORTED_SUM).members())


@pytest.mark.parametrize("fid", list(FormulationId))
def test_cyclic_optimum(fid):
    form = build(fid, cyclic_instance())
    res = branch_and_bound(form.model, form.families, SolveConfig(time_limit=60))
    assert form.reported_value(res.value) == 4


@pytest.mark.parametrize("fid", list(FormulationId))
def test_all_open_optimum_is_zero(fid):
    form = build(fid, generate_instance(1, 5, 5, Regime.CLOSER_SELF_SERVICE))
    res = branch_and_bound(form.model, form.families, SolveConfig(time_limit=60))
    assert form.reported_value(res.value) == 0


def test_f3_post_solve_envelope():
    inst = generate_instance(3, 7, 2, Regime.CLOSER_SELF_SERVICE)
    form = build("F3", inst)
    res = branch_and_bound(form.model, form.families)
    x = res.incumbent
    z = form.decode_ranks(x)
    for (i, q), v in form.d.items():
        assert x[v] == pytest.approx(max(0.0, z[i] - x[form.t[q - 1]]), abs=1e-6)


def test_f3r_halves_f3_and_orders_t():
    inst = generate_instance(2, 7, 3, Regime.RANDOM_PREFS)
    f3, f3r = build("F3", inst), build("F3R", inst)
    r3 = branch_and_bound(f3.model, f3.families)
    rr = branch_and_bound(f3r.model, f3r.families)
    assert 2 * rr.value == r3.value
    t = [rr.incumbent[v] for v in f3r.t]
    assert all(a >= b - 1e-6 for a, b in zip(t, t[1:]))


def test_f5_2_theta_is_top_sum_at_optimum():
    inst = generate_instance(4, 7, 2, Regime.CLOSER_NO_SELF_SERVICE)
    form = build("F5.2", inst)
    res = branch_and_bound(form.model, form.families)
    desc = np.sort(form.decode_ranks(res.incumbent))[::-1]
    M = inst.M
    theta = [res.incumbent[form.theta[k]] for k in range(2, M + 1)]
    assert theta == pytest.approx([desc[: M - k + 1].sum() for k in range(2, M + 1)], abs=1e-6)
    assert all(a >= b for a, b in zip(theta, theta[1:]))


def test_f5_2_all_open_objective():
    inst = generate_instance(1, 5, 5, Regime.RANDOM_PREFS)
    form = build("F5.2", inst)
    x = form.lift(range(5))
    assert [x[form.theta[k]] for k in range(2, 6)] == [4, 3, 2, 1]
    assert form.model.objective_value(x) == 0


def test_f2_decode_matches_assigned_ranks():
    inst = generate_instance(5, 8, 3, Regime.RANDOM_PREFS)
    form = build("F2", inst)
    res = branch_and_bound(form.model, form.families)
    sol = solution_for(inst, form.decode_open(res.incumbent))
    assert tuple(form.decode_ranks(res.incumbent)) == sol.z


def test_metadata():
    inst = generate_instance(1, 6, 2, Regime.RANDOM_PREFS)
    for fid in FormulationId:
        meta = build(fid, inst).model.metadata
        assert meta["formulation"] == fid.value
        assert meta["instance"] == inst.fingerprint()
