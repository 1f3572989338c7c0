import numpy as np
import pytest
from hypothesis import given, strategies as st

from envyloc.fileio import (FormatError, export_lp, export_mps, import_lp, import_mps, read_model,
                            write_model)
from envyloc.formulations import FormulationId, build
from envyloc.instance import Regime, enumerate_optimum, generate_instance
from envyloc.milp import INF, LinearConstraint, Model, Sense, VarKind, make_constraint

from conftest import cyclic_instance


def canon(model: Model):
    """Model content with row terms in id order (MPS stores coefficients column-wise)."""
    return (model.variables, [(tuple(sorted(c.terms, key=lambda t: t[1])), c.sense, c.rhs, c.name)
                              for c in model.constraints],
            sorted(model.objective, key=lambda t: t[1]), model.constant, model.metadata)


def toy() -> Model:
    m = Model("toy")
    x = m.add_variable("x", VarKind.CONTINUOUS, 0, 4)
    y = m.add_variable("y", VarKind.BINARY)
    z = m.add_variable("z", VarKind.INTEGER, 1, 3)
    m.add_constraint([(1, x), (2, y)], Sense.LE, 4, tag="cap")
    m.add_constraint([(1, z), (-1, x)], Sense.GE, -1, tag="link")
    m.set_objective([(3, x), (-1, y), (0.5, z)], 2.0)
    return m.seal()


# construction ---------------------------------------------------------------

def test_duplicate_name_rejected():
    m = Model()
    m.add_variable("a")
    with pytest.raises(ValueError):
        m.add_variable("a")


def test_unknown_id_rejected():
    m = Model()
    m.add_variable("a")
    with pytest.raises(KeyError):
        m.add_constraint([(1, 5)], Sense.LE, 1)
    with pytest.raises(KeyError):
        m.set_objective([(1, 3)])


def test_duplicate_term_rejected():
    with pytest.raises(ValueError):
        make_constraint([(1, 0), (2, 0)], Sense.LE, 1)


def test_zero_coefficients_dropped():
    c = make_constraint([(0, 0), (2, 1)], "<=", 1)
    assert c.terms == ((2.0, 1),)


def test_sealed_model_is_frozen():
    m = toy()
    with pytest.raises(RuntimeError):
        m.add_variable("w")
    other = m.copy()
    other.add_variable("w")
    assert m.n_vars == 3 and other.n_vars == 4


def test_constraint_names_follow_tags():
    m = toy()
    assert [c.name for c in m.constraints] == ["cap_0", "link_0"]


def test_binary_bounds_clipped():
    m = Model()
    v = m.add_variable("b", VarKind.BINARY, -3, 7)
    assert (m.variables[v].lower, m.variables[v].upper) == (0, 1)


# evaluation -----------------------------------------------------------------

def test_empty_objective_is_zero():
    m = Model()
    m.add_variable("y_1", VarKind.BINARY)
    m.set_objective([], 0)
    assert m.evaluate([1.0]).objective == 0
    assert m.evaluate([0.0]).objective == 0


def test_constant_objective():
    m = Model()
    m.add_variable("a", VarKind.CONTINUOUS, -INF, INF)
    m.set_objective([], 7.5)
    for v in (-3.0, 0.0, 11.0):
        assert m.evaluate([v]).objective == 7.5


def test_rank_bound_rejects_zero():
    m = Model()
    m.add_variable("z_1", VarKind.INTEGER, 1, 4)
    assert not m.evaluate([0.0]).feasible
    assert m.evaluate([2.0]).feasible


def test_missing_value_rejected():
    m = toy()
    with pytest.raises(KeyError):
        m.evaluate({0: 1.0})
    with pytest.raises(KeyError):
        m.evaluate([1.0, 2.0])


def test_f1_oracle_point_feasible_and_exact():
    inst = generate_instance(3, 7, 2, Regime.RANDOM_PREFS)
    form = build(FormulationId.F1, inst)
    opt = enumerate_optimum(inst)
    ev = form.model.evaluate(form.lift(opt.open))
    assert ev.feasible and ev.max_violation == 0
    assert ev.objective == opt.envy


def test_opening_too_many_sites_is_infeasible():
    inst = generate_instance(3, 6, 2, Regime.RANDOM_PREFS)
    form = build(FormulationId.F1, inst)
    x = form.lift((0, 1))
    x[form.y[2]] = 1.0
    ev = form.model.evaluate(x)
    assert not ev.feasible and ev.max_violation >= 1


def test_all_zero_point_infeasible():
    form = build(FormulationId.F1, generate_instance(1, 5, 2, Regime.RANDOM_PREFS))
    assert not form.model.evaluate(np.zeros(form.model.n_vars)).feasible


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3),
       st.lists(st.floats(-10, 10), min_size=3, max_size=3),
       st.sampled_from([0.0, 0.25, 0.5, 1.0]))
def test_objective_is_affine(x, y, alpha):
    m = toy()
    x, y = np.array(x), np.array(y)
    mix = m.evaluate(alpha * x + (1 - alpha) * y).objective
    expect = alpha * m.evaluate(x).objective + (1 - alpha) * m.evaluate(y).objective
    assert mix == pytest.approx(expect, abs=1e-9)


def test_violation_by_sense():
    x = np.array([2.0])
    assert LinearConstraint(((1.0, 0),), Sense.LE, 1.0).violation(x) == 1.0
    assert LinearConstraint(((1.0, 0),), Sense.GE, 3.0).violation(x) == 1.0
    assert LinearConstraint(((1.0, 0),), Sense.EQ, 2.0).violation(x) == 0.0


# text formats ---------------------------------------------------------------

def test_empty_objective_section():
    m = Model()
    m.add_variable("y_1", VarKind.BINARY)
    text = export_lp(m)
    assert "Minimize\n obj: 0\n" in text
    assert text.endswith("\n")


def test_f1_census_in_lp_file():
    text = export_lp(build(FormulationId.F1, cyclic_instance()).model)
    lines = text.splitlines()
    binaries = lines[lines.index("Binaries") + 1].split()
    generals = lines[lines.index("Generals") + 1].split()
    assert binaries == ["y_1", "y_2", "y_3"]
    assert generals == ["z_1", "z_2", "z_3"]
    declared = next(l for l in lines if l.startswith("\\ vars ")).split()[2:]
    assert [v for v in declared if v.startswith("e_")] == ["e_1_2", "e_1_3", "e_2_3"]
    assert len(declared) == 9


@pytest.mark.parametrize("fid", list(FormulationId))
@pytest.mark.parametrize("fmt", ["lp", "mps"])
def test_round_trip_is_byte_identical(fid, fmt):
    ex, im = (export_lp, import_lp) if fmt == "lp" else (export_mps, import_mps)
    model = build(fid, generate_instance(4, 7, 3, Regime.CLOSER_SELF_SERVICE)).model
    text = ex(model)
    back = im(text)
    assert ex(back) == text
    assert canon(back) == canon(model)
    if fmt == "lp":
        assert [c.terms for c in back.constraints] == [c.terms for c in model.constraints]


def test_cross_format_equivalence():
    model = toy()
    a = import_lp(export_lp(model))
    b = import_mps(export_mps(model))
    assert canon(a) == canon(b) == canon(model)


def test_export_is_deterministic():
    inst = generate_instance(9, 6, 2, Regime.RANDOM_PREFS)
    assert export_lp(build("F4", inst).model) == export_lp(build("F4", inst).model)
    assert export_mps(build("F4", inst).model) == export_mps(build("F4", inst).model)


def test_mps_carries_objective_constant():
    text = export_mps(toy())
    assert any(line.split() == ["RHS", "obj", "-2"] for line in text.splitlines())
    assert import_mps(text).constant == 2.0


def test_long_names_rejected():
    m = Model()
    m.add_variable("v" * 256)
    with pytest.raises(FormatError):
        export_lp(m)
    with pytest.raises(FormatError):
        export_mps(m)


def test_files_by_suffix(tmp_path):
    model = toy()
    for suffix in (".lp", ".mps"):
        path = tmp_path / f"toy{suffix}"
        write_model(model, path)
        assert canon(read_model(path)) == canon(model)
