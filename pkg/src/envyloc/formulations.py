"""MILP builders for the minimum-envy location problem and its valid inequalities.

Conventions shared by every builder:

* ``y_j`` (binary) opens site ``j``; ``z_i`` is the rank customer ``i`` gets.
* In the indicator formulations ``z_i_k`` means ``z_i >= k`` for
  ``k = 2..M-p+1``, so ``z_i = 1 + sum_k z_i_k``.
* Variable names are 1-based to match the usual notation; Python-side index
  lists are 0-based.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from envyloc.instance import Instance, assigned_ranks
from envyloc.milp import INF, LinearConstraint, Model, Sense, VarKind, make_constraint
from envyloc.separation import (
    DEFAULT_MIN_VIOLATION,
    separate_sorted_sum,
    separate_triangle,
    triangle_constraint,
    triangle_triples,
)

MATERIALIZE_LIMIT = 12


class FormulationId(str, enum.Enum):
    F1 = "F1"
    F1R = "F1R"
    F2 = "F2"
    F3 = "F3"
    F3R = "F3R"
    F4 = "F4"
    F5_1 = "F5.1"
    F5_2 = "F5.2"

    @classmethod
    def parse(cls, text: str) -> "FormulationId":
        norm = text.strip().upper().replace("_", ".")
        for f in cls:
            if norm in (f.value.upper(), f.name.replace("_", ".")):
                return f
        raise ValueError(f"unknown formulation {text!r}")


class FamilyId(str, enum.Enum):
    P101 = "p101"
    P102 = "p102"
    P103 = "p103"
    P104 = "p104"
    P105 = "p105"
    SORTED_SUM = "sorted_sum"
    TRIANGLE = "triangle"

    @classmethod
    def parse(cls, text: str) -> "FamilyId":
        return cls(text.strip().lower())


class CutMode(str, enum.Enum):
    STATIC = "Static"
    SEPARATED = "Separated"


Separator = Callable[[Sequence[float], float], list[LinearConstraint]]


@dataclass(frozen=True)
class CutFamily:
    id: FamilyId
    mode: CutMode
    constraints: tuple[LinearConstraint, ...] = ()
    separator: Separator | None = None
    enumerator: Callable[[], Iterator[LinearConstraint]] | None = None

    def separate(self, point: Sequence[float],
                 min_violation: float = DEFAULT_MIN_VIOLATION) -> list[LinearConstraint]:
        if self.mode is CutMode.STATIC:
            return [c for c in self.constraints if c.violation(point) > min_violation]
        assert self.separator is not None
        return self.separator(point, min_violation)

    def members(self) -> Iterator[LinearConstraint]:
        """Every inequality of the family; exponential ones only for small M."""
        if self.mode is CutMode.STATIC:
            return iter(self.constraints)
        assert self.enumerator is not None
        return self.enumerator()


@dataclass
class Formulation:
    id: FormulationId
    instance: Instance
    model: Model
    y: list[int]
    z: list[int] | None = None
    zk: dict[tuple[int, int], int] = field(default_factory=dict)
    x: dict = field(default_factory=dict)
    e: dict[tuple[int, int], int] = field(default_factory=dict)
    d: dict[tuple[int, int], int] = field(default_factory=dict)
    t: list[int] = field(default_factory=list)
    theta: dict[int, int] = field(default_factory=dict)
    families: tuple[CutFamily, ...] = ()
    value_scale: float = 1.0

    def reported_value(self, objective: float) -> float:
        """Model objective mapped back to envy units."""
        return objective * self.value_scale

    def decode_open(self, values: Sequence[float]) -> tuple[int, ...]:
        return tuple(j for j, v in enumerate(self.y) if values[v] > 0.5)

    def decode_ranks(self, values: Sequence[float]) -> np.ndarray:
        inst = self.instance
        if self.z is not None:
            return np.array([int(round(values[v])) for v in self.z])
        return np.array([1 + sum(int(round(values[self.zk[i, k]]))
                                 for k in range(2, inst.max_rank + 1)) for i in range(inst.M)])

    def lift(self, open_sites: Sequence[int]) -> np.ndarray:
        """Integral point of this model induced by an open set."""
        inst = self.instance
        M = inst.M
        z = assigned_ranks(inst, open_sites)
        order = np.sort(z)
        desc = order[::-1]
        val = np.zeros(self.model.n_vars)
        for j, v in enumerate(self.y):
            val[v] = 1.0 if j in set(open_sites) else 0.0
        if self.z is not None:
            for i, v in enumerate(self.z):
                val[v] = z[i]
        for (i, k), v in self.zk.items():
            val[v] = 1.0 if z[i] >= k else 0.0
        for key, v in self.x.items():
            if isinstance(key, tuple):
                i, k = key
                val[v] = 1.0 if order[i] >= k else 0.0
            else:
                val[v] = order[key]
        for (i, j), v in self.e.items():
            val[v] = abs(z[i] - z[j])
        # t_q is the q-th largest rank, which is nonincreasing in q
        for q, v in enumerate(self.t, start=1):
            val[v] = desc[q - 1]
        for (i, q), v in self.d.items():
            val[v] = max(0, z[i] - desc[q - 1])
        for k, v in self.theta.items():
            val[v] = desc[: M - k + 1].sum()
        return val


# -----------------------------------------------------------------------------
# shared blocks

def _objective_step(model: Model, step: float) -> None:
    model.metadata["objective_step"] = step


def _new_model(fid: FormulationId, inst: Instance) -> Model:
    model = Model(f"{fid.value}_M{inst.M}_p{inst.p}")
    model.metadata.update(formulation=fid.value, instance=inst.fingerprint())
    _objective_step(model, 1.0)
    return model


def _add_y(model: Model, inst: Instance) -> list[int]:
    return [model.add_variable(f"y_{j + 1}", VarKind.BINARY) for j in range(inst.M)]


def _cardinality(model: Model, inst: Instance, y: list[int]) -> None:
    model.add_constraint([(1.0, v) for v in y], Sense.EQ, inst.p, tag="card")


def _integer_ranks(model: Model, inst: Instance, y: list[int], upper_limit: int) -> list[int]:
    """Integer ``z_i`` pinned to the best open rank by the closest-assignment rows.

    ``upper_limit`` is the largest rank O_ik for which the upper row is written
    (M - p in the pairwise model, M - p + 1 in the others).
    """
    M, top = inst.M, inst.max_rank
    O = inst.ranks
    z = [model.add_variable(f"z_{i + 1}", VarKind.INTEGER, 1, top) for i in range(M)]
    for i in range(M):
        for k in range(1, top + 1):
            terms = [(1.0, z[i])] + [(float(k - O[i, l]), y[l]) for l in range(M) if O[i, l] <= k - 1]
            model.add_constraint(terms, Sense.GE, k, tag="rank_lo")
    for i in range(M):
        for k in range(M):
            if O[i, k] <= upper_limit:
                model.add_constraint([(1.0, z[i]), (float(top - O[i, k]), y[k])], Sense.LE, top,
                                     tag="rank_up")
    return z


def _indicator_ranks(model: Model, inst: Instance, y: list[int]) -> dict[tuple[int, int], int]:
    """Binary ``z_i_k`` (z_i >= k) with the monotonicity and linking rows."""
    M, top = inst.M, inst.max_rank
    O = inst.ranks
    zk = {(i, k): model.add_variable(f"z_{i + 1}_{k}", VarKind.BINARY)
          for i in range(M) for k in range(2, top + 1)}

    def ind(i: int, k: int) -> tuple[float, int | None]:
        # (constant, var) pair: z_i >= 1 always holds and z_i >= k fails for k > top
        if k <= 1:
            return 1.0, None
        if k > top:
            return 0.0, None
        return 0.0, zk[i, k]

    def add(parts: list[tuple[float, tuple[float, int | None]]], sense: Sense, rhs: float,
            tag: str) -> None:
        terms, const = [], 0.0
        for coef, (c0, var) in parts:
            if var is None:
                const += coef * c0
            else:
                terms.append((coef, var))
        model.add_constraint(terms, sense, rhs - const, tag=tag)

    for i in range(M):
        for k in range(2, top):
            model.add_constraint([(1.0, zk[i, k]), (-1.0, zk[i, k + 1])], Sense.GE, 0.0, tag="mono")
    for i in range(M):
        for j in range(M):
            o = int(O[i, j])
            yj = (0.0, y[j])
            if 2 <= o <= top - 1:
                add([(1.0, ind(i, o)), (-1.0, ind(i, o + 1)), (-1.0, yj)], Sense.LE, 0.0, "link")
            if o == 1:
                add([(-1.0, ind(i, 2)), (-1.0, yj)], Sense.LE, -1.0, "link_first")
            if o == top:
                add([(1.0, ind(i, top)), (-1.0, yj)], Sense.LE, 0.0, "link_last")
            if o <= top - 1:
                add([(1.0, ind(i, o + 1)), (1.0, yj)], Sense.LE, 1.0, "link_open")
    return zk


def _kth_largest_envelope(model: Model, inst: Instance, rank_terms: list[list[tuple[float, int]]],
                          rank_const: float) -> tuple[list[int], dict[tuple[int, int], int]]:
    """``t_q`` free and ``d_iq >= max(0, z_i - t_q)`` for q = 1..M-1."""
    M = inst.M
    t = [model.add_variable(f"t_{q}", VarKind.CONTINUOUS, -INF, INF) for q in range(1, M)]
    d = {}
    for i in range(M):
        for q in range(1, M):
            d[i, q] = model.add_variable(f"d_{i + 1}_{q}", VarKind.CONTINUOUS, 0.0, INF)
    for i in range(M):
        for q in range(1, M):
            terms = [(1.0, d[i, q]), (1.0, t[q - 1])] + [(-c, v) for c, v in rank_terms[i]]
            model.add_constraint(terms, Sense.GE, rank_const, tag="envelope")
    return t, d


# -----------------------------------------------------------------------------
# builders

def build_f1(inst: Instance) -> Formulation:
    """Pairwise envy variables ``e_ij >= |z_i - z_j|``."""
    model = _new_model(FormulationId.F1, inst)
    M = inst.M
    e = {}
    for i in range(M):
        for j in range(i + 1, M):
            e[i, j] = model.add_variable(f"e_{i + 1}_{j + 1}", VarKind.CONTINUOUS, 0.0, INF)
    y = _add_y(model, inst)
    z = _integer_ranks(model, inst, y, inst.M - inst.p)
    for (i, j), v in e.items():
        model.add_constraint([(1.0, v), (-1.0, z[i]), (1.0, z[j])], Sense.GE, 0.0, tag="envy")
        model.add_constraint([(1.0, v), (1.0, z[i]), (-1.0, z[j])], Sense.GE, 0.0, tag="envy")
    _cardinality(model, inst, y)
    model.set_objective([(1.0, v) for v in e.values()])
    return Formulation(FormulationId.F1, inst, model.seal(), y, z=z, e=e)


def build_f2(inst: Instance) -> Formulation:
    """Rank indicators with sorted binary copies ``x_i_k``."""
    model = _new_model(FormulationId.F2, inst)
    M, top = inst.M, inst.max_rank
    y = _add_y(model, inst)
    zk = _indicator_ranks(model, inst, y)
    x = {(i, k): model.add_variable(f"x_{i + 1}_{k}", VarKind.BINARY)
         for i in range(M) for k in range(2, top + 1)}
    for k in range(2, top + 1):
        model.add_constraint([(1.0, x[i, k]) for i in range(M)] + [(-1.0, zk[i, k]) for i in range(M)],
                             Sense.EQ, 0.0, tag="colsum")
    for i in range(1, M):
        for k in range(2, top + 1):
            model.add_constraint([(1.0, x[i, k]), (-1.0, x[i - 1, k])], Sense.GE, 0.0, tag="sort")
    _cardinality(model, inst, y)
    model.set_objective([(float(2 * (i + 1) - M - 1), x[i, k])
                         for i in range(M) for k in range(2, top + 1)])
    return Formulation(FormulationId.F2, inst, model.seal(), y, zk=zk, x=x)


def _f3_model(fid: FormulationId, inst: Instance, scale: float) -> Formulation:
    model = _new_model(fid, inst)
    M = inst.M
    y = _add_y(model, inst)
    z = _integer_ranks(model, inst, y, inst.max_rank)
    _cardinality(model, inst, y)
    t, d = _kth_largest_envelope(model, inst, [[(1.0, z[i])] for i in range(M)], 0.0)
    obj = [(2.0 * scale, v) for v in d.values()]
    obj += [(2.0 * q * scale, t[q - 1]) for q in range(1, M)]
    obj += [(-(M - 1) * scale, v) for v in z]
    model.set_objective(obj)
    return Formulation(fid, inst, model, y, z=z, d=d, t=t)


def build_f3(inst: Instance) -> Formulation:
    """k-sum envelope on integer ranks."""
    form = _f3_model(FormulationId.F3, inst, 1.0)
    form.model.seal()
    return form


def build_f3r(inst: Instance) -> Formulation:
    """F3 with a halved objective and ordered thresholds ``t_q >= t_{q+1}``.

    The optimal ``t_q`` is the q-th largest rank, so the ordering only removes
    symmetric optima. Reported values are the model objective times two.
    """
    form = _f3_model(FormulationId.F3R, inst, 0.5)
    model = form.model
    for q in range(len(form.t) - 1):
        model.add_constraint([(1.0, form.t[q]), (-1.0, form.t[q + 1])], Sense.GE, 0.0, tag="t_order")
    _objective_step(model, 0.5)
    model.metadata["value_scale"] = 2.0
    form.value_scale = 2.0
    model.seal()
    return form


def build_f4(inst: Instance) -> Formulation:
    """k-sum envelope on rank indicators, with the constant ``M(1 - M)``."""
    model = _new_model(FormulationId.F4, inst)
    M, top = inst.M, inst.max_rank
    y = _add_y(model, inst)
    zk = _indicator_ranks(model, inst, y)
    _cardinality(model, inst, y)
    rank_terms = [[(1.0, zk[i, k]) for k in range(2, top + 1)] for i in range(M)]
    t, d = _kth_largest_envelope(model, inst, rank_terms, 1.0)
    obj = [(2.0, v) for v in d.values()]
    obj += [(2.0 * q, t[q - 1]) for q in range(1, M)]
    obj += [(-(M - 1.0), v) for v in zk.values()]
    model.set_objective(obj, constant=float(M * (1 - M)))
    return Formulation(FormulationId.F4, inst, model.seal(), y, zk=zk, d=d, t=t)


def _sorted_sum_family(inst: Instance, z: list[int], lhs_for_k: Callable[[int], list[int]],
                       tag: str) -> CutFamily:
    M = inst.M

    def separator(point: Sequence[float], min_violation: float) -> list[LinearConstraint]:
        cuts = []
        for k in range(2, M + 1):
            cut = separate_sorted_sum(point, k, z, lhs_for_k(k), min_violation, tag)
            if cut is not None:
                cuts.append(cut)
        return cuts

    def enumerator() -> Iterator[LinearConstraint]:
        if M > MATERIALIZE_LIMIT:
            raise ValueError(f"refusing to enumerate an exponential family for M={M}")
        for k in range(2, M + 1):
            lhs = lhs_for_k(k)
            for S in itertools.combinations(range(M), M - k + 1):
                yield make_constraint([(1.0, v) for v in lhs] + [(-1.0, z[i]) for i in S],
                                      Sense.GE, 0.0, tag)

    return CutFamily(FamilyId.SORTED_SUM, CutMode.SEPARATED, separator=separator,
                     enumerator=enumerator)


def build_f5_1(inst: Instance) -> Formulation:
    """Continuous sorted copies ``x_i`` of the ranks; top-sum rows separated."""
    model = _new_model(FormulationId.F5_1, inst)
    M = inst.M
    y = _add_y(model, inst)
    z = _integer_ranks(model, inst, y, inst.max_rank)
    _cardinality(model, inst, y)
    x = [model.add_variable(f"x_{i + 1}", VarKind.CONTINUOUS, 1.0, inst.max_rank) for i in range(M)]
    for i in range(M - 1):
        model.add_constraint([(1.0, x[i + 1]), (-1.0, x[i])], Sense.GE, 0.0, tag="sort")
    model.add_constraint([(1.0, v) for v in x] + [(-1.0, v) for v in z], Sense.EQ, 0.0, tag="sum")
    model.set_objective([(float(2 * (i + 1) - M - 1), x[i]) for i in range(M)])
    family = _sorted_sum_family(inst, z, lambda k: x[k - 1:], "sorted_sum")
    return Formulation(FormulationId.F5_1, inst, model.seal(), y, z=z, x=dict(enumerate(x)),
                       families=(family,))


def build_f5_2(inst: Instance) -> Formulation:
    """One bound ``theta_k`` per top-sum size; the subsets are separated."""
    model = _new_model(FormulationId.F5_2, inst)
    M = inst.M
    y = _add_y(model, inst)
    z = _integer_ranks(model, inst, y, inst.max_rank)
    _cardinality(model, inst, y)
    theta = {k: model.add_variable(f"theta_{k}", VarKind.CONTINUOUS, float(M - k + 1),
                                   float((M - k + 1) * inst.max_rank)) for k in range(2, M + 1)}
    obj = [(2.0, v) for v in theta.values()] + [(-(M - 1.0), v) for v in z]
    model.set_objective(obj)
    family = _sorted_sum_family(inst, z, lambda k: [theta[k]], "sorted_sum")
    return Formulation(FormulationId.F5_2, inst, model.seal(), y, z=z, theta=theta,
                       families=(family,))


def triangle_family(form: Formulation) -> CutFamily:
    if not form.e:
        raise ValueError("triangle cuts need the pairwise envy variables")
    M, e = form.instance.M, form.e

    def separator(point: Sequence[float], min_violation: float) -> list[LinearConstraint]:
        return separate_triangle(point, e, M, min_violation)

    def enumerator() -> Iterator[LinearConstraint]:
        return (triangle_constraint(e, *abc) for abc in triangle_triples(M))

    return CutFamily(FamilyId.TRIANGLE, CutMode.SEPARATED, separator=separator,
                     enumerator=enumerator)


def build_f1r(inst: Instance) -> Formulation:
    """F1 plus separated triangle inequalities on the envy variables."""
    form = build_f1(inst)
    form.id = FormulationId.F1R
    form.model.metadata["formulation"] = FormulationId.F1R.value
    form.model.name = form.model.name.replace("F1", "F1R", 1)
    form.families = (triangle_family(form),)
    return form


BUILDERS: dict[FormulationId, Callable[[Instance], Formulation]] = {
    FormulationId.F1: build_f1,
    FormulationId.F1R: build_f1r,
    FormulationId.F2: build_f2,
    FormulationId.F3: build_f3,
    FormulationId.F3R: build_f3r,
    FormulationId.F4: build_f4,
    FormulationId.F5_1: build_f5_1,
    FormulationId.F5_2: build_f5_2,
}


def build(fid: FormulationId | str, inst: Instance) -> Formulation:
    fid = FormulationId.parse(fid) if isinstance(fid, str) else fid
    return BUILDERS[fid](inst)


# -----------------------------------------------------------------------------
# valid inequalities for the indicator layout

def _require(form: Formulation, need_x: bool) -> None:
    if not form.zk or (need_x and not any(isinstance(k, tuple) for k in form.x)):
        raise ValueError(f"family needs the indicator layout of F2, got {form.id.value}")


def cuts_p101(form: Formulation) -> CutFamily:
    """Sorted columns are nested: ``x_i_k >= x_i_{k+1}``."""
    _require(form, need_x=True)
    M, top = form.instance.M, form.instance.max_rank
    cons = tuple(make_constraint([(1.0, form.x[i, k]), (-1.0, form.x[i, k + 1])], Sense.GE, 0.0, "p101")
                 for i in range(M) for k in range(2, top))
    return CutFamily(FamilyId.P101, CutMode.STATIC, cons)


def cuts_p102(form: Formulation) -> CutFamily:
    """If z_i >= k, all p open sites rank at least k for customer i."""
    _require(form, need_x=False)
    inst = form.instance
    M, p, top, O = inst.M, inst.p, inst.max_rank, inst.ranks
    cons = []
    for i in range(M):
        for k in range(2, top):
            terms = [(float(p), form.zk[i, k])] + [(-1.0, form.y[j]) for j in range(M) if O[i, j] >= k]
            cons.append(make_constraint(terms, Sense.LE, 0.0, "p102"))
    return CutFamily(FamilyId.P102, CutMode.STATIC, tuple(cons))


def cuts_p103(form: Formulation) -> CutFamily:
    """If z_i == k exactly, the other p - 1 open sites rank above k."""
    _require(form, need_x=False)
    inst = form.instance
    M, p, top, O = inst.M, inst.p, inst.max_rank, inst.ranks
    cons = []
    for i in range(M):
        for k in range(2, top):
            terms = [(float(p - 1), form.zk[i, k]), (-float(p - 1), form.zk[i, k + 1])]
            terms += [(-1.0, form.y[j]) for j in range(M) if O[i, j] >= k + 1]
            cons.append(make_constraint(terms, Sense.LE, 0.0, "p103"))
    return CutFamily(FamilyId.P103, CutMode.STATIC, tuple(cons))


def cuts_p104(form: Formulation) -> CutFamily:
    """Top-s entries of each sorted column dominate any s indicators (separated)."""
    _require(form, need_x=True)
    inst = form.instance
    M, top = inst.M, inst.max_rank
    columns = {k: [form.zk[i, k] for i in range(M)] for k in range(2, top + 1)}
    # the s largest sorted entries are the last s rows
    tops = {k: [form.x[i, k] for i in range(M)][::-1] for k in range(2, top + 1)}

    def separator(point: Sequence[float], min_violation: float) -> list[LinearConstraint]:
        cuts = []
        for k in range(2, top + 1):
            for s in range(1, M + 1):
                cut = separate_sorted_sum(point, M - s + 1, columns[k], tops[k][:s], min_violation,
                                          "p104")
                if cut is not None:
                    cuts.append(cut)
        return cuts

    def enumerator() -> Iterator[LinearConstraint]:
        if M > MATERIALIZE_LIMIT:
            raise ValueError(f"refusing to enumerate an exponential family for M={M}")
        for k in range(2, top + 1):
            for s in range(1, M + 1):
                for S in itertools.combinations(range(M), s):
                    yield make_constraint([(1.0, v) for v in tops[k][:s]]
                                          + [(-1.0, columns[k][i]) for i in S], Sense.GE, 0.0, "p104")

    return CutFamily(FamilyId.P104, CutMode.SEPARATED, separator=separator, enumerator=enumerator)


def cuts_p105(form: Formulation) -> CutFamily:
    """z_i >= k unless some site ranked above k is open."""
    _require(form, need_x=False)
    inst = form.instance
    M, top, O = inst.M, inst.max_rank, inst.ranks
    cons = []
    for i in range(M):
        for k in range(2, top + 1):
            terms = [(1.0, form.zk[i, k])] + [(1.0, form.y[j]) for j in range(M) if O[i, j] < k]
            cons.append(make_constraint(terms, Sense.GE, 1.0, "p105"))
    return CutFamily(FamilyId.P105, CutMode.STATIC, tuple(cons))


FAMILY_BUILDERS: dict[FamilyId, Callable[[Formulation], CutFamily]] = {
    FamilyId.P101: cuts_p101,
    FamilyId.P102: cuts_p102,
    FamilyId.P103: cuts_p103,
    FamilyId.P104: cuts_p104,
    FamilyId.P105: cuts_p105,
    FamilyId.TRIANGLE: triangle_family,
}


def family(form: Formulation, fid: FamilyId | str) -> CutFamily:
    fid = FamilyId.parse(fid) if isinstance(fid, str) else fid
    if fid is FamilyId.SORTED_SUM:
        for fam in form.families:
            if fam.id is fid:
                return fam
        raise ValueError(f"{form.id.value} has no sorted-sum family")
    return FAMILY_BUILDERS[fid](form)


def all_families(form: Formulation) -> list[CutFamily]:
    """Builder families plus every extra family the layout supports."""
    fams = list(form.families)
    have = {f.id for f in fams}
    for fid, builder in FAMILY_BUILDERS.items():
        if fid in have:
            continue
        try:
            fams.append(builder(form))
        except ValueError:
            continue
    return fams
