"""Solver-agnostic MILP model: variables, linear rows, a linear objective."""

from __future__ import annotations

import copy
import enum
import math
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

FEAS_TOL = 1e-6
INF = math.inf


class VarKind(str, enum.Enum):
    BINARY = "Binary"
    INTEGER = "Integer"
    CONTINUOUS = "Continuous"

    @property
    def is_integer(self) -> bool:
        return self is not VarKind.CONTINUOUS


class Sense(str, enum.Enum):
    LE = "<="
    GE = ">="
    EQ = "="


@dataclass(frozen=True)
class Variable:
    id: int
    name: str
    kind: VarKind
    lower: float
    upper: float


@dataclass(frozen=True)
class LinearConstraint:
    terms: tuple[tuple[float, int], ...]
    sense: Sense
    rhs: float
    tag: str = ""
    name: str = ""

    def activity(self, x: Sequence[float]) -> float:
        return sum(c * x[v] for c, v in self.terms)

    def violation(self, x: Sequence[float]) -> float:
        lhs = self.activity(x)
        if self.sense is Sense.LE:
            return max(0.0, lhs - self.rhs)
        if self.sense is Sense.GE:
            return max(0.0, self.rhs - lhs)
        return abs(lhs - self.rhs)


def make_constraint(terms: Iterable[tuple[float, int]], sense: Sense | str, rhs: float,
                    tag: str = "", name: str = "") -> LinearConstraint:
    """Normalize terms (drop zeros, reject duplicate ids) into a constraint."""
    seen: set[int] = set()
    clean = []
    for coef, vid in terms:
        vid = int(vid)
        if vid in seen:
            raise ValueError(f"duplicate variable id {vid} in constraint {name or tag!r}")
        seen.add(vid)
        if coef != 0:
            clean.append((float(coef), vid))
    return LinearConstraint(tuple(clean), Sense(sense), float(rhs), tag, name)


@dataclass
class Evaluation:
    objective: float
    feasible: bool
    max_violation: float


class Model:
    """A minimization MILP.

    Variable ids are dense integers in insertion order, so any length-n
    sequence can serve as an assignment.
    """

    def __init__(self, name: str = "model") -> None:
        self.name = name
        self.variables: list[Variable] = []
        self.constraints: list[LinearConstraint] = []
        self.objective: tuple[tuple[float, int], ...] = ()
        self.constant = 0.0
        self.metadata: dict[str, Any] = {}
        self._by_name: dict[str, int] = {}
        self._tag_counts: dict[str, int] = {}
        self.sealed = False

    # construction -----------------------------------------------------------
    def _check_open(self) -> None:
        if self.sealed:
            raise RuntimeError("model is sealed")

    def add_variable(self, name: str, kind: VarKind | str = VarKind.CONTINUOUS,
                     lower: float = 0.0, upper: float = INF) -> int:
        self._check_open()
        kind = VarKind(kind)
        if name in self._by_name:
            raise ValueError(f"duplicate variable name {name!r}")
        if kind is VarKind.BINARY:
            lower, upper = max(0.0, lower), min(1.0, upper)
        if lower > upper:
            raise ValueError(f"variable {name!r}: lower bound {lower} > upper bound {upper}")
        vid = len(self.variables)
        self.variables.append(Variable(vid, name, kind, float(lower), float(upper)))
        self._by_name[name] = vid
        return vid

    def _check_terms(self, terms: Iterable[tuple[float, int]]) -> None:
        n = len(self.variables)
        for _, vid in terms:
            if not 0 <= vid < n:
                raise KeyError(f"unknown variable id {vid}")

    def add_constraint(self, terms: Iterable[tuple[float, int]] | LinearConstraint,
                       sense: Sense | str | None = None, rhs: float | None = None,
                       tag: str = "", name: str | None = None) -> int:
        self._check_open()
        if isinstance(terms, LinearConstraint):
            con = terms
        else:
            if sense is None or rhs is None:
                raise ValueError("sense and rhs are required")
            con = make_constraint(terms, sense, rhs, tag)
        self._check_terms(con.terms)
        if not con.name:
            tag = con.tag or "c"
            count = self._tag_counts.get(tag, 0)
            con = LinearConstraint(con.terms, con.sense, con.rhs, con.tag, name or f"{tag}_{count}")
        self._tag_counts[con.tag or "c"] = self._tag_counts.get(con.tag or "c", 0) + 1
        self.constraints.append(con)
        return len(self.constraints) - 1

    def set_objective(self, terms: Iterable[tuple[float, int]], constant: float = 0.0) -> None:
        self._check_open()
        merged: dict[int, float] = {}
        for coef, vid in terms:
            merged[int(vid)] = merged.get(int(vid), 0.0) + float(coef)
        clean = tuple((c, v) for v, c in merged.items() if c != 0)
        self._check_terms(clean)
        self.objective = clean
        self.constant = float(constant)

    def set_bounds(self, vid: int, lower: float, upper: float) -> None:
        self._check_open()
        v = self.variables[vid]
        if lower > upper:
            raise ValueError(f"variable {v.name!r}: lower bound {lower} > upper bound {upper}")
        self.variables[vid] = Variable(v.id, v.name, v.kind, float(lower), float(upper))

    def seal(self) -> "Model":
        self.sealed = True
        return self

    def copy(self) -> "Model":
        """Unsealed deep copy."""
        other = copy.copy(self)
        other.variables = list(self.variables)
        other.constraints = list(self.constraints)
        other.metadata = copy.deepcopy(self.metadata)
        other._by_name = dict(self._by_name)
        other._tag_counts = dict(self._tag_counts)
        other.sealed = False
        return other

    # queries ----------------------------------------------------------------
    @property
    def n_vars(self) -> int:
        return len(self.variables)

    def var(self, name: str) -> int:
        return self._by_name[name]

    def has_var(self, name: str) -> bool:
        return name in self._by_name

    def integer_ids(self) -> list[int]:
        return [v.id for v in self.variables if v.kind.is_integer]

    def count(self, kind: VarKind) -> int:
        return sum(1 for v in self.variables if v.kind is kind)

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(self.n_vars)
        for coef, vid in self.objective:
            c[vid] = coef
        return c

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([v.lower for v in self.variables], dtype=float)
        hi = np.array([v.upper for v in self.variables], dtype=float)
        return lo, hi

    def _as_vector(self, assignment: Mapping[int, float] | Sequence[float]) -> np.ndarray:
        if isinstance(assignment, Mapping):
            missing = [v.name for v in self.variables if v.id not in assignment]
            if missing:
                raise KeyError(f"missing values for {len(missing)} variables, e.g. {missing[0]!r}")
            return np.array([float(assignment[v.id]) for v in self.variables])
        x = np.asarray(assignment, dtype=float)
        if x.shape != (self.n_vars,):
            raise KeyError(f"assignment has {x.size} values for {self.n_vars} variables")
        return x

    def objective_value(self, assignment: Mapping[int, float] | Sequence[float]) -> float:
        x = self._as_vector(assignment)
        return float(sum(c * x[v] for c, v in self.objective) + self.constant)

    def evaluate(self, assignment: Mapping[int, float] | Sequence[float],
                 tol: float = FEAS_TOL) -> Evaluation:
        """Objective, feasibility (rows and bounds, not integrality) and worst violation."""
        x = self._as_vector(assignment)
        worst = 0.0
        for v in self.variables:
            worst = max(worst, v.lower - x[v.id], x[v.id] - v.upper)
        for con in self.constraints:
            worst = max(worst, con.violation(x))
        return Evaluation(self.objective_value(x), worst <= tol, float(worst))

    def is_integral(self, assignment: Sequence[float], tol: float = FEAS_TOL) -> bool:
        x = self._as_vector(assignment)
        return all(abs(x[v] - round(x[v])) <= tol for v in self.integer_ids())
