"""LP probing against a heuristic incumbent.

A probe fixes one variable (or tightens one bound) and re-solves the
relaxation from the root basis. When the probed side's LP bound exceeds the
incumbent, no solution on that side can be optimal, so the other side is
imposed permanently. Fixings are applied as bounds on a copy of the model.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from envyloc.bnb import _separate_all, _static_rows, make_relaxation
from envyloc.formulations import CutFamily, CutMode, Formulation, FormulationId
from envyloc.instance import greedy_interchange
from envyloc.lp import LpStatus, NumericError
from envyloc.milp import Model

PROBE_TOL = 1e-6
ROOT_ROUNDS = 10
POOL_SIZE = 64


@dataclass
class FixReport:
    probed: int
    fixed_to_zero: int
    fixed_to_one: int
    probe_time: float
    infeasible_detected: bool = False
    skipped: int = 0

    @property
    def pct_zero(self) -> float:
        return 100.0 * self.fixed_to_zero / self.probed if self.probed else 0.0

    @property
    def pct_one(self) -> float:
        return 100.0 * self.fixed_to_one / self.probed if self.probed else 0.0

    def to_json(self) -> dict:
        return {
            "probed": self.probed,
            "fixed_to_zero": self.fixed_to_zero,
            "fixed_to_one": self.fixed_to_one,
            "pct_v0_of_probed": self.pct_zero,
            "pct_v1_of_probed": self.pct_one,
            "probe_time_s": self.probe_time,
            "infeasible_detected": self.infeasible_detected,
            "skipped": self.skipped,
        }


class _Prober:
    """Root relaxation (with cut families) whose bounds are tightened in place."""

    def __init__(self, model: Model, families: Sequence[CutFamily], incumbent: float,
                 backend: str) -> None:
        self.rel = make_relaxation(model, backend)
        self.rel.add_rows(_static_rows(families))
        self.lo, self.hi = model.bounds()
        self.incumbent = incumbent
        self.skipped = 0
        lazy = [f for f in families if f.mode is CutMode.SEPARATED]
        sol = self.rel.solve(self.lo, self.hi)
        for _ in range(ROOT_ROUNDS):
            if sol.status is not LpStatus.OPTIMAL:
                break
            cuts = _separate_all(lazy, sol.values, 1e-4)
            if not cuts:
                break
            self.rel.add_rows(cuts)
            sol = self.rel.solve(self.lo, self.hi, sol.basis)
        self.basis = sol.basis if sol.status is LpStatus.OPTIMAL else None
        # LP optima seen so far; one that satisfies the current bounds with the
        # probed value and stays under the incumbent settles a probe without a solve
        self.pool: list[np.ndarray] = []
        if sol.status is LpStatus.OPTIMAL and sol.objective <= incumbent + PROBE_TOL:
            self.pool.append(sol.values)
        self.saved = 0

    def _witness(self, vid: int, lower: float, upper: float) -> bool:
        tol = PROBE_TOL
        for x in reversed(self.pool):
            if (lower - tol <= x[vid] <= upper + tol and np.all(x >= self.lo - tol)
                    and np.all(x <= self.hi + tol)):
                return True
        return False

    def exceeds(self, vid: int, lower: float, upper: float) -> bool | None:
        """Whether restricting ``vid`` to [lower, upper] pushes the LP above the incumbent.

        ``None`` means the probe failed numerically and must be ignored.
        """
        lo, hi = self.lo.copy(), self.hi.copy()
        lo[vid], hi[vid] = max(lo[vid], lower), min(hi[vid], upper)
        if self._witness(vid, lo[vid], hi[vid]):
            self.saved += 1
            return False
        try:
            sol = self.rel.solve(lo, hi, self.basis, cutoff=self.incumbent + PROBE_TOL)
        except NumericError:
            self.skipped += 1
            return None
        if sol.status in (LpStatus.INFEASIBLE, LpStatus.CUTOFF):
            return True
        if sol.status is not LpStatus.OPTIMAL:
            self.skipped += 1
            return None
        if sol.objective > self.incumbent + PROBE_TOL:
            return True
        self.pool.append(sol.values)
        if len(self.pool) > POOL_SIZE:
            self.pool.pop(0)
        return False

    def fix(self, vid: int, lower: float, upper: float) -> None:
        self.lo[vid], self.hi[vid] = lower, upper

    def reduced(self, model: Model) -> Model:
        out = model.copy()
        base_lo, base_hi = model.bounds()
        for vid in np.flatnonzero((self.lo != base_lo) | (self.hi != base_hi)):
            out.set_bounds(int(vid), float(self.lo[vid]), float(self.hi[vid]))
        return out.seal()


def probe_fix(model: Model, probe_vars: Sequence[int], incumbent_value: float,
              families: Sequence[CutFamily] = (), passes: int = 1,
              backend: str = "simplex") -> tuple[Model, FixReport]:
    """Probe each binary in ``probe_vars`` at 0 and at 1, in order, ``passes`` times."""
    start = time.perf_counter()
    pr = _Prober(model, families, incumbent_value, backend)
    to_zero: set[int] = set()
    to_one: set[int] = set()
    infeasible = False
    for _ in range(passes):
        changed = False
        for v in probe_vars:
            if pr.lo[v] == pr.hi[v]:
                continue
            if pr.exceeds(v, 1.0, 1.0):
                pr.fix(v, 0.0, 0.0)
                to_zero.add(v)
                changed = True
                if pr.exceeds(v, 0.0, 0.0):
                    infeasible = True
                    break
            elif pr.exceeds(v, 0.0, 0.0):
                pr.fix(v, 1.0, 1.0)
                to_one.add(v)
                changed = True
        if infeasible or not changed:
            break
    report = FixReport(len(probe_vars), len(to_zero), len(to_one),
                       time.perf_counter() - start, infeasible, pr.skipped)
    return pr.reduced(model), report


def incumbent_for(form: Formulation) -> float:
    """Model-unit objective of the greedy-interchange solution."""
    heur = greedy_interchange(form.instance)
    return form.model.objective_value(form.lift(heur.open))


def preprocess_f2(form: Formulation, families: Sequence[CutFamily] = (), passes: int = 1,
                  backend: str = "simplex") -> tuple[Model, FixReport]:
    """Probe every rank indicator and every sorted-copy indicator."""
    if form.id is not FormulationId.F2:
        raise ValueError(f"preprocess_f2 needs an F2 model, got {form.id.value}")
    probe = list(form.zk.values()) + list(form.x.values())
    return probe_fix(form.model, probe, incumbent_for(form), families, passes, backend)


def preprocess_f5_1(form: Formulation, families: Sequence[CutFamily] = (), passes: int = 1,
                    backend: str = "simplex") -> tuple[Model, FixReport]:
    """Shrink each rank window from both ends, then bound the sorted copies.

    Each rank z_i in [1, M-p+1] stands for M-p indicators "z_i >= w"; a
    lowered upper end fixes indicators to 0, a raised lower end fixes them
    to 1. Percentages are relative to those M(M-p) indicators.
    """
    if form.id is not FormulationId.F5_1:
        raise ValueError(f"preprocess_f5_1 needs an F5.1 model, got {form.id.value}")
    start = time.perf_counter()
    inst = form.instance
    pr = _Prober(form.model, tuple(form.families) + tuple(families), incumbent_for(form), backend)
    zeros = ones = 0
    infeasible = False
    for _ in range(passes):
        before = (zeros, ones)
        for v in form.z:
            while pr.hi[v] > pr.lo[v] and pr.exceeds(v, pr.hi[v], pr.hi[v]):
                pr.fix(v, pr.lo[v], pr.hi[v] - 1)
                zeros += 1
            while pr.hi[v] > pr.lo[v] and pr.exceeds(v, pr.lo[v], pr.lo[v]):
                pr.fix(v, pr.lo[v] + 1, pr.hi[v])
                ones += 1
            if pr.hi[v] == pr.lo[v] and pr.exceeds(v, pr.lo[v], pr.hi[v]):
                infeasible = True
                break
        if infeasible or (zeros, ones) == before:
            break
    # the i-th sorted copy lies between the i-th smallest lower and upper rank bounds
    lows = np.sort(pr.lo[form.z])
    highs = np.sort(pr.hi[form.z])
    for i, v in form.x.items():
        pr.fix(v, max(pr.lo[v], lows[i]), min(pr.hi[v], highs[i]))
    report = FixReport(inst.M * (inst.M - inst.p), zeros, ones,
                       time.perf_counter() - start, infeasible, pr.skipped)
    return pr.reduced(form.model), report


def preprocess(form: Formulation, families: Sequence[CutFamily] = (), passes: int = 1,
               backend: str = "simplex") -> tuple[Model, FixReport]:
    if form.id is FormulationId.F2:
        return preprocess_f2(form, families, passes, backend)
    if form.id is FormulationId.F5_1:
        return preprocess_f5_1(form, families, passes, backend)
    raise ValueError(f"no preprocessing defined for {form.id.value}")
