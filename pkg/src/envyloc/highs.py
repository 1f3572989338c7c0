"""LP relaxation backed by HiGHS through scipy, for cross-checking the simplex."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import csr_matrix, vstack

from envyloc.lp import Basis, LpSolution, LpStatus, NumericError
from envyloc.milp import FEAS_TOL, INF, LinearConstraint, Model, Sense


class HighsRelaxation:
    """Same interface as :class:`envyloc.lp.Relaxation`; warm-start bases are ignored."""

    def __init__(self, model: Model) -> None:
        self.n = model.n_vars
        self.c = model.objective_vector()
        self.constant = model.constant
        self.lower, self.upper = model.bounds()
        self.rows: list[LinearConstraint] = []
        self._blocks: list[csr_matrix] = []
        self._lo: list[float] = []
        self._hi: list[float] = []
        self._A: csr_matrix | None = None
        self.add_rows(model.constraints)

    @property
    def m(self) -> int:
        return len(self.rows)

    def add_rows(self, rows: Sequence[LinearConstraint]) -> None:
        if not rows:
            return
        data, ri, ci = [], [], []
        for r, con in enumerate(rows):
            for coef, vid in con.terms:
                data.append(coef)
                ri.append(r)
                ci.append(vid)
            self._lo.append(-INF if con.sense is Sense.LE else con.rhs)
            self._hi.append(INF if con.sense is Sense.GE else con.rhs)
        self._blocks.append(csr_matrix((data, (ri, ci)), shape=(len(rows), self.n)))
        self.rows.extend(rows)
        self._A = None

    def _matrix(self) -> csr_matrix:
        if self._A is None:
            self._A = vstack(self._blocks).tocsr()
            self._blocks = [self._A]
        return self._A

    def solve(self, lower: np.ndarray | None = None, upper: np.ndarray | None = None,
              basis: Basis | None = None, cutoff: float = INF) -> LpSolution:
        lower = self.lower if lower is None else lower
        upper = self.upper if upper is None else upper
        if np.any(lower > upper + FEAS_TOL):
            return LpSolution(np.full(self.n, np.nan), INF, LpStatus.INFEASIBLE)
        bounds = np.column_stack([np.where(np.isinf(lower), None, lower),
                                  np.where(np.isinf(upper), None, upper)])
        kw = {}
        if self.m:
            A = self._matrix()
            lo, hi = np.array(self._lo), np.array(self._hi)
            le = np.isfinite(hi)
            ge = np.isfinite(lo) & ~np.isclose(lo, hi)
            eq = np.isfinite(lo) & np.isclose(lo, hi)
            ub_rows = np.flatnonzero(le & ~eq)
            ge_rows = np.flatnonzero(ge)
            if ub_rows.size or ge_rows.size:
                kw["A_ub"] = vstack([A[ub_rows], -A[ge_rows]])
                kw["b_ub"] = np.concatenate([hi[ub_rows], -lo[ge_rows]])
            eq_rows = np.flatnonzero(eq)
            if eq_rows.size:
                kw["A_eq"] = A[eq_rows]
                kw["b_eq"] = lo[eq_rows]
        res = linprog(self.c, bounds=bounds, method="highs", **kw)
        if res.status == 2:
            return LpSolution(np.full(self.n, np.nan), INF, LpStatus.INFEASIBLE)
        if res.status == 3:
            return LpSolution(np.full(self.n, np.nan), -INF, LpStatus.UNBOUNDED)
        if res.status != 0:
            raise NumericError(f"HiGHS failed: {res.message}")
        x = np.asarray(res.x, dtype=float)
        return LpSolution(x, float(self.c @ x + self.constant), LpStatus.OPTIMAL, None,
                          int(getattr(res, "nit", 0)))
