"""Dense bounded-variable simplex for LP relaxations.

Every row ``a x (<=,>=,=) b`` gets a slack ``s`` with ``a x + s = b`` and
bounds ``[0, inf)``, ``(-inf, 0]`` or ``[0, 0]``. Column ``n + r`` of the
working matrix is the slack of row ``r``; a :class:`Basis` is expressed in
those column indices, so a basis stays valid when rows are appended (the new
slacks simply join the basis).

Cold solves run a two-phase primal simplex with artificial columns. Warm
solves start from a stored basis and run the dual simplex, which is what
branch-and-bound and probing use after tightening bounds or adding cuts.
"""

from __future__ import annotations

import enum
import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg.blas import dger

from envyloc.milp import FEAS_TOL, INF, LinearConstraint, Model, Sense

PIVOT_TOL = 1e-9
OPT_TOL = 1e-9
PRIMAL_TOL = 1e-9
REFACTOR_EVERY = 64
BLAND_AFTER = 1000

_BASIC, _LOWER, _UPPER, _FREE = 0, 1, 2, 3


class LpStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    # only with a cutoff: the dual bound already exceeds it, the LP was not finished
    CUTOFF = "Cutoff"


class NumericError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Basis:
    basic: tuple[int, ...]
    at_upper: frozenset[int]


@dataclass
class LpSolution:
    values: np.ndarray
    objective: float
    status: LpStatus
    basis: Basis | None = None
    iterations: int = 0


class _Tableau:
    """Mutable simplex state over the columns of ``W``.

    ``T = B^-1 W`` and ``beta = B^-1 b`` are updated in place by every pivot;
    a full refactorization happens every few dozen pivots.
    """

    def __init__(self, W: np.ndarray, b: np.ndarray, L: np.ndarray, U: np.ndarray,
                 n: int) -> None:
        self.W, self.b, self.L, self.U = W, b, L, U
        self.m, self.N = W.shape
        # slack columns are the identity in W, so these columns of T hold B^-1
        self.inv = slice(n, n + self.m)
        # squared row norms of B^-1 (dual steepest edge), kept once the dual asks
        self.weights: np.ndarray | None = None
        self.iterations = 0
        self.degenerate_streak = 0
        self.bland = False
        self.since_refactor = 0

    # setup -------------------------------------------------------------------
    def load(self, basic: Sequence[int], state: np.ndarray, x: np.ndarray, cost: np.ndarray,
             T: np.ndarray | None = None, beta: np.ndarray | None = None) -> None:
        self.basic = np.array(basic, dtype=np.int64)
        self.state = state
        self.x = x
        self.cost = cost
        if T is None:
            self.refactor()
        else:
            self.T, self.beta = T, beta
            self.recompute_primal()
            self.set_cost(cost)

    def refactor(self) -> None:
        if self.m:
            B = self.W[:, self.basic]
            try:
                sol = np.linalg.solve(B, np.column_stack([self.W, self.b]))
            except np.linalg.LinAlgError as exc:
                raise NumericError("singular basis") from exc
            if not np.all(np.isfinite(sol)):
                raise NumericError("non-finite tableau")
            self.T, self.beta = np.ascontiguousarray(sol[:, :-1]), sol[:, -1].copy()
        else:
            self.T, self.beta = self.W.copy(), np.zeros(0)
        self.since_refactor = 0
        if self.weights is not None:
            self.weights = self.exact_weights()
        self.recompute_primal()
        self.set_cost(self.cost)

    def exact_weights(self) -> np.ndarray:
        Binv = self.T[:, self.inv]
        return np.einsum("ij,ij->i", Binv, Binv)

    def recompute_primal(self) -> None:
        x = self.x
        x[self.basic] = 0.0
        if self.m:
            x[self.basic] = self.beta - self.T @ x

    def set_cost(self, cost: np.ndarray) -> None:
        self.cost = cost
        self.d = cost - cost[self.basic] @ self.T
        self.d[self.basic] = 0.0

    # pivoting ----------------------------------------------------------------
    def pivot(self, r: int, j: int, leaving_state: int) -> None:
        T = self.T
        piv = T[r, j]
        if abs(piv) < PIVOT_TOL * 1e-3:
            raise NumericError(f"pivot element too small ({piv:g})")
        T[r] /= piv
        self.beta[r] /= piv
        col = T[:, j].copy()
        col[r] = 0.0
        if self.weights is not None:
            # new row i of B^-1 is old_i - col_i * new_r
            g = T[:, self.inv] @ T[r, self.inv]
            w = self.weights
            w += col * (col * g[r] - 2.0 * g)
            w[r] = g[r]
            np.maximum(w, 1e-12, out=w)
        # rank-one update in place; T is C-contiguous so T.T is a Fortran view
        dger(-1.0, T[r], col, a=T.T, overwrite_a=1)
        self.beta -= col * self.beta[r]
        self.d -= self.d[j] * T[r]
        self.d[j] = 0.0
        leaving = self.basic[r]
        self.basic[r] = j
        self.state[j] = _BASIC
        self.state[leaving] = leaving_state
        self.iterations += 1
        self.since_refactor += 1
        if self.since_refactor >= max(REFACTOR_EVERY, self.m // 4):
            self.refactor()

    def _track_degeneracy(self, step: float) -> None:
        if step <= 1e-12:
            self.degenerate_streak += 1
            if self.degenerate_streak >= BLAND_AFTER:
                self.bland = True
        else:
            self.degenerate_streak = 0

    # primal simplex ----------------------------------------------------------
    def primal(self, max_iter: int) -> LpStatus:
        L, U = self.L, self.U
        while True:
            if self.iterations > max_iter:
                raise NumericError("primal simplex iteration limit reached")
            d, st = self.d, self.state
            movable = U > L
            inc = ((st == _LOWER) | (st == _FREE)) & movable & (d < -OPT_TOL)
            dec = ((st == _UPPER) | (st == _FREE)) & movable & (d > OPT_TOL)
            cand = inc | dec
            if not cand.any():
                return LpStatus.OPTIMAL
            if self.bland:
                j = int(np.flatnonzero(cand)[0])
            else:
                j = int(np.argmax(np.where(cand, np.abs(d), -1.0)))
            direction = 1.0 if inc[j] else -1.0
            alpha = self.T[:, j] * direction
            xb = self.x[self.basic]
            lb, ub = L[self.basic], U[self.basic]
            ratios = np.full(self.m, INF)
            pos = alpha > PIVOT_TOL
            neg = alpha < -PIVOT_TOL
            with np.errstate(invalid="ignore", divide="ignore"):
                ratios[pos] = (xb[pos] - lb[pos]) / alpha[pos]
                ratios[neg] = (ub[neg] - xb[neg]) / -alpha[neg]
            ratios = np.where(np.isnan(ratios), INF, np.maximum(ratios, 0.0))
            theta = float(ratios.min()) if self.m else INF
            flip = U[j] - L[j]
            if flip <= theta:
                # entering variable runs into its own opposite bound
                if math.isinf(flip):
                    return LpStatus.UNBOUNDED
                self.x[j] = U[j] if direction > 0 else L[j]
                self.state[j] = _UPPER if direction > 0 else _LOWER
                self.x[self.basic] = xb - flip * alpha
                self.iterations += 1
                self._track_degeneracy(flip)
                continue
            if math.isinf(theta):
                return LpStatus.UNBOUNDED
            ties = np.flatnonzero(ratios <= theta + 1e-12)
            if self.bland:
                r = int(ties[np.argmin(self.basic[ties])])
            else:
                r = int(ties[np.argmax(np.abs(alpha[ties]))])
            leaving = int(self.basic[r])
            hit_lower = alpha[r] > 0
            self.x[self.basic] = xb - theta * alpha
            self.x[j] += direction * theta
            self.x[leaving] = L[leaving] if hit_lower else U[leaving]
            self._track_degeneracy(theta)
            self.pivot(r, j, _LOWER if hit_lower else _UPPER)

    # dual simplex ------------------------------------------------------------
    def dual_feasible(self, tol: float = 1e-7) -> bool:
        d, st = self.d, self.state
        movable = self.U > self.L
        bad = movable & (
            (((st == _LOWER) | (st == _FREE)) & (d < -tol))
            | (((st == _UPPER) | (st == _FREE)) & (d > tol))
        )
        return not bad.any()

    def dual(self, max_iter: int, cutoff: float = INF) -> LpStatus:
        L, U = self.L, self.U
        while True:
            if self.iterations > max_iter:
                raise NumericError("dual simplex iteration limit reached")
            if cutoff < INF and self.cost @ self.x > cutoff:
                return LpStatus.CUTOFF
            xb = self.x[self.basic]
            lb, ub = L[self.basic], U[self.basic]
            below = lb - xb
            above = xb - ub
            infeas = np.maximum(below, above)
            if self.m == 0 or infeas.max() <= PRIMAL_TOL:
                return LpStatus.OPTIMAL
            rows = np.flatnonzero(infeas > PRIMAL_TOL)
            if self.bland:
                r = int(rows[np.argmin(self.basic[rows])])
            else:
                # dual steepest edge: infeasibility over the norm of the row of B^-1
                if self.weights is None:
                    self.weights = self.exact_weights()
                r = int(rows[np.argmax(infeas[rows] ** 2 / self.weights[rows])])
            leaving = int(self.basic[r])
            to_lower = below[r] > above[r]
            target = L[leaving] if to_lower else U[leaving]
            row = self.T[r]
            st, d = self.state, self.d
            movable = (U > L) & (st != _BASIC)
            can_inc = movable & ((st == _LOWER) | (st == _FREE))
            can_dec = movable & ((st == _UPPER) | (st == _FREE))
            if to_lower:
                # x_r must rise: raise x_j with row_j < 0 or lower x_j with row_j > 0
                elig = (can_inc & (row < -PIVOT_TOL)) | (can_dec & (row > PIVOT_TOL))
            else:
                elig = (can_inc & (row > PIVOT_TOL)) | (can_dec & (row < -PIVOT_TOL))
            if not elig.any():
                return LpStatus.INFEASIBLE
            idx = np.flatnonzero(elig)
            ratios = np.abs(d[idx]) / np.abs(row[idx])
            best = ratios.min()
            ties = idx[ratios <= best + 1e-12]
            if self.bland:
                j = int(ties[0])
            else:
                j = int(ties[np.argmax(np.abs(row[ties]))])
            delta = (self.x[leaving] - target) / row[j]
            self.x[self.basic] = xb - delta * self.T[:, j]
            self.x[j] += delta
            self.x[leaving] = target
            self._track_degeneracy(abs(best))
            self.pivot(r, j, _LOWER if to_lower else _UPPER)


def _slack_bounds(senses: Sequence[Sense]) -> tuple[np.ndarray, np.ndarray]:
    lo = np.array([-INF if s is Sense.GE else 0.0 for s in senses])
    hi = np.array([INF if s is Sense.LE else 0.0 for s in senses])
    return lo, hi


def _nonbasic_start(L: np.ndarray, U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    state = np.where(np.isfinite(L), _LOWER, np.where(np.isfinite(U), _UPPER, _FREE))
    x = np.where(state == _LOWER, L, np.where(state == _UPPER, U, 0.0)).astype(float)
    return state.astype(np.int64), x


class Relaxation:
    """LP relaxation of a model whose row set may grow (cuts, lazy rows).

    Final tableaus of recent solves are kept in a small cache keyed by basis,
    so re-solving from a parent's basis (branching, probing) skips the
    refactorization.
    """

    cache_bytes = 256 * 2**20

    def __init__(self, model: Model) -> None:
        self.n = model.n_vars
        self.c = model.objective_vector()
        self.constant = model.constant
        self.lower, self.upper = model.bounds()
        self.rows: list[LinearConstraint] = []
        self._A = np.zeros((0, self.n))
        self._b = np.zeros(0)
        self._senses: list[Sense] = []
        self._W: np.ndarray | None = None
        self._cache: OrderedDict[Basis, tuple[np.ndarray, np.ndarray, int]] = OrderedDict()
        self.add_rows(model.constraints)

    @property
    def m(self) -> int:
        return len(self.rows)

    def add_rows(self, rows: Sequence[LinearConstraint]) -> None:
        if not rows:
            return
        block = np.zeros((len(rows), self.n))
        for r, con in enumerate(rows):
            for coef, vid in con.terms:
                block[r, vid] = coef
        self._A = np.vstack([self._A, block])
        self._b = np.concatenate([self._b, [con.rhs for con in rows]])
        self._senses.extend(con.sense for con in rows)
        self.rows.extend(rows)
        self._W = None
        self._cache.clear()

    def _matrix(self) -> np.ndarray:
        if self._W is None:
            self._W = np.hstack([self._A, np.eye(self.m)])
        return self._W

    def solve(self, lower: np.ndarray | None = None, upper: np.ndarray | None = None,
              basis: Basis | None = None, cutoff: float = INF) -> LpSolution:
        """Optimal vertex for the given bounds, warm-started from ``basis`` when possible.

        With a finite ``cutoff``, a warm solve may stop with status CUTOFF as
        soon as its dual bound (the reported objective) exceeds the cutoff.
        """
        lower = self.lower if lower is None else lower
        upper = self.upper if upper is None else upper
        if np.any(lower > upper + FEAS_TOL):
            return LpSolution(np.full(self.n, np.nan), INF, LpStatus.INFEASIBLE)
        slo, shi = _slack_bounds(self._senses)
        L = np.concatenate([lower, slo])
        U = np.concatenate([upper, shi])
        W = self._matrix()
        cost = np.concatenate([self.c, np.zeros(self.m)])
        max_iter = 50 * (self.m + self.n) + 1000
        if basis is not None:
            try:
                sol = self._warm(W, L, U, cost, basis, max_iter, cutoff)
                if sol is not None:
                    return sol
            except NumericError:
                pass
        return self._cold(W, L, U, cost, max_iter)

    # -------------------------------------------------------------------------
    def _violation(self, tab: _Tableau, ncols: int) -> float:
        xs = tab.x[:ncols]
        viol = max(float(np.max(tab.L[:ncols] - xs, initial=0.0)),
                   float(np.max(xs - tab.U[:ncols], initial=0.0)))
        row_err = float(np.max(np.abs(self._A @ tab.x[: self.n] + tab.x[self.n:ncols] - self._b),
                               initial=0.0))
        return max(viol, row_err)

    def _finish(self, tab: _Tableau, status: LpStatus, ncols: int) -> LpSolution:
        if status is not LpStatus.OPTIMAL:
            return LpSolution(tab.x[: self.n].copy(), INF if status is LpStatus.INFEASIBLE else -INF,
                              status, None, tab.iterations)
        if self._violation(tab, ncols) > 1e-9:
            tab.refactor()
            if self._violation(tab, ncols) > PRIMAL_TOL:
                status = tab.dual(10 * tab.iterations + 1000)
                if status is not LpStatus.OPTIMAL:
                    return self._finish(tab, status, ncols)
            err = self._violation(tab, ncols)
            if err > FEAS_TOL:
                raise NumericError(f"LP solution violates rows/bounds by {err:.2e}")
        x = tab.x[: self.n].copy()
        basis = None
        if np.all(tab.basic < ncols):
            at_upper = frozenset(int(j) for j in np.flatnonzero(tab.state[:ncols] == _UPPER))
            basis = Basis(tuple(int(j) for j in tab.basic), at_upper)
            if tab.T.shape[1] == ncols:
                self._remember(basis, tab)
        obj = float(self.c @ x + self.constant)
        return LpSolution(x, obj, LpStatus.OPTIMAL, basis, tab.iterations)

    def _remember(self, basis: Basis, tab: _Tableau) -> None:
        self._cache[basis] = (tab.T, tab.beta, tab.since_refactor)
        self._cache.move_to_end(basis)
        per_entry = tab.T.nbytes + tab.beta.nbytes
        while len(self._cache) > 1 and len(self._cache) * per_entry > self.cache_bytes:
            self._cache.popitem(last=False)

    def _warm(self, W, L, U, cost, basis: Basis, max_iter: int,
              cutoff: float = INF) -> LpSolution | None:
        N = W.shape[1]
        basic = list(basis.basic)
        known = len(basic)
        if known > self.m or any(j >= self.n + known for j in basic):
            return None
        # rows added since the basis was taken contribute their slack
        basic += [self.n + r for r in range(known, self.m)]
        state, x = _nonbasic_start(L, U)
        for j in basis.at_upper:
            if j < N and math.isfinite(U[j]):
                state[j], x[j] = _UPPER, U[j]
        state[basic] = _BASIC
        tab = _Tableau(W, self._b, L, U, self.n)
        cached = self._cache.get(basis) if known == self.m else None
        if cached is not None:
            T, beta, since = cached
            self._cache.move_to_end(basis)
            tab.load(basic, state, x, cost, T.copy(), beta.copy())
            tab.since_refactor = since
        else:
            tab.load(basic, state, x, cost)
        # fix dual infeasibilities on boxed columns by moving them to the other bound
        d = tab.d
        nb = tab.state != _BASIC
        wrong_low = nb & (tab.state == _LOWER) & (d < -OPT_TOL) & np.isfinite(U) & (U > L)
        wrong_up = nb & (tab.state == _UPPER) & (d > OPT_TOL) & np.isfinite(L) & (U > L)
        if wrong_low.any() or wrong_up.any():
            tab.state[wrong_low], tab.x[wrong_low] = _UPPER, U[wrong_low]
            tab.state[wrong_up], tab.x[wrong_up] = _LOWER, L[wrong_up]
            tab.recompute_primal()
        if not tab.dual_feasible():
            return None
        status = tab.dual(max_iter, cutoff - self.constant)
        if status is LpStatus.CUTOFF:
            return LpSolution(tab.x[: self.n].copy(), float(tab.cost @ tab.x + self.constant),
                              status, None, tab.iterations)
        if status is LpStatus.OPTIMAL and not tab.dual_feasible(OPT_TOL):
            status = tab.primal(max_iter)
        return self._finish(tab, status, N)

    def _cold(self, W, L, U, cost, max_iter: int) -> LpSolution:
        m, N = W.shape
        state, x = _nonbasic_start(L, U)
        resid = self._b - self._A @ x[: self.n] if self.m else np.zeros(0)
        slo, shi = L[self.n:], U[self.n:]
        need = np.flatnonzero((resid < slo - PRIMAL_TOL) | (resid > shi + PRIMAL_TOL))
        basic = [self.n + r for r in range(m)]
        signs = np.ones(m)
        for k, r in enumerate(need):
            s = self.n + r
            # slack rests at the bound nearest the residual; the artificial absorbs the rest
            below = resid[r] < slo[r]
            sval = slo[r] if below else shi[r]
            state[s], x[s] = (_LOWER if below else _UPPER), sval
            signs[r] = 1.0 if resid[r] - sval > 0 else -1.0
            basic[r] = N + k
        art = np.zeros((m, need.size))
        art[need, np.arange(need.size)] = signs[need]
        Wx = np.hstack([W, art]) if need.size else W
        Lx = np.concatenate([L, np.zeros(need.size)])
        Ux = np.concatenate([U, np.full(need.size, INF)])
        statex = np.concatenate([state, np.full(need.size, _BASIC)])
        xx = np.concatenate([x, np.zeros(need.size)])
        statex[basic] = _BASIC
        tab = _Tableau(Wx, self._b, Lx, Ux, self.n)
        # B is a signed identity here, so the tableau is a row scaling of Wx
        T0 = Wx / signs[:, None]
        beta0 = self._b / signs
        if need.size:
            phase1 = np.concatenate([np.zeros(N), np.ones(need.size)])
            tab.load(basic, statex, xx, phase1, T0, beta0)
            tab.primal(max_iter)
            tab.refactor()
            if tab.x[N:].sum() > FEAS_TOL:
                return LpSolution(np.full(self.n, np.nan), INF, LpStatus.INFEASIBLE,
                                  None, tab.iterations)
            # retire artificials: fix at zero and pivot basic ones out where possible
            tab.U[N:] = 0.0
            for r in range(m):
                if tab.basic[r] >= N:
                    row = tab.T[r, :N]
                    cand = np.flatnonzero((np.abs(row) > 1e-7) & (tab.state[:N] != _BASIC))
                    if cand.size:
                        j = int(cand[np.argmax(np.abs(row[cand]))])
                        tab.x[int(tab.basic[r])] = 0.0
                        tab.pivot(r, j, _LOWER)
            if np.all(tab.basic < N):
                # drop the artificial columns entirely
                keep = slice(0, N)
                tab.W, tab.T, tab.L, tab.U = W, tab.T[:, keep].copy(), L, U
                tab.state, tab.x, tab.N = tab.state[keep].copy(), tab.x[keep].copy(), N
                tab.cost = cost
                tab.refactor()
            else:
                tab.refactor()
                tab.set_cost(np.concatenate([cost, np.zeros(need.size)]))
        else:
            tab.load(basic, statex, xx, cost, T0, beta0)
        status = tab.primal(max_iter)
        return self._finish(tab, status, N)


def solve_lp(model: Model, lower: np.ndarray | None = None, upper: np.ndarray | None = None,
             basis: Basis | None = None) -> LpSolution:
    """Solve the LP relaxation of ``model`` (integrality dropped)."""
    return Relaxation(model).solve(lower, upper, basis)
