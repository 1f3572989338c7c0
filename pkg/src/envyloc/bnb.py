"""Best-bound branch-and-bound with a root cut loop and lazy separation."""

from __future__ import annotations

import enum
import heapq
import itertools
import math
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from envyloc.formulations import CutFamily, CutMode
from envyloc.lp import Basis, LpSolution, LpStatus, NumericError, Relaxation
from envyloc.milp import FEAS_TOL, INF, LinearConstraint, Model


class MipStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    TIME_LIMIT = "TimeLimit"
    INFEASIBLE = "Infeasible"


@dataclass
class SolveConfig:
    time_limit: float = 3600.0
    int_tol: float = 1e-6
    feas_tol: float = FEAS_TOL
    cut_rounds_root: int = 10
    cut_violation_min: float = 1e-4
    separate_in_tree: bool = False
    branch_priority: tuple[str, ...] = ("y", "z")
    families: tuple[CutFamily, ...] = ()
    lp_backend: str = "simplex"

    def __post_init__(self) -> None:
        if self.time_limit <= 0:
            raise ValueError("time_limit must be positive")
        if min(self.int_tol, self.feas_tol, self.cut_violation_min) <= 0:
            raise ValueError("tolerances must be positive")
        if self.lp_backend not in ("simplex", "highs"):
            raise ValueError(f"unknown LP backend {self.lp_backend!r}")


@dataclass
class MipResult:
    value: float
    incumbent: np.ndarray | None
    bound: float
    nodes: int
    wall_time: float
    status: MipStatus
    cuts_added: dict[str, int] = field(default_factory=dict)
    root_lp: float = -INF

    def to_json(self) -> dict:
        def num(v: float):
            return None if v is None or not math.isfinite(v) else v
        return {
            "value": num(self.value),
            "bound": num(self.bound),
            "nodes": self.nodes,
            "time_s": self.wall_time,
            "status": self.status.value,
            "cuts": dict(sorted(self.cuts_added.items())),
        }


def make_relaxation(model: Model, backend: str = "simplex"):
    if backend == "highs":
        from envyloc.highs import HighsRelaxation
        return HighsRelaxation(model)
    return Relaxation(model)


def _separate_all(families: Sequence[CutFamily], point: np.ndarray,
                  min_violation: float) -> list[LinearConstraint]:
    cuts: list[LinearConstraint] = []
    for fam in families:
        cuts.extend(fam.separate(point, min_violation))
    return cuts


def _tag_counts(rows: Sequence[LinearConstraint]) -> Counter:
    return Counter(r.tag for r in rows)


def _static_rows(families: Sequence[CutFamily]) -> list[LinearConstraint]:
    return [c for fam in families if fam.mode is CutMode.STATIC for c in fam.constraints]


def root_lp_value(model: Model, families: Sequence[CutFamily] = (),
                  config: SolveConfig | None = None, max_rounds: int = 100) -> LpSolution:
    """Root relaxation with static families added and separated ones looped to a fixpoint."""
    config = config or SolveConfig()
    rel = make_relaxation(model, config.lp_backend)
    rel.add_rows(_static_rows(families))
    lazy = [f for f in families if f.mode is CutMode.SEPARATED]
    sol = rel.solve()
    for _ in range(max_rounds):
        if sol.status is not LpStatus.OPTIMAL:
            break
        cuts = _separate_all(lazy, sol.values, config.cut_violation_min)
        if not cuts:
            break
        rel.add_rows(cuts)
        sol = rel.solve(basis=sol.basis)
    return sol


def root_gap(model: Model, families: Sequence[CutFamily], mip_value: float,
             config: SolveConfig | None = None, root: float | None = None) -> float:
    """Percent gap between the MIP optimum and the root LP bound.

    Both values are in model units; the ``max(mip, 1)`` guard keeps the
    percentage finite when the optimum is zero.
    """
    if root is None:
        sol = root_lp_value(model, families, config)
        if sol.status is not LpStatus.OPTIMAL:
            raise NumericError(f"root LP returned {sol.status.value}")
        root = sol.objective
    return gap_percent(mip_value, root)


def gap_percent(mip_value: float, root: float) -> float:
    if abs(mip_value) <= FEAS_TOL:
        return 0.0
    return max(0.0, 100.0 * (mip_value - root) / max(abs(mip_value), 1.0))


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    changes: dict = field(compare=False)
    basis: Basis | None = field(compare=False)
    depth: int = field(compare=False, default=0)


def _branch_groups(model: Model, priority: Sequence[str]) -> np.ndarray:
    rank = {prefix: i for i, prefix in enumerate(priority)}
    return np.array([rank.get(v.name.split("_", 1)[0], len(priority)) for v in model.variables])


def branch_and_bound(model: Model, families: Sequence[CutFamily] = (),
                     config: SolveConfig | None = None,
                     warm_start: Sequence[float] | None = None) -> MipResult:
    config = config or SolveConfig()
    start = time.perf_counter()
    families = tuple(families) + tuple(config.families)
    lazy = [f for f in families if f.mode is CutMode.SEPARATED]
    step = float(model.metadata.get("objective_step", 0.0) or 0.0)

    rel = make_relaxation(model, config.lp_backend)
    static = _static_rows(families)
    rel.add_rows(static)
    cuts_added = _tag_counts(static)

    int_ids = np.array(model.integer_ids(), dtype=np.int64)
    groups = _branch_groups(model, config.branch_priority)
    root_lo, root_hi = model.bounds()

    incumbent: np.ndarray | None = None
    best = INF
    if warm_start is not None:
        x0 = np.asarray(warm_start, dtype=float)
        ev = model.evaluate(x0, config.feas_tol)
        if not ev.feasible or not model.is_integral(x0, config.int_tol):
            raise ValueError(f"warm start is not feasible (max violation {ev.max_violation:.2e})")
        if _separate_all(lazy, x0, config.feas_tol):
            raise ValueError("warm start violates a separated family")
        if static and max(c.violation(x0) for c in static) > config.feas_tol:
            raise ValueError("warm start violates a static cut family")
        incumbent, best = x0, ev.objective

    def prunable(bound: float) -> bool:
        if not math.isfinite(best):
            return False
        if step > 0:
            # sub-MIP optima are multiples of step, so a node must beat best - step
            return bound > best - step + config.feas_tol
        return bound >= best - config.feas_tol * max(1.0, abs(best))

    def bounds_for(changes: dict) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = root_lo.copy(), root_hi.copy()
        for vid, (l, h) in changes.items():
            lo[vid], hi[vid] = l, h
        return lo, hi

    def fractional(x: np.ndarray) -> int | None:
        if int_ids.size == 0:
            return None
        vals = x[int_ids]
        frac = np.abs(vals - np.round(vals))
        mask = frac > config.int_tol
        if not mask.any():
            return None
        cand = int_ids[mask]
        score = np.abs((vals[mask] - np.floor(vals[mask])) - 0.5)
        # lowest priority group, then most fractional, then lowest id
        order = np.lexsort((cand, score, groups[cand]))
        return int(cand[order[0]])

    def timed_out() -> bool:
        return time.perf_counter() - start > config.time_limit

    seq = itertools.count()
    nodes = 0
    root_value = -INF
    heap: list[_Node] = [_Node(-INF, next(seq), {}, None)]
    status = MipStatus.OPTIMAL
    lowest_open = INF

    while heap:
        if timed_out():
            status = MipStatus.TIME_LIMIT
            break
        node = heapq.heappop(heap)
        if prunable(node.bound):
            continue
        lo, hi = bounds_for(node.changes)
        is_root = nodes == 0
        cutoff = INF
        if not is_root and step > 0 and math.isfinite(best):
            # warm dual solves may stop once their bound proves the node prunable
            cutoff = best - step + config.feas_tol
        sol = rel.solve(lo, hi, node.basis, cutoff)
        nodes += 1
        rounds = 0
        while sol.status is LpStatus.OPTIMAL:
            if is_root and rounds < config.cut_rounds_root and lazy:
                cuts = _separate_all(lazy, sol.values, config.cut_violation_min)
            elif lazy and (config.separate_in_tree or fractional(sol.values) is None):
                cuts = _separate_all(lazy, sol.values, config.feas_tol)
            else:
                cuts = []
            if not cuts:
                break
            rounds += 1
            rel.add_rows(cuts)
            cuts_added.update(_tag_counts(cuts))
            sol = rel.solve(lo, hi, sol.basis, cutoff)
        if sol.status is LpStatus.CUTOFF:
            continue
        if sol.status is LpStatus.UNBOUNDED:
            raise NumericError("LP relaxation is unbounded")
        if sol.status is LpStatus.INFEASIBLE:
            continue
        if is_root:
            root_value = sol.objective
        if prunable(sol.objective):
            continue
        j = fractional(sol.values)
        if j is None:
            if sol.objective < best:
                best, incumbent = sol.objective, sol.values.copy()
            continue
        v = sol.values[j]
        down = dict(node.changes)
        down[j] = (lo[j], math.floor(v))
        up = dict(node.changes)
        up[j] = (math.ceil(v), hi[j])
        heapq.heappush(heap, _Node(sol.objective, next(seq), down, sol.basis, node.depth + 1))
        heapq.heappush(heap, _Node(sol.objective, next(seq), up, sol.basis, node.depth + 1))

    elapsed = time.perf_counter() - start
    if status is MipStatus.TIME_LIMIT:
        open_bounds = [n.bound for n in heap if not prunable(n.bound)]
        lowest_open = min(open_bounds + [best])
        bound = max(root_value, lowest_open) if open_bounds else best
    else:
        bound = best
    if incumbent is None and status is MipStatus.OPTIMAL:
        status = MipStatus.INFEASIBLE
    value = best
    if step > 0 and math.isfinite(value):
        snapped = round(value / step) * step
        if abs(snapped - value) <= 1e-6:
            value = snapped
        if status is MipStatus.OPTIMAL:
            bound = value
    return MipResult(value, incumbent, bound, max(nodes, 1), elapsed, status,
                     dict(cuts_added), root_value)
