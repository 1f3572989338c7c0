"""Separation oracles for the exponential and triangle families."""

from __future__ import annotations

from typing import Mapping, Sequence

from envyloc.milp import LinearConstraint, Sense

DEFAULT_MIN_VIOLATION = 1e-4
TRIANGLE_CAP = 50


def top_subset(point: Sequence[float], ids: Sequence[int], size: int) -> list[int]:
    """Positions (into ``ids``) of the ``size`` largest values, ties to the lowest position."""
    order = sorted(range(len(ids)), key=lambda i: (-point[ids[i]], i))
    return sorted(order[:size])


def separate_sorted_sum(point: Sequence[float], k: int, z_ids: Sequence[int],
                        lhs_ids: Sequence[int], min_violation: float = DEFAULT_MIN_VIOLATION,
                        tag: str = "sorted_sum") -> LinearConstraint | None:
    """Most violated member of ``sum(lhs) >= sum_{i in S} z_i`` over ``|S| = M - k + 1``.

    Taking S as the largest z-values maximizes the right-hand side, so a
    ``None`` return certifies that no member of this size is violated.
    """
    s = len(z_ids) - k + 1
    if not 1 <= s <= len(z_ids):
        raise ValueError(f"k={k} gives subset size {s} outside 1..{len(z_ids)}")
    S = top_subset(point, z_ids, s)
    rhs_value = sum(point[z_ids[i]] for i in S)
    lhs_value = sum(point[v] for v in lhs_ids)
    if rhs_value - lhs_value <= min_violation:
        return None
    terms = [(1.0, v) for v in lhs_ids] + [(-1.0, z_ids[i]) for i in S]
    return LinearConstraint(tuple(terms), Sense.GE, 0.0, tag)


def triangle_constraint(e: Mapping[tuple[int, int], int], a: int, b: int, c: int,
                        tag: str = "triangle") -> LinearConstraint:
    """``e_ab + e_bc >= e_ac`` with pair keys stored as (min, max)."""
    def key(u: int, v: int) -> tuple[int, int]:
        return (u, v) if u < v else (v, u)
    return LinearConstraint(
        ((1.0, e[key(a, b)]), (1.0, e[key(b, c)]), (-1.0, e[key(a, c)])), Sense.GE, 0.0, tag)


def triangle_triples(M: int):
    """Every (a, b, c) whose inequality says the a-c edge is at most a-b plus b-c."""
    for i in range(M):
        for j in range(i + 1, M):
            for k in range(j + 1, M):
                yield i, j, k   # long edge i-k
                yield j, i, k   # long edge j-k
                yield i, k, j   # long edge i-j


def separate_triangle(point: Sequence[float], e: Mapping[tuple[int, int], int], M: int,
                      min_violation: float = DEFAULT_MIN_VIOLATION,
                      cap: int = TRIANGLE_CAP) -> list[LinearConstraint]:
    found = []
    for n, (a, b, c) in enumerate(triangle_triples(M)):
        ab = point[e[(min(a, b), max(a, b))]]
        bc = point[e[(min(b, c), max(b, c))]]
        ac = point[e[(min(a, c), max(a, c))]]
        viol = ac - ab - bc
        if viol > min_violation:
            found.append((-viol, n, (a, b, c)))
    found.sort()
    return [triangle_constraint(e, *abc) for _, _, abc in found[:cap]]
