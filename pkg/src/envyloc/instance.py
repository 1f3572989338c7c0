"""Instances of the minimum-envy location problem and exact evaluation.

Sites and customers are colocated: index ``i`` is both customer ``i`` and the
candidate site at the same point. ``ranks[i, j]`` is the position of site
``j`` in customer ``i``'s preference list (1 = most preferred). All indices in
this package are 0-based; ranks stay 1-based because the formulations use
rank values arithmetically.
"""

from __future__ import annotations

import enum
import hashlib
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from envyloc.pcg import PCG32


class ParameterError(ValueError):
    pass


class ResourceError(RuntimeError):
    pass


class Regime(str, enum.Enum):
    CLOSER_SELF_SERVICE = "CloserSelfService"
    CLOSER_NO_SELF_SERVICE = "CloserNoSelfService"
    RANDOM_PREFS = "RandomPrefs"

    @classmethod
    def parse(cls, text: str) -> "Regime":
        for r in cls:
            if text in (r.value, r.name):
                return r
        raise ParameterError(f"unknown regime {text!r}")


_REGIME_TAG = {
    Regime.CLOSER_SELF_SERVICE: 0x1,
    Regime.CLOSER_NO_SELF_SERVICE: 0x2,
    Regime.RANDOM_PREFS: 0x3,
}

DEFAULT_ENUMERATION_CAP = 5_000_000


@dataclass(frozen=True, eq=False)
class Instance:
    M: int
    p: int
    regime: Regime
    seed: int
    ranks: np.ndarray
    coords: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        ranks = np.array(self.ranks, dtype=np.int64)
        if ranks.shape != (self.M, self.M):
            raise ParameterError(f"rank matrix must be {self.M}x{self.M}, got {ranks.shape}")
        if not 1 <= self.p <= self.M:
            raise ParameterError(f"need 1 <= p <= M, got p={self.p}, M={self.M}")
        expected = np.arange(1, self.M + 1)
        for i, row in enumerate(ranks):
            if not np.array_equal(np.sort(row), expected):
                raise ParameterError(f"row {i} of the rank matrix is not a permutation")
        ranks.setflags(write=False)
        object.__setattr__(self, "ranks", ranks)
        if self.coords is not None:
            coords = np.array(self.coords, dtype=float)
            coords.setflags(write=False)
            object.__setattr__(self, "coords", coords)

    @property
    def max_rank(self) -> int:
        """Worst rank any customer can be assigned, ``M - p + 1``."""
        return self.M - self.p + 1

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Instance):
            return NotImplemented
        return (
            (self.M, self.p, self.regime, self.seed) == (other.M, other.p, other.regime, other.seed)
            and np.array_equal(self.ranks, other.ranks)
        )

    def __hash__(self) -> int:
        return hash((self.M, self.p, self.regime, self.seed, self.ranks.tobytes()))

    def with_p(self, p: int) -> "Instance":
        return Instance(self.M, p, self.regime, self.seed, self.ranks, self.coords)

    def fingerprint(self) -> str:
        return hashlib.sha256(dumps(self).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Solution:
    open: tuple[int, ...]
    z: tuple[int, ...]
    envy: int


def generate_instance(seed: int, M: int, p: int, regime: Regime | str) -> Instance:
    """Draw a reproducible instance for one of the three preference regimes."""
    regime = Regime.parse(regime) if isinstance(regime, str) else regime
    if M < 2 or not 1 <= p <= M:
        raise ParameterError(f"invalid (M, p) = ({M}, {p})")
    if not 0 <= seed < 2**64:
        raise ParameterError("seed must be a 64-bit unsigned integer")
    rng = PCG32(seed ^ _REGIME_TAG[regime])
    ranks = np.zeros((M, M), dtype=np.int64)

    if regime is Regime.RANDOM_PREFS:
        for i in range(M):
            perm = list(range(M))
            for j in range(M - 1, 0, -1):
                k = rng.bounded(j + 1)
                perm[j], perm[k] = perm[k], perm[j]
            # perm[r] is the site placed at position r
            for r, site in enumerate(perm):
                ranks[i, site] = r + 1
        return Instance(M, p, regime, seed, ranks)

    coords = np.array([[rng.random(), rng.random()] for _ in range(M)])
    for i in range(M):
        d2 = ((coords - coords[i]) ** 2).sum(axis=1)
        if regime is Regime.CLOSER_SELF_SERVICE:
            order = sorted(range(M), key=lambda j: (j != i, d2[j], j))
            for r, site in enumerate(order):
                ranks[i, site] = r + 1
        else:
            order = sorted((j for j in range(M) if j != i), key=lambda j: (d2[j], j))
            for r, site in enumerate(order):
                ranks[i, site] = r + 1
            ranks[i, i] = M
    return Instance(M, p, regime, seed, ranks, coords)


def _check_open(inst: Instance, open_sites: Iterable[int]) -> tuple[int, ...]:
    sites = tuple(sorted(set(int(j) for j in open_sites)))
    if len(sites) != inst.p:
        raise ParameterError(f"expected {inst.p} open sites, got {len(sites)}")
    if sites and (sites[0] < 0 or sites[-1] >= inst.M):
        raise ParameterError("open site index out of range")
    return sites


def assigned_ranks(inst: Instance, open_sites: Iterable[int]) -> np.ndarray:
    """Rank of the best open site for every customer."""
    sites = _check_open(inst, open_sites)
    return inst.ranks[:, list(sites)].min(axis=1)


def envy_value(z: Sequence[int]) -> int:
    """Pairwise envy: sum over i < j of |z_i - z_j|."""
    z = np.asarray(z, dtype=np.int64)
    if z.size == 0:
        raise ParameterError("empty rank vector")
    return int(np.abs(z[:, None] - z[None, :]).sum() // 2)


def sorted_envy_value(z: Sequence[int]) -> int:
    """Same quantity via the weighted order statistics sum (2i - M - 1) v_i."""
    v = sorted(int(a) for a in z)
    if not v:
        raise ParameterError("empty rank vector")
    M = len(v)
    return sum((2 * (i + 1) - M - 1) * vi for i, vi in enumerate(v))


def _envy_of(inst: Instance, sites: Sequence[int]) -> int:
    return envy_value(inst.ranks[:, list(sites)].min(axis=1))


def solution_for(inst: Instance, open_sites: Iterable[int]) -> Solution:
    sites = _check_open(inst, open_sites)
    z = assigned_ranks(inst, sites)
    return Solution(sites, tuple(int(a) for a in z), envy_value(z))


def enumerate_optimum(inst: Instance, cap: int = DEFAULT_ENUMERATION_CAP) -> Solution:
    """Exhaustive search over all p-subsets.

    Returns the lexicographically smallest minimizer. Used as the independent
    oracle for every formulation, so it deliberately shares no code with the
    MILP builders.
    """
    total = math.comb(inst.M, inst.p)
    if total > cap:
        raise ResourceError(f"C({inst.M},{inst.p}) = {total} exceeds enumeration cap {cap}")
    ranks = inst.ranks
    M = inst.M
    weights = 2 * np.arange(1, M + 1) - M - 1
    best_val, best_set = None, None
    combos = itertools.combinations(range(M), inst.p)
    while True:
        chunk = list(itertools.islice(combos, 4096))
        if not chunk:
            break
        idx = np.array(chunk, dtype=np.int64)
        # z for every subset in the chunk: (n_subsets, M)
        z = ranks[:, idx].min(axis=2).T
        vals = (np.sort(z, axis=1) * weights).sum(axis=1)
        k = int(np.argmin(vals))
        if best_val is None or vals[k] < best_val:
            best_val, best_set = int(vals[k]), chunk[k]
    assert best_set is not None
    return solution_for(inst, best_set)


def greedy_interchange(inst: Instance) -> Solution:
    """Greedy construction followed by best-improvement 1-swap local search."""
    M, p = inst.M, inst.p
    current: list[int] = []
    for _ in range(p):
        best = None
        for j in range(M):
            if j in current:
                continue
            val = _envy_of(inst, current + [j])
            if best is None or val < best[0]:
                best = (val, j)
        assert best is not None
        current.append(best[1])
    current.sort()
    value = _envy_of(inst, current)

    improved = True
    while improved and p < M:
        improved = False
        best_move = None
        for out in current:
            for into in range(M):
                if into in current:
                    continue
                cand = sorted([j for j in current if j != out] + [into])
                val = _envy_of(inst, cand)
                if val < value and (best_move is None or val < best_move[0]):
                    best_move = (val, cand)
        if best_move is not None:
            value, current = best_move
            improved = True
    return solution_for(inst, current)


def dumps(inst: Instance) -> str:
    lines = [f"{inst.M} {inst.p} {inst.regime.value} {inst.seed}"]
    lines += [" ".join(str(int(r)) for r in row) for row in inst.ranks]
    return "\n".join(lines) + "\n"


def loads(text: str) -> Instance:
    rows = [line.split() for line in text.splitlines() if line.strip()]
    if not rows or len(rows[0]) != 4:
        raise ParameterError("instance header must be 'M p regime seed'")
    M, p = int(rows[0][0]), int(rows[0][1])
    regime = Regime.parse(rows[0][2])
    seed = int(rows[0][3])
    if len(rows) != M + 1:
        raise ParameterError(f"expected {M} rank rows, got {len(rows) - 1}")
    ranks = np.array([[int(v) for v in row] for row in rows[1:]], dtype=np.int64)
    return Instance(M, p, regime, seed, ranks)


def read_instance(path) -> Instance:
    with open(path) as fh:
        return loads(fh.read())


def write_instance(inst: Instance, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(inst))
