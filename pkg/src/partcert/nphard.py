"""Reduction from Min-K-Union to choosing which first-layer neurons to partition.

For a set family ``S_1..S_n`` over ``{0..m-1}`` the gadget is a three-layer
network ``I_n -> W -> I_m`` with ``W[i, j] = 1`` iff ``i`` is in ``S_j``, unit
cost, the input box ``[-1, 1]^n`` and fixed (deliberately loose) bounds.
Making rows ``J`` exact lowers the LP value by an amount that encodes the
size of the union of the sets *not* in ``J``:

    16 * (value(J) - baseline) = |union of S_j for j not in J|
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bounds import LayerBounds
from .lp import ExhaustiveOutcome, exhaustive_first_layer_partition, restricted_relu_value
from .network import Layer, ReluNetwork
from .problem import BoxSet, CertProblem, PolytopeSet
from .solver import SolverConfig


@dataclass(frozen=True)
class Gadget:
    sets: tuple[frozenset[int], ...]
    universe: int
    k: int
    problem: CertProblem
    bounds: LayerBounds
    baseline: float

    @property
    def n_sets(self) -> int:
        return len(self.sets)

    def union_outside(self, rows: Sequence[int]) -> int:
        """Size of the union of the sets whose index is not in ``rows``."""
        chosen = set(rows)
        out: set[int] = set()
        for j, s in enumerate(self.sets):
            if j not in chosen:
                out |= s
        return len(out)

    def value(self, rows: Sequence[int], cfg: SolverConfig | None = None) -> float:
        """LP value with exact relu on first-layer ``rows`` and the gadget's fixed bounds."""
        return restricted_relu_value(self.problem, rows, self.bounds, recompute=False, cfg=cfg)

    def scaled_gain(self, rows: Sequence[int], cfg: SolverConfig | None = None) -> float:
        return 16.0 * (self.value(rows, cfg) - self.baseline)

    def partition_size(self) -> int:
        return self.n_sets - self.k


def np_gadget(sets: Sequence[Sequence[int]], k: int, universe: int | None = None) -> Gadget:
    """Gadget instance for a family of sets over ``{0..universe-1}`` (zero-based)."""
    fam = tuple(frozenset(int(e) for e in s) for s in sets)
    n = len(fam)
    if n == 0:
        raise ValueError("need at least one set")
    m = universe if universe is not None else 1 + max((max(s) for s in fam if s), default=-1)
    if any(e < 0 or e >= m for s in fam for e in s):
        raise ValueError("set element outside the universe")
    if set().union(*fam) != set(range(m)):
        raise ValueError("the sets must cover the universe")
    if not 0 <= k <= n:
        raise ValueError("k must lie in [0, n]")
    W = np.zeros((m, n))
    for j, s in enumerate(fam):
        for i in s:
            W[i, j] = 1.0
    net = ReluNetwork((Layer(np.eye(n), np.zeros(n)), Layer(W, np.zeros(m)), Layer(np.eye(m), np.zeros(m))))
    box = BoxSet(-np.ones(n), np.ones(n))
    problem = CertProblem(net, PolytopeSet(box), np.ones(m), name="min-k-union")
    row_sums = W @ np.ones(n)
    u1 = 2.0 * np.ones(n)
    u2 = 1.5 * row_sums
    u3 = 1.25 * row_sums + 0.125
    bounds = LayerBounds((-u1, -u2, -u3), (u1, u2, u3), box, mode="fixed")
    baseline = float(np.ones(m) @ (1.25 * row_sums + np.ones(m) / 16.0))
    return Gadget(fam, m, k, problem, bounds, baseline)


@dataclass
class GadgetCheck:
    max_deviation: float
    deviations: dict[tuple[int, ...], float]
    best: ExhaustiveOutcome

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_deviation <= tol


def check_gadget(g: Gadget, cfg: SolverConfig | None = None) -> GadgetCheck:
    """Compare the scaled LP gain against the union size for every row set of size ``n - k``."""
    best = exhaustive_first_layer_partition(g.problem, g.partition_size(), g.bounds,
                                            recompute=False, cap=10 ** 6, cfg=cfg)
    devs = {}
    for rows, val in best.values.items():
        devs[rows] = abs(16.0 * (val - g.baseline) - g.union_outside(rows))
    return GadgetCheck(max(devs.values()), devs, best)


def random_family(n: int, m: int, rng: np.random.Generator) -> list[set[int]]:
    """Random family of ``n`` nonempty sets covering ``{0..m-1}``."""
    while True:
        sets = [set(np.flatnonzero(rng.random(m) < 0.4).tolist()) for _ in range(n)]
        for i in range(m):
            if not any(i in s for s in sets):
                sets[int(rng.integers(n))].add(i)
        if all(sets):
            return sets


def all_row_sets(n: int, size: int):
    return itertools.combinations(range(n), size)
