"""LP relaxation of ReLU certification and input-partitioning schemes built on it."""

from __future__ import annotations

import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bounds import LayerBounds, default_mode, propagate_bounds, restrict_bounds
from .envelope import UNSTABLE, EnvelopeRows, assemble, classify
from .network import ReluNetwork, argmax_lowest, runner_up
from .problem import CertProblem, PartitionPlan, PolytopeSet, row_halfspace_partition, sign_pattern_partition
from .solver import FAILURE, OPTIMAL, ConicProgram, RelaxResult, SolverConfig, solve

DEFAULT_PATTERN_CAP = 12
DEFAULT_SEARCH_CAP = 4096


@dataclass
class LpRelaxation:
    problem: CertProblem
    bounds: LayerBounds
    rows: EnvelopeRows
    program: ConicProgram

    @property
    def n_unstable(self) -> int:
        return sum(k == UNSTABLE for layer in self.rows.kinds for k in layer)


def build_lp(problem: CertProblem, bounds: LayerBounds) -> LpRelaxation:
    net = problem.network
    if bounds.depth != net.depth:
        raise ValueError("bounds do not cover every layer")
    rows = assemble(net, problem.input, bounds.lower, bounds.upper)
    obj = np.zeros(rows.n_vars)
    obj[rows.block(net.depth)] = problem.cost
    prog = ConicProgram(obj, rows.A_ub, rows.b_ub, rows.A_eq, rows.b_eq,
                        rows.lower, rows.upper, offset=-problem.offset)
    return LpRelaxation(problem, bounds, rows, prog)


def solve_lp(relax: LpRelaxation, cfg: SolverConfig | None = None) -> RelaxResult:
    """Solve the relaxation; ``optimizer`` is the list of per-layer activations."""
    res = solve(relax.program, cfg)
    if res.ok:
        res.optimizer = [res.optimizer[relax.rows.block(k)] for k in range(relax.problem.network.depth + 1)]
    return res


def lp_value(problem: CertProblem, bounds: LayerBounds | None = None, mode: str | None = None,
             cfg: SolverConfig | None = None) -> RelaxResult:
    """Propagate bounds (if not given) and solve the unpartitioned LP."""
    if bounds is None:
        bounds = propagate_bounds(problem.network, problem.input, mode or default_mode(problem.network), cfg)
    return solve_lp(build_lp(problem, bounds), cfg)


@dataclass
class PartitionedOutcome:
    plan: PartitionPlan
    results: list[RelaxResult]
    part_bounds: list[LayerBounds | None]
    trace: list[dict] = field(default_factory=list)
    discarded_solve_time: float = 0.0

    @property
    def status(self) -> str:
        if not self.results:
            return FAILURE
        return OPTIMAL if all(r.ok for r in self.results) else FAILURE

    @property
    def value(self) -> float:
        if self.status != OPTIMAL:
            return float("nan")
        return max(r.value for r in self.results)

    @property
    def winning_part(self) -> int:
        if self.status != OPTIMAL:
            return -1
        vals = np.array([r.value for r in self.results])
        return argmax_lowest(vals)

    @property
    def wall_time(self) -> float:
        return sum(r.wall_time for r in self.results)

    @property
    def solve_time(self) -> float:
        """Time spent inside the relaxation solver, bound computation excluded."""
        return sum(r.solve_time for r in self.results) + self.discarded_solve_time


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def partitioned_lp(problem: CertProblem, plan: PartitionPlan, bounds: LayerBounds | None = None,
                   *, mode: str | None = None, recompute: bool = True, cfg: SolverConfig | None = None,
                   workers: int = 1) -> PartitionedOutcome:
    """Solve the LP on every part with bounds restricted to that part."""
    if bounds is None:
        bounds = propagate_bounds(problem.network, problem.input, mode or default_mode(problem.network), cfg)

    def one(j: int):
        t0 = time.perf_counter()
        part = plan.parts[j]
        pb = restrict_bounds(bounds, part, problem.network, plan.row_signs[j],
                             recompute=recompute, mode=mode, cfg=cfg)
        res = solve_lp(build_lp(problem.restricted(part), pb), cfg)
        res.wall_time = time.perf_counter() - t0
        return res, pb

    out = _map(one, range(len(plan.parts)), workers)
    return PartitionedOutcome(plan, [r for r, _ in out], [b for _, b in out])


def motivating_partition(problem: CertProblem, cap: int = DEFAULT_PATTERN_CAP) -> PartitionPlan:
    """All sign patterns of the hidden preactivations of a one-layer network."""
    net = problem.network
    if net.depth != 1:
        raise ValueError("the sign-pattern partition needs exactly one layer")
    n_z = net.output_dim
    if n_z > cap:
        raise ValueError(f"{n_z} neurons exceed the pattern cap {cap}")
    layer = net.layers[0]
    return sign_pattern_partition(problem.input, layer.weight, layer.bias, range(n_z), "motivating")


def row_scores(c, l, u) -> np.ndarray:
    """Two-part improvement score per row; ``nan`` marks stable rows (not candidates)."""
    c, l, u = (np.asarray(a, dtype=float) for a in (c, l, u))
    out = np.full(c.size, np.nan)
    for i in range(c.size):
        if classify(l[i], u[i]) == UNSTABLE:
            out[i] = max(c[i], 0.0) * u[i] * l[i] / (u[i] - l[i])
    return out


def rank_rows(c, l, u) -> list[int]:
    """Candidate rows ordered by score, lowest index first on ties."""
    s = row_scores(c, l, u)
    cand = [i for i in range(s.size) if not np.isnan(s[i])]
    return sorted(cand, key=lambda i: (s[i], i))


def optimal_two_part_row(c, l, u) -> int | None:
    """Row whose halfspace split minimises the worst-case two-part bound.

    Returns ``None`` when every neuron is stable.
    """
    order = rank_rows(c, l, u)
    return order[0] if order else None


def _clamp_zero(l, u):
    return np.minimum(np.asarray(l, float), 0.0), np.maximum(np.asarray(u, float), 0.0)


def worst_case_lp_bound(c, l, u, row_dual_norms, eps: float) -> float:
    """Upper bound on the LP relaxation error at input distance ``eps``.

    Bounds are first widened to contain zero, which only loosens the
    relaxation the bound is derived for.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    c = np.asarray(c, float)
    l, u = _clamp_zero(l, u)
    reach = np.minimum(eps * np.asarray(row_dual_norms, float), u)
    width = u - l
    safe = np.where(width > 0, width, 1.0)
    pos = np.where(width > 0, np.maximum(c, 0.0) * u / safe * (reach - l), 0.0)
    neg = np.maximum(-c, 0.0) * reach
    return float(np.sum(pos + neg))


def two_part_bound(c, l, u, i: int) -> float:
    """Zero-distance worst-case bound after splitting on row ``i``."""
    c = np.asarray(c, float)
    l, u = _clamp_zero(l, u)
    width = u - l
    safe = np.where(width > 0, width, 1.0)
    terms = np.where(width > 0, -np.maximum(c, 0.0) * u * l / safe, 0.0)
    return float(terms.sum() - terms[i])


def surrogate_cost(net: ReluNetwork, nominal, mode: str = "deterministic", seed: int = 0) -> np.ndarray:
    """Cost on the first hidden layer that favours its runner-up neuron over its top neuron."""
    if net.depth < 2:
        raise ValueError("a surrogate cost is only needed for networks with two or more layers")
    layer = net.layers[0]
    if layer.n_out < 2:
        raise ValueError("first hidden layer needs at least two neurons")
    act = np.maximum(layer.weight @ np.asarray(nominal, float) + layer.bias, 0.0)
    top = argmax_lowest(act)
    if mode == "deterministic":
        second = runner_up(act)
    elif mode == "random":
        rng = np.random.default_rng(seed)
        others = [j for j in range(act.size) if j != top]
        second = int(rng.choice(others))
    else:
        raise ValueError(f"unknown surrogate mode {mode!r}")
    cs = np.zeros(act.size)
    cs[second] = 1.0
    cs[top] = -1.0
    return cs


def selection_cost(problem: CertProblem, surrogate_mode: str = "deterministic", seed: int = 0) -> np.ndarray:
    """Cost used to pick first-layer split rows: the true cost for one layer, a surrogate otherwise."""
    if problem.network.depth == 1:
        return np.asarray(problem.cost)
    return surrogate_cost(problem.network, problem.input.box.center, surrogate_mode, seed)


def _first(bounds: LayerBounds):
    return bounds.lower[0], bounds.upper[0]


def rows_plan(problem: CertProblem, rows: Sequence[int], provenance: str,
              parent: PolytopeSet | None = None, base_signs=()) -> PartitionPlan:
    layer = problem.network.layers[0]
    return sign_pattern_partition(parent or problem.input, layer.weight, layer.bias, rows,
                                  provenance, base_signs)


def two_part_plan(problem: CertProblem, row: int) -> PartitionPlan:
    layer = problem.network.layers[0]
    return row_halfspace_partition(problem.input, layer.weight[row], layer.bias[row], row=row)


def multi_row_partition(problem: CertProblem, n_p: int, bounds: LayerBounds | None = None,
                        cost=None, cap: int = DEFAULT_SEARCH_CAP, cfg: SolverConfig | None = None) -> PartitionPlan:
    """Split along the ``n_p`` best-scoring first-layer rows (``2**n_p`` parts before pruning)."""
    if n_p < 1:
        raise ValueError("n_p must be at least 1")
    if 2 ** n_p > cap:
        raise ValueError(f"2**{n_p} parts exceed the cap {cap}")
    if bounds is None:
        bounds = propagate_bounds(problem.network, problem.input, default_mode(problem.network), cfg)
    c = selection_cost(problem) if cost is None else cost
    order = rank_rows(c, *_first(bounds))
    if n_p > len(order):
        raise ValueError(f"only {len(order)} unstable rows, cannot split on {n_p}")
    return rows_plan(problem, order[:n_p], f"rows{tuple(order[:n_p])}")


def ranked_row_plan(problem: CertProblem, rank: int, bounds: LayerBounds, cost=None) -> PartitionPlan | None:
    """Two-part plan on the row of the given score rank (0 = optimal); ``None`` if absent."""
    c = selection_cost(problem) if cost is None else cost
    order = rank_rows(c, *_first(bounds))
    if rank >= len(order):
        return None
    return two_part_plan(problem, order[rank])


def recursive_refine(problem: CertProblem, budget: int, bounds: LayerBounds | None = None,
                     *, mode: str | None = None, cost=None, cfg: SolverConfig | None = None) -> PartitionedOutcome:
    """Repeatedly split the part with the largest LP value until ``budget`` parts exist.

    Each split uses the optimal two-part row under that part's own bounds.
    The returned outcome carries a trace with one entry per step.
    """
    if budget < 2:
        raise ValueError("budget must be at least 2")
    net = problem.network
    mode = mode or default_mode(net)
    if bounds is None:
        bounds = propagate_bounds(net, problem.input, mode, cfg)
    c_sel = selection_cost(problem) if cost is None else np.asarray(cost, float)
    layer = net.layers[0]
    t0 = time.perf_counter()
    root = solve_lp(build_lp(problem, bounds), cfg)
    root.wall_time = time.perf_counter() - t0
    parts: list[PolytopeSet] = [problem.input]
    signs: list[tuple] = [()]
    pbounds: list[LayerBounds] = [bounds]
    results: list[RelaxResult] = [root]
    trace = [{"step": 0, "parts": 1, "value": root.value, "split_part": None, "row": None}]
    discarded = 0.0
    step = 0
    while len(parts) < budget:
        if not all(r.ok for r in results):
            break
        worst = argmax_lowest(np.array([r.value for r in results]))
        row = optimal_two_part_row(c_sel, *_first(pbounds[worst]))
        if row is None:
            break
        discarded += results[worst].solve_time
        step += 1
        split = row_halfspace_partition(parts[worst], layer.weight[row], layer.bias[row], row=row)
        new_parts, new_signs, new_bounds, new_results = [], [], [], []
        for part, sg in zip(split.parts, split.row_signs):
            t0 = time.perf_counter()
            full_signs = signs[worst] + sg
            pb = restrict_bounds(pbounds[worst], part, net, full_signs, mode=mode, cfg=cfg)
            res = solve_lp(build_lp(problem.restricted(part), pb), cfg)
            res.wall_time = time.perf_counter() - t0
            new_parts.append(part)
            new_signs.append(full_signs)
            new_bounds.append(pb)
            new_results.append(res)
        parts[worst:worst + 1] = new_parts
        signs[worst:worst + 1] = new_signs
        pbounds[worst:worst + 1] = new_bounds
        results[worst:worst + 1] = new_results
        value = max(r.value for r in results) if all(r.ok for r in results) else float("nan")
        trace.append({"step": step, "parts": len(parts), "value": value, "split_part": worst, "row": row})
    plan = PartitionPlan(tuple(parts), f"recursive({budget})", tuple(signs))
    return PartitionedOutcome(plan, results, pbounds, trace, discarded)


@dataclass
class ExhaustiveOutcome:
    rows: tuple[int, ...]
    value: float
    values: dict[tuple[int, ...], float]


def restricted_relu_value(problem: CertProblem, rows: Sequence[int], bounds: LayerBounds | None = None,
                          *, recompute: bool = True, cfg: SolverConfig | None = None) -> float:
    """LP value with exact relu on the listed first-layer rows, via their sign-pattern partition."""
    if bounds is None:
        bounds = propagate_bounds(problem.network, problem.input, default_mode(problem.network), cfg)
    plan = rows_plan(problem, rows, f"rows{tuple(rows)}")
    out = partitioned_lp(problem, plan, bounds, recompute=recompute, cfg=cfg)
    if out.status != OPTIMAL:
        raise RuntimeError(f"partitioned LP failed for rows {tuple(rows)}")
    return out.value


def exhaustive_first_layer_partition(problem: CertProblem, n_p: int, bounds: LayerBounds | None = None,
                                     *, recompute: bool = True, cap: int = DEFAULT_SEARCH_CAP,
                                     cfg: SolverConfig | None = None) -> ExhaustiveOutcome:
    """Best set of ``n_p`` first-layer rows to make exact, by enumeration.

    Ties resolve to the lexicographically first row set.
    """
    n1 = problem.network.layers[0].n_out
    if not 0 <= n_p <= n1:
        raise ValueError(f"n_p must lie in [0, {n1}]")
    work = math.comb(n1, n_p) * 2 ** n_p
    if work > cap:
        raise ValueError(f"{work} partitioned solves exceed the cap {cap}")
    values = {}
    for rows in itertools.combinations(range(n1), n_p):
        values[rows] = restricted_relu_value(problem, rows, bounds, recompute=recompute, cfg=cfg)
    best = min(values, key=lambda r: values[r])
    return ExhaustiveOutcome(best, values[best], values)
