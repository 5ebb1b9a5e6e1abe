"""Lower bounds and exact small-instance optima used to test the relaxations."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .network import forward_batch, preactivations
from .problem import CertProblem, PolytopeSet
from .solver import ConicProgram, SolverConfig, solve

EXACT, LOWER = "exact", "lower-bound"


@dataclass(frozen=True)
class OracleResult:
    value: float
    witness: np.ndarray
    method: str
    exactness: str
    evaluated: int = 0


def _objective_and_grad(problem: CertProblem, x: np.ndarray) -> tuple[float, np.ndarray]:
    net = problem.network
    pres = [p[0] for p in preactivations(net, x[None, :])]
    out = np.maximum(pres[-1], 0.0)
    g = np.asarray(problem.cost, float).copy()
    for layer, pre in zip(reversed(net.layers), reversed(pres)):
        g = layer.weight.T @ (g * (pre > 0.0))
    return float(problem.cost @ out - problem.offset), g


def project(poly: PolytopeSet, x: np.ndarray, rounds: int = 100, tol: float = 1e-12) -> np.ndarray:
    """Alternating projections onto the halfspaces and the box (box last)."""
    lo, hi = poly.box.lower, poly.box.upper
    x = np.clip(x, lo, hi)
    if poly.is_box:
        return x
    norms = np.einsum("ij,ij->i", poly.A, poly.A)
    for _ in range(rounds):
        viol = poly.A @ x - poly.beta
        if np.all(viol <= tol):
            break
        for a, b, nn in zip(poly.A, poly.beta, norms):
            r = a @ x - b
            if r > 0 and nn > 0:
                x = x - (r / nn) * a
        x = np.clip(x, lo, hi)
    return x


def _ascent(problem: CertProblem, x: np.ndarray, iterations: int) -> tuple[float, np.ndarray]:
    poly = problem.input
    x = project(poly, x)
    feasible = poly.contains(x, 1e-12)
    f, g = _objective_and_grad(problem, x)
    best_f, best_x = (f, x.copy()) if feasible else (-np.inf, x.copy())
    diam = float(np.max(poly.box.upper - poly.box.lower)) or 1.0
    step = diam
    for _ in range(iterations):
        gn = np.linalg.norm(g)
        if gn == 0.0:
            break
        moved = False
        while step > 1e-12 * diam:
            cand = project(poly, x + step * g / gn)
            fc, gc = _objective_and_grad(problem, cand)
            if fc > f + 1e-15 * (1.0 + abs(f)):
                x, f, g = cand, fc, gc
                moved = True
                step *= 2.0
                break
            step *= 0.5
        if not moved:
            break
        if f > best_f and poly.contains(x, 1e-12):
            best_f, best_x = f, x.copy()
    return best_f, best_x


def multistart_local_search(problem: CertProblem, starts: int = 5, seed: int = 0,
                            iterations: int = 500) -> OracleResult:
    """Best point found by projected gradient ascent from seeded random starts.

    Relu kinks get subgradient 0; steps double after success and halve on
    failure.  Only points inside the input set count, so the value is a
    valid lower bound on the true optimum.
    """
    rng = np.random.default_rng(seed)
    box = problem.input.box
    best_f, best_x = -np.inf, box.center
    for _ in range(starts):
        x0 = rng.uniform(box.lower, box.upper)
        f, x = _ascent(problem, x0, iterations)
        if f > best_f:
            best_f, best_x = f, x
    if not np.isfinite(best_f):
        x = project(problem.input, box.center)
        best_f, best_x = problem.objective(x), x
    return OracleResult(float(best_f), best_x, "multistart", LOWER, starts)


def activation_pattern_oracle(problem: CertProblem, cap: int = 12,
                              cfg: SolverConfig | None = None) -> OracleResult:
    """Exact optimum for one layer: one LP per sign pattern of the preactivations.

    Each pattern fixes the network to an affine map on a polyhedral cell.
    The LPs run on the in-house interior-point backend by default, keeping
    this oracle independent of the solver used by the relaxations.
    """
    net = problem.network
    if net.depth != 1:
        raise ValueError("the activation-pattern oracle handles one-layer networks")
    n_z = net.output_dim
    if n_z > cap:
        raise ValueError(f"{n_z} neurons exceed the pattern cap {cap}")
    cfg = cfg or SolverConfig(lp_backend="ipm")
    W, b = net.layers[0].weight, net.layers[0].bias
    c = np.asarray(problem.cost, float)
    poly = problem.input
    best_v, best_x, count = -np.inf, None, 0
    for pattern in itertools.product((1, 0), repeat=n_z):
        on = np.array(pattern, dtype=bool)
        signs = np.where(on, -1.0, 1.0)
        A = np.vstack([poly.A, signs[:, None] * W])
        beta = np.concatenate([poly.beta, np.where(on, b, -b)])
        obj = (c[on] @ W[on]) if on.any() else np.zeros(net.input_dim)
        const = float(c[on] @ b[on]) - problem.offset
        res = solve(ConicProgram(obj, A_ub=A, b_ub=beta, lower=poly.box.lower,
                                 upper=poly.box.upper, offset=const), cfg)
        if res.status == "infeasible":
            continue
        if not res.ok:
            raise RuntimeError(f"pattern LP failed: {res.status} {res.message}")
        count += 1
        if res.value > best_v:
            best_v, best_x = res.value, np.asarray(res.optimizer)
    if best_x is None:
        raise RuntimeError("every sign pattern was infeasible; the input set must be empty")
    return OracleResult(float(best_v), best_x, "activation-pattern", EXACT, count)


def grid_oracle(problem: CertProblem, step: float = 1e-3, max_points: int = 2_000_000) -> tuple[OracleResult, float]:
    """Dense grid search over the input box; returns the result and its Lipschitz slack."""
    box = problem.input.box
    n = box.dim
    if n > 3:
        raise ValueError("grid search is limited to three inputs")
    counts = [max(2, int(np.ceil((u - l) / step)) + 1) for l, u in zip(box.lower, box.upper)]
    if int(np.prod(counts)) > max_points:
        counts = [max(2, int(round(max_points ** (1.0 / n))))] * n
    axes = [np.linspace(l, u, k) for l, u, k in zip(box.lower, box.upper, counts)]
    spacing = max((u - l) / (k - 1) for l, u, k in zip(box.lower, box.upper, counts))
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    mesh = mesh[problem.input.contains_batch(mesh)]
    vals = forward_batch(problem.network, mesh) @ problem.cost - problem.offset
    j = int(np.argmax(vals))
    lip = np.abs(problem.cost)
    for layer in reversed(problem.network.layers):
        lip = np.abs(layer.weight).T @ lip
    slack = float(np.sum(lip) * spacing / 2.0)
    return OracleResult(float(vals[j]), mesh[j], "grid", LOWER, len(mesh)), slack


def brute_force_min_k_union(sets: Sequence[Sequence[int]], k: int) -> tuple[tuple[int, ...], int]:
    """Lexicographically first choice of ``k`` sets with the smallest union."""
    fam = [frozenset(s) for s in sets]
    if len(fam) > 20:
        raise ValueError("brute force is limited to 20 sets")
    best: tuple[tuple[int, ...], int] | None = None
    for combo in itertools.combinations(range(len(fam)), k):
        size = len(frozenset().union(*(fam[j] for j in combo)))
        if best is None or size < best[1]:
            best = (combo, size)
    assert best is not None
    return best
