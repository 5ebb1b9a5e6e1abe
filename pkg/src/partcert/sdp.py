"""Semidefinite relaxation of ReLU certification, rank-1 gap tools and coordinate splits."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .bounds import LayerBounds, default_mode, propagate_bounds, restrict_bounds
from .envelope import _Rows
from .lp import PartitionedOutcome, _map
from .problem import BoxSet, CertProblem, EmptySetError, PartitionPlan, PolytopeSet
from .solver import ConicProgram, RelaxResult, SolverConfig, solve

SYM_TOL = 1e-9
PSD_TOL = 1e-7


class SdpMatrix:
    """Lifted matrix over the stacked vector ``(1, x0, x1, ..., xK)``.

    For a one-layer network ``x`` is the input block and ``z`` the output
    block, so ``P_x``, ``P_z``, ``P_xx``, ``P_xz`` and ``P_zz`` are available
    as properties; :meth:`vec` and :meth:`block` address any layer.
    """

    def __init__(self, matrix: np.ndarray, widths: Sequence[int]):
        P = np.array(matrix, dtype=float)
        if P.shape != (1 + sum(widths),) * 2:
            raise ValueError("matrix size does not match the layer widths")
        self.P = P
        self.widths = list(widths)
        self.offsets = np.concatenate([[1], 1 + np.cumsum(widths)]).astype(int).tolist()
        P.setflags(write=False)

    def _sl(self, k: int) -> slice:
        return slice(self.offsets[k], self.offsets[k + 1])

    @property
    def one(self) -> float:
        return float(self.P[0, 0])

    def vec(self, k: int) -> np.ndarray:
        return self.P[0, self._sl(k)]

    def block(self, k: int, m: int) -> np.ndarray:
        return self.P[self._sl(k), self._sl(m)]

    @property
    def P_x(self) -> np.ndarray:
        return self.vec(0)

    @property
    def P_z(self) -> np.ndarray:
        return self.vec(len(self.widths) - 1)

    @property
    def P_xx(self) -> np.ndarray:
        return self.block(0, 0)

    @property
    def P_xz(self) -> np.ndarray:
        return self.block(0, len(self.widths) - 1)

    @property
    def P_zz(self) -> np.ndarray:
        last = len(self.widths) - 1
        return self.block(last, last)

    def asymmetry(self) -> float:
        return float(np.max(np.abs(self.P - self.P.T)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.P + self.P.T)).min())

    def check(self, psd_tol: float = PSD_TOL) -> bool:
        return self.asymmetry() <= SYM_TOL and self.min_eigenvalue() >= -psd_tol

    @classmethod
    def lift(cls, activations: Sequence[np.ndarray]) -> "SdpMatrix":
        v = np.concatenate([[1.0]] + [np.asarray(a, float).reshape(-1) for a in activations])
        return cls(np.outer(v, v), [np.size(a) for a in activations])


@dataclass
class SdpRelaxation:
    """``program`` lives on the coordinates listed in ``keep``; dead neurons are left out."""

    problem: CertProblem
    program: ConicProgram
    widths: list[int]
    input_box: BoxSet
    keep: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.program.psd_dim

    def _kept(self) -> np.ndarray:
        return np.arange(1 + sum(self.widths)) if self.keep is None else self.keep

    def reduce(self, P: SdpMatrix) -> np.ndarray:
        k = self._kept()
        return P.P[np.ix_(k, k)]

    def expand(self, Q: np.ndarray) -> SdpMatrix:
        """Full lifted matrix with zero rows and columns for the dropped neurons."""
        n = 1 + sum(self.widths)
        k = self._kept()
        full = np.zeros((n, n))
        full[np.ix_(k, k)] = Q
        return SdpMatrix(full, self.widths)

    def residual(self, P: SdpMatrix) -> float:
        """Largest violation of a linear row at ``P`` (PSD-ness not included)."""
        return self.program.residuals(self.reduce(P).reshape(-1, order="F"))


def _idx(N: int, i: int, j: int) -> int:
    return j * N + i


def _layer_bounds(net, box: BoxSet, bounds: LayerBounds | None):
    if bounds is not None:
        return list(bounds.lower), list(bounds.upper)
    layer = net.layers[0]
    mid, rad = box.center, 0.5 * (box.upper - box.lower)
    c = layer.weight @ mid + layer.bias
    s = np.abs(layer.weight) @ rad
    return [c - s], [c + s]


def build_multilayer_sdp(problem: CertProblem, bounds: LayerBounds | None = None,
                         box: BoxSet | None = None) -> SdpRelaxation:
    """SDP over the lifted trajectory of the whole network.

    Per layer: ``P_z >= 0``, ``P_z >= W P_x + b`` and
    ``diag(P_zz) = diag(W P_xz) + b * P_z``; every activation that feeds a
    layer gets the quadratic box row ``diag(P_xx) <= (l + u) P_x - l u``,
    using the input box for ``x0`` and relu of the preactivation bounds for
    hidden activations.  ``P_x`` is also kept inside the input polytope.
    Neurons whose preactivation upper bound is nonpositive are identically
    zero and are dropped from the matrix, as the LP fixes them too.
    """
    net = problem.network
    widths = net.widths
    K = net.depth
    if K > 1 and (bounds is None or bounds.depth != K):
        raise ValueError("hidden-layer bounds are needed for networks with more than one layer")
    box = box or problem.input.box
    lowers, uppers = _layer_bounds(net, box, bounds)
    alive = [np.arange(widths[0])] + [np.flatnonzero(u > 0) for u in uppers]
    red = [a.size for a in alive]
    N = 1 + sum(red)
    offsets = np.concatenate([[1], 1 + np.cumsum(red)]).astype(int)
    full_offsets = np.concatenate([[1], 1 + np.cumsum(widths)]).astype(int)
    keep = np.concatenate([[0]] + [full_offsets[k] + a for k, a in enumerate(alive)]).astype(int)
    ineq, eq = _Rows(), _Rows()
    eq.add([_idx(N, 0, 0)], [1.0], 1.0)
    for k, layer in enumerate(net.layers):
        prev = np.arange(offsets[k], offsets[k + 1])
        W = layer.weight[np.ix_(alive[k + 1], alive[k])]
        bias = layer.bias[alive[k + 1]]
        for i in range(red[k + 1]):
            me = offsets[k + 1] + i
            w, b = W[i], bias[i]
            ineq.add([_idx(N, 0, me)], [-1.0], 0.0)
            ineq.add(np.append([_idx(N, 0, p) for p in prev], _idx(N, 0, me)), np.append(w, -1.0), -b)
            cols = [_idx(N, me, me)] + [_idx(N, p, me) for p in prev] + [_idx(N, 0, me)]
            eq.add(cols, np.concatenate([[1.0], -w, [-b]]), 0.0)
    act_bounds = [(box.lower, box.upper)]
    for k in range(K - 1):
        a = alive[k + 1]
        act_bounds.append((np.maximum(lowers[k][a], 0.0), np.maximum(uppers[k][a], 0.0)))
    for k, (lo, hi) in enumerate(act_bounds):
        for i in range(red[k]):
            a = offsets[k] + i
            ineq.add([_idx(N, a, a), _idx(N, 0, a)], [1.0, -(lo[i] + hi[i])], -lo[i] * hi[i])
    x_cols = [_idx(N, 0, offsets[0] + j) for j in range(widths[0])]
    for a, beta in zip(problem.input.A, problem.input.beta):
        ineq.add(x_cols, a, beta)
    lower = np.full(N * N, -np.inf)
    upper = np.full(N * N, np.inf)
    lower[x_cols] = box.lower
    upper[x_cols] = box.upper
    obj = np.zeros(N * N)
    obj[[_idx(N, 0, offsets[K] + i) for i in range(red[K])]] = np.asarray(problem.cost)[alive[K]]
    A_ub, b_ub = ineq.matrix(N * N)
    A_eq, b_eq = eq.matrix(N * N)
    scale = _magnitudes(net, box, bounds)[keep]
    prog = ConicProgram(obj, A_ub, b_ub, A_eq, b_eq, lower, upper,
                        offset=-problem.offset, psd_dim=N, psd_scale=scale)
    return SdpRelaxation(problem, prog, widths, box, keep)


def _magnitudes(net, box: BoxSet, bounds: LayerBounds | None) -> np.ndarray:
    """Per-coordinate size of (1, x0, .., xK), used to condition the solve."""
    lo, hi = box.lower, box.upper
    sizes = [np.ones(1), np.maximum(np.abs(lo), np.abs(hi))]
    for k, layer in enumerate(net.layers):
        mid, rad = 0.5 * (lo + hi), 0.5 * (hi - lo)
        lo = layer.weight @ mid + layer.bias - np.abs(layer.weight) @ rad
        hi = layer.weight @ mid + layer.bias + np.abs(layer.weight) @ rad
        if bounds is not None:
            lo, hi = np.maximum(lo, bounds.lower[k]), np.minimum(hi, bounds.upper[k])
        lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
        sizes.append(hi)
    s = np.concatenate(sizes)
    return np.maximum(s, 1e-3 * max(float(s.max()), 1.0))


def build_sdp(problem: CertProblem, lower=None, upper=None) -> SdpRelaxation:
    """One-layer SDP with input box ``[lower, upper]`` (defaults to the input set's box)."""
    if problem.network.depth != 1:
        raise ValueError("build_sdp handles one-layer networks; use build_multilayer_sdp")
    box = problem.input.box if lower is None else BoxSet(lower, upper)
    return build_multilayer_sdp(problem, None, box)


def solve_sdp(relax: SdpRelaxation, cfg: SolverConfig | None = None) -> RelaxResult:
    """Solve on the reduced program; ``auto`` picks the form from the full lifted size
    so that a relaxation and its parts always use the same form."""
    cfg = cfg or SolverConfig()
    if cfg.sdp_form == "auto":
        full = 1 + sum(relax.widths)
        cfg = replace(cfg, sdp_form="dual" if full >= cfg.dual_form_min_dim else "primal")
    res = solve(relax.program, cfg)
    if res.ok:
        res.optimizer = relax.expand(res.optimizer)
    return res


def sdp_value(problem: CertProblem, bounds: LayerBounds | None = None, mode: str | None = None,
              cfg: SolverConfig | None = None) -> RelaxResult:
    """Propagate bounds when needed and solve the unpartitioned SDP."""
    if problem.network.depth > 1 and bounds is None:
        bounds = propagate_bounds(problem.network, problem.input, mode or default_mode(problem.network), cfg)
    box = problem.input.bounding_box(cfg)
    return solve_sdp(build_multilayer_sdp(problem, bounds, box), cfg)


def partitioned_sdp(problem: CertProblem, plan: PartitionPlan, bounds: LayerBounds | None = None,
                    *, mode: str | None = None, cfg: SolverConfig | None = None,
                    workers: int = 1) -> PartitionedOutcome:
    """Per-part SDP on each part's bounding box (and halfspaces); overall value is the max."""
    net = problem.network
    mode = mode or default_mode(net)
    if net.depth > 1 and bounds is None:
        bounds = propagate_bounds(net, problem.input, mode, cfg)

    def one(j: int):
        t0 = time.perf_counter()
        part = plan.parts[j]
        pb = None
        if net.depth > 1:
            pb = restrict_bounds(bounds, part, net, plan.row_signs[j], mode=mode, cfg=cfg)
        box = part.bounding_box(cfg)
        res = solve_sdp(build_multilayer_sdp(problem.restricted(part), pb, box), cfg)
        res.wall_time = time.perf_counter() - t0
        return res, pb

    out = _map(one, range(len(plan.parts)), workers)
    return PartitionedOutcome(plan, [r for r, _ in out], [b for _, b in out])


def rank1_gap(P: SdpMatrix) -> float:
    """``tr(P_xx) - |P_x|^2``, read directly from the blocks."""
    return float(np.trace(P.P_xx) - P.P_x @ P.P_x)


def output_rank1_gap(P: SdpMatrix) -> float:
    return float(np.trace(P.P_zz) - P.P_z @ P.P_z)


def rank1_gap_bound(part_boxes: Sequence[tuple[np.ndarray, np.ndarray]]) -> float:
    """Quarter of the summed squared worst-case widths over all parts."""
    return 0.25 * h_value(part_boxes)


def h_value(part_boxes: Sequence[tuple[np.ndarray, np.ndarray]]) -> float:
    widths = np.array([np.asarray(u, float) - np.asarray(l, float) for l, u in part_boxes])
    return float(np.sum(np.max(widths, axis=0) ** 2))


def uniform_slabs(lower, upper, k: int, p: int) -> list[tuple[np.ndarray, np.ndarray]]:
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    if p < 2:
        raise ValueError("need at least two parts")
    if not lower[k] < upper[k]:
        raise ValueError(f"coordinate {k} has zero width")
    out = []
    step = (upper[k] - lower[k]) / p
    for j in range(p):
        lo, hi = lower.copy(), upper.copy()
        lo[k] = lower[k] + j * step
        hi[k] = upper[k] if j == p - 1 else lower[k] + (j + 1) * step
        out.append((lo, hi))
    return out


def uniform_partition(parent: BoxSet | PolytopeSet, k: int, p: int) -> PartitionPlan:
    """``p`` equal-width slabs along coordinate ``k``; empty slabs are dropped."""
    poly = parent if isinstance(parent, PolytopeSet) else PolytopeSet(parent)
    parts, notes = [], []
    for j, (lo, hi) in enumerate(uniform_slabs(poly.box.lower, poly.box.upper, k, p)):
        try:
            parts.append(poly.with_box(BoxSet(lo, hi)))
        except EmptySetError:
            notes.append(f"slab {j} is empty; dropped")
    return PartitionPlan(tuple(parts), f"coordinate-split({k},{p})", notes=tuple(notes))


def q_factor(lower, upper):
    """Largest absolute bound over all coordinates (works on exact rationals too)."""
    return max((max(abs(a), abs(b)) for a, b in zip(lower, upper)), default=0)


@dataclass(frozen=True)
class CoordinateChoice:
    index: int
    symmetric: bool
    tied: bool

    @property
    def strict(self) -> bool:
        """True when a midpoint split at ``index`` must strictly lower q on one side."""
        return not (self.symmetric or self.tied)


def optimal_sdp_coordinate(lower, upper) -> CoordinateChoice:
    """Coordinate with the largest absolute bound, lowest index first.

    ``symmetric`` flags ``|l| = |u|`` at the chosen coordinate and ``tied``
    flags another coordinate reaching the same value; either one means the
    split need not reduce q.
    """
    scores = [max(abs(a), abs(b)) for a, b in zip(lower, upper)]
    if not scores:
        raise ValueError("empty bounds")
    top = max(scores)
    i = scores.index(top)
    return CoordinateChoice(i, abs(lower[i]) == abs(upper[i]), scores.count(top) > 1)


def midpoint_split(lower, upper, k: int):
    """Both halves of the box split at the midpoint of coordinate ``k``."""
    mid = (lower[k] + upper[k]) / 2
    lo1, hi1 = list(lower), list(upper)
    lo2, hi2 = list(lower), list(upper)
    hi1[k] = mid
    lo2[k] = mid
    return (lo1, hi1), (lo2, hi2)


def optimal_sdp_plan(problem: CertProblem) -> tuple[PartitionPlan, CoordinateChoice]:
    box = problem.input.box
    choice = optimal_sdp_coordinate(box.lower.tolist(), box.upper.tolist())
    return uniform_partition(problem.input, choice.index, 2), choice


def worst_case_sdp_bound(c, lower, upper, u_hat, row_dual_norms, eps: float, *, weights) -> float:
    """Upper bound on the SDP relaxation error at input distance ``eps``.

    The first-layer rows in ``weights`` must have unit l1 norm.
    """
    W = np.asarray(weights, float)
    norms = np.abs(W).sum(axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise ValueError("rows are not l1-normalised; normalise the network first")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    c = np.asarray(c, float)
    q = float(q_factor(np.asarray(lower, float), np.asarray(upper, float)))
    reach = np.minimum(np.maximum(np.asarray(u_hat, float), 0.0), eps * np.asarray(row_dual_norms, float))
    return float(np.sum(np.maximum(c, 0.0) * q + np.maximum(-c, 0.0) * reach))


def psd_element_check(P, tol: float = 1e-9) -> tuple[bool, tuple[int, int] | None, float]:
    """Check ``|P_ij| <= (P_ii + P_jj) / 2`` for every pair.

    Returns ``(ok, worst pair or None, worst excess)``.
    """
    P = np.asarray(P, float)
    d = np.diag(P)
    excess = np.abs(P) - 0.5 * (d[:, None] + d[None, :])
    idx = np.unravel_index(int(np.argmax(excess)), excess.shape)
    worst = float(excess[idx])
    if worst > tol:
        i, j = sorted(int(t) for t in idx)
        return False, (i, j), worst
    return True, None, worst
