"""Preactivation bounds over an input set."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .envelope import assemble
from .network import ReluNetwork
from .problem import BoxSet, PolytopeSet
from .solver import ConicProgram, SolverConfig, solve

MODES = ("interval", "lp-tight")
PAD = 1e-9


@dataclass(frozen=True)
class LayerBounds:
    """``lower[k]``, ``upper[k]`` bound the preactivation of layer ``k + 1``."""

    lower: tuple[np.ndarray, ...]
    upper: tuple[np.ndarray, ...]
    input_box: BoxSet
    mode: str = "interval"
    fallback: bool = False

    def __post_init__(self) -> None:
        lo = tuple(np.array(a, dtype=float) for a in self.lower)
        hi = tuple(np.array(a, dtype=float) for a in self.upper)
        for a, b in zip(lo, hi):
            if a.shape != b.shape or np.any(a > b):
                raise ValueError("layer bounds must satisfy lower <= upper")
            a.setflags(write=False)
            b.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def depth(self) -> int:
        return len(self.lower)

    def layer(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        return self.lower[k], self.upper[k]

    def contains(self, other: "LayerBounds", tol: float = 0.0) -> bool:
        """True when every interval of ``other`` lies inside ours."""
        return all(
            np.all(lo <= olo + tol) and np.all(ohi <= hi + tol)
            for lo, hi, olo, ohi in zip(self.lower, self.upper, other.lower, other.upper)
        )


def _affine_interval(w: np.ndarray, b: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    mid = 0.5 * (lo + hi)
    rad = 0.5 * (hi - lo)
    centre = w @ mid + b
    spread = np.abs(w) @ rad
    return centre - spread, centre + spread


def max_over_box_halfspace(w, lower, upper, a, beta) -> float:
    """Exact ``max w @ x`` over ``lower <= x <= upper, a @ x <= beta`` (fractional knapsack).

    Starts from the box maximiser and buys back the halfspace violation
    from the coordinates that lose the least objective per unit of ``a @ x``.
    Returns ``-inf`` when the feasible set is empty.
    """
    w, lower, upper, a = (np.asarray(t, dtype=float) for t in (w, lower, upper, a))
    x = np.where(w > 0, upper, lower)
    zero = w == 0
    x[zero] = np.where(a[zero] > 0, lower[zero], upper[zero])
    excess = float(a @ x - beta)
    value = float(w @ x)
    if excess <= 0:
        return value
    at_upper = x == upper
    movable = np.where(at_upper, a > 0, a < 0) & (upper > lower)
    idx = np.flatnonzero(movable)
    cap = np.abs(a[idx]) * (upper[idx] - lower[idx])
    rate = np.abs(w[idx]) / np.abs(a[idx])
    for j in np.argsort(rate, kind="stable"):
        take = min(cap[j], excess)
        value -= rate[j] * take
        excess -= take
        if excess <= 0:
            return value
    return -np.inf if excess > 1e-12 * (1.0 + abs(beta)) else value


def first_layer_bounds(net: ReluNetwork, input_set, cfg: SolverConfig | None = None):
    """Exact range of each first-layer preactivation over a box or polytope."""
    layer = net.layers[0]
    if isinstance(input_set, BoxSet):
        input_set = PolytopeSet(input_set)
    box = input_set.box
    lo, hi = _affine_interval(layer.weight, layer.bias, box.lower, box.upper)
    if input_set.is_box:
        return lo, hi
    if input_set.A.shape[0] == 1:
        a, beta = input_set.A[0], float(input_set.beta[0])
        for i in range(layer.n_out):
            w, b = layer.weight[i], layer.bias[i]
            top = max_over_box_halfspace(w, box.lower, box.upper, a, beta)
            bot = -max_over_box_halfspace(-w, box.lower, box.upper, a, beta)
            if not (np.isfinite(top) and np.isfinite(bot)):
                raise RuntimeError("input polytope is empty")
            hi[i] = min(hi[i], top + b + PAD * (1 + abs(top + b)))
            lo[i] = max(lo[i], bot + b - PAD * (1 + abs(bot + b)))
        return lo, np.maximum(hi, lo)
    lo, hi = lo.copy(), hi.copy()
    for i in range(layer.n_out):
        for sign in (1.0, -1.0):
            res = solve(ConicProgram(sign * layer.weight[i], A_ub=input_set.A, b_ub=input_set.beta,
                                     lower=box.lower, upper=box.upper), cfg)
            if res.status != "optimal":
                raise RuntimeError(f"first-layer bound LP failed for row {i}: {res.status}")
            val = sign * res.value + layer.bias[i]
            if sign > 0:
                hi[i] = min(hi[i], val + PAD * (1 + abs(val)))
            else:
                lo[i] = max(lo[i], val - PAD * (1 + abs(val)))
    return lo, np.maximum(hi, lo)


def _clamp_signs(lo, hi, row_signs):
    lo, hi = lo.copy(), hi.copy()
    for row, sign in row_signs:
        if sign > 0:
            lo[row] = max(lo[row], 0.0)
            hi[row] = max(hi[row], lo[row])
        else:
            hi[row] = min(hi[row], 0.0)
            lo[row] = min(lo[row], hi[row])
    return lo, hi


def _intersect(lo, hi, parent_lo, parent_hi):
    lo = np.maximum(lo, parent_lo)
    hi = np.minimum(hi, parent_hi)
    # A numerically empty interval collapses onto the nearest parent value.
    bad = lo > hi
    if np.any(bad):
        hi = np.where(bad, lo, hi)
    return lo, hi


def _tight_layer(net, poly, lowers, uppers, k, cfg):
    """Per-neuron LP bounds for layer ``k + 1`` under the relaxation of layers ``1..k``."""
    rows = assemble(net, poly, lowers, uppers, depth=k)
    layer = net.layers[k]
    blk = rows.block(k)
    lo = np.empty(layer.n_out)
    hi = np.empty(layer.n_out)
    for i in range(layer.n_out):
        for sign in (1.0, -1.0):
            obj = np.zeros(rows.n_vars)
            obj[blk] = sign * layer.weight[i]
            res = solve(ConicProgram(obj, rows.A_ub, rows.b_ub, rows.A_eq, rows.b_eq,
                                     rows.lower, rows.upper), cfg)
            if res.status != "optimal":
                return None
            val = sign * res.value + layer.bias[i]
            if sign > 0:
                hi[i] = val + PAD * (1 + abs(val))
            else:
                lo[i] = val - PAD * (1 + abs(val))
    return lo, np.maximum(hi, lo)


def propagate_bounds(net: ReluNetwork, input_set, mode: str = "interval",
                     cfg: SolverConfig | None = None, *, parent: LayerBounds | None = None,
                     row_signs: Sequence[tuple[int, int]] = ()) -> LayerBounds:
    """Bounds for every layer.

    The first layer is always exact over the set.  Deeper layers use
    interval arithmetic or, in ``lp-tight`` mode, per-neuron LPs over the
    relaxation of the preceding layers (intersected with interval bounds).
    ``row_signs`` clamp first-layer intervals at zero and ``parent`` bounds
    are intersected in, so results never loosen a parent.
    """
    if mode not in MODES:
        raise ValueError(f"unknown bound mode {mode!r}")
    if isinstance(input_set, BoxSet):
        input_set = PolytopeSet(input_set)
    lo, hi = first_layer_bounds(net, input_set, cfg)
    lo, hi = _clamp_signs(lo, hi, row_signs)
    if parent is not None:
        lo, hi = _intersect(lo, hi, *parent.layer(0))
    lowers, uppers = [lo], [hi]
    fallback = False
    for k in range(1, net.depth):
        layer = net.layers[k]
        lo, hi = _affine_interval(layer.weight, layer.bias,
                                  np.maximum(lowers[-1], 0.0), np.maximum(uppers[-1], 0.0))
        if mode == "lp-tight" and not fallback:
            tight = _tight_layer(net, input_set, lowers, uppers, k, cfg)
            if tight is None:
                fallback = True
                warnings.warn("bound LP failed; falling back to interval bounds", RuntimeWarning)
            else:
                lo, hi = _intersect(tight[0], tight[1], lo, hi)
        if parent is not None:
            lo, hi = _intersect(lo, hi, *parent.layer(k))
        lowers.append(lo)
        uppers.append(hi)
    return LayerBounds(tuple(lowers), tuple(uppers), input_set.box, mode, fallback)


def restrict_bounds(bounds: LayerBounds, part: PolytopeSet, net: ReluNetwork,
                    row_signs: Sequence[tuple[int, int]] = (), *, recompute: bool = True,
                    mode: str | None = None, cfg: SolverConfig | None = None) -> LayerBounds:
    """Bounds for a part of the original set, nested inside ``bounds``.

    With ``recompute=False`` the parent bounds are only clamped at zero on
    the rows listed in ``row_signs``.
    """
    if not recompute:
        lo, hi = _clamp_signs(bounds.lower[0], bounds.upper[0], row_signs)
        return LayerBounds((lo,) + bounds.lower[1:], (hi,) + bounds.upper[1:],
                           part.box, bounds.mode, bounds.fallback)
    return propagate_bounds(net, part, mode or bounds.mode, cfg, parent=bounds, row_signs=row_signs)


def default_mode(net: ReluNetwork) -> str:
    """``lp-tight`` for up to three layers, ``interval`` beyond."""
    return "lp-tight" if net.depth <= 3 else "interval"
