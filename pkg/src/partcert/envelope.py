"""Sparse assembly of the triangle relaxation of a ReLU network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .network import ReluNetwork
from .problem import PolytopeSet

DEGENERATE_WIDTH = 1e-10

ACTIVE, INACTIVE, FIXED, UNSTABLE = "active", "inactive", "fixed", "unstable"


def classify(l: float, u: float) -> str:
    if l >= 0.0:
        return ACTIVE
    if u <= 0.0:
        return INACTIVE
    if u - l < DEGENERATE_WIDTH:
        return FIXED
    return UNSTABLE


@dataclass
class EnvelopeRows:
    """Linear rows over the stacked variables ``(x, x1, ..., x_depth)``."""

    offsets: list[int]
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    kinds: list[list[str]]

    @property
    def n_vars(self) -> int:
        return self.offsets[-1]

    def block(self, k: int) -> slice:
        return slice(self.offsets[k], self.offsets[k + 1])


class _Rows:
    def __init__(self) -> None:
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[float] = []
        self.rhs: list[float] = []

    def add(self, cols, vals, rhs: float) -> None:
        r = len(self.rhs)
        cols = np.asarray(cols).reshape(-1)
        vals = np.asarray(vals, dtype=float).reshape(-1)
        keep = vals != 0.0
        self.rows.extend([r] * int(keep.sum()))
        self.cols.extend(cols[keep].tolist())
        self.vals.extend(vals[keep].tolist())
        self.rhs.append(float(rhs))

    def matrix(self, n: int) -> tuple[sp.csr_matrix, np.ndarray]:
        mat = sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(len(self.rhs), n))
        return mat, np.asarray(self.rhs, dtype=float)


def assemble(net: ReluNetwork, poly: PolytopeSet, lowers, uppers, depth: int | None = None) -> EnvelopeRows:
    """Triangle-relaxation rows for the first ``depth`` layers.

    ``lowers[k]``/``uppers[k]`` are the preactivation bounds of layer ``k+1``.
    Per neuron: active and inactive neurons get one equality, unstable ones
    the three inequalities ``x >= 0``, ``x >= z`` and
    ``x <= u (z - l) / (u - l)``; a degenerate interval pins ``x = relu(u)``.
    """
    depth = net.depth if depth is None else depth
    widths = net.widths[: depth + 1]
    offsets = np.concatenate([[0], np.cumsum(widths)]).astype(int).tolist()
    n = offsets[-1]
    ineq, eq = _Rows(), _Rows()
    lower = np.full(n, -np.inf)
    upper = np.full(n, np.inf)
    lower[: widths[0]] = poly.box.lower
    upper[: widths[0]] = poly.box.upper
    for a, beta in zip(poly.A, poly.beta):
        ineq.add(np.arange(widths[0]), a, beta)
    kinds = []
    for k in range(depth):
        layer = net.layers[k]
        prev = np.arange(offsets[k], offsets[k + 1])
        l_k, u_k = np.asarray(lowers[k], float), np.asarray(uppers[k], float)
        layer_kinds = []
        for i in range(layer.n_out):
            me = offsets[k + 1] + i
            w, b = layer.weight[i], layer.bias[i]
            l, u = l_k[i], u_k[i]
            kind = classify(l, u)
            layer_kinds.append(kind)
            if kind == ACTIVE:
                eq.add(np.append(prev, me), np.append(-w, 1.0), b)
            elif kind == INACTIVE:
                eq.add([me], [1.0], 0.0)
            elif kind == FIXED:
                eq.add([me], [1.0], max(u, 0.0))
            else:
                ineq.add([me], [-1.0], 0.0)
                ineq.add(np.append(prev, me), np.append(w, -1.0), -b)
                s = u / (u - l)
                ineq.add(np.append(prev, me), np.append(-s * w, 1.0), s * (b - l))
        kinds.append(layer_kinds)
    A_ub, b_ub = ineq.matrix(n)
    A_eq, b_eq = eq.matrix(n)
    return EnvelopeRows(offsets, A_ub, b_ub, A_eq, b_eq, lower, upper, kinds)
