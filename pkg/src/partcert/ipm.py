"""Dense Mehrotra predictor-corrector interior-point method for small LPs.

Solves ``maximize c @ x`` subject to ``A x <= b`` and ``E x = f``.  Sized for
programs with at most a few thousand rows; every Newton step is one dense
symmetric solve.  Primal infeasibility is detected from a Farkas ray in the
dual iterates, with a phase-one problem as fallback.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


@dataclass
class IpmOutcome:
    status: str
    x: np.ndarray | None
    value: float
    y: np.ndarray | None = None
    v: np.ndarray | None = None
    iterations: int = 0
    primal_residual: float = np.inf
    dual_residual: float = np.inf
    gap: float = np.inf
    notes: list[str] = field(default_factory=list)


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


def _newton(A, E, d, rhs_x, rhs_e):
    n = A.shape[1]
    m_e = E.shape[0]
    H = (A.T * d) @ A
    H[np.diag_indices(n)] += 1e-12
    if m_e:
        K = np.zeros((n + m_e, n + m_e))
        K[:n, :n] = H
        K[:n, n:] = E.T
        K[n:, :n] = E
        K[n:, n:] = -1e-14 * np.eye(m_e)
        rhs = np.concatenate([rhs_x, rhs_e])
    else:
        K, rhs = H, rhs_x
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            lu = scipy.linalg.lu_factor(K, check_finite=False)
        sol = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
        for _ in range(2):
            sol += scipy.linalg.lu_solve(lu, rhs - K @ sol, check_finite=False)
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError("non-finite Newton step")
    except (np.linalg.LinAlgError, ValueError, scipy.linalg.LinAlgWarning):
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def _core(c, A, b, E, f, tol, max_iter):
    """Run the predictor-corrector iteration on ``min q x, A x + s = b, E x = f``."""
    m, n = A.shape
    q = -c
    x = np.zeros(n)
    if E.shape[0]:
        x = np.linalg.lstsq(E, f, rcond=None)[0]
    s = np.maximum(b - A @ x, 1.0)
    y = np.ones(m)
    v = np.zeros(E.shape[0])
    scale_b = 1.0 + np.linalg.norm(np.concatenate([b, f]), np.inf)
    scale_q = 1.0 + np.linalg.norm(q, np.inf)
    out = IpmOutcome("numerical-failure", None, np.nan)
    for it in range(1, max_iter + 1):
        r_d = q + A.T @ y + E.T @ v
        r_p = A @ x + s - b
        r_e = E @ x - f
        mu = float(s @ y) / max(m, 1)
        pres = max(np.linalg.norm(r_p, np.inf), np.linalg.norm(r_e, np.inf) if r_e.size else 0.0)
        dres = np.linalg.norm(r_d, np.inf)
        pobj = q @ x
        dobj = -(b @ y) - (f @ v)
        gap = abs(pobj - dobj) / (1.0 + abs(pobj))
        out.iterations, out.primal_residual, out.dual_residual, out.gap = it, pres, dres, gap
        if pres / scale_b < tol and dres / scale_q < tol and gap < tol:
            out.status, out.x, out.y, out.v, out.value = "optimal", x, y, v, float(c @ x)
            return out
        # Farkas ray: y >= 0, A^T y + E^T v ~ 0, b y + f v < 0 certifies no x exists.
        ray_norm = np.linalg.norm(np.concatenate([y, v]), np.inf)
        if ray_norm > 1e6:
            yr, vr = y / ray_norm, v / ray_norm
            if (np.linalg.norm(A.T @ yr + E.T @ vr, np.inf) < 1e-8 * scale_q
                    and b @ yr + f @ vr < -1e-7):
                out.status = "infeasible"
                return out
        if not np.all(np.isfinite([mu, pres, dres])):
            return out
        d = y / s
        # predictor
        r_c = s * y
        g = (-r_c + y * r_p) / s
        dx, dv = _newton(A, E, d, -r_d - A.T @ g, -r_e)
        ds = -r_p - A @ dx
        dy = d * (A @ dx) + g
        a_p, a_d = min(1.0, _max_step(s, ds)), min(1.0, _max_step(y, dy))
        mu_aff = float((s + a_p * ds) @ (y + a_d * dy)) / max(m, 1)
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        # corrector
        r_c = s * y + ds * dy - sigma * mu
        g = (-r_c + y * r_p) / s
        dx, dv = _newton(A, E, d, -r_d - A.T @ g, -r_e)
        ds = -r_p - A @ dx
        dy = d * (A @ dx) + g
        a_p = min(1.0, 0.995 * _max_step(s, ds))
        a_d = min(1.0, 0.995 * _max_step(y, dy))
        x = x + a_p * dx
        s = s + a_p * ds
        y = y + a_d * dy
        v = v + a_d * dv
        s = np.maximum(s, 1e-300)
        y = np.maximum(y, 1e-300)
    out.notes.append("iteration limit reached")
    return out


def _phase_one_infeasible(A, b, E, f, tol, max_iter) -> bool:
    """True when ``{A x <= b, E x = f}`` is empty, via min t s.t. A x - t <= b, t >= -1."""
    m, n = A.shape
    A1 = np.vstack([np.hstack([A, -np.ones((m, 1))]), np.append(np.zeros(n), -1.0)[None, :]])
    b1 = np.append(b, 1.0)
    E1 = np.hstack([E, np.zeros((E.shape[0], 1))])
    c1 = np.append(np.zeros(n), -1.0)
    res = _core(c1, A1, b1, E1, f, tol, max_iter)
    if res.status != "optimal":
        return False
    return -res.value > 1e3 * tol * (1.0 + np.abs(b).max(initial=0.0))


def solve_dense_lp(c, A, b, E=None, f=None, tol: float = 1e-9, max_iter: int = 200) -> IpmOutcome:
    c = np.asarray(c, dtype=np.float64)
    n = c.size
    A = np.asarray(A, dtype=np.float64).reshape(-1, n)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    E = np.zeros((0, n)) if E is None else np.asarray(E, dtype=np.float64).reshape(-1, n)
    f = np.zeros(0) if f is None else np.asarray(f, dtype=np.float64).reshape(-1)
    out = _core(c, A, b, E, f, tol, max_iter)
    if out.status == "numerical-failure" and A.shape[0] and _phase_one_infeasible(A, b, E, f, tol, max_iter):
        out.status = "infeasible"
        out.notes.append("phase one certified emptiness")
    return out
