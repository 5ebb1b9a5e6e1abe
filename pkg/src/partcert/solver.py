"""Backend-neutral contract for the linear and semidefinite programs we emit.

A :class:`ConicProgram` is ``maximize obj @ v + offset`` over a real vector
``v`` subject to sparse linear rows and variable bounds.  When ``psd_dim`` is
set, ``v`` is the column-major vectorisation of a symmetric ``psd_dim`` square
matrix constrained to the PSD cone.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .ipm import solve_dense_lp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
FAILURE = "numerical-failure"
INACCURATE = "optimal_inaccurate"  # backend status kept at the head of the message


@dataclass(frozen=True)
class SolverConfig:
    feasibility_tol: float = 1e-9
    optimality_tol: float = 1e-9
    max_iterations: int = 10_000
    time_limit: float = 600.0
    lp_backend: str = "highs"
    sdp_backend: str = "CLARABEL"
    sdp_form: str = "auto"
    dual_form_min_dim: int = 30

    def __post_init__(self) -> None:
        if self.sdp_form not in ("auto", "primal", "dual"):
            raise ValueError(f"unknown SDP form {self.sdp_form!r}")
        if self.feasibility_tol <= 0 or self.optimality_tol <= 0:
            raise ValueError("solver tolerances must be positive")
        if self.lp_backend not in ("highs", "ipm"):
            raise ValueError(f"unknown LP backend {self.lp_backend!r}")


@dataclass
class RelaxResult:
    value: float
    optimizer: Any
    status: str
    wall_time: float
    primal_residual: float = np.nan
    gap: float = np.nan
    duals: dict[str, np.ndarray] = field(default_factory=dict)
    message: str = ""
    solve_time: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def __post_init__(self) -> None:
        if self.status == OPTIMAL and not np.isfinite(self.value):
            raise ValueError("optimal result with non-finite value")


def _csr(mat, n: int) -> sp.csr_matrix:
    if mat is None:
        return sp.csr_matrix((0, n))
    if not sp.issparse(mat):
        mat = np.asarray(mat, dtype=np.float64).reshape(-1, n)
    out = sp.csr_matrix(mat, dtype=np.float64)
    if out.shape[1] != n:
        raise ValueError(f"constraint block has {out.shape[1]} columns, expected {n}")
    return out


@dataclass(frozen=True)
class ConicProgram:
    objective: np.ndarray
    A_ub: sp.csr_matrix | None = None
    b_ub: np.ndarray | None = None
    A_eq: sp.csr_matrix | None = None
    b_eq: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    offset: float = 0.0
    psd_dim: int | None = None
    psd_scale: np.ndarray | None = None

    def __post_init__(self) -> None:
        obj = np.asarray(self.objective, dtype=np.float64).reshape(-1)
        n = obj.size
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("objective", obj)
        set_("A_ub", _csr(self.A_ub, n))
        set_("A_eq", _csr(self.A_eq, n))
        set_("b_ub", np.asarray(self.b_ub if self.b_ub is not None else [], float).reshape(-1))
        set_("b_eq", np.asarray(self.b_eq if self.b_eq is not None else [], float).reshape(-1))
        set_("lower", np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, float))
        set_("upper", np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, float))
        if self.A_ub.shape[0] != self.b_ub.size or self.A_eq.shape[0] != self.b_eq.size:
            raise ValueError("row count of a constraint block does not match its right-hand side")
        if self.lower.size != n or self.upper.size != n:
            raise ValueError("variable bounds do not match the number of variables")
        if self.psd_dim is not None and self.psd_dim ** 2 != n:
            raise ValueError("PSD program must have psd_dim**2 variables")
        if self.psd_scale is not None:
            scale = np.asarray(self.psd_scale, float).reshape(-1)
            if self.psd_dim is None or scale.size != self.psd_dim or not np.all(scale > 0):
                raise ValueError("psd_scale needs psd_dim positive entries")
            set_("psd_scale", scale)
        for arr in (obj, self.A_ub.data, self.A_eq.data, self.b_ub, self.b_eq):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite coefficient in program")

    @property
    def n_vars(self) -> int:
        return self.objective.size

    def residuals(self, v: np.ndarray) -> float:
        """Largest violation of any linear row or bound at ``v``."""
        worst = 0.0
        if self.A_ub.shape[0]:
            worst = max(worst, float(np.max(self.A_ub @ v - self.b_ub, initial=0.0)))
        if self.A_eq.shape[0]:
            worst = max(worst, float(np.max(np.abs(self.A_eq @ v - self.b_eq))))
        worst = max(worst, float(np.max(self.lower - v, initial=0.0)),
                    float(np.max(v - self.upper, initial=0.0)))
        return worst


def solve(prog: ConicProgram, cfg: SolverConfig | None = None) -> RelaxResult:
    cfg = cfg or SolverConfig()
    start = time.perf_counter()
    if prog.psd_dim is None:
        res = _solve_highs(prog, cfg) if cfg.lp_backend == "highs" else _solve_ipm(prog, cfg)
    else:
        res = _solve_sdp(prog, cfg)
    res.wall_time = res.solve_time = time.perf_counter() - start
    return res


HIGHS_MIN_TOL = 1e-10  # smallest tolerance HiGHS accepts


def _solve_highs(prog: ConicProgram, cfg: SolverConfig) -> RelaxResult:
    bounds = np.column_stack([
        np.where(np.isfinite(prog.lower), prog.lower, np.nan),
        np.where(np.isfinite(prog.upper), prog.upper, np.nan),
    ])
    bounds = [(None if np.isnan(a) else a, None if np.isnan(b) else b) for a, b in bounds]
    res = linprog(
        -prog.objective,
        A_ub=prog.A_ub if prog.A_ub.shape[0] else None,
        b_ub=prog.b_ub if prog.b_ub.size else None,
        A_eq=prog.A_eq if prog.A_eq.shape[0] else None,
        b_eq=prog.b_eq if prog.b_eq.size else None,
        bounds=bounds,
        method="highs",
        options={
            "primal_feasibility_tolerance": max(cfg.feasibility_tol, HIGHS_MIN_TOL),
            "dual_feasibility_tolerance": max(cfg.optimality_tol, HIGHS_MIN_TOL),
            "time_limit": cfg.time_limit,
        },
    )
    if res.status == 2:
        return RelaxResult(np.nan, None, INFEASIBLE, 0.0, message=res.message)
    if res.status != 0:
        return RelaxResult(np.nan, None, FAILURE, 0.0, message=res.message)
    v = res.x
    duals = {}
    if prog.A_ub.shape[0]:
        duals["ineq"] = -np.asarray(res.ineqlin.marginals)
    if prog.A_eq.shape[0]:
        duals["eq"] = -np.asarray(res.eqlin.marginals)
    duals["lower"] = -np.asarray(res.lower.marginals)
    duals["upper"] = -np.asarray(res.upper.marginals)
    value = float(prog.objective @ v + prog.offset)
    return RelaxResult(value, v, OPTIMAL, 0.0, primal_residual=prog.residuals(v),
                       gap=_lp_gap(prog, v, duals), duals=duals)


def _lp_gap(prog: ConicProgram, v: np.ndarray, duals: dict[str, np.ndarray]) -> float:
    """Absolute difference between primal objective and the dual bound implied by ``duals``."""
    dual_obj = 0.0
    if "ineq" in duals:
        dual_obj += duals["ineq"] @ prog.b_ub
    if "eq" in duals:
        dual_obj += duals["eq"] @ prog.b_eq
    for key, bnd in (("lower", prog.lower), ("upper", prog.upper)):
        if key in duals:
            mask = np.isfinite(bnd)
            dual_obj += duals[key][mask] @ bnd[mask]
    return float(abs(prog.objective @ v - dual_obj))


def _dense_rows(prog: ConicProgram) -> tuple[np.ndarray, np.ndarray]:
    n = prog.n_vars
    rows = [prog.A_ub.toarray()]
    rhs = [prog.b_ub]
    fin_u = np.flatnonzero(np.isfinite(prog.upper))
    fin_l = np.flatnonzero(np.isfinite(prog.lower))
    rows.append(np.eye(n)[fin_u])
    rhs.append(prog.upper[fin_u])
    rows.append(-np.eye(n)[fin_l])
    rhs.append(-prog.lower[fin_l])
    return np.vstack(rows), np.concatenate(rhs)


def _solve_ipm(prog: ConicProgram, cfg: SolverConfig) -> RelaxResult:
    A, b = _dense_rows(prog)
    tol = min(cfg.feasibility_tol, cfg.optimality_tol)
    out = solve_dense_lp(prog.objective, A, b, prog.A_eq.toarray(), prog.b_eq,
                         tol=tol, max_iter=min(cfg.max_iterations, 500))
    if out.status != OPTIMAL:
        return RelaxResult(np.nan, None, out.status, 0.0, message="; ".join(out.notes))
    return RelaxResult(float(out.value + prog.offset), out.x, OPTIMAL, 0.0,
                       primal_residual=prog.residuals(out.x), gap=out.gap,
                       duals={"rows": out.y, "eq": out.v})


def _sdp_rows(prog: ConicProgram, dd: np.ndarray):
    """Equality and inequality rows (bounds folded in) in scaled variables, each row max-normalised."""
    n = prog.n_vars
    fu = np.flatnonzero(np.isfinite(prog.upper))
    fl = np.flatnonzero(np.isfinite(prog.lower))
    A_ub = sp.vstack([
        prog.A_ub,
        sp.csr_matrix((np.ones(fu.size), (np.arange(fu.size), fu)), shape=(fu.size, n)),
        sp.csr_matrix((-np.ones(fl.size), (np.arange(fl.size), fl)), shape=(fl.size, n)),
    ]).tocsr()
    b_ub = np.concatenate([prog.b_ub, prog.upper[fu], -prog.lower[fl]])

    def scaled(A, b):
        A = (A @ sp.diags(dd)).tocsr()
        norms = np.asarray(abs(A).max(axis=1).todense()).reshape(-1)
        norms[norms == 0] = 1.0
        return (sp.diags(1.0 / norms) @ A).tocsr(), b / norms

    return scaled(prog.A_eq, prog.b_eq), scaled(A_ub, b_ub)


def _solve_sdp(prog: ConicProgram, cfg: SolverConfig) -> RelaxResult:
    """Solve for Q with P = D Q D (a diagonal congruence keeps the PSD cone).

    The primal form optimises over Q directly.  The dual form states the
    multiplier problem as a linear matrix inequality whose sparsity follows
    the constraint pattern, which lets chordal decomposition split large
    blocks; Q is then read off the inequality's multiplier.

    An inaccurate primal-form solve is repeated in the dual form: its value
    comes from a point that may sit outside the cone, while the dual form
    reports the objective of strictly feasible multipliers, a valid bound
    even when the solver stops early.
    """
    form = cfg.sdp_form
    if form == "auto":
        form = "dual" if prog.psd_dim >= cfg.dual_form_min_dim else "primal"
    res = _solve_sdp_form(prog, cfg, form)
    if form == "dual" or (res.ok and not res.message.startswith(INACCURATE)):
        return res
    other = _solve_sdp_form(prog, cfg, "dual")
    return other if other.ok else res


def _solve_sdp_form(prog: ConicProgram, cfg: SolverConfig, form: str) -> RelaxResult:
    import cvxpy as cp

    N = prog.psd_dim
    d = prog.psd_scale if prog.psd_scale is not None else np.ones(N)
    dd = np.outer(d, d).reshape(-1, order="F")
    (A_eq, b_eq), (A_ub, b_ub) = _sdp_rows(prog, dd)
    obj = prog.objective * dd
    if form == "primal":
        Q = cp.Variable((N, N), symmetric=True)
        vec = cp.vec(Q, order="F")
        cons = [Q >> 0]
        if A_eq.shape[0]:
            cons.append(A_eq @ vec == b_eq)
        if A_ub.shape[0]:
            cons.append(A_ub @ vec <= b_ub)
        problem = cp.Problem(cp.Maximize(obj @ vec), cons)
    else:
        terms, dual_obj = [-obj], []
        if A_eq.shape[0]:
            y = cp.Variable(A_eq.shape[0])
            terms.append(A_eq.T @ y)
            dual_obj.append(b_eq @ y)
        if A_ub.shape[0]:
            mu = cp.Variable(A_ub.shape[0], nonneg=True)
            terms.append(A_ub.T @ mu)
            dual_obj.append(b_ub @ mu)
        G = cp.reshape(cp.sum(terms) if len(terms) > 1 else cp.Constant(terms[0]), (N, N), order="F")
        lmi = (G + G.T) / 2 >> 0
        problem = cp.Problem(cp.Minimize(cp.sum(dual_obj) if dual_obj else cp.Constant(0.0)), [lmi])
    tol = min(cfg.feasibility_tol, cfg.optimality_tol)
    opts: dict[str, Any] = {}
    if cfg.sdp_backend == "CLARABEL":
        opts = {"tol_gap_abs": tol, "tol_gap_rel": tol, "tol_feas": tol,
                "max_iter": min(cfg.max_iterations, 500), "time_limit": cfg.time_limit}
    elif cfg.sdp_backend == "SCS":
        opts = {"eps": tol, "max_iters": cfg.max_iterations}
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            problem.solve(solver=cfg.sdp_backend, **opts)
    except cp.error.SolverError as exc:
        return RelaxResult(np.nan, None, FAILURE, 0.0, message=str(exc))
    status = problem.status
    if form == "dual" and status in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
        status = cp.INFEASIBLE
    if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return RelaxResult(np.nan, None, INFEASIBLE, 0.0, message=status)
    Qv = Q.value if form == "primal" else lmi.dual_value
    if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or Qv is None:
        return RelaxResult(np.nan, None, FAILURE, 0.0, message=str(status))
    mat = d[:, None] * np.asarray(Qv) * d[None, :]
    mat = 0.5 * (mat + mat.T)
    v = mat.reshape(-1, order="F")
    primal = float(prog.objective @ v + prog.offset)
    value = primal if form == "primal" else float(problem.value + prog.offset)
    return RelaxResult(value, mat, OPTIMAL, 0.0, primal_residual=prog.residuals(v),
                       gap=float(abs(problem.value + prog.offset - primal)),
                       message=f"{status} ({form} form)")


def dump_program(prog: ConicProgram, path: str | Path) -> None:
    """Write a program as JSON triplets for offline cross-checking."""

    def triplets(mat: sp.csr_matrix) -> list[list[float]]:
        coo = mat.tocoo()
        return [[int(i), int(j), float(x)] for i, j, x in zip(coo.row, coo.col, coo.data)]

    def finite(arr: np.ndarray) -> list:
        return [None if not np.isfinite(a) else float(a) for a in arr]

    doc = {
        "sense": "maximize",
        "n_vars": prog.n_vars,
        "cones": ["psd"] if prog.psd_dim is not None else [],
        "psd_dim": prog.psd_dim,
        "psd_scale": prog.psd_scale.tolist() if prog.psd_scale is not None else None,
        "vectorisation": "column-major" if prog.psd_dim is not None else None,
        "objective": prog.objective.tolist(),
        "offset": prog.offset,
        "ineq": {"rows": prog.A_ub.shape[0], "triplets": triplets(prog.A_ub), "rhs": prog.b_ub.tolist()},
        "eq": {"rows": prog.A_eq.shape[0], "triplets": triplets(prog.A_eq), "rhs": prog.b_eq.tolist()},
        "lower": finite(prog.lower),
        "upper": finite(prog.upper),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_program(path: str | Path) -> ConicProgram:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    n = doc["n_vars"]

    def mat(block):
        t = np.asarray(block["triplets"], dtype=float).reshape(-1, 3)
        return sp.csr_matrix((t[:, 2], (t[:, 0].astype(int), t[:, 1].astype(int))),
                             shape=(block["rows"], n))

    def arr(vals, fill):
        return np.array([fill if v is None else v for v in vals], dtype=float)

    return ConicProgram(
        objective=np.asarray(doc["objective"], float),
        A_ub=mat(doc["ineq"]), b_ub=np.asarray(doc["ineq"]["rhs"], float),
        A_eq=mat(doc["eq"]), b_eq=np.asarray(doc["eq"]["rhs"], float),
        lower=arr(doc["lower"], -np.inf), upper=arr(doc["upper"], np.inf),
        offset=float(doc["offset"]), psd_dim=doc["psd_dim"], psd_scale=doc.get("psd_scale"),
    )
