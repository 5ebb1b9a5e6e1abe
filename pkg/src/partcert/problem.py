"""Input uncertainty sets, certification problems and input-space partitions."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .network import ReluNetwork, classification_cost, forward_eval, load_network, network_from_dict
from .solver import ConicProgram, RelaxResult, SolverConfig, solve  # noqa: F401  (re-export)

__all__ = [
    "BoxSet", "PolytopeSet", "CertProblem", "PartitionPlan", "PartitionReport", "RelaxResult",
    "EmptySetError", "box_from_nominal", "row_halfspace_partition", "sign_pattern_partition",
    "validate_partition", "sample_polytope", "load_problem", "problem_from_dict",
]

FEAS_TOL = 1e-9


class EmptySetError(ValueError):
    """Raised when a polytope has no feasible point."""


@dataclass(frozen=True)
class BoxSet:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        l = np.array(self.lower, dtype=np.float64).reshape(-1)
        u = np.array(self.upper, dtype=np.float64).reshape(-1)
        if l.shape != u.shape:
            raise ValueError("box bounds have different dimensions")
        if not (np.all(np.isfinite(l)) and np.all(np.isfinite(u))):
            raise ValueError("box bounds must be finite")
        if np.any(l > u):
            raise ValueError("box lower bound exceeds upper bound")
        l.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "lower", l)
        object.__setattr__(self, "upper", u)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, x, tol: float = FEAS_TOL) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))


def box_from_nominal(nominal, eps: float) -> BoxSet:
    """Infinity-norm ball of radius ``eps`` around ``nominal``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = np.asarray(nominal, dtype=np.float64).reshape(-1)
    return BoxSet(x - eps, x + eps)


@dataclass(frozen=True)
class PolytopeSet:
    """A box intersected with halfspaces ``a @ x <= beta``.

    Construction runs a feasibility LP unless ``check=False`` and raises
    :class:`EmptySetError` when the set is empty.
    """

    box: BoxSet
    A: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    beta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    check: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self) -> None:
        n = self.box.dim
        A = np.array(self.A, dtype=np.float64).reshape(-1, n)
        beta = np.array(self.beta, dtype=np.float64).reshape(-1)
        if A.shape[0] != beta.size:
            raise ValueError("halfspace normals and offsets disagree in count")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(beta))):
            raise ValueError("non-finite halfspace coefficient")
        A.setflags(write=False)
        beta.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "beta", beta)
        if self.check and A.shape[0]:
            res = solve(ConicProgram(np.zeros(n), A_ub=A, b_ub=beta,
                                     lower=self.box.lower, upper=self.box.upper))
            if res.status != "optimal":
                raise EmptySetError("polytope is empty")

    @classmethod
    def from_box(cls, box: BoxSet) -> "PolytopeSet":
        return cls(box)

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def halfspaces(self) -> list[tuple[np.ndarray, float]]:
        return [(a, float(b)) for a, b in zip(self.A, self.beta)]

    @property
    def is_box(self) -> bool:
        return self.A.shape[0] == 0

    def intersect(self, A, beta, check: bool = True) -> "PolytopeSet":
        A = np.asarray(A, dtype=np.float64).reshape(-1, self.dim)
        return PolytopeSet(self.box, np.vstack([self.A, A]),
                           np.concatenate([self.beta, np.asarray(beta, float).reshape(-1)]),
                           check=check)

    def with_box(self, box: BoxSet, check: bool = True) -> "PolytopeSet":
        return PolytopeSet(box, self.A, self.beta, check=check)

    def contains(self, x, tol: float = FEAS_TOL) -> bool:
        x = np.asarray(x, dtype=np.float64)
        if not self.box.contains(x, tol):
            return False
        return bool(np.all(self.A @ x <= self.beta + tol))

    def contains_batch(self, xs: np.ndarray, tol: float = FEAS_TOL) -> np.ndarray:
        xs = np.atleast_2d(xs)
        ok = np.all(xs >= self.box.lower - tol, axis=1) & np.all(xs <= self.box.upper + tol, axis=1)
        if self.A.shape[0]:
            ok &= np.all(xs @ self.A.T <= self.beta + tol, axis=1)
        return ok

    def bounding_box(self, cfg: SolverConfig | None = None) -> BoxSet:
        """Tightest axis-aligned box containing the polytope (one LP per face)."""
        if self.is_box:
            return self.box
        n = self.dim
        lo = self.box.lower.copy()
        hi = self.box.upper.copy()
        for k in range(n):
            for sign in (1.0, -1.0):
                obj = np.zeros(n)
                obj[k] = sign
                res = solve(ConicProgram(obj, A_ub=self.A, b_ub=self.beta,
                                         lower=self.box.lower, upper=self.box.upper), cfg)
                if res.status != "optimal":
                    continue
                if sign > 0:
                    hi[k] = min(hi[k], res.value)
                else:
                    lo[k] = max(lo[k], -res.value)
        hi = np.maximum(hi, lo)
        return BoxSet(lo, hi)


@dataclass(frozen=True)
class CertProblem:
    """Maximise ``cost @ f(x) - offset`` over ``x`` in ``input``."""

    network: ReluNetwork
    input: PolytopeSet
    cost: np.ndarray
    offset: float = 0.0
    name: str = ""

    def __post_init__(self) -> None:
        c = np.array(self.cost, dtype=np.float64).reshape(-1)
        if c.size != self.network.output_dim:
            raise ValueError(f"cost has {c.size} entries, network has {self.network.output_dim} outputs")
        if self.input.dim != self.network.input_dim:
            raise ValueError("input set dimension does not match the network")
        c.setflags(write=False)
        object.__setattr__(self, "cost", c)
        if isinstance(self.input, BoxSet):
            object.__setattr__(self, "input", PolytopeSet(self.input))

    def objective(self, x) -> float:
        return float(self.cost @ forward_eval(self.network, x) - self.offset)

    def restricted(self, part: PolytopeSet) -> "CertProblem":
        return CertProblem(self.network, part, self.cost, self.offset, self.name)


@dataclass(frozen=True)
class PartitionPlan:
    """Parts covering a parent set.

    ``row_signs[j]`` lists ``(row, sign)`` pairs recording which first-layer
    preactivations are known to be nonnegative (+1) or nonpositive (-1) on
    part ``j``; bound restriction uses these to clamp at zero.
    """

    parts: tuple[PolytopeSet, ...]
    provenance: str
    row_signs: tuple[tuple[tuple[int, int], ...], ...] = ()
    notes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        parts = tuple(self.parts)
        signs = tuple(tuple(s) for s in self.row_signs) or tuple(() for _ in parts)
        if len(signs) != len(parts):
            raise ValueError("row_signs must align with parts")
        object.__setattr__(self, "parts", parts)
        object.__setattr__(self, "row_signs", signs)
        object.__setattr__(self, "notes", tuple(self.notes))

    def __len__(self) -> int:
        return len(self.parts)

    @classmethod
    def single(cls, parent: PolytopeSet) -> "PartitionPlan":
        return cls((parent,), "custom")

    def without(self, index: int) -> "PartitionPlan":
        keep = [j for j in range(len(self.parts)) if j != index]
        return PartitionPlan(tuple(self.parts[j] for j in keep), self.provenance,
                             tuple(self.row_signs[j] for j in keep),
                             self.notes + (f"part {index} removed",))


def sign_pattern_partition(parent: PolytopeSet, weights: np.ndarray, biases: np.ndarray,
                           rows: Sequence[int], provenance: str,
                           base_signs: Sequence[tuple[int, int]] = ()) -> PartitionPlan:
    """Split ``parent`` along every sign combination of the preactivations ``rows``.

    Part order follows ``itertools.product((1, 0), ...)``: the first part has
    every listed preactivation nonnegative.
    """
    rows = list(rows)
    parts, signs, notes = [], [], []
    for pattern in itertools.product((1, 0), repeat=len(rows)):
        A, beta = [], []
        for r, on in zip(rows, pattern):
            w, b = weights[r], biases[r]
            if not np.any(w):
                raise ValueError(f"row {r} is zero; its halfspaces are not proper")
            # on: w x + b >= 0  <=>  -w x <= b ; off: w x + b <= 0  <=>  w x <= -b
            A.append(-w if on else w)
            beta.append(b if on else -b)
        try:
            part = parent.intersect(np.array(A), np.array(beta))
        except EmptySetError:
            notes.append(f"pattern {''.join(map(str, pattern))} on rows {rows} is empty; dropped")
            continue
        parts.append(part)
        signs.append(tuple(base_signs) + tuple((r, 1 if on else -1) for r, on in zip(rows, pattern)))
    return PartitionPlan(tuple(parts), provenance, tuple(signs), tuple(notes))


def row_halfspace_partition(parent: PolytopeSet, w, offset: float = 0.0, row: int | None = None) -> PartitionPlan:
    """Two parts: ``w @ x + offset >= 0`` and ``<= 0`` (closed), empty sides dropped."""
    w = np.asarray(w, dtype=np.float64).reshape(1, -1)
    if not np.any(w):
        raise ValueError("partition normal must be nonzero")
    tag = f"row-halfspace({row})" if row is not None else "row-halfspace"
    plan = sign_pattern_partition(parent, w, np.array([offset]), [0], tag)
    if row is None:
        return PartitionPlan(plan.parts, plan.provenance, notes=plan.notes)
    signs = tuple(tuple((row, s) for _, s in sg) for sg in plan.row_signs)
    return PartitionPlan(plan.parts, plan.provenance, signs, plan.notes)


def sample_polytope(poly: PolytopeSet, count: int, rng: np.random.Generator,
                    max_rounds: int = 200) -> np.ndarray:
    """Uniform samples by rejection from the bounding box, plus feasible box corners."""
    box = poly.box
    out = []
    n = poly.dim
    if n <= 10:
        corners = np.array(list(itertools.product(*zip(box.lower, box.upper))))
        out.append(corners[poly.contains_batch(corners)])
    got = sum(len(o) for o in out)
    for _ in range(max_rounds):
        if got >= count:
            break
        cand = rng.uniform(box.lower, box.upper, size=(max(count, 64), n))
        keep = cand[poly.contains_batch(cand, tol=0.0)]
        out.append(keep)
        got += len(keep)
    pts = np.vstack(out) if out else np.zeros((0, n))
    return pts[:count]


@dataclass
class PartitionReport:
    covered: bool
    samples: int
    coverage: float
    overlap_fraction: float
    witness: np.ndarray | None = None
    outside_parent: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return self.covered and self.outside_parent is None


def validate_partition(parent: PolytopeSet, plan: PartitionPlan, samples: int = 10_000,
                       seed: int = 0, tol: float = 1e-9) -> PartitionReport:
    """Monte-Carlo check that the parts cover ``parent`` and stay inside it."""
    if samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    pts = sample_polytope(parent, samples, rng)
    member = np.array([part.contains_batch(pts, tol) for part in plan.parts]).reshape(len(plan.parts), -1)
    counts = member.sum(axis=0)
    missing = np.flatnonzero(counts == 0)
    witness = pts[missing[0]] if missing.size else None
    outside = None
    for part in plan.parts:
        inner = sample_polytope(part, max(1, samples // max(len(plan.parts), 1)), rng)
        bad = ~parent.contains_batch(inner, tol)
        if np.any(bad):
            outside = inner[np.flatnonzero(bad)[0]]
            break
    return PartitionReport(
        covered=witness is None,
        samples=len(pts),
        coverage=float(np.mean(counts > 0)) if len(pts) else 1.0,
        overlap_fraction=float(np.mean(counts > 1)) if len(pts) else 0.0,
        witness=witness,
        outside_parent=outside,
    )


def problem_from_dict(doc: dict, base_dir: str | Path = ".") -> CertProblem:
    """Build a problem from a parsed problem document.

    Keys: ``network`` (path or inline document), either ``nominal`` with
    ``epsilon`` or ``lower``/``upper``, optional ``halfspaces`` as a list of
    ``{"a": [...], "b": beta}``, and either ``cost`` or ``label`` with
    ``challenger`` (zero-based class indices).  ``offset`` defaults to 0.
    """
    base_dir = Path(base_dir)
    net_src = doc.get("network")
    if isinstance(net_src, str):
        net = load_network(base_dir / net_src)
    elif isinstance(net_src, dict):
        net = network_from_dict(net_src)
    else:
        raise ValueError("problem needs a 'network' path or inline network document")
    if "nominal" in doc:
        box = box_from_nominal(doc["nominal"], float(doc.get("epsilon", 0.0)))
    elif "lower" in doc and "upper" in doc:
        box = BoxSet(doc["lower"], doc["upper"])
    else:
        raise ValueError("problem needs 'nominal' and 'epsilon', or 'lower' and 'upper'")
    hs = doc.get("halfspaces", [])
    A = np.array([h["a"] for h in hs], dtype=float).reshape(-1, box.dim)
    beta = np.array([h["b"] for h in hs], dtype=float)
    poly = PolytopeSet(box, A, beta)
    if "cost" in doc:
        cost = np.asarray(doc["cost"], dtype=float)
    elif "challenger" in doc:
        challenger = int(doc["challenger"])
        if "label" in doc:
            label = int(doc["label"])
            if label == challenger:
                raise ValueError("challenger equals the label")
            cost = np.zeros(net.output_dim)
            cost[challenger], cost[label] = 1.0, -1.0
        else:
            centre = doc["nominal"] if "nominal" in doc else box.center
            cost = classification_cost(forward_eval(net, centre), challenger)
    else:
        raise ValueError("problem needs 'cost' or 'challenger'")
    return CertProblem(net, poly, cost, float(doc.get("offset", 0.0)), str(doc.get("name", "")))


def load_problem(path: str | Path) -> CertProblem:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return problem_from_dict(doc, path.parent)
