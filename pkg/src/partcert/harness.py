"""Experiment runner: per-input certification, width/depth sweeps and the gadget check."""

from __future__ import annotations

import csv
import io
import json
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np

from .bounds import LayerBounds, default_mode, propagate_bounds
from .lp import (build_lp, motivating_partition, partitioned_lp, rank_rows, ranked_row_plan,
                 recursive_refine, selection_cost, solve_lp)
from .network import (ReluNetwork, classification_cost, forward_eval, load_network,
                      normalize_all_layers, random_network, runner_up)
from .nphard import check_gadget, np_gadget, random_family
from .oracles import brute_force_min_k_union, multistart_local_search
from .problem import CertProblem, PartitionPlan, PolytopeSet, box_from_nominal
from .sdp import build_multilayer_sdp, optimal_sdp_coordinate, partitioned_sdp, solve_sdp, uniform_partition
from .solver import SolverConfig

EXPERIMENTS = ("pointwise", "width-sweep", "depth-sweep", "np-fixture")
RESULT_COLUMNS = ("problem_id", "method", "value", "baseline", "parts", "winning_part", "status")
TIMING_COLUMNS = ("problem_id", "method", "wall_time", "solve_time")
SUMMARY_COLUMNS = ("cell", "lp", "plp", "lp_improvement_pct", "sdp", "psdp", "sdp_improvement_pct")
DEFAULT_POINTWISE_METHODS = ("lp", "plp-opt", "plp-subopt-1", "plp-subopt-2", "sdp", "psdp-opt")
SWEEP_METHODS = ("lp", "plp-opt", "sdp", "psdp-opt")
NOT_APPLICABLE = "not-applicable"


def _known_method(name: str) -> bool:
    if name in ("lp", "plp-opt", "plp-motivating", "plp-recursive", "sdp", "psdp-opt", "multistart"):
        return True
    for prefix in ("plp-subopt-", "psdp-uniform-"):
        if name.startswith(prefix) and name[len(prefix):].isdigit():
            return True
    return False


@dataclass
class RunConfig:
    experiment: str = "pointwise"
    network: dict = field(default_factory=lambda: {"builtin": "iris_4x8x3"})
    nominals: dict = field(default_factory=lambda: {"dataset": "builtin:iris", "count": 10})
    epsilon: float | None = None  # default: 0.1 pointwise, 0.5 for the sweeps
    methods: list[str] = field(default_factory=lambda: list(DEFAULT_POINTWISE_METHODS))
    seed: int = 0
    output: str | None = None
    solver: dict = field(default_factory=dict)
    workers: int = 1
    sizes: list[int] = field(default_factory=lambda: [5, 10, 20])
    distributions: list[str] = field(default_factory=lambda: ["normal", "uniform"])
    hidden_width: int = 100
    output_width: int = 5
    depths: list[int] = field(default_factory=lambda: [1, 2, 3, 4])
    depth_width: int = 10
    depth_io: int = 5
    normalize: bool = True
    trials: int = 20
    max_sets: int = 6
    max_universe: int = 8
    multistarts: int = 5
    recursive_budget: int = 4
    bound_mode: str = "auto"
    timing_repeats: int = 15
    timing_budget: float = 0.5

    def __post_init__(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if not self.methods:
            raise ValueError("methods must be non-empty")
        bad = [m for m in self.methods if not _known_method(m)]
        if bad:
            raise ValueError(f"unknown methods: {', '.join(bad)}")
        if self.epsilon is None:
            self.epsilon = 0.5 if self.experiment in ("width-sweep", "depth-sweep") else 0.1
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown config keys: {', '.join(sorted(extra))}")
        return cls(**doc)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def solver_config(self) -> SolverConfig:
        return SolverConfig(**self.solver)

    def mode_for(self, net: ReluNetwork) -> str:
        return default_mode(net) if self.bound_mode == "auto" else self.bound_mode


@dataclass
class ResultRow:
    problem_id: str
    method: str
    value: float
    baseline: float
    parts: int
    winning_part: int
    status: str
    wall_time: float
    solve_time: float = 0.0


@dataclass
class RunOutput:
    config: RunConfig
    rows: list[ResultRow]
    summary: list[dict] = field(default_factory=list)
    timing_summary: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)


# ---------------------------------------------------------------- ingestion

def builtin_path(name: str) -> Path:
    return Path(str(resources.files("partcert") / "data" / name))


def resolve_network(src: dict) -> ReluNetwork:
    if "file" in src:
        return load_network(src["file"])
    if "builtin" in src:
        return load_network(builtin_path(f"{src['builtin']}.json"))
    if "random" in src:
        spec = dict(src["random"])
        normalize = spec.pop("normalize", False)
        net = random_network(spec["sizes"], spec.get("distribution", "normal"), spec.get("seed", 0))
        return normalize_all_layers(net) if normalize else net
    raise ValueError("network source needs 'file', 'builtin' or 'random'")


def load_labelled_csv(path: str | Path, n_features: int = 4) -> tuple[np.ndarray, list[str]]:
    """Rows of ``n_features`` numbers followed by a class label; header optional."""
    feats, labels = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != n_features + 1:
                raise ValueError(f"{path}:{lineno}: expected {n_features + 1} fields, got {len(row)}")
            try:
                feats.append([float(c) for c in row[:n_features]])
            except ValueError:
                if lineno == 1:
                    continue
                raise ValueError(f"{path}:{lineno}: non-numeric feature") from None
            labels.append(row[n_features].strip())
    if not feats:
        raise ValueError(f"{path}: no data rows")
    return np.asarray(feats), labels


def resolve_nominals(src: dict, seed: int, n_inputs: int) -> np.ndarray:
    if "inline" in src:
        pts = np.asarray(src["inline"], dtype=float)
        if pts.size == 0:
            raise ValueError("nominal list is empty")
        pts = pts.reshape(-1, n_inputs)
    elif "dataset" in src:
        path = src["dataset"]
        if path == "builtin:iris":
            path = builtin_path("iris.csv")
        data, _ = load_labelled_csv(path, n_inputs)
        count = int(src.get("count", 10))
        if count < 1:
            raise ValueError("nominal count must be positive")
        rng = np.random.default_rng(seed)
        pts = data[np.sort(rng.choice(len(data), size=min(count, len(data)), replace=False))]
    else:
        raise ValueError("nominal source needs 'inline' or 'dataset'")
    return pts


# ---------------------------------------------------------------- methods

@dataclass
class _Shared:
    problem: CertProblem
    mode: str
    cfg: SolverConfig
    bounds: LayerBounds | None = None
    bound_time: float = 0.0

    def ensure_bounds(self) -> LayerBounds:
        if self.bounds is None:
            self.timed_bounds()
        return self.bounds

    def timed_bounds(self) -> float:
        """Recompute the bounds (results are deterministic) and return the elapsed time."""
        t0 = time.perf_counter()
        self.bounds = propagate_bounds(self.problem.network, self.problem.input, self.mode, self.cfg)
        self.bound_time = time.perf_counter() - t0
        return self.bound_time


def _row(pid, method, value, baseline, parts, win, status, wall, solve=None) -> ResultRow:
    return ResultRow(pid, method, float(value), float(baseline), int(parts), int(win), status,
                     float(wall), float(wall if solve is None else solve))


def _evaluate(sh: _Shared, method: str, pid: str, baseline: float, cfg: RunConfig) -> ResultRow:
    problem = sh.problem
    net = problem.network
    bounds = sh.ensure_bounds()
    if method == "lp":
        extra = sh.timed_bounds()
        t0 = time.perf_counter()
        res = solve_lp(build_lp(problem, sh.bounds), sh.cfg)
        return _row(pid, method, res.value, baseline, 1, 0, res.status,
                    extra + time.perf_counter() - t0, res.solve_time)
    if method == "sdp":
        extra = sh.timed_bounds() if net.depth > 1 else 0.0
        t0 = time.perf_counter()
        res = solve_sdp(build_multilayer_sdp(problem, sh.bounds if net.depth > 1 else None,
                                             problem.input.bounding_box(sh.cfg)), sh.cfg)
        return _row(pid, method, res.value, baseline, 1, 0, res.status,
                    extra + time.perf_counter() - t0, res.solve_time)
    if method == "multistart":
        t0 = time.perf_counter()
        ms = multistart_local_search(problem, cfg.multistarts, cfg.seed)
        return _row(pid, method, ms.value, baseline, 1, 0, "lower-bound", time.perf_counter() - t0)
    t0 = time.perf_counter()
    if method == "plp-opt" or method.startswith("plp-subopt-"):
        rank = 0 if method == "plp-opt" else int(method.rsplit("-", 1)[1])
        plan = ranked_row_plan(problem, rank, bounds, selection_cost(problem))
        if plan is None:
            # Too few unstable first-layer rows: the trivial one-part cover.
            plan = PartitionPlan.single(problem.input)
        out = partitioned_lp(problem, plan, bounds, mode=sh.mode, cfg=sh.cfg)
    elif method == "plp-motivating":
        if net.depth != 1:
            return _row(pid, method, np.nan, baseline, 0, -1, NOT_APPLICABLE, 0.0)
        out = partitioned_lp(problem, motivating_partition(problem), bounds, mode=sh.mode, cfg=sh.cfg)
    elif method == "plp-recursive":
        if not rank_rows(selection_cost(problem), *bounds.layer(0)):
            out = partitioned_lp(problem, PartitionPlan.single(problem.input), bounds, mode=sh.mode, cfg=sh.cfg)
        else:
            out = recursive_refine(problem, cfg.recursive_budget, bounds, mode=sh.mode, cfg=sh.cfg)
    elif method == "psdp-opt" or method.startswith("psdp-uniform-"):
        box = problem.input.box
        choice = optimal_sdp_coordinate(box.lower.tolist(), box.upper.tolist())
        p = 2 if method == "psdp-opt" else int(method.rsplit("-", 1)[1])
        plan = uniform_partition(problem.input, choice.index, p)
        out = partitioned_sdp(problem, plan, bounds if net.depth > 1 else None, mode=sh.mode, cfg=sh.cfg)
    else:
        raise ValueError(f"unknown method {method!r}")
    wall = time.perf_counter() - t0
    return _row(pid, method, out.value, baseline, len(out.plan), out.winning_part, out.status,
                wall, out.solve_time)


_WARM = False


def warm_up(cfg: SolverConfig | None = None) -> None:
    """Solve one tiny LP and SDP of each form so that one-off import and setup costs stay out of timings."""
    global _WARM
    if _WARM:
        return
    net = random_network([2, 2], "normal", 0)
    tiny = nominal_problem(net, np.zeros(2), 0.5)
    base = cfg or SolverConfig()
    solve_lp(build_lp(tiny, propagate_bounds(net, tiny.input, "interval", base)), base)
    for form in ("primal", "dual"):
        solve_sdp(build_multilayer_sdp(tiny), replace(base, sdp_form=form))
    _WARM = True


def certify_problem(problem: CertProblem, methods, cfg: RunConfig, pid: str) -> list[ResultRow]:
    """Evaluate every requested method on one problem (baseline from multistart search)."""
    warm_up(cfg.solver_config())
    baseline = multistart_local_search(problem, cfg.multistarts, cfg.seed).value
    sh = _Shared(problem, cfg.mode_for(problem.network), cfg.solver_config())
    return [_timed(sh, m, pid, baseline, cfg) for m in methods]


def _timed(sh: _Shared, method: str, pid: str, baseline: float, cfg: RunConfig) -> ResultRow:
    """Evaluate once for the values; fast methods are repeated and the fastest timings kept."""
    row = _evaluate(sh, method, pid, baseline, cfg)
    spent, runs = row.wall_time, 1
    while runs < cfg.timing_repeats and spent < cfg.timing_budget:
        again = _evaluate(sh, method, pid, baseline, cfg)
        row.wall_time = min(row.wall_time, again.wall_time)
        row.solve_time = min(row.solve_time, again.solve_time)
        spent += again.wall_time
        runs += 1
    return row


def nominal_problem(net: ReluNetwork, nominal, eps: float, name: str = "") -> CertProblem:
    """Problem asking whether the runner-up class can overtake the predicted class."""
    out = forward_eval(net, nominal)
    cost = classification_cost(out, runner_up(out))
    return CertProblem(net, PolytopeSet(box_from_nominal(nominal, eps)), cost, name=name)


def _parallel(fn: Callable, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _pointwise_job(job):
    net, nominal, cfg, pid = job
    return certify_problem(nominal_problem(net, nominal, cfg.epsilon, pid), cfg.methods, cfg, pid)


def run_pointwise(cfg: RunConfig) -> RunOutput:
    net = resolve_network(cfg.network)
    nominals = resolve_nominals(cfg.nominals, cfg.seed, net.input_dim)
    jobs = [(net, x, cfg, f"nominal-{i:03d}") for i, x in enumerate(nominals)]
    rows = [r for chunk in _parallel(_pointwise_job, jobs, cfg.workers) for r in chunk]
    out = RunOutput(cfg, rows)
    frac = ordering_fraction(rows)
    if frac is not None:
        out.notes.append(f"rows with plp-opt <= plp-subopt-1 <= plp-subopt-2: {frac:.3f}")
    return out


def ordering_fraction(rows: list[ResultRow], tol: float = 1e-9) -> float | None:
    """Fraction of problems where the optimal row beats the next two ranked rows, in order."""
    by_pid: dict[str, dict[str, float]] = {}
    for r in rows:
        if r.status == "optimal":
            by_pid.setdefault(r.problem_id, {})[r.method] = r.value
    chains = [v for v in by_pid.values() if all(k in v for k in ("plp-opt", "plp-subopt-1", "plp-subopt-2"))]
    if not chains:
        return None
    ok = [v["plp-opt"] <= v["plp-subopt-1"] + tol and v["plp-subopt-1"] <= v["plp-subopt-2"] + tol
          for v in chains]
    return float(np.mean(ok))


NOISE_TOL = 1e-9  # differences this small (relative to 1 + |value|) are solver noise


def improvement_pct(unpart: float, part: float, noise: float = NOISE_TOL) -> float:
    """``(unpart - part) / |unpart| * 100``; zero when the two differ by less than ``noise``."""
    if not (np.isfinite(unpart) and np.isfinite(part)):
        return float("nan")
    if abs(unpart - part) <= noise * (1.0 + abs(unpart)):
        return 0.0
    if unpart == 0.0:
        return float("nan")
    return (unpart - part) / abs(unpart) * 100.0


def _summarise(rows: list[ResultRow]) -> tuple[list[dict], list[dict]]:
    cells: dict[str, dict[str, ResultRow]] = {}
    for r in rows:
        cells.setdefault(r.problem_id, {})[r.method] = r
    summary, timing = [], []
    for pid, m in cells.items():
        lp, plp, sdp, psdp = (m[k].value for k in SWEEP_METHODS)
        summary.append({"cell": pid, "lp": lp, "plp": plp, "lp_improvement_pct": improvement_pct(lp, plp),
                        "sdp": sdp, "psdp": psdp, "sdp_improvement_pct": improvement_pct(sdp, psdp)})
        row = {"cell": pid}
        for un, part, tag in (("lp", "plp-opt", "lp"), ("sdp", "psdp-opt", "sdp")):
            for kind in ("solve_time", "wall_time"):
                a, b = getattr(m[un], kind), getattr(m[part], kind)
                row[f"{tag}_{kind}"] = a
                row[f"p{tag}_{kind}"] = b
                row[f"{tag}_{kind}_ratio"] = b / a if a > 0 else float("nan")
        timing.append(row)
    return summary, timing


def _sweep_job(job):
    net, nominal, cfg, pid = job
    return certify_problem(nominal_problem(net, nominal, cfg.epsilon, pid), SWEEP_METHODS, cfg, pid)


def _sweep(cfg: RunConfig, nets: list[tuple[str, ReluNetwork, np.ndarray]]) -> RunOutput:
    jobs = [(net, x, cfg, pid) for pid, net, x in nets]
    rows = [r for chunk in _parallel(_sweep_job, jobs, cfg.workers) for r in chunk]
    out = RunOutput(cfg, rows)
    out.summary, out.timing_summary = _summarise(rows)
    return out


def width_sweep_networks(cfg: RunConfig) -> list[tuple[str, ReluNetwork, np.ndarray]]:
    cells = []
    for dist in cfg.distributions:
        for n_x in cfg.sizes:
            seed = cfg.seed * 1000 + n_x + (0 if dist == "normal" else 500)
            net = random_network([n_x, cfg.hidden_width, cfg.output_width], dist, seed)
            if cfg.normalize:
                net = normalize_all_layers(net)
            nominal = np.random.default_rng(seed).standard_normal(n_x)
            cells.append((f"width-{dist}-{n_x:03d}", net, nominal))
    return cells


def depth_sweep_networks(cfg: RunConfig) -> list[tuple[str, ReluNetwork, np.ndarray]]:
    cells = []
    for dist in cfg.distributions:
        for depth in cfg.depths:
            seed = cfg.seed * 1000 + 100 + depth + (0 if dist == "normal" else 500)
            sizes = [cfg.depth_io] + [cfg.depth_width] * depth + [cfg.depth_io]
            net = random_network(sizes, dist, seed)
            if cfg.normalize:
                net = normalize_all_layers(net)
            nominal = np.random.default_rng(seed).standard_normal(cfg.depth_io)
            cells.append((f"depth-{dist}-{depth:02d}", net, nominal))
    return cells


def run_width_sweep(cfg: RunConfig) -> RunOutput:
    return _sweep(cfg, width_sweep_networks(cfg))


def run_depth_sweep(cfg: RunConfig) -> RunOutput:
    return _sweep(cfg, depth_sweep_networks(cfg))


def run_np_fixture(cfg: RunConfig) -> RunOutput:
    """Gadget identity and brute-force agreement on seeded random set families."""
    rng = np.random.default_rng(cfg.seed)
    rows = []
    solver = cfg.solver_config()
    for t in range(cfg.trials):
        n = int(rng.integers(2, cfg.max_sets + 1))
        m = int(rng.integers(2, cfg.max_universe + 1))
        k = int(rng.integers(1, n + 1))
        sets = random_family(n, m, rng)
        g = np_gadget(sets, k, m)
        t0 = time.perf_counter()
        chk = check_gadget(g, solver)
        wall = time.perf_counter() - t0
        pid = f"gadget-{t:03d}-n{n}-m{m}-k{k}"
        rows.append(_row(pid, "gadget-deviation", chk.max_deviation, 0.0, len(chk.deviations), -1,
                         "pass" if chk.passed() else "fail", wall))
        _, brute = brute_force_min_k_union(sets, k)
        found = g.union_outside(chk.best.rows)
        rows.append(_row(pid, "min-k-union", found, brute, 1, -1,
                         "pass" if found == brute else "fail", 0.0))
    return RunOutput(cfg, rows)


RUNNERS = {
    "pointwise": run_pointwise,
    "width-sweep": run_width_sweep,
    "depth-sweep": run_depth_sweep,
    "np-fixture": run_np_fixture,
}


def run(cfg: RunConfig) -> RunOutput:
    return RUNNERS[cfg.experiment](cfg)


# ---------------------------------------------------------------- persistence

def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if np.isnan(v) else repr(v)
    return str(v)


def _csv_text(columns, records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for rec in records:
        w.writerow([_fmt(rec[c]) for c in columns])
    return buf.getvalue()


def results_csv(rows: list[ResultRow]) -> str:
    return _csv_text(RESULT_COLUMNS, [asdict(r) for r in rows])


def timings_csv(rows: list[ResultRow]) -> str:
    return _csv_text(TIMING_COLUMNS, [asdict(r) for r in rows])


def summary_csv(summary: list[dict]) -> str:
    return _csv_text(SUMMARY_COLUMNS, summary)


def long_table(rows: list[ResultRow]) -> str:
    """Whitespace-separated ``index method value`` lines, blank line between methods."""
    methods = list(dict.fromkeys(r.method for r in rows))
    pids = list(dict.fromkeys(r.problem_id for r in rows))
    lines = ["# index method value"]
    for m in methods:
        for r in rows:
            if r.method == m:
                lines.append(f"{pids.index(r.problem_id)} {m} {_fmt(r.value)}")
        lines.append("")
    return "\n".join(lines) + "\n"


def manifest_text(out: RunOutput) -> str:
    import cvxpy
    import scipy

    from . import __version__

    lines = [
        f"experiment: {out.config.experiment}",
        f"rows: {len(out.rows)}",
        "config: " + json.dumps(asdict(out.config), sort_keys=True),
        f"partcert: {__version__}",
        f"python: {platform.python_version()}",
        f"numpy: {np.__version__}",
        f"scipy: {scipy.__version__}",
        f"cvxpy: {cvxpy.__version__}",
    ]
    lines += [f"note: {n}" for n in out.notes]
    return "\n".join(lines) + "\n"


def write_outputs(out: RunOutput, path: str | Path) -> list[Path]:
    """Write results, timings, manifest, long table and (for sweeps) summaries next to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stem = path.with_suffix("")
    written = {
        path: results_csv(out.rows),
        Path(f"{stem}.timings.csv"): timings_csv(out.rows),
        Path(f"{stem}.manifest.txt"): manifest_text(out),
        Path(f"{stem}.long.dat"): long_table(out.rows),
    }
    if out.summary:
        written[Path(f"{stem}.summary.csv")] = summary_csv(out.summary)
        written[Path(f"{stem}.summary-timings.csv")] = _csv_text(
            tuple(out.timing_summary[0].keys()), out.timing_summary)
    for p, text in written.items():
        p.write_text(text, encoding="utf-8")
    return list(written)
