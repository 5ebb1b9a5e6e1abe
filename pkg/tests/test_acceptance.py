"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (the lines are printed
even when output capture is on).
"""

from fractions import Fraction

import numpy as np
import pytest

from conftest import one_layer_problem
from partcert import harness
from partcert.bounds import propagate_bounds
from partcert.lp import (lp_value, motivating_partition, multi_row_partition, optimal_two_part_row,
                         partitioned_lp, rank_rows, ranked_row_plan, recursive_refine, two_part_bound,
                         worst_case_lp_bound)
from partcert.network import forward_eval, normalize_rows
from partcert.oracles import activation_pattern_oracle, multistart_local_search
from partcert.problem import CertProblem
from partcert.sdp import (SdpMatrix, build_sdp, h_value, midpoint_split, optimal_sdp_coordinate,
                          optimal_sdp_plan, output_rank1_gap, partitioned_sdp, psd_element_check,
                          q_factor, rank1_gap, rank1_gap_bound, sdp_value, solve_sdp, uniform_partition,
                          uniform_slabs, worst_case_sdp_bound)

SUITE_SIZE = 50


def slack(v: float) -> float:
    return 1e-6 * (1.0 + abs(v))


@pytest.fixture
def report(capsys):
    def emit(number: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
        assert ok, detail
    return emit


def generated_plans(problem, bounds):
    """Every plan generator applicable to a one-layer problem."""
    plans = [("motivating", motivating_partition(problem))]
    for rank in (0, 1):
        plan = ranked_row_plan(problem, rank, bounds)
        if plan is not None:
            plans.append((f"two-part-rank{rank}", plan))
    n_unstable = len(rank_rows(problem.cost, bounds.lower[0], bounds.upper[0]))
    if n_unstable >= 2:
        plans.append(("two-rows", multi_row_partition(problem, 2, bounds)))
    plans.append(("coordinate", uniform_partition(problem.input, 0, 2)))
    return plans


@pytest.fixture(scope="module")
def sandwich_suite():
    """Suite-1 instances with their oracle, baseline and LP solutions."""
    suite = []
    for seed in range(SUITE_SIZE):
        p = one_layer_problem(seed)
        bounds = propagate_bounds(p.network, p.input, "lp-tight")
        suite.append({
            "problem": p,
            "bounds": bounds,
            "baseline": multistart_local_search(p, starts=5, seed=seed),
            "oracle": activation_pattern_oracle(p),
            "lp": lp_value(p, bounds),
        })
    return suite


def test_criterion_01_sandwich(sandwich_suite, report):
    failures, checked = [], 0
    for case in sandwich_suite:
        p, bounds = case["problem"], case["bounds"]
        base, orc, lp = case["baseline"].value, case["oracle"].value, case["lp"].value
        if base > orc + slack(orc):
            failures.append(f"{p.name}: multistart {base} > oracle {orc}")
        values = []
        for tag, plan in generated_plans(p, bounds):
            out = partitioned_lp(p, plan, bounds)
            values.append((tag, out.value))
        out = recursive_refine(p, 3, bounds)
        values.append(("recursive-3", out.value))
        for tag, v in values:
            checked += 1
            if not orc <= v + slack(v):
                failures.append(f"{p.name}/{tag}: oracle {orc} > partitioned {v}")
            if not v <= lp + slack(lp):
                failures.append(f"{p.name}/{tag}: partitioned {v} > lp {lp}")
    report(1, not failures, f"{len(sandwich_suite)} nets, {checked} partitioned solves"
           + (f"; first failure {failures[0]}" if failures else ""))


def test_criterion_02_exactness(report):
    worst, failures = 0.0, []
    for seed in range(20):
        p = one_layer_problem(100 + seed, max_out=5)
        orc = activation_pattern_oracle(p).value
        val = partitioned_lp(p, motivating_partition(p)).value
        gap = abs(val - orc)
        worst = max(worst, gap)
        if gap > 1e-6:
            failures.append(f"{p.name}: motivating {val} vs oracle {orc}")
    report(2, not failures, f"max |motivating - oracle| = {worst:.2e} over 20 nets"
           + (f"; {failures[0]}" if failures else ""))


def test_criterion_03_worst_case_lp_bound(sandwich_suite, report):
    failures, tightest = [], np.inf
    for case in sandwich_suite:
        p, bounds = case["problem"], case["bounds"]
        lp, orc = case["lp"], case["oracle"]
        w = p.network.layers[0].weight
        eps_hat = float(np.max(np.abs(lp.optimizer[0] - orc.witness)))
        bound = worst_case_lp_bound(p.cost, bounds.lower[0], bounds.upper[0], np.abs(w).sum(axis=1), eps_hat)
        err = lp.value - orc.value
        tightest = min(tightest, bound - err)
        if err > bound + 1e-6:
            failures.append(f"{p.name}: error {err} > bound {bound} at eps {eps_hat}")
    report(3, not failures, f"min (bound - error) = {tightest:.3e} over {len(sandwich_suite)} nets"
           + (f"; {failures[0]}" if failures else ""))


def test_criterion_04_optimal_row_and_refinement(report):
    rng = np.random.default_rng(4)
    mismatches, skipped = 0, 0
    for _ in range(10_000):
        n = int(rng.integers(1, 9))
        c = rng.standard_normal(n)
        l = -rng.exponential(size=n)
        u = rng.exponential(size=n)
        stable = rng.random(n) < 0.2
        l[stable] = np.abs(l[stable])
        u[stable] = l[stable] + u[stable]
        i_star = optimal_two_part_row(c, l, u)
        if i_star is None:
            skipped += 1
            continue
        if two_part_bound(c, l, u, i_star) != min(two_part_bound(c, l, u, i) for i in range(n)):
            mismatches += 1
    bad_refine = []
    for seed in range(20):
        p = one_layer_problem(200 + seed, eps=0.5)
        values = [recursive_refine(p, b).value for b in (2, 3, 4)]
        for a, b in zip(values, values[1:]):
            if b > a + slack(a):
                bad_refine.append(f"{p.name}: {values}")
                break
    report(4, mismatches == 0 and not bad_refine,
           f"{mismatches} argmin mismatches in {10_000 - skipped} triples ({skipped} all-stable skipped); "
           f"{len(bad_refine)} non-monotone refinement runs of 20")


def test_criterion_05_np_gadget(report):
    out = harness.run(harness.RunConfig(experiment="np-fixture", trials=20, seed=0))
    dev = [r for r in out.rows if r.method == "gadget-deviation"]
    union = [r for r in out.rows if r.method == "min-k-union"]
    worst = max(r.value for r in dev)
    agree = all(r.value == r.baseline for r in union)
    report(5, len(dev) == 20 and worst <= 1e-4 and agree,
           f"max deviation {worst:.2e} over 20 instances; brute-force agreement {sum(r.value == r.baseline for r in union)}/20")


def sdp_suite():
    for seed in range(30):
        yield one_layer_problem(300 + seed, max_in=5, max_out=5)


def test_criterion_06_sdp_validity_and_monotonicity(report):
    failures, solves = [], 0
    for p in sdp_suite():
        orc = activation_pattern_oracle(p).value
        base = sdp_value(p).value
        if base < orc - 1e-6:
            failures.append(f"{p.name}: sdp {base} < oracle {orc}")
        plan, choice = optimal_sdp_plan(p)
        plans = [plan] + [uniform_partition(p.input, choice.index, k) for k in (2, 4)]
        plans += [uniform_partition(p.input, k, 4) for k in range(p.network.input_dim) if k != choice.index]
        for plan in plans:
            val = partitioned_sdp(p, plan).value
            solves += len(plan)
            if val > base + 1e-6:
                failures.append(f"{p.name}/{plan.provenance}: {val} > {base}")
    report(6, not failures, f"30 nets, {solves} part solves" + (f"; {failures[0]}" if failures else ""))


def test_criterion_07_rank1_machinery(report):
    failures, gaps = [], []
    rng = np.random.default_rng(7)
    for p in sdp_suite():
        lo, hi = p.input.box.lower, p.input.box.upper
        choice = optimal_sdp_coordinate(lo.tolist(), hi.tolist())
        for plan in (None, uniform_partition(p.input, choice.index, 2), uniform_partition(p.input, choice.index, 4)):
            if plan is None:
                results, boxes = [solve_sdp(build_sdp(p))], [(lo, hi)]
            else:
                results = partitioned_sdp(p, plan).results
                boxes = [(part.box.lower, part.box.upper) for part in plan.parts]
            whole = rank1_gap_bound(boxes)
            for res, box in zip(results, boxes):
                g = rank1_gap(res.optimizer)
                gaps.append(g)
                if not -1e-8 <= g <= min(whole, rank1_gap_bound([box])) + 1e-8:
                    failures.append(f"{p.name}: gap {g} outside [0, {rank1_gap_bound([box])}]")
        for x in rng.uniform(lo, hi, size=(20, lo.size)):
            P = SdpMatrix.lift([x, forward_eval(p.network, x)])
            if abs(rank1_gap(P)) > 1e-8 or abs(output_rank1_gap(P)) > 1e-8:
                failures.append(f"{p.name}: rank-1 lift gap nonzero")
        uniform_h = min(h_value(uniform_slabs(lo, hi, k, 3)) for k in range(lo.size))
        for _ in range(100):
            k = int(rng.integers(lo.size))
            cuts = np.sort(rng.uniform(lo[k], hi[k], size=2))
            ends = np.concatenate([[lo[k]], cuts, [hi[k]]])
            cover = []
            for a, b in zip(ends[:-1], ends[1:]):
                pl, pu = lo.copy(), hi.copy()
                pl[k], pu[k] = a, b
                cover.append((pl, pu))
            if h_value(cover) < uniform_h - 1e-12:
                failures.append(f"{p.name}: random cover beats the uniform split")
                break
    report(7, not failures, f"{len(gaps)} optimizers, gap range [{min(gaps):.2e}, {max(gaps):.2e}]"
           + (f"; {failures[0]}" if failures else ""))


def _random_fraction(rng) -> Fraction:
    return Fraction(int(rng.integers(-1000, 1001)), int(rng.integers(1, 50)))


def test_criterion_08_q_factor_law(report):
    rng = np.random.default_rng(8)
    tested, failures = 0, []
    while tested < 1000:
        n = int(rng.integers(1, 6))
        pairs = [sorted((_random_fraction(rng), _random_fraction(rng))) for _ in range(n)]
        if any(a == b for a, b in pairs):
            continue
        lower, upper = [a for a, _ in pairs], [b for _, b in pairs]
        choice = optimal_sdp_coordinate(lower, upper)
        if not choice.strict:
            continue
        tested += 1
        q = q_factor(lower, upper)
        halves = [q_factor(*half) for half in midpoint_split(lower, upper, choice.index)]
        if sorted(h == q for h in halves) != [False, True] or min(halves) >= q:
            failures.append(f"argmax split of {pairs}: {halves} vs {q}")
        top = q
        for k in range(n):
            if max(abs(lower[k]), abs(upper[k])) == top:
                continue
            if any(q_factor(*half) != q for half in midpoint_split(lower, upper, k)):
                failures.append(f"non-argmax split {k} of {pairs} changed q")
    report(8, not failures, f"{tested} exact instances" + (f"; {failures[0]}" if failures else ""))


def test_criterion_09_worst_case_sdp_bound(report):
    failures, tightest = [], np.inf
    for seed in range(20):
        raw = one_layer_problem(400 + seed, max_in=5, max_out=5, bias=False)
        net = normalize_rows(raw.network).norm
        p = CertProblem(net, raw.input, raw.cost, name=raw.name)
        orc = activation_pattern_oracle(p)
        res = sdp_value(p)
        bounds = propagate_bounds(net, p.input, "interval")
        eps_hat = float(np.max(np.abs(res.optimizer.P_x - orc.witness)))
        w = net.layers[0].weight
        bound = worst_case_sdp_bound(p.cost, p.input.box.lower, p.input.box.upper, bounds.upper[0],
                                     np.abs(w).sum(axis=1), eps_hat, weights=w)
        err = res.value - orc.value
        tightest = min(tightest, bound - err)
        if err > bound + 1e-6:
            failures.append(f"{p.name}: error {err} > bound {bound}")
    report(9, not failures, f"min (bound - error) = {tightest:.3e} over 20 normalised nets"
           + (f"; {failures[0]}" if failures else ""))


def _sweep_checks(kind: str):
    cfg = harness.RunConfig(experiment=kind)
    first, second = harness.run(cfg), harness.run(cfg)
    grid = cfg.sizes if kind == "width-sweep" else cfg.depths
    assert len(first.summary) == len(grid) * len(cfg.distributions)
    pct = [v for row in first.summary for v in (row["lp_improvement_pct"], row["sdp_improvement_pct"])]
    ratios = [row[k] for row in first.timing_summary for k in ("lp_solve_time_ratio", "sdp_solve_time_ratio")]
    same = (harness.results_csv(first.rows) == harness.results_csv(second.rows)
            and harness.summary_csv(first.summary) == harness.summary_csv(second.summary))
    return len(first.summary), min(pct), max(ratios), same


def test_criterion_10_protocol_sweeps(report):
    w_cells, w_pct, w_ratio, w_same = _sweep_checks("width-sweep")
    d_cells, d_pct, d_ratio, d_same = _sweep_checks("depth-sweep")
    ok = (min(w_pct, d_pct) >= -0.01
          and max(w_ratio, d_ratio) <= 2.5 and w_same and d_same)
    report(10, ok, f"width: {w_cells} cells, min %-impr {w_pct:.3g}, max time ratio {w_ratio:.2f}, "
           f"reproducible {w_same}; depth: {d_cells} cells, min %-impr {d_pct:.3g}, "
           f"max time ratio {d_ratio:.2f}, reproducible {d_same}")


def test_criterion_11_psd_element_bound(report):
    rng = np.random.default_rng(11)
    failures = 0
    for _ in range(1000):
        n = int(rng.integers(1, 7))
        G = rng.integers(-9, 10, size=(n, int(rng.integers(1, 5))))
        if n > 1 and rng.random() < 0.3:
            G[1] = G[0]
        ok, _, _ = psd_element_check(G @ G.T, tol=0.0)
        failures += not ok
    flagged, pair, _ = psd_element_check(np.array([[1.0, 2.0], [2.0, 1.0]]))
    report(11, failures == 0 and not flagged and pair == (0, 1),
           f"{1000 - failures}/1000 Gram matrices pass exactly; non-PSD fixture flagged at {pair}")
