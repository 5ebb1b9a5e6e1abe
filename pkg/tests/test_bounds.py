import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from partcert import bounds as bounds_mod
from partcert.bounds import (default_mode, first_layer_bounds, max_over_box_halfspace, propagate_bounds,
                             restrict_bounds)
from partcert.network import ReluNetwork, preactivations, random_network
from partcert.problem import BoxSet, PolytopeSet, box_from_nominal, row_halfspace_partition, sample_polytope
from partcert.sdp import uniform_partition
from partcert.solver import ConicProgram, RelaxResult, solve


def test_first_layer_is_eps_times_l1_norm():
    net = ReluNetwork.from_arrays([[[1.0, -2.0]]])
    lo, hi = first_layer_bounds(net, box_from_nominal([0.0, 0.0], 0.1))
    np.testing.assert_allclose(lo, [-0.3])
    np.testing.assert_allclose(hi, [0.3])


def test_first_layer_on_shifted_box():
    net = ReluNetwork.from_arrays([[[1.0, 0.0]]])
    lo, hi = first_layer_bounds(net, BoxSet([0.0, -1.0], [2.0, 1.0]))
    assert lo.tolist() == [0.0] and hi.tolist() == [2.0]


@given(st.integers(0, 10_000))
def test_knapsack_matches_lp(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    lo = rng.uniform(-2, 0, n)
    hi = lo + rng.uniform(0, 2, n)
    w, a = rng.standard_normal(n), rng.standard_normal(n)
    beta = float(a @ rng.uniform(lo, hi))
    res = solve(ConicProgram(w, A_ub=a[None, :], b_ub=[beta], lower=lo, upper=hi))
    assert max_over_box_halfspace(w, lo, hi, a, beta) == pytest.approx(res.value, abs=1e-8)


def test_knapsack_empty_set():
    assert max_over_box_halfspace([1.0], [0.0], [1.0], [-1.0], -2.0) == -np.inf


SOUNDNESS_NETS = [
    ("one-layer", [3, 6], "normal"),
    ("two-layer", [3, 5, 4], "normal"),
    ("three-layer", [2, 6, 6, 3], "uniform"),
]


@pytest.mark.parametrize("mode", ["interval", "lp-tight"])
@pytest.mark.parametrize("name,sizes,dist", SOUNDNESS_NETS)
def test_sampled_preactivations_inside_bounds(mode, name, sizes, dist):
    net = random_network(sizes, dist, seed=len(sizes), bias=dist == "normal")
    rng = np.random.default_rng(0)
    poly = PolytopeSet(box_from_nominal(rng.standard_normal(sizes[0]), 0.5))
    poly = poly.intersect([rng.standard_normal(sizes[0])], [0.1])
    b = propagate_bounds(net, poly, mode)
    xs = sample_polytope(poly, 10_000, rng)
    assert len(xs) == 10_000
    for k, pre in enumerate(preactivations(net, xs)):
        assert np.all(pre >= b.lower[k] - 1e-9) and np.all(pre <= b.upper[k] + 1e-9)


@given(st.integers(0, 500))
def test_tight_nested_in_interval(seed):
    net = random_network([3, 5, 5, 2], seed=seed, bias=True)
    box = box_from_nominal(np.random.default_rng(seed).standard_normal(3), 0.3)
    tight = propagate_bounds(net, box, "lp-tight")
    loose = propagate_bounds(net, box, "interval")
    assert loose.contains(tight, tol=1e-12)


class TestRestrict:
    net = random_network([2, 4, 3], seed=11, bias=True)
    box = PolytopeSet(box_from_nominal([0.2, -0.1], 1.0))

    def test_positive_side_clamps_lower_only(self):
        parent = propagate_bounds(self.net, self.box, "lp-tight")
        row = int(np.flatnonzero((parent.lower[0] < 0) & (parent.upper[0] > 0))[0])
        layer = self.net.layers[0]
        plan = row_halfspace_partition(self.box, layer.weight[row], layer.bias[row], row=row)
        pb = restrict_bounds(parent, plan.parts[0], self.net, plan.row_signs[0], recompute=False)
        assert pb.lower[0][row] == 0.0
        assert pb.upper[0][row] == parent.upper[0][row]
        pb = restrict_bounds(parent, plan.parts[0], self.net, plan.row_signs[0])
        assert pb.lower[0][row] >= 0.0

    def test_whole_set_unchanged(self):
        parent = propagate_bounds(self.net, self.box, "lp-tight")
        same = restrict_bounds(parent, self.box, self.net)
        for a, b in zip(parent.lower + parent.upper, same.lower + same.upper):
            np.testing.assert_allclose(a, b, atol=1e-12)

    @pytest.mark.parametrize("mode", ["interval", "lp-tight"])
    def test_coordinate_split_nested(self, mode):
        parent = propagate_bounds(self.net, self.box, mode)
        for part in uniform_partition(self.box, 0, 3).parts:
            child = restrict_bounds(parent, part, self.net)
            assert parent.contains(child)

    @given(st.integers(0, 300))
    def test_never_loosens(self, seed):
        rng = np.random.default_rng(seed)
        net = random_network([3, 4, 3], seed=seed, bias=True)
        box = PolytopeSet(box_from_nominal(rng.standard_normal(3), 0.4))
        parent = propagate_bounds(net, box, "interval")
        w = rng.standard_normal(3)
        for part in row_halfspace_partition(box, w, float(-w @ box.box.center)).parts:
            assert parent.contains(restrict_bounds(parent, part, net, mode="lp-tight"))


def test_solver_failure_falls_back_to_interval(monkeypatch):
    net = random_network([2, 4, 3], seed=1)
    box = box_from_nominal([0.0, 0.0], 1.0)
    real = bounds_mod.solve

    def failing(prog, cfg=None):
        if prog.n_vars > 2:
            return RelaxResult(np.nan, None, "numerical-failure", 0.0)
        return real(prog, cfg)

    monkeypatch.setattr(bounds_mod, "solve", failing)
    with pytest.warns(RuntimeWarning, match="falling back"):
        b = propagate_bounds(net, box, "lp-tight")
    assert b.fallback
    ref = propagate_bounds(net, box, "interval")
    np.testing.assert_allclose(b.upper[1], ref.upper[1])


def test_default_mode_by_depth():
    assert default_mode(random_network([2, 3, 3, 3])) == "lp-tight"
    assert default_mode(random_network([2, 3, 3, 3, 3])) == "interval"


def test_unknown_mode():
    with pytest.raises(ValueError):
        propagate_bounds(random_network([2, 2]), box_from_nominal([0, 0], 1.0), "symbolic")
