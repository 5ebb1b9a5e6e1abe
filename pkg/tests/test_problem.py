import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from partcert.lp import motivating_partition
from partcert.network import random_network, save_network
from partcert.problem import (BoxSet, CertProblem, EmptySetError, PartitionPlan, PolytopeSet,
                              box_from_nominal, load_problem, row_halfspace_partition, validate_partition)
from partcert.sdp import uniform_partition

SQUARE = PolytopeSet(BoxSet([-1.0, -1.0], [1.0, 1.0]))


class TestBox:
    def test_nominal_ball(self):
        box = box_from_nominal([0.0, 0.0], 0.1)
        np.testing.assert_allclose(box.lower, [-0.1, -0.1])
        np.testing.assert_allclose(box.upper, [0.1, 0.1])

    def test_one_dimensional(self):
        box = box_from_nominal([1.0], 0.5)
        assert box.lower.tolist() == [0.5] and box.upper.tolist() == [1.5]

    @pytest.mark.parametrize("eps", [0.0, -0.1])
    def test_nonpositive_radius_rejected(self, eps):
        with pytest.raises(ValueError):
            box_from_nominal([0.0], eps)

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=6), st.floats(1e-6, 10))
    def test_strictly_ordered(self, x, eps):
        box = box_from_nominal(x, eps)
        assert np.all(box.lower < box.upper)

    def test_inverted_bounds_rejected(self):
        with pytest.raises(ValueError):
            BoxSet([1.0], [0.0])


class TestPolytope:
    def test_empty_detected(self):
        with pytest.raises(EmptySetError):
            SQUARE.intersect([[1.0, 0.0]], [-2.0])

    def test_bounding_box_of_halfspace(self):
        tri = SQUARE.intersect([[1.0, 1.0]], [0.0])
        box = tri.bounding_box()
        np.testing.assert_allclose(box.lower, [-1.0, -1.0], atol=1e-9)
        np.testing.assert_allclose(box.upper, [1.0, 1.0], atol=1e-9)
        cut = SQUARE.intersect([[1.0, 0.0]], [0.25])
        np.testing.assert_allclose(cut.bounding_box().upper, [0.25, 1.0], atol=1e-9)

    def test_contains(self):
        tri = SQUARE.intersect([[1.0, 1.0]], [0.0])
        assert tri.contains([-0.5, 0.2]) and not tri.contains([0.5, 0.2])


class TestRowHalfspace:
    def test_two_slabs(self):
        plan = row_halfspace_partition(SQUARE, [1.0, 0.0])
        assert len(plan) == 2
        pos, neg = plan.parts
        np.testing.assert_allclose(pos.bounding_box().lower, [0.0, -1.0], atol=1e-9)
        np.testing.assert_allclose(neg.bounding_box().upper, [0.0, 1.0], atol=1e-9)

    def test_one_sided_box_keeps_one_part(self):
        plan = row_halfspace_partition(PolytopeSet(BoxSet([1.0, 1.0], [2.0, 2.0])), [1.0, 0.0])
        assert len(plan) == 1
        assert any("empty" in n for n in plan.notes)

    def test_zero_normal_rejected(self):
        with pytest.raises(ValueError):
            row_halfspace_partition(SQUARE, [0.0, 0.0])

    @given(st.integers(0, 10_000))
    def test_random_split_is_a_partition(self, seed):
        rng = np.random.default_rng(seed)
        lo = rng.uniform(-2, 0, 3)
        box = PolytopeSet(BoxSet(lo, lo + rng.uniform(0.1, 2, 3)))
        w = rng.standard_normal(3)
        plan = row_halfspace_partition(box, w, float(-w @ box.box.center))
        rep = validate_partition(box, plan, samples=2000, seed=seed)
        assert rep.ok and rep.coverage == 1.0
        assert rep.overlap_fraction < 0.02


class TestValidate:
    def test_motivating_partition(self):
        net = random_network([2, 2], seed=4, bias=True)
        p = CertProblem(net, SQUARE, [1.0, -1.0])
        rep = validate_partition(SQUARE, motivating_partition(p), samples=10_000)
        assert rep.ok and rep.coverage == 1.0 and rep.overlap_fraction < 0.02
        assert len(motivating_partition(p)) <= 4

    def test_deleted_part_gives_witness(self):
        plan = row_halfspace_partition(SQUARE, [1.0, 0.0]).without(0)
        rep = validate_partition(SQUARE, plan)
        assert not rep.ok and rep.witness is not None
        assert rep.witness[0] > 0

    def test_single_part(self):
        rep = validate_partition(SQUARE, PartitionPlan.single(SQUARE))
        assert rep.ok and rep.coverage == 1.0 and rep.overlap_fraction == 0.0

    def test_part_outside_parent_flagged(self):
        bigger = PolytopeSet(BoxSet([-2.0, -1.0], [1.0, 1.0]))
        rep = validate_partition(SQUARE, PartitionPlan.single(bigger))
        assert not rep.ok and rep.outside_parent is not None

    @pytest.mark.parametrize("k,p", [(0, 2), (1, 3), (0, 4)])
    def test_generated_uniform_plans_pass(self, k, p):
        plan = uniform_partition(SQUARE.intersect([[1.0, 1.0]], [0.5]), k, p)
        assert validate_partition(SQUARE.intersect([[1.0, 1.0]], [0.5]), plan).ok


class TestProblemFile:
    def test_label_and_challenger(self, tmp_path):
        net = random_network([2, 3, 3], seed=0)
        save_network(net, tmp_path / "net.json")
        doc = {"network": "net.json", "nominal": [0.1, 0.2], "epsilon": 0.1, "label": 0, "challenger": 2,
               "halfspaces": [{"a": [1.0, 0.0], "b": 0.15}]}
        (tmp_path / "p.json").write_text(json.dumps(doc))
        p = load_problem(tmp_path / "p.json")
        assert p.cost.tolist() == [-1.0, 0.0, 1.0]
        assert p.input.A.shape == (1, 2)

    def test_explicit_bounds_and_cost(self, tmp_path):
        net = random_network([2, 2], seed=0)
        doc = {"network": net.to_dict(), "lower": [0, 0], "upper": [1, 1], "cost": [1, 2], "offset": 0.5}
        (tmp_path / "p.json").write_text(json.dumps(doc))
        p = load_problem(tmp_path / "p.json")
        assert p.offset == 0.5 and p.cost.tolist() == [1.0, 2.0]

    def test_missing_set_rejected(self, tmp_path):
        doc = {"network": random_network([2, 2]).to_dict(), "cost": [1, 1]}
        (tmp_path / "p.json").write_text(json.dumps(doc))
        with pytest.raises(ValueError):
            load_problem(tmp_path / "p.json")

    def test_cost_size_checked(self):
        with pytest.raises(ValueError):
            CertProblem(random_network([2, 3]), SQUARE, [1.0])
