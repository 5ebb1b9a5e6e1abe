"""Partition-based convex relaxations for certifying ReLU networks."""

from .bounds import LayerBounds, default_mode, propagate_bounds, restrict_bounds
from .lp import (build_lp, lp_value, motivating_partition, multi_row_partition, optimal_two_part_row,
                 partitioned_lp, recursive_refine, solve_lp, worst_case_lp_bound)
from .network import (Layer, ReluNetwork, classification_cost, forward_eval, load_network,
                      normalize_rows, random_network, save_network)
from .nphard import check_gadget, np_gadget
from .oracles import activation_pattern_oracle, multistart_local_search
from .problem import BoxSet, CertProblem, PartitionPlan, PolytopeSet, box_from_nominal, load_problem
from .sdp import (build_multilayer_sdp, build_sdp, optimal_sdp_coordinate, partitioned_sdp, sdp_value,
                  solve_sdp, worst_case_sdp_bound)
from .solver import ConicProgram, RelaxResult, SolverConfig, solve

__version__ = "0.1.0"

__all__ = [
    "BoxSet", "CertProblem", "ConicProgram", "Layer", "LayerBounds", "PartitionPlan", "PolytopeSet",
    "RelaxResult", "ReluNetwork", "SolverConfig", "activation_pattern_oracle", "box_from_nominal",
    "build_lp", "build_multilayer_sdp", "build_sdp", "check_gadget", "classification_cost",
    "default_mode", "forward_eval", "load_network", "load_problem", "lp_value", "motivating_partition",
    "multi_row_partition", "multistart_local_search", "normalize_rows", "np_gadget",
    "optimal_sdp_coordinate", "optimal_two_part_row", "partitioned_lp", "partitioned_sdp",
    "propagate_bounds", "random_network", "recursive_refine", "restrict_bounds", "save_network",
    "sdp_value", "solve", "solve_lp", "solve_sdp", "worst_case_lp_bound", "worst_case_sdp_bound",
]
