"""Numerical laboratory for Harnack inequalities, entropy monotonicity and heat balls under Ricci flow."""

from .flow import FlowSolution, make_flow
from .geometry import BackgroundSpec
from .harnack import (
    HarnackReport,
    LimitReport,
    dissipation,
    entropy_W_h,
    li_yau_Q,
    linear_W,
    v_H_field,
)
from .harness import ExperimentConfig, compare_baseline, run_experiment
from .heat import (
    FieldHistory,
    fundamental_solution,
    kernel_history,
    solve_conjugate_heat,
    solve_forward_heat,
)
from .heatball import BackwardKernel, heat_ball_region, monotonicity_curve
from .reduced import L_length, minimize_L, reduced_distance_field

__version__ = "0.1.0"

__all__ = [
    "BackgroundSpec", "FlowSolution", "make_flow", "FieldHistory", "fundamental_solution", "kernel_history",
    "solve_conjugate_heat", "solve_forward_heat", "HarnackReport", "LimitReport", "v_H_field", "entropy_W_h",
    "dissipation", "li_yau_Q", "linear_W", "L_length", "minimize_L", "reduced_distance_field",
    "BackwardKernel", "heat_ball_region", "monotonicity_curve", "ExperimentConfig", "run_experiment",
    "compare_baseline",
]
