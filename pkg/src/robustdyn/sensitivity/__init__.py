"""Outer minimax layer: cost assembly, annealed search over multipliers,
bound curves and sensitivity summaries."""
from .anneal import (AdaptiveWalk, Evaluation, ResultStore, RobustnessResult, anneal_optimize, bound_curve,
                     curve_from_store, delta_star, robustness_metric)
from .config import BoundCurve, BoundRecord, DualVariables, GlobalBoundParams, SensitivityConfig, default_radii
from .core import (InnerContext, assemble_cost, cost_regularity, global_bound, global_summary, inner_dual_value,
                   local_sensitivity)
from .problems import CarProblem, LinearProblem, PathLinearProblem, TaxiProblem
