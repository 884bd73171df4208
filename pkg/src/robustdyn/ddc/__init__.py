"""Dynamic discrete-choice models: an infinite-horizon purchase model over
inclusive values and a finite-horizon stopping model over hours worked."""
from .eccp import EccpResult, eccp_design, eccp_first_stage, two_stage_least_squares
from .finite import (CcpTable, FiniteHorizonModel, ccp_bellman_residual, default_k_sets, expected_hours,
                     finite_residual_terms, frisch_elasticity, recover_xi, recover_xi_path, solve_finite_horizon,
                     stop_work_elasticity)
from .infinite import (InfiniteHorizonModel, SharePolicy, bellman_residual_matrix, conditional_residual,
                       ev_subsidy_surplus, industry_elasticity, recover_inclusive_indices, recover_inclusive_values,
                       share_map, share_residual, solve_share_fixed_point, structural_cost, structural_residual,
                       value_iteration)
from .reference import CarReference, TaxiReference, fit_car_reference, fit_taxi_reference
from .structural import MomentSystem, MultiplierFunction
