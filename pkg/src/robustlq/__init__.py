"""Robust two-scenario linear-quadratic recursive control and first-order checks."""
from .bsde_engine import (BsdeValue, RobustCost, combined_se, exponential_process, linear_bsde_value,
                          lq_cost_terms, lsmc_bsde_value, recursive_cost, robust_cost)
from .riccati import (BlockSystem, RiccatiError, RiccatiSolution, assemble_blocks, check_h7_aggregate,
                      lambda_lipschitz_probe, riccati_convergence, solve_riccati)
from .robust_lq import (BisectionError, ClosedLoop, RobustSolution, evaluate_at_lambda, lambda_sweep,
                        lyapunov_costs, simulate_closed_loop, solve_robust)
from .scenario_io import dump_scenario, load_scenario
from .scenario_model import (GeneralScenario, LQScenario, ScenarioError, ScenarioSet, TimeGrid, random_lq_set,
                             validate_derivatives,
                             validate_h6, validate_h7)
from .sde_engine import (AffineFeedback, FeedbackControl, OpenLoopControl, PathEnsemble, StatePaths,
                         generate_paths, simulate_sde, simulate_variational_sde, strong_convergence_order)
from .smp_verify import (adjoint_paths, check_sufficient_condition, duality_gap, first_order_expansion,
                         hamiltonian, robust_directional_derivative, stationarity_residual, variational_value,
                         verify_solution)

__version__ = "0.1.0"
