"""Finite-state, finite-action mean field games: best-response population
dynamics, stationary equilibria, and mechanical convergence checks."""

from .expr import EvalError, ParseError, diff_expr, eval_expr, parse_expr, to_text
from .kernels import BACKEND_NAME
from .model import (GameModel, ModelError, load_model, make_model,
                    project_to_simplex, save_model, validate_model, with_params)
from .mdp import (BestResponseSet, SolverError, best_response,
                  brute_force_value_oracle, g_value, grad_g, optimal_value,
                  policy_value)
from .dynamics import (FieldPolytope, Trajectory, field_polytope, integrate,
                       sliding_coefficient, vector_field)
from .equilibrium import (EquilibriumReport, NoRootError,
                          find_deterministic_equilibria,
                          find_mixed_equilibria_two_strategy,
                          stationary_distribution)
from .stability import (GlobalCheckReport, StabilityReport, explicit_delta,
                        global_check, jacobian_f, local_check)
from .examples import (BUILTIN_EXAMPLES, CongestionParams,
                       ConsumerChoiceParams, build_example,
                       congestion_fixed_point, congestion_model,
                       congestion_riccati_reference, consumer_choice_model,
                       consumer_choice_thresholds)

__version__ = "0.1.0"
