"""ctrldiffuse: learn near-optimal piecewise-constant controls for 1-D
controlled diffusions by time-sampled, space-quantized tabular Q-learning,
and check the learned policies against finite-MDP oracles, closed-form
diffusion models, and the matching approximation-error and sample-complexity
formulas."""

__version__ = "0.1.0"

from .diffusion import (CostEstimate, DiffusionModel, GridPolicy, OuParams,
                        SamplingScheme, Trajectory, const_model,
                        discounted_cost_estimate, grid_policy, ou_model,
                        rollout, sample_transition, sample_transition_exact_ou,
                        step_euler, tail_horizon)
from .errors import (BoundHypothesisError, ModelEvaluationError,
                     NonConvergenceError, ValidationError)
from .finite_mdp import (FiniteMdp, QMatrix, bellman_residual,
                         estimate_finite_mdp, evaluate_mdp_policy,
                         greedy_policy, q_value_iteration)
from .grids import (ActionGrid, StateGrid, build_action_grid,
                    build_centered_action_grid, build_uniform_state_grid,
                    coupled_resolution, quantize_state)
from .policy_eval import (GapReport, check_kernel_lipschitz, compute_gap,
                          empirical_w1, estimate_reference_optimum,
                          evaluate_learned_control)
from .qlearn import (LearnConfig, LearnHistory, QTable, learning_rate,
                     q_update, run_q_learning, run_q_learning_on_mdp)
