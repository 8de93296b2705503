"""Irrevocable packing heuristic for finite-horizon bandits with k pulls per step."""

from .arm import (ArmModel, CoinSpec, build_coin_arm, build_tabular_arm, coin_predictive,
                  deterministic_arm)
from .bench import GenerativeConfig, beta_params_for_cv, evaluate, generate_instance, run_bench
from .errors import (BanditError, DomainError, InfeasibleCV, InstanceTooLarge, InvalidBudget,
                     NegativeReward, NonStochasticRow)
from .instance import BanditInstance
from .oracle import check_decreasing_returns, exact_optimal_value, exact_pull_count_profile
from .packing import rank_arms, run_packing, simulate, verify_irrevocability
from .relaxation import OccupancyTable, RelaxedSolution, dual_value, solve_arm_subproblem, solve_rlp

__version__ = "0.1.0"
