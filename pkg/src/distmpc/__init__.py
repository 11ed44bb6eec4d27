"""Distributed model-predictive control by dual decomposition and ADMM, with
early-termination certificates."""

from .exceptions import ContractError, InfeasibleError, NumericalError, SolverFailure, UndefinedRatioError
from .model import CouplingGraph, MpcProblem, StageCost, SubsystemModel, Trajectory, rollout, stack_neighbors, total_cost
from .local_solver import SolverSettings, project_box, solve_local
from .dual_decomp import Multipliers, StepSizes, dual_iteration, dual_value, primal_residual, solve_dual
from .admm import AdmmIterate, ConsistencySet, admm_iteration, admm_value, admm_y_update, project_consistency
from .termination import CertificateState, check_stop_admm, check_stop_dual, guarantee_ratio, shift_controls, tilde_v, update_error
from .scenarios import build_three_vehicle, build_two_vehicle, get_scenario, suboptimality_ratio
from .simulation import ControllerOptions, RunLog, run_closed_loop

__version__ = "0.1.0"
