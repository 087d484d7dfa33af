"""Entropic optimal transport under linear equality and inequality constraints."""

from .experiments import (
    ExperimentKind,
    ExperimentSpec,
    ParetoPoint,
    dense_newton_oracle,
    front_by_eta,
    gen_pareto_geometric,
    gen_random_assignment,
    gen_random_constrained,
    gen_ranking_dcg,
    lp_vertex_oracle,
    pareto_csv,
    pareto_sweep,
)
from .exceptions import Infeasible, InstanceFormatError, InvalidInput, NumericalFailure, NumericalOverflow
from .lyapunov import eval_f, eval_f_aug, eval_f_tilde, grad_f, grad_f_tilde, plan_from_duals
from .model import (
    ConstrainedOtProblem,
    Constraint,
    ConstraintKind,
    DualState,
    Sense,
    constraint_from_threshold,
    homogenize_constraint,
    load_instance,
    make_problem,
    save_instance,
    validate_problem,
)
from .sinkhorn import SolverConfig, SolveReport, Status, greedy_solve, sinkhorn_solve
from .sns import ScheduleConfig, SnsConfig, scheduled_solve, sns_solve
from .transport import cost, round_to_feasible, tv_distance, violation

__version__ = "0.1.0"
