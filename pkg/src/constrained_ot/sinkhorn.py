"""
Sinkhorn-type dual ascent for OT under linear constraints.

One sweep performs three exact block maximizations of the dual function:
row scaling (``x``), column scaling (``y``) and a damped Newton solve over the
constraint duals ``a`` jointly with a uniform shift ``t`` of ``x`` that keeps
the intermediate plan at unit mass. :func:`greedy_solve` instead performs a
single block update per iteration, picking the block with the largest
guaranteed improvement.
"""

import enum
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import logsumexp

from . import lyapunov as lyap
from ._linesearch import backtrack, safe
from .exceptions import NumericalFailure, NumericalOverflow
from .model import ConstrainedOtProblem, DualState

logger = logging.getLogger(__name__)

# smallest positive normal double; log of zero marginal entries is clamped here
_LOG_TINY = float(np.log(np.finfo(float).tiny))


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITER = "MaxIterReached"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass
class SolverConfig:
    """Parameters of :func:`sinkhorn_solve` and :func:`greedy_solve`.

    ``a_cap`` bounds ``|a_m|`` inside each Newton solve; ``None`` picks
    ``1e3 (1 + max|C|) / c_d``, far beyond any value a feasible instance
    needs. Set ``track_metrics`` to record rounded cost and violation in the
    trace (every ``metrics_every`` iterations).
    """

    eta: float
    max_iter: int = 10_000
    tol_grad_l1: float = 1e-6
    newton_inner_cap: int = 20
    armijo_c: float = 1e-4
    backtrack_shrink: float = 0.5
    min_step: float = 1e-14
    a_cap: Optional[float] = None
    track_metrics: bool = False
    metrics_every: int = 1

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.max_iter < 1 or self.newton_inner_cap < 1 or self.metrics_every < 1:
            raise ValueError("iteration counts must be positive")
        if not self.tol_grad_l1 >= 0 or not self.min_step > 0:
            raise ValueError("tolerances must be positive")
        if not (0 < self.armijo_c < 1 and 0 < self.backtrack_shrink < 1):
            raise ValueError("armijo_c and backtrack_shrink must lie in (0, 1)")


@dataclass
class IterRecord:
    iteration: int
    f: float
    grad_l1: float
    step: Optional[str] = None
    qx: Optional[float] = None
    qy: Optional[float] = None
    qa: Optional[float] = None
    cost: Optional[float] = None
    violation: Optional[float] = None
    eta: Optional[float] = None
    stage: Optional[int] = None


@dataclass
class SolveReport:
    iterations: int
    trace: List[IterRecord]
    status: Status
    final_state: DualState
    flags: List[str] = field(default_factory=list)
    message: str = ""

    @property
    def converged(self):
        return self.status is Status.CONVERGED

    def plan(self, problem):
        return lyap.plan_from_duals(problem, self.final_state)

    @property
    def final_grad_l1(self):
        return self.trace[-1].grad_l1 if self.trace else float("nan")

    @property
    def final_f(self):
        return self.trace[-1].f if self.trace else float("nan")


@dataclass
class QValues:
    qx: float
    qy: float
    qa: float
    d: np.ndarray
    c_d: float


# ---------------------------------------------------------------------------
# block updates


def _log_marginal(v):
    with np.errstate(divide="ignore"):
        return np.maximum(np.log(v), _LOG_TINY)


def x_update(p: ConstrainedOtProblem, s: DualState) -> DualState:
    """Row scaling: ``x <- x + (log r - log P1) / eta``.

    Row masses are formed in the log domain so rows whose entries all
    underflow are still rescaled correctly.
    """
    log_rows = logsumexp(lyap.log_plan(p, s), axis=1)
    return s.replace(x=s.x + (_log_marginal(p.r) - log_rows) / s.eta)


def y_update(p: ConstrainedOtProblem, s: DualState) -> DualState:
    """Column scaling, mirror of :func:`x_update`."""
    log_cols = logsumexp(lyap.log_plan(p, s), axis=0)
    return s.replace(y=s.y + (_log_marginal(p.c) - log_cols) / s.eta)


def _default_a_cap(p):
    return 1e3 * (1.0 + float(np.max(np.abs(p.cost)))) / max(p.c_d, 1e-12)


def a_update(p: ConstrainedOtProblem, s: DualState, cfg: Optional[SolverConfig] = None, info=None):
    """Maximize ``f(x + t 1, y, a)`` over ``(a, t)`` by damped Newton.

    The Newton system is shifted by ``-lam I`` (``lam = 1e-10 (1 + max|H|)``)
    so singular constraint blocks never stop the solve; ``lam`` doubles on
    each line-search failure up to ``1e-2``.

    Parameters
    ----------
    info : dict, optional
        Filled with ``inner_iters``, ``converged`` and ``capped``.

    Returns
    -------
    DualState
        New ``a``, and ``x`` shifted by the optimal ``t``.

    Raises
    ------
    NumericalFailure
        If no step of length ``>= min_step`` increases ``f``.
    """
    if cfg is None:
        cfg = SolverConfig(eta=s.eta)
    eta = s.eta
    m = p.n_constraints
    cap = cfg.a_cap if cfg.a_cap is not None else _default_a_cap(p)

    # start at the exact t-optimum for the current a
    _, t = lyap.eval_f_aug(p, s.x, s.y, s.a, eta)
    a = s.a.copy()
    capped = False
    converged = False

    def state_at(a_, t_):
        return s.replace(x=s.x + t_, a=a_)

    f_of = safe(lambda a_, t_: lyap.eval_f(p, state_at(a_, t_)))
    scale = 1.0 + float(np.abs(s.x) @ p.r + np.abs(s.y) @ p.c)

    it = 0
    for it in range(1, cfg.newton_inner_cap + 1):
        cur = state_at(a, t)
        plan = lyap.plan_from_duals(p, cur)
        g = lyap.at_gradient(p, cur, plan)
        if np.max(np.abs(g)) <= 1e-12:
            converged = True
            it -= 1
            break
        H = lyap.at_hessian(p, cur, plan)
        f0 = lyap._f_from_mass(p, cur, plan.total())
        lam = 1e-10 * (1.0 + np.max(np.abs(H)))
        while True:
            step = np.linalg.solve(H - lam * np.eye(m + 1), -g)
            slope = float(g @ step)
            if slope > 0:
                alpha, _ = backtrack(
                    lambda al: f_of(a + al * step[:m], t + al * step[m]),
                    f0,
                    slope,
                    cfg.armijo_c,
                    cfg.backtrack_shrink,
                    cfg.min_step,
                    scale=max(scale, abs(f0)),
                )
                if alpha is not None:
                    break
            lam *= 2.0
            if lam > 1e-2:
                raise NumericalFailure("constraint-dual Newton step: line search collapsed")
        a = a + alpha * step[:m]
        t = t + alpha * step[m]
        if m and np.any(np.abs(a) > cap):
            a = np.clip(a, -cap, cap)
            capped = True
    else:
        cur = state_at(a, t)
        converged = np.max(np.abs(lyap.at_gradient(p, cur))) <= 1e-12

    if info is not None:
        info.update(inner_iters=it, converged=bool(converged), capped=capped)
    return state_at(a, t)


# ---------------------------------------------------------------------------
# diagnostics


def kl_from_logs(u, log_v):
    """``KL(u || v)`` given ``log v``; terms with ``u_i = 0`` vanish."""
    pos = u > 0
    return float(np.sum(u[pos] * (np.log(u[pos]) - log_v[pos])))


def q_values(p: ConstrainedOtProblem, s: DualState, plan=None) -> QValues:
    """Guaranteed per-block improvements used by the greedy rule.

    ``qx = KL(r || P1)``, ``qy = KL(c || P^T 1)`` and ``qa`` is the lower bound
    on the gain of an ``(a, t)`` update; ``qa = 0`` without constraints or
    when every constraint matrix vanishes.
    """
    if plan is None:
        plan = lyap.plan_from_duals(p, s)
    L = plan.log_entries
    qx = kl_from_logs(p.r, logsumexp(L, axis=1))
    qy = kl_from_logs(p.c, logsumexp(L, axis=0))
    d = lyap.grad_f(p, s, plan).ga
    c_d = p.c_d
    m = p.n_constraints
    K = p.k_ineq
    eta = s.eta
    qa = 0.0
    if m and c_d > 0:
        dk = np.abs(d[:K])
        qa += float(np.sum(dk * np.minimum(1.0 / (8 * eta), dk / (8 * eta * c_d + 4 * eta * m * c_d**2))))
        qa += float(np.sum(d[K:] ** 2) / (2 * eta * m * c_d**2))
    return QValues(max(qx, 0.0), max(qy, 0.0), qa, d, c_d)


def _metrics(p, plan):
    from .transport import cost, round_to_feasible, violation

    rounded = round_to_feasible(plan, p.r, p.c)
    return cost(rounded.plan, p.cost), violation(rounded.plan, p.constraints)


def _record(p, s, it, cfg, plan=None, **extra):
    if plan is None:
        plan = lyap.plan_from_duals(p, s)
    rec = IterRecord(
        iteration=it,
        f=lyap._f_from_mass(p, s, plan.total()),
        grad_l1=lyap.grad_f(p, s, plan).l1(),
        eta=s.eta,
        **extra,
    )
    if cfg is not None and cfg.track_metrics and it % cfg.metrics_every == 0:
        rec.cost, rec.violation = _metrics(p, plan)
    return rec


# ---------------------------------------------------------------------------
# solvers


def _check_init(p, cfg, init):
    if init is None:
        return DualState.zeros(p, cfg.eta)
    if init.eta != cfg.eta:
        raise ValueError(f"init.eta={init.eta} does not match cfg.eta={cfg.eta}")
    if init.x.shape != (p.n,) or init.y.shape != (p.n,) or init.a.shape != (p.n_constraints,):
        raise ValueError("init dual state does not match the problem dimensions")
    return init


def sinkhorn_solve(p: ConstrainedOtProblem, cfg: SolverConfig, init: Optional[DualState] = None) -> SolveReport:
    """Alternate x, y and (a, t) updates until ``||grad f||_1 <= tol_grad_l1``.

    A numerical failure ends the run with status ``NumericalFailure`` and
    the partial trace; it is not raised.
    """
    s = _check_init(p, cfg, init)
    trace = []
    flags = []
    status = Status.MAX_ITER
    message = ""
    it = 0
    for it in range(1, cfg.max_iter + 1):
        try:
            s = x_update(p, s)
            s = y_update(p, s)
            info = {}
            s = a_update(p, s, cfg, info)
            if info["capped"]:
                flags.append(f"a_cap:{it}")
            rec = _record(p, s, it, cfg)
        except (NumericalFailure, NumericalOverflow) as exc:
            status, message = Status.NUMERICAL_FAILURE, str(exc)
            logger.warning("sinkhorn_solve stopped at iteration %d: %s", it, exc)
            break
        trace.append(rec)
        if rec.grad_l1 <= cfg.tol_grad_l1:
            status = Status.CONVERGED
            break
    return SolveReport(len(trace), trace, status, s, flags, message)


_STEPS = ("x", "y", "a")


def greedy_solve(p: ConstrainedOtProblem, cfg: SolverConfig, init: Optional[DualState] = None) -> SolveReport:
    """Greedy variant: one block update per iteration, chosen by largest Q value.

    Ties resolve in the order x, y, a. On convergence the plan residual
    ``||P1 - r||_1 + ||P^T 1 - c||_1 + sum_k |min(P.D_k, 0)| + sum_l |P.D_l|``
    is checked against ``tol_grad_l1``.
    """
    from .transport import stationarity_residual

    s = _check_init(p, cfg, init)
    trace = []
    flags = []
    status = Status.MAX_ITER
    message = ""
    for it in range(1, cfg.max_iter + 1):
        try:
            plan = lyap.plan_from_duals(p, s)
            q = q_values(p, s, plan)
            g1 = lyap.grad_f(p, s, plan).l1()
            if g1 <= cfg.tol_grad_l1:
                residual = stationarity_residual(p, plan.entries)
                assert residual <= g1 * (1 + 1e-9) + 1e-15, "plan residual exceeds gradient norm"
                status = Status.CONVERGED
                break
            step = _STEPS[int(np.argmax([q.qx, q.qy, q.qa]))]
            if step == "x":
                s = x_update(p, s)
            elif step == "y":
                s = y_update(p, s)
            else:
                info = {}
                s = a_update(p, s, cfg, info)
                if info["capped"]:
                    flags.append(f"a_cap:{it}")
            rec = _record(p, s, it, cfg, step=step, qx=q.qx, qy=q.qy, qa=q.qa)
        except (NumericalFailure, NumericalOverflow) as exc:
            status, message = Status.NUMERICAL_FAILURE, str(exc)
            logger.warning("greedy_solve stopped at iteration %d: %s", it, exc)
            break
        trace.append(rec)
    return SolveReport(len(trace), trace, status, s, flags, message)
