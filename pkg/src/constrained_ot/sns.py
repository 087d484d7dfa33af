"""
Sinkhorn-Newton-Sparse and entropy-regularization scheduling.

After a short Sinkhorn warm start the full dual ``z = (x, y, a)`` is updated
by Newton steps on ``f~ = f - (sum x - sum y)^2 / 2``. The plan block of the
Hessian is truncated to its ``nnz_budget`` largest entries and the Newton
system is solved matrix-free by conjugate gradient.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import sparse

from . import lyapunov as lyap
from ._linesearch import backtrack, safe
from .exceptions import NumericalFailure, NumericalOverflow
from .model import ConstrainedOtProblem, DualState
from .sinkhorn import SolveReport, SolverConfig, Status, _record, sinkhorn_solve

logger = logging.getLogger(__name__)


@dataclass
class SnsConfig:
    """Parameters of :func:`sns_solve`.

    ``nnz_budget`` caps the retained plan entries in the Hessian (``None``
    means ``5 n``); ``cg_max_iter=None`` means ``10 n``. ``tol`` decides the
    reported status; the Newton stage only stops before ``n2`` iterations
    when ``||grad f||_1 <= stop_tol``.
    ``track_metrics`` adds rounded cost and violation to every trace record.
    """

    n1: int = 20
    n2: int = 30
    nnz_budget: Optional[int] = None
    cg_tol: float = 1e-10
    cg_max_iter: Optional[int] = None
    armijo_c: float = 1e-4
    backtrack_shrink: float = 0.5
    min_step: float = 1e-14
    newton_inner_cap: int = 20
    tol: float = 1e-9
    stop_tol: float = 0.0
    sparsify: bool = True
    track_metrics: bool = False

    def __post_init__(self):
        if self.n1 < 0 or self.n2 < 0:
            raise ValueError("n1 and n2 must be nonnegative")
        if self.nnz_budget is not None and self.nnz_budget < 1:
            raise ValueError("nnz_budget must be positive")
        if not self.cg_tol > 0:
            raise ValueError("cg_tol must be positive")


def sparsify(P, nnz_budget):
    """Keep the ``nnz_budget`` largest entries of ``P`` as a CSR matrix.

    This is truncation at the adaptive threshold ``rho`` equal to the
    ``nnz_budget``-th largest entry. Entries tied at ``rho`` that do not all
    fit are taken in row-major order.
    """
    P = P.entries if isinstance(P, lyap.PlanMatrix) else np.asarray(P, dtype=float)
    n_rows, n_cols = P.shape
    if nnz_budget >= P.size:
        return sparse.csr_matrix(P)
    flat = P.ravel()
    # stable sort on -value keeps ties in row-major order
    keep = np.argsort(-flat, kind="stable")[:nnz_budget]
    keep = keep[flat[keep] > 0]
    rows, cols = np.divmod(keep, n_cols)
    return sparse.csr_matrix((flat[keep], (rows, cols)), shape=P.shape)


class SparseHessian(lyap.BlockHessian):
    """:class:`BlockHessian` whose plan block is a truncated sparse matrix."""

    @property
    def nnz(self):
        return self.p_block.nnz


def sparse_hessian(p, s, plan, nnz_budget, regularized=True) -> SparseHessian:
    P = plan.entries
    row, col, b_xa, b_ya, m_aa = lyap.hessian_parts(p, s, P)
    return SparseHessian(
        s.eta, row, col, sparsify(P, nnz_budget), b_xa, b_ya, m_aa, regularized=regularized
    )


def cg_solve(H, g, tol=1e-10, max_iter=None):
    """Solve ``H dz = -g`` for negative (semi)definite ``H`` by conjugate gradient.

    CG runs on ``(-H) dz = g``. ``H`` is anything with a ``matvec`` method, a
    dense array or a callable.

    Returns
    -------
    dz : ndarray
    info : int
        0 on convergence (``||H dz + g|| <= tol ||g||``), the iteration count
        when ``max_iter`` was hit, -1 on breakdown (non-positive curvature);
        after a breakdown ``dz`` is the last iterate, or ``g`` itself when
        none was formed.
    """
    if hasattr(H, "matvec"):
        op = H.matvec
    elif callable(H):
        op = H
    else:
        Hd = np.asarray(H, dtype=float)
        op = Hd.__matmul__
    g = np.asarray(g, dtype=float)
    if max_iter is None:
        max_iter = 10 * max(g.size, 1)
    x = np.zeros_like(g)
    res = g.copy()
    rs = float(res @ res)
    gnorm = math.sqrt(rs)
    if gnorm == 0.0:
        return x, 0
    target = tol * gnorm
    d = res.copy()
    for _ in range(max_iter):
        Ad = -op(d)
        curv = float(d @ Ad)
        if not curv > 0:
            return (x if np.any(x) else g.copy()), -1
        alpha = rs / curv
        x += alpha * d
        res -= alpha * Ad
        rs_new = float(res @ res)
        if math.sqrt(rs_new) <= target:
            return x, 0
        d = res + (rs_new / rs) * d
        rs = rs_new
    return x, max_iter


def _project_off_v(s):
    """Remove the component of ``z`` along ``v = (1, -1, 0)``; ``f`` is unchanged."""
    shift = (s.x.sum() - s.y.sum()) / (2 * s.x.size)
    return s.replace(x=s.x - shift, y=s.y + shift)


def _ftilde_record(p, s, it, cfg, **extra):
    metrics = SolverConfig(eta=s.eta, track_metrics=cfg.track_metrics)
    return _record(p, s, it, metrics, **extra)


def newton_stage(p, s, cfg: SnsConfig, n_iter, start_iter=0, hessian="sparse", stage=None):
    """Run up to ``n_iter`` Newton iterations on ``f~`` from ``s``.

    ``hessian`` selects the Hessian: ``"sparse"`` (truncated, CG),
    ``"full"`` (untruncated, CG) or ``"dense"`` (dense direct solve).

    Returns
    -------
    state, records, flags
    """
    n = p.n
    budget = cfg.nnz_budget if cfg.nnz_budget is not None else 5 * n
    s = _project_off_v(s)
    ft = safe(lambda st: lyap.eval_f_tilde(p, st))
    records = []
    flags = []
    for k in range(n_iter):
        plan = lyap.plan_from_duals(p, s)
        grad = lyap.grad_f_tilde(p, s, plan).flat()
        if lyap.grad_f(p, s, plan).l1() <= cfg.stop_tol:
            break
        if hessian == "dense":
            H = lyap.full_hessian(p, s, plan, regularized=True).to_dense()
            try:
                dz = np.linalg.solve(H, -grad)
            except np.linalg.LinAlgError:
                dz = np.linalg.lstsq(H, -grad, rcond=None)[0]
        else:
            if hessian == "full" or not cfg.sparsify:
                H = lyap.full_hessian(p, s, plan, regularized=True)
            else:
                H = sparse_hessian(p, s, plan, budget, regularized=True)
            dz, info = cg_solve(H, grad, cfg.cg_tol, cfg.cg_max_iter or 10 * n)
            if info != 0:
                flags.append(f"cg:{start_iter + k + 1}:{info}")
        slope = float(grad @ dz)
        if not slope > 0:
            flags.append(f"ascent_fallback:{start_iter + k + 1}")
            dz = grad.copy()
            slope = float(grad @ grad)
        f0 = lyap._f_from_mass(p, s, plan.total()) - 0.5 * (s.x.sum() - s.y.sum()) ** 2
        scale = max(1.0 + float(np.abs(s.x) @ p.r + np.abs(s.y) @ p.c), abs(f0))
        z = s.as_vector()

        def search(direction, slope):
            return backtrack(
                lambda al: ft(DualState.from_vector(z + al * direction, n, s.eta)),
                f0,
                slope,
                cfg.armijo_c,
                cfg.backtrack_shrink,
                cfg.min_step,
                scale=scale,
            )[0]

        alpha = search(dz, slope)
        if alpha is None:
            # far from the optimum a (nearly) singular Hessian can give useless steps
            flags.append(f"ls_fallback:{start_iter + k + 1}")
            dz = grad / (s.eta * max(1.0, float(np.abs(grad).max())))
            alpha = search(dz, float(grad @ dz))
        if alpha is None:
            raise NumericalFailure(f"Newton stage: line search collapsed at iteration {start_iter + k + 1}")
        s = DualState.from_vector(z + alpha * dz, n, s.eta)
        records.append(_ftilde_record(p, s, start_iter + k + 1, cfg, step="newton", stage=stage))
    return s, records, flags


def sns_solve(p: ConstrainedOtProblem, cfg: Optional[SnsConfig] = None, eta=None, init=None, stage=None) -> SolveReport:
    """Sinkhorn warm start (``n1`` sweeps) followed by ``n2`` sparse Newton steps."""
    if cfg is None:
        cfg = SnsConfig()
    if eta is None:
        if init is None:
            raise ValueError("either eta or init must be given")
        eta = init.eta
    s = DualState.zeros(p, eta) if init is None else init.replace(eta=eta)
    trace = []
    flags = []
    if cfg.n1:
        sk_cfg = SolverConfig(
            eta=eta,
            max_iter=cfg.n1,
            tol_grad_l1=0.0,
            newton_inner_cap=cfg.newton_inner_cap,
            armijo_c=cfg.armijo_c,
            backtrack_shrink=cfg.backtrack_shrink,
            min_step=cfg.min_step,
            track_metrics=cfg.track_metrics,
        )
        rep = sinkhorn_solve(p, sk_cfg, s)
        for rec in rep.trace:
            rec.step, rec.stage = "sinkhorn", stage
        trace.extend(rep.trace)
        flags.extend(rep.flags)
        s = rep.final_state
        if rep.status is Status.NUMERICAL_FAILURE:
            return SolveReport(len(trace), trace, rep.status, s, flags, rep.message)
    try:
        s, recs, nflags = newton_stage(p, s, cfg, cfg.n2, start_iter=len(trace), stage=stage)
    except (NumericalFailure, NumericalOverflow) as exc:
        logger.warning("sns_solve: %s", exc)
        return SolveReport(len(trace), trace, Status.NUMERICAL_FAILURE, s, flags, str(exc))
    trace.extend(recs)
    flags.extend(nflags)
    if not trace:
        trace.append(_ftilde_record(p, s, 0, cfg, stage=stage))
    status = Status.CONVERGED if trace[-1].grad_l1 <= cfg.tol else Status.MAX_ITER
    return SolveReport(len(trace), trace, status, s, flags)


@dataclass
class ScheduleConfig:
    """Per-stage budgets for :func:`scheduled_solve`.

    Each doubling stage runs ``n1_per_stage`` Sinkhorn sweeps and
    ``n2_per_stage`` Newton steps; the last stage runs Newton at the target
    until ``||grad f||_1 <= final_tol`` or ``final_max_iter`` steps.
    """

    n1_per_stage: int = 5
    n2_per_stage: int = 5
    final_tol: float = 1e-10
    final_max_iter: int = 200
    eta_init: float = 1.0
    sns: SnsConfig = field(default_factory=SnsConfig)


def eta_schedule(eta_target, eta_init=1.0):
    """Regularization levels of the doubling stages, excluding the final one."""
    if eta_target <= eta_init:
        return []
    n_eta = math.ceil(math.log2(eta_target / eta_init) - 1e-12)
    etas = [eta_init]
    for _ in range(n_eta - 1):
        etas.append(min(2 * etas[-1], eta_target))
    return etas


def scheduled_solve(p: ConstrainedOtProblem, eta_target, cfg: Optional[ScheduleConfig] = None, init=None) -> SolveReport:
    """Solve at ``eta_target`` through a doubling sequence of warm-started SNS runs.

    Trace records carry ``stage`` (0-based) and ``eta``; the last stage is
    the convergence run at ``eta_target``.
    """
    if cfg is None:
        cfg = ScheduleConfig()
    if not eta_target >= cfg.eta_init:
        raise ValueError(f"eta_target must be >= {cfg.eta_init}")
    etas = eta_schedule(eta_target, cfg.eta_init)
    s = init if init is not None else DualState.zeros(p, cfg.eta_init)
    trace = []
    flags = []
    for i, eta in enumerate(etas):
        stage_cfg = replace(cfg.sns, n1=cfg.n1_per_stage, n2=cfg.n2_per_stage, stop_tol=0.0)
        rep = sns_solve(p, stage_cfg, eta, s, stage=i)
        _append(trace, rep.trace)
        flags.extend(rep.flags)
        s = rep.final_state
        if rep.status is Status.NUMERICAL_FAILURE:
            return SolveReport(len(trace), trace, rep.status, s, flags, rep.message)
    final_cfg = replace(
        cfg.sns,
        n1=cfg.n1_per_stage if not etas else 0,
        n2=cfg.final_max_iter,
        stop_tol=cfg.final_tol,
        tol=cfg.final_tol,
    )
    rep = sns_solve(p, final_cfg, float(eta_target), s, stage=len(etas))
    _append(trace, rep.trace)
    flags.extend(rep.flags)
    return SolveReport(len(trace), trace, rep.status, rep.final_state, flags, rep.message)


def _append(trace, recs):
    offset = len(trace)
    for k, rec in enumerate(recs):
        rec.iteration = offset + k + 1
        trace.append(rec)


def newton_iterations(report):
    return sum(1 for rec in report.trace if rec.step == "newton")
