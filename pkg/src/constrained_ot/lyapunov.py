r"""
Dual objective for entropic OT under linear constraints.

For duals ``(x, y, a)`` the intermediate plan is

.. math::
    P = \exp\big(\eta(-C + \textstyle\sum_m a_m D_m + x 1^T + 1 y^T) - 1\big)

and the concave dual function is

.. math::
    f(x, y, a) = -\frac{1}{\eta}\sum_{ij} P_{ij} + r\cdot x + c\cdot y
                 - \frac{1}{\eta}\sum_{k\le K} e^{-\eta a_k - 1}.

Everything in this module is a pure function of ``(problem, state)``.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from .exceptions import NumericalOverflow
from .model import ConstrainedOtProblem, DualState

# exp() overflows doubles just above this
LOG_MAX = 709.0
# direct exponentials are used below this, shifted ones above
LOG_SHIFT_GUARD = 700.0


@dataclass(frozen=True, eq=False)
class PlanMatrix:
    """Intermediate plan kept in both log and linear form."""

    log_entries: np.ndarray
    entries: np.ndarray

    @classmethod
    def from_log(cls, log_entries):
        top = np.max(log_entries) if log_entries.size else 0.0
        if top > LOG_MAX:
            raise NumericalOverflow(
                f"plan entry exp({top:.1f}) overflows; reduce eta or rescale the duals"
            )
        return cls(log_entries, np.exp(log_entries))

    def row_sums(self):
        return self.entries.sum(axis=1)

    def col_sums(self):
        return self.entries.sum(axis=0)

    def total(self):
        return float(self.entries.sum())


class GradientVector(NamedTuple):
    gx: np.ndarray
    gy: np.ndarray
    ga: np.ndarray

    def flat(self):
        return np.concatenate([self.gx, self.gy, self.ga])

    def l1(self):
        return float(np.abs(self.gx).sum() + np.abs(self.gy).sum() + np.abs(self.ga).sum())


def log_plan(p: ConstrainedOtProblem, s: DualState):
    """Entry-wise log of the intermediate plan, never exponentiated."""
    z = -p.cost + s.x[:, None] + s.y[None, :]
    if p.n_constraints:
        z = z + np.tensordot(s.a, p.d_stack, axes=1)
    return s.eta * z - 1.0


def plan_from_duals(p: ConstrainedOtProblem, s: DualState) -> PlanMatrix:
    return PlanMatrix.from_log(log_plan(p, s))


def slack(p, s):
    """Slack values ``exp(-eta a_k - 1)`` of the inequality constraints."""
    return np.exp(-s.eta * s.a[: p.k_ineq] - 1.0)


def constraint_products(p, P):
    """``P . D_m`` for every constraint, shape ``(K+L,)``."""
    if not p.n_constraints:
        return np.zeros(0)
    return np.tensordot(p.d_stack, P, axes=([1, 2], [0, 1]))


def _plan_mass(log_entries):
    """``sum_ij P_ij`` with a max shift once entries get large."""
    top = np.max(log_entries)
    if top <= LOG_SHIFT_GUARD:
        return float(np.exp(log_entries).sum())
    return float(np.exp(logsumexp(log_entries)))


def eval_f(p: ConstrainedOtProblem, s: DualState) -> float:
    L = log_plan(p, s)
    top = np.max(L)
    if top > LOG_MAX:
        raise NumericalOverflow(f"plan entry exp({top:.1f}) overflows")
    return _f_from_mass(p, s, _plan_mass(L))


def _f_from_mass(p, s, mass):
    eta = s.eta
    return float(
        -mass / eta + s.x @ p.r + s.y @ p.c - slack(p, s).sum() / eta
    )


def grad_f(p: ConstrainedOtProblem, s: DualState, plan=None) -> GradientVector:
    if plan is None:
        plan = plan_from_duals(p, s)
    P = plan.entries
    ga = -constraint_products(p, P)
    ga[: p.k_ineq] += slack(p, s)
    return GradientVector(p.r - P.sum(axis=1), p.c - P.sum(axis=0), ga)


def lagrangian(p: ConstrainedOtProblem, P, sl, s: DualState) -> float:
    """Primal-dual Lagrangian ``L(P, s, x, y, a)`` with ``0 log 0 = 0``."""
    eta = s.eta
    P = np.asarray(P, dtype=float)
    sl = np.asarray(sl, dtype=float)

    def xlogx(v):
        return np.where(v > 0, v * np.log(np.where(v > 0, v, 1.0)), 0.0)

    val = xlogx(P).sum() / eta + (p.cost * P).sum()
    val -= s.x @ (P.sum(axis=1) - p.r)
    val -= s.y @ (P.sum(axis=0) - p.c)
    val += xlogx(sl).sum() / eta + s.a[: p.k_ineq] @ sl
    val -= s.a @ constraint_products(p, P)
    return float(val)


def eval_f_aug(p: ConstrainedOtProblem, x, y, a, eta):
    """Value of ``max_t f(x + t 1, y, a)`` and the maximizing shift.

    Returns
    -------
    value : float
    t_star : float
        ``(1 - LSE(eta(-C + sum a D + x 1^T + 1 y^T))) / eta``.
    """
    s = DualState(x, y, a, eta)
    lse = float(logsumexp(log_plan(p, s) + 1.0))
    t_star = (1.0 - lse) / eta
    # at t_star the plan has unit mass, so sum_ij P_ij = 1
    value = -1.0 / eta + s.x @ p.r + s.y @ p.c + t_star - slack(p, s).sum() / eta
    return float(value), t_star


def at_gradient(p: ConstrainedOtProblem, s: DualState, plan=None) -> np.ndarray:
    """Gradient over ``(a_1..a_{K+L}, t)`` where ``t`` shifts ``x`` uniformly."""
    if plan is None:
        plan = plan_from_duals(p, s)
    ga = grad_f(p, s, plan).ga
    return np.append(ga, 1.0 - plan.total())


def _aa_block(p, s, P):
    """``sum_ij P_ij (D_m)_ij (D_m')_ij`` plus the slack diagonal, unscaled."""
    m = p.n_constraints
    if not m:
        return np.zeros((0, 0))
    flat = p.d_stack.reshape(m, -1)
    M = (flat * P.ravel()) @ flat.T
    idx = np.arange(p.k_ineq)
    M[idx, idx] += slack(p, s)
    return M


def at_hessian(p: ConstrainedOtProblem, s: DualState, plan=None) -> np.ndarray:
    if plan is None:
        plan = plan_from_duals(p, s)
    P = plan.entries
    m = p.n_constraints
    H = np.empty((m + 1, m + 1))
    H[:m, :m] = _aa_block(p, s, P)
    col = constraint_products(p, P)
    H[:m, m] = col
    H[m, :m] = col
    H[m, m] = P.sum()
    H *= -s.eta
    return 0.5 * (H + H.T)


class BlockHessian:
    r"""Hessian of ``f`` over ``z = (x, y, a)`` in factored form.

    .. math::
        H = -\eta \begin{bmatrix} diag(P1) & P & B_{xa} \\ P^T & diag(P^T1) & B_{ya}
            \\ B_{xa}^T & B_{ya}^T & M_{aa}\end{bmatrix} \; (- v v^T)

    ``p_block`` may be a dense array or a scipy sparse matrix; products cost
    ``O(nnz + n(K+L))``. When ``regularized`` is set the rank-one term for the
    translation direction ``v = (1, -1, 0)`` is subtracted.
    """

    def __init__(self, eta, row_mass, col_mass, p_block, b_xa, b_ya, m_aa, regularized=False):
        self.eta = float(eta)
        self.diag_r = np.asarray(row_mass, dtype=float)
        self.diag_c = np.asarray(col_mass, dtype=float)
        self.p_block = p_block
        self.b_xa = np.asarray(b_xa, dtype=float)
        self.b_ya = np.asarray(b_ya, dtype=float)
        self.m_aa = np.asarray(m_aa, dtype=float)
        self.regularized = regularized
        self.n = self.diag_r.shape[0]
        self.m = self.m_aa.shape[0]

    @property
    def shape(self):
        d = 2 * self.n + self.m
        return (d, d)

    def degenerate_direction(self):
        return np.concatenate([np.ones(self.n), -np.ones(self.n), np.zeros(self.m)])

    def matvec(self, z):
        z = np.asarray(z, dtype=float)
        n = self.n
        zx, zy, za = z[:n], z[n : 2 * n], z[2 * n :]
        P = self.p_block
        out = np.empty_like(z)
        out[:n] = self.diag_r * zx + P @ zy + self.b_xa @ za
        out[n : 2 * n] = P.T @ zx + self.diag_c * zy + self.b_ya @ za
        out[2 * n :] = self.b_xa.T @ zx + self.b_ya.T @ zy + self.m_aa @ za
        out *= -self.eta
        if self.regularized:
            v = self.degenerate_direction()
            out -= v * (v @ z)
        return out

    __matmul__ = matvec

    def to_dense(self):
        n, m = self.n, self.m
        P = self.p_block.toarray() if sparse.issparse(self.p_block) else np.asarray(self.p_block)
        H = np.zeros(self.shape)
        H[:n, :n] = np.diag(self.diag_r)
        H[:n, n : 2 * n] = P
        H[n : 2 * n, :n] = P.T
        H[n : 2 * n, n : 2 * n] = np.diag(self.diag_c)
        H[:n, 2 * n :] = self.b_xa
        H[2 * n :, :n] = self.b_xa.T
        H[n : 2 * n, 2 * n :] = self.b_ya
        H[2 * n :, n : 2 * n] = self.b_ya.T
        H[2 * n :, 2 * n :] = self.m_aa
        H *= -self.eta
        if self.regularized:
            v = self.degenerate_direction()
            H -= np.outer(v, v)
        return H


def hessian_parts(p, s, P):
    """Row/column masses, cross blocks and constraint block for a dense plan."""
    m = p.n_constraints
    if m:
        b_xa = np.einsum("ij,mij->im", P, p.d_stack)
        b_ya = np.einsum("ij,mij->jm", P, p.d_stack)
    else:
        b_xa = np.zeros((p.n, 0))
        b_ya = np.zeros((p.n, 0))
    return P.sum(axis=1), P.sum(axis=0), b_xa, b_ya, _aa_block(p, s, P)


def full_hessian(p: ConstrainedOtProblem, s: DualState, plan=None, regularized=False) -> BlockHessian:
    if plan is None:
        plan = plan_from_duals(p, s)
    P = plan.entries
    row, col, b_xa, b_ya, m_aa = hessian_parts(p, s, P)
    return BlockHessian(s.eta, row, col, P, b_xa, b_ya, m_aa, regularized=regularized)


def _translation_gap(s):
    return float(s.x.sum() - s.y.sum())


def eval_f_tilde(p: ConstrainedOtProblem, s: DualState) -> float:
    """``f - (sum x - sum y)^2 / 2``; removes the flat direction ``(1, -1, 0)``."""
    return eval_f(p, s) - 0.5 * _translation_gap(s) ** 2


def grad_f_tilde(p: ConstrainedOtProblem, s: DualState, plan=None) -> GradientVector:
    g = grad_f(p, s, plan)
    gap = _translation_gap(s)
    return GradientVector(g.gx - gap, g.gy + gap, g.ga)
