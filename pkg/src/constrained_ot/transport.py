"""Rounding onto the transport polytope and the evaluation metrics."""

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInput
from .lyapunov import PlanMatrix


@dataclass(frozen=True, eq=False)
class RoundedPlan:
    plan: np.ndarray
    l1_correction: float


def _as_array(P):
    return P.entries if isinstance(P, PlanMatrix) else np.asarray(P, dtype=float)


def round_to_feasible(P, r, c) -> RoundedPlan:
    """Map a nonnegative matrix into ``U(r, c)`` with a controlled L1 change.

    Rows are shrunk by ``min(1, r_i / (P1)_i)``, then columns by
    ``min(1, c_j / (P'^T 1)_j)``, and the leftover mass is restored by the
    rank-one term ``err_r err_c^T / ||err_r||_1``. The result differs from
    ``P`` by at most ``2 (||P1 - r||_1 + ||P^T 1 - c||_1)`` in L1.
    """
    P = _as_array(P)
    r = np.asarray(r, dtype=float)
    c = np.asarray(c, dtype=float)
    if np.any(P < 0):
        raise InvalidInput("plan has negative entries")
    if not np.any(P > 0):
        raise InvalidInput("plan is identically zero")
    rows = P.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        fr = np.where(rows > r, r / rows, 1.0)
    Q = P * fr[:, None]
    cols = Q.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        fc = np.where(cols > c, c / cols, 1.0)
    Q = Q * fc[None, :]
    err_r = r - Q.sum(axis=1)
    err_c = c - Q.sum(axis=0)
    # scaling never overshoots, so both residuals are nonnegative up to rounding
    err_r = np.maximum(err_r, 0.0)
    err_c = np.maximum(err_c, 0.0)
    mass = err_r.sum()
    if mass > 0:
        Q = Q + np.outer(err_r, err_c) / mass
    return RoundedPlan(Q, float(np.abs(P - Q).sum()))


def cost(plan, C):
    return float(np.sum(np.asarray(C) * _as_array(plan)))


def score(plan, C):
    return -cost(plan, C)


def constraint_values(plan, constraints):
    P = _as_array(plan)
    return np.array([float(np.sum(k.matrix * P)) for k in constraints])


def violation(plan, constraints):
    """Sum of ``|min(P.D_k, 0)|`` over inequalities and ``|P.D_l|`` over equalities."""
    total = 0.0
    for val, k in zip(constraint_values(plan, constraints), constraints):
        total += abs(min(val, 0.0)) if k.is_inequality else abs(val)
    return total


def stationarity_residual(problem, plan):
    """Marginal errors plus constraint violation of an (unrounded) plan."""
    P = _as_array(plan)
    return (
        float(np.abs(P.sum(axis=1) - problem.r).sum() + np.abs(P.sum(axis=0) - problem.c).sum())
        + violation(P, problem.constraints)
    )


def violation_bound(eps, problem):
    """Upper bound ``eps (1 + 2 (K+L) c_d)`` on the violation after rounding."""
    return eps * (1.0 + 2.0 * problem.n_constraints * problem.c_d)


def kl_div(u, v):
    """``sum u log(u / v)`` with ``0 log 0 = 0``; ``inf`` if some ``u_i > 0 = v_i``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    pos = u > 0
    if np.any(v[pos] <= 0):
        return float("inf")
    return float(np.sum(u[pos] * np.log(u[pos] / v[pos])))


def tv_distance(A, B):
    return 0.5 * float(np.abs(_as_array(A) - _as_array(B)).sum())
