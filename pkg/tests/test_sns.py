import math

import numpy as np
import pytest
from scipy import sparse

from constrained_ot import lyapunov as lyap
from constrained_ot.experiments import (
    dense_newton_oracle,
    gen_pareto_geometric,
    gen_random_assignment,
    pareto_t_range,
    random_point_cloud,
)
from constrained_ot.model import make_problem
from constrained_ot.sinkhorn import SolverConfig, Status, sinkhorn_solve
from constrained_ot.sns import (
    ScheduleConfig,
    SnsConfig,
    cg_solve,
    eta_schedule,
    newton_iterations,
    newton_stage,
    scheduled_solve,
    sns_solve,
    sparse_hessian,
    sparsify,
)
from constrained_ot.transport import tv_distance

from conftest import random_problem, random_state

SYM = make_problem([[0.0, 1.0], [1.0, 0.0]], [0.5, 0.5], [0.5, 0.5])
P11 = 1 / (2 * (1 + math.exp(-1)))
P12 = math.exp(-1) / (2 * (1 + math.exp(-1)))


def test_sparsify_full_budget_is_identity():
    P = np.random.default_rng(0).uniform(size=(4, 4))
    np.testing.assert_array_equal(sparsify(P, 16).toarray(), P)
    np.testing.assert_array_equal(sparsify(P, 100).toarray(), P)


def test_sparsify_keeps_dominant_entries():
    n = 6
    P = np.full((n, n), 1e-6) + np.eye(n)
    S = sparsify(P, n)
    assert S.nnz == n
    np.testing.assert_array_equal(S.toarray(), np.eye(n) + 1e-6 * np.eye(n))


@pytest.mark.parametrize("seed", range(5))
def test_sparsify_matches_sort_oracle(seed):
    P = np.random.default_rng(seed).uniform(size=(6, 6))
    P[1, 2] = P[4, 4] = P[0, 5]  # ties are broken in row-major order
    kept = sparsify(P, 12).toarray()
    order = sorted(range(36), key=lambda i: (-P.flat[i], i))[:12]
    expected = np.zeros(36)
    expected[order] = P.flat[order]
    np.testing.assert_array_equal(kept.ravel(), expected)


def test_cg_negative_identity_returns_g():
    g = np.array([1.0, -2.0, 0.5])
    dz, info = cg_solve(lambda v: -v, g)
    assert info == 0
    np.testing.assert_allclose(dz, g, atol=1e-14)
    dz, info = cg_solve(-np.eye(3), g)
    np.testing.assert_allclose(dz, g, atol=1e-14)


def test_cg_zero_rhs():
    dz, info = cg_solve(-np.eye(4), np.zeros(4))
    assert info == 0 and not np.any(dz)


def test_cg_against_dense_solve():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(20, 20))
    M = A @ A.T + 0.5 * np.eye(20)
    g = rng.normal(size=20)
    dz, info = cg_solve(-M, g, tol=1e-12, max_iter=500)
    assert info == 0
    assert np.linalg.norm(M @ dz - g) <= 1e-12 * np.linalg.norm(g) * 1.0001
    np.testing.assert_allclose(dz, np.linalg.solve(M, g), rtol=1e-8)


def test_cg_reports_breakdown_on_indefinite():
    _, info = cg_solve(np.eye(2), np.array([1.0, 0.0]))
    assert info == -1


@pytest.mark.parametrize("seed", range(3))
def test_sparse_hessian_with_zero_truncation_matches_full(seed):
    p = random_problem(seed, 5, 1, 1)
    s = random_state(p, 2.0, seed)
    plan = lyap.plan_from_duals(p, s)
    Hs = sparse_hessian(p, s, plan, p.n**2)
    Hf = lyap.full_hessian(p, s, plan, regularized=True)
    for v in np.random.default_rng(seed).normal(size=(4, 2 * p.n + p.n_constraints)):
        np.testing.assert_allclose(Hs.matvec(v), Hf.matvec(v), atol=1e-12)


def test_sns_symmetric_closed_form():
    rep = sns_solve(SYM, SnsConfig(n1=5, n2=10, tol=1e-12), eta=1.0)
    assert rep.status is Status.CONVERGED and rep.final_grad_l1 <= 1e-12
    np.testing.assert_allclose(rep.plan(SYM).entries, [[P11, P12], [P12, P11]], atol=1e-12)
    sk = sinkhorn_solve(SYM, SolverConfig(eta=1.0, tol_grad_l1=1e-13))
    assert tv_distance(rep.plan(SYM), sk.plan(SYM)) <= 1e-12


@pytest.mark.parametrize("seed", range(2))
def test_full_budget_iterates_equal_unsparsified_newton(seed):
    p = gen_random_assignment(20, seed)
    warm = sinkhorn_solve(p, SolverConfig(eta=24.0, max_iter=20, tol_grad_l1=0.0)).final_state
    cfg = SnsConfig(nnz_budget=p.n**2)
    for k in range(1, 6):
        a, _, _ = newton_stage(p, warm, cfg, k, hessian="sparse")
        b, _, _ = newton_stage(p, warm, cfg, k, hessian="full")
        np.testing.assert_allclose(a.as_vector(), b.as_vector(), rtol=0, atol=1e-12)


def test_sns_random_assignment_reaches_the_oracle():
    p = gen_random_assignment(50, 0)
    rep = sns_solve(p, SnsConfig(n1=20, n2=30), eta=120.0)
    oracle = dense_newton_oracle(p, 120.0)
    assert tv_distance(rep.plan(p), oracle) <= 1e-10


@pytest.mark.parametrize("seed", range(3))
def test_f_tilde_non_decreasing_along_newton_steps(seed):
    p = random_problem(seed, 8, 1, 1, uniform=True)
    rep = sns_solve(p, SnsConfig(n1=3, n2=15), eta=10.0)
    s = rep.final_state
    vals = np.array([r.f for r in rep.trace if r.step == "newton"])
    assert vals.size
    assert np.all(np.diff(vals) >= -1e-10)
    assert lyap.eval_f_tilde(p, s) == pytest.approx(vals[-1], abs=1e-12)
    assert abs(s.x.sum() - s.y.sum()) <= 1e-8


def test_sns_stop_tolerance_honoured():
    p = random_problem(4, 6, 1, 0, uniform=True)
    tau = 1e-6
    rep = sns_solve(p, SnsConfig(n1=5, n2=50, stop_tol=tau, tol=tau), eta=5.0)
    assert rep.converged
    assert lyap.grad_f(p, rep.final_state).l1() <= tau + 1e-8


def test_sns_is_deterministic():
    p = gen_random_assignment(15, 2)
    a = sns_solve(p, SnsConfig(n1=10, n2=10), eta=20.0)
    b = sns_solve(p, SnsConfig(n1=10, n2=10), eta=20.0)
    np.testing.assert_array_equal(a.final_state.as_vector(), b.final_state.as_vector())
    assert [r.f for r in a.trace] == [r.f for r in b.trace]


def test_sns_requires_eta_or_init():
    with pytest.raises(ValueError):
        sns_solve(SYM)


def test_eta_schedule():
    assert eta_schedule(8.0) == [1.0, 2.0, 4.0]
    assert eta_schedule(1.0) == []
    assert eta_schedule(10.0) == [1.0, 2.0, 4.0, 8.0]
    assert eta_schedule(3.0, 0.5) == [0.5, 1.0, 2.0]


def test_schedule_stage_records():
    rep = scheduled_solve(SYM, 8.0, ScheduleConfig(final_tol=1e-12))
    assert sorted({r.stage for r in rep.trace}) == [0, 1, 2, 3]
    assert [r.iteration for r in rep.trace] == list(range(1, len(rep.trace) + 1))
    assert rep.final_state.eta == 8.0 and rep.converged


def test_schedule_unit_target_is_plain_sns():
    cfg = ScheduleConfig(final_tol=1e-12)
    rep = scheduled_solve(SYM, 1.0, cfg)
    assert {r.stage for r in rep.trace} == {0}
    direct = sns_solve(SYM, SnsConfig(n1=cfg.n1_per_stage, n2=cfg.final_max_iter, stop_tol=1e-12, tol=1e-12), eta=1.0)
    np.testing.assert_array_equal(rep.final_state.as_vector(), direct.final_state.as_vector())


def test_schedule_rejects_target_below_start():
    with pytest.raises(ValueError):
        scheduled_solve(SYM, 0.5)


@pytest.mark.parametrize("seed", range(3))
def test_schedule_beats_cold_start_on_pareto_instance(seed):
    src, ws = random_point_cloud(30, [seed, 0])
    dst, wd = random_point_cloud(30, [seed, 1])
    lo, hi = pareto_t_range(src, dst, ws, wd)
    p = gen_pareto_geometric(src, dst, ws, wd, 0.5 * (lo + hi))
    sched = scheduled_solve(p, 1000.0, ScheduleConfig(n2_per_stage=2))
    direct = sns_solve(p, SnsConfig(n1=20, n2=200, stop_tol=1e-10, tol=1e-10), eta=1000.0)
    assert sched.converged and sched.final_grad_l1 <= 1e-10
    assert newton_iterations(sched) < newton_iterations(direct)


def test_sparse_matrix_type():
    assert sparse.issparse(sparsify(np.eye(3), 3))
