"""
Instance generators, reference oracles and the Pareto-front sweep.

Seeds: an instance seed feeds ``numpy.random.SeedSequence``, which is spawned
into one child stream per generated array in a fixed order (documented per
generator), so every array is reproducible on its own.
"""

import csv
import enum
import io
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog
from scipy.spatial.distance import cdist

from . import lyapunov as lyap
from .exceptions import Infeasible, InvalidInput, NumericalFailure
from .model import ConstrainedOtProblem, DualState, Sense, constraint_from_threshold, make_problem
from .sinkhorn import SolverConfig, Status, sinkhorn_solve
from .sns import ScheduleConfig, SnsConfig, eta_schedule, newton_stage, scheduled_solve
from .transport import cost, round_to_feasible

logger = logging.getLogger(__name__)


class ExperimentKind(str, enum.Enum):
    RANDOM_ASSIGNMENT = "random-assignment"
    RANKING_DCG = "ranking"
    PARETO_GEOMETRIC = "pareto"


@dataclass
class ExperimentSpec:
    kind: ExperimentKind
    n: int
    eta: float
    seed: int = 0
    thresholds: Optional[Tuple[float, float]] = None
    t_grid: Optional[Sequence[float]] = None
    algorithm: str = "sinkhorn"
    etas: Sequence[float] = (10.0, 100.0, 1000.0)
    n_t: int = 5
    jobs: int = 1
    source: Optional[Tuple[np.ndarray, np.ndarray]] = None
    target: Optional[Tuple[np.ndarray, np.ndarray]] = None
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)

    def __post_init__(self):
        self.kind = ExperimentKind(self.kind)
        if self.n < 2:
            raise InvalidInput("n must be at least 2")
        if not self.eta > 0:
            raise InvalidInput("eta must be positive")
        if self.t_grid is not None:
            grid = np.asarray(self.t_grid, dtype=float)
            if grid.size > 1 and np.any(np.diff(grid) <= 0):
                raise InvalidInput("t_grid must be strictly increasing")


@dataclass
class ParetoPoint:
    t: float
    manhattan_cost: float
    euclidean_cost: float
    eta: float
    converged: bool


def _streams(seed, count):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


# ---------------------------------------------------------------------------
# generators


def gen_random_assignment(n, seed, t_I=0.5, t_E=0.5) -> ConstrainedOtProblem:
    """Uniform marginals, ``C, D_I, D_E ~ Unif[0, 1]`` i.i.d.

    Constraints: ``D_I . P <= t_I`` and ``D_E . P = t_E``. Streams: C, D_I, D_E.
    """
    if n < 2:
        raise InvalidInput("n must be at least 2")
    g_c, g_i, g_e = _streams(seed, 3)
    C = g_c.uniform(0.0, 1.0, (n, n))
    D_I = g_i.uniform(0.0, 1.0, (n, n))
    D_E = g_e.uniform(0.0, 1.0, (n, n))
    u = np.full(n, 1.0 / n)
    return make_problem(
        C,
        u,
        u,
        [constraint_from_threshold(D_I, t_I, Sense.LE), constraint_from_threshold(D_E, t_E, Sense.EQ)],
    )


def gen_random_constrained(n, seed, n_ineq=1, n_eq=0, threshold=0.5, uniform_marginals=True) -> ConstrainedOtProblem:
    """Uniform ``[0, 1]`` cost and constraint matrices with a common threshold.

    Inequalities read ``D . P <= threshold``, equalities ``D . P = threshold``.
    Streams: C, one per constraint matrix (inequalities first), r, c.
    Non-uniform marginals are drawn from ``Unif[0.5, 1.5]`` and normalized.
    """
    if n < 2:
        raise InvalidInput("n must be at least 2")
    rngs = _streams(seed, 3 + n_ineq + n_eq)
    C = rngs[0].uniform(0.0, 1.0, (n, n))
    cons = []
    for m in range(n_ineq + n_eq):
        D = rngs[1 + m].uniform(0.0, 1.0, (n, n))
        cons.append(constraint_from_threshold(D, threshold, Sense.LE if m < n_ineq else Sense.EQ))
    if uniform_marginals:
        r = c = np.full(n, 1.0 / n)
    else:
        r = rngs[-2].uniform(0.5, 1.5, n)
        c = rngs[-1].uniform(0.5, 1.5, n)
        r, c = r / r.sum(), c / c.sum()
    return make_problem(C, r, c, cons)


def dcg_discount(n):
    """``v_i = 1 / log2(i + 1)`` for ``i = 1..n``."""
    return 1.0 / np.log2(np.arange(2, n + 2))


def gen_ranking_dcg(n, seed, t_I=None, t_E=None) -> ConstrainedOtProblem:
    """Constrained DCG maximization on the Birkhoff polytope, at unit mass.

    Relevances ``g_c, g_I, g_E`` are Rademacher (streams in that order). The
    cost is ``-g_c v^T``; constraints are ``(g_I v^T) . P >= t_I`` and
    ``(g_E v^T) . P = t_E``. Thresholds default to the value attained by the
    uniform plan ``1/n^2``, which is therefore always feasible.
    """
    if n < 2:
        raise InvalidInput("n must be at least 2")
    v = dcg_discount(n)
    g_c, g_i, g_e = (rng.choice([-1.0, 1.0], size=n) for rng in _streams(seed, 3))
    D_I = np.outer(g_i, v)
    D_E = np.outer(g_e, v)
    if t_I is None:
        t_I = D_I.sum() / n**2
    if t_E is None:
        t_E = D_E.sum() / n**2
    u = np.full(n, 1.0 / n)
    return make_problem(
        -np.outer(g_c, v),
        u,
        u,
        [constraint_from_threshold(D_I, t_I, Sense.GE), constraint_from_threshold(D_E, t_E, Sense.EQ)],
    )


def manhattan_costs(src, dst):
    return cdist(np.asarray(src, float), np.asarray(dst, float), metric="cityblock")


def euclidean_costs(src, dst):
    return cdist(np.asarray(src, float), np.asarray(dst, float), metric="sqeuclidean")


def gen_pareto_geometric(points_src, points_dst, weights_src, weights_dst, t) -> ConstrainedOtProblem:
    """Manhattan transport cost subject to squared-Euclidean cost ``<= t^2``."""
    points_src = np.asarray(points_src, dtype=float)
    points_dst = np.asarray(points_dst, dtype=float)
    w_s = np.asarray(weights_src, dtype=float)
    w_d = np.asarray(weights_dst, dtype=float)
    if len(points_src) != len(w_s) or len(points_dst) != len(w_d):
        raise InvalidInput("point and weight counts differ")
    if len(points_src) != len(points_dst):
        raise InvalidInput("source and target must have the same number of points")
    C1 = manhattan_costs(points_src, points_dst)
    C2 = euclidean_costs(points_src, points_dst)
    return make_problem(C1, w_s / w_s.sum(), w_d / w_d.sum(), [constraint_from_threshold(C2, t * t, Sense.LE)])


def random_point_cloud(n, seed):
    """``n`` points in the unit square with positive normalized weights."""
    g_pts, g_w = _streams(seed, 2)
    pts = g_pts.uniform(0.0, 1.0, (n, 2))
    w = g_w.uniform(0.5, 1.5, n)
    return pts, w / w.sum()


def load_grayscale_csv(path):
    """Read a grayscale image stored as CSV intensities.

    Pixel ``(i1, i2)`` of an ``R x S`` image becomes the point
    ``(i1 / R, i2 / S)``; intensities are normalized to unit mass. Only
    pixels with positive intensity are returned.
    """
    img = np.loadtxt(path, delimiter=",", ndmin=2)
    if np.any(img < 0) or not np.all(np.isfinite(img)):
        raise InvalidInput(f"{path}: intensities must be finite and nonnegative")
    rows, cols = img.shape
    i1, i2 = np.nonzero(img > 0)
    if i1.size == 0:
        raise InvalidInput(f"{path}: image is blank")
    pts = np.column_stack([i1 / rows, i2 / cols])
    w = img[i1, i2]
    return pts, w / w.sum()


# ---------------------------------------------------------------------------
# oracles


def _dense_newton(p, s, tol, max_iter):
    """Dense Newton on ``f~`` from ``s``; returns the iterate with the smallest gradient."""
    cfg = SnsConfig(sparsify=False)
    best, best_g = s, lyap.grad_f(p, s).l1()
    extra = None
    for _ in range(max_iter):
        s, _, _ = newton_stage(p, s, cfg, 1, hessian="dense")
        g = lyap.grad_f(p, s).l1()
        if g < best_g:
            best, best_g = s, g
        # once below tol, two more steps polish the last digits
        if extra is None and g <= tol:
            extra = 2
        elif extra is not None:
            extra -= 1
        if extra == 0:
            break
    return best, best_g


def dense_newton_oracle(p: ConstrainedOtProblem, eta, tol=1e-12, max_iter=200, warm_start=200):
    """Entropic optimum ``P*_eta`` by full-Hessian Newton on ``f~``.

    Newton is only locally fast, so the solve follows ``eta`` upwards:
    a Sinkhorn warm start at ``min(eta, 1)`` (stopped at
    ``||grad f||_1 <= 1e-3``), then dense Newton at ``1, 2, 4, ..., eta``,
    each level started from the previous optimum. Intermediate levels stop at
    ``||grad f||_1 <= 1e-9``; the last one runs to ``tol``.

    Raises
    ------
    NumericalFailure
        If ``tol`` is not reached within ``max_iter`` Newton steps at ``eta``.
    """
    levels = eta_schedule(eta, 1.0) + [float(eta)]
    s = DualState.zeros(p, levels[0])
    if warm_start:
        s = sinkhorn_solve(p, SolverConfig(eta=levels[0], max_iter=warm_start, tol_grad_l1=1e-3), s).final_state
    for level in levels[:-1]:
        s, _ = _dense_newton(p, s.replace(eta=level), 1e-9, max_iter)
    s, g = _dense_newton(p, s.replace(eta=levels[-1]), tol, max_iter)
    if g > tol:
        raise NumericalFailure(f"dense Newton stalled at ||grad f||_1 = {g:.3e} > {tol:.1e}")
    return lyap.plan_from_duals(p, s)


def _standard_form(p):
    """Equality system over ``(vec P, s_1..s_K)`` with redundant rows removed."""
    n, K = p.n, p.k_ineq
    nv = n * n + K
    rows, rhs = [], []
    for i in range(n):
        a = np.zeros(nv)
        a[i * n : (i + 1) * n] = 1.0
        rows.append(a)
        rhs.append(p.r[i])
    for j in range(n):
        a = np.zeros(nv)
        a[j : n * n : n] = 1.0
        rows.append(a)
        rhs.append(p.c[j])
    for m, k in enumerate(p.constraints):
        a = np.zeros(nv)
        a[: n * n] = k.matrix.ravel()
        if k.is_inequality:
            a[n * n + m] = -1.0
        rows.append(a)
        rhs.append(0.0)
    A, b = np.array(rows), np.array(rhs)
    keep = []
    for i in range(len(A)):
        if np.linalg.matrix_rank(A[keep + [i]], tol=1e-9) == len(keep) + 1:
            keep.append(i)
    return A[keep], b[keep]


@dataclass
class LpVertices:
    vertices: np.ndarray
    values: np.ndarray
    n: int

    @property
    def optimum(self):
        return float(self.values.min())

    def optimal_indices(self, tol=1e-9):
        return np.flatnonzero(self.values <= self.optimum + tol)

    @property
    def unique(self):
        return len(self.optimal_indices()) == 1

    @property
    def gap(self):
        """Cost gap between the best and the second-best vertex."""
        others = np.delete(self.values, self.optimal_indices())
        return float(others.min() - self.optimum) if others.size else float("inf")

    def plan(self, idx):
        return self.vertices[idx, : self.n * self.n].reshape(self.n, self.n)


def lp_vertices(p: ConstrainedOtProblem, max_n=4, max_constraints=2) -> LpVertices:
    """All vertices of the feasible polytope by basic-solution enumeration."""
    if p.n > max_n or p.n_constraints > max_constraints:
        raise InvalidInput(f"vertex enumeration is limited to n <= {max_n}, K+L <= {max_constraints}")
    A, b = _standard_form(p)
    m, nv = A.shape
    cvec = np.concatenate([p.cost.ravel(), np.zeros(p.k_ineq)])
    found = {}
    for cols in itertools.combinations(range(nv), m):
        B = A[:, cols]
        if abs(np.linalg.det(B)) < 1e-12:
            continue
        wb = np.linalg.solve(B, b)
        if np.any(wb < -1e-12):
            continue
        w = np.zeros(nv)
        w[list(cols)] = np.maximum(wb, 0.0)
        key = tuple(np.round(w, 10))
        found.setdefault(key, w)
    if not found:
        raise Infeasible("the constrained transport polytope is empty")
    V = np.array([found[k] for k in sorted(found)])
    return LpVertices(V, V @ cvec, p.n)


def lp_vertex_oracle(p: ConstrainedOtProblem):
    """Exact LP optimum ``(value, plan)`` of a tiny instance (``n <= 4``, ``K+L <= 2``)."""
    verts = lp_vertices(p)
    idx = int(np.argmin(verts.values))
    return verts.optimum, verts.plan(idx)


def exact_ot(C, r, c, extra_cost=None):
    """Unconstrained OT by linear programming (HiGHS).

    With ``extra_cost`` the result is the lexicographic optimum: among the
    minimizers of ``C . P`` one minimizing ``extra_cost . P``.
    """
    n, mcols = C.shape
    A_eq = np.vstack([np.kron(np.eye(n), np.ones(mcols)), np.kron(np.ones(n), np.eye(mcols))])
    b_eq = np.concatenate([r, c])
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise Infeasible(res.message)
    if extra_cost is None:
        return res.x.reshape(n, mcols)
    best = res.fun
    res2 = linprog(
        extra_cost.ravel(),
        A_ub=C.ravel()[None, :],
        b_ub=[best + 1e-9 * max(1.0, abs(best))],
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=(0, None),
        method="highs",
    )
    if res2.status != 0:
        raise Infeasible(res2.message)
    return res2.x.reshape(n, mcols)


def pareto_t_range(src, dst, w_src, w_dst):
    """``(t_min, t_max)``: the W2 distance and the Euclidean cost of the Manhattan optimum."""
    C1 = manhattan_costs(src, dst)
    C2 = euclidean_costs(src, dst)
    P2 = exact_ot(C2, w_src, w_dst)
    P1 = exact_ot(C1, w_src, w_dst, extra_cost=C2)
    return math.sqrt(max(cost(P2, C2), 0.0)), math.sqrt(max(cost(P1, C2), 0.0))


def default_t_grid(t_min, t_max, n_t, lo=0.25):
    """``n_t`` budgets from ``t_min + lo (t_max - t_min)`` up to ``t_max``."""
    return list(t_min + (t_max - t_min) * np.linspace(lo, 1.0, n_t))


def pareto_clouds(spec: ExperimentSpec):
    src = spec.source if spec.source is not None else random_point_cloud(spec.n, [spec.seed, 0])
    dst = spec.target if spec.target is not None else random_point_cloud(spec.n, [spec.seed, 1])
    return src, dst


def _pareto_point(args):
    src, dst, t, eta, sched = args
    p = gen_pareto_geometric(src[0], dst[0], src[1], dst[1], t)
    C2 = euclidean_costs(src[0], dst[0])
    try:
        rep = scheduled_solve(p, eta, sched)
        rounded = round_to_feasible(rep.plan(p), p.r, p.c).plan
        return ParetoPoint(float(t), cost(rounded, p.cost), cost(rounded, C2), float(eta), rep.converged)
    except (NumericalFailure, ArithmeticError) as exc:
        logger.warning("pareto point t=%g eta=%g failed: %s", t, eta, exc)
        return ParetoPoint(float(t), float("nan"), float("nan"), float(eta), False)


def pareto_sweep(spec: ExperimentSpec) -> List[ParetoPoint]:
    """Solve the budgeted Manhattan problem over ``spec.t_grid`` x ``spec.etas``.

    Without an explicit grid, ``spec.n_t`` budgets are spread over the upper
    part of ``[t_min, t_max]`` (see :func:`default_t_grid`). Failed points are
    kept with ``converged = False``. Output is sorted by ``(t, eta)``.
    """
    src, dst = pareto_clouds(spec)
    if spec.t_grid is None:
        t_min, t_max = pareto_t_range(src[0], dst[0], src[1], dst[1])
        grid = default_t_grid(t_min, t_max, spec.n_t)
    else:
        grid = list(spec.t_grid)
    jobs = [(src, dst, t, eta, spec.schedule) for t in grid for eta in spec.etas]
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            points = list(pool.map(_pareto_point, jobs))
    else:
        points = [_pareto_point(j) for j in jobs]
    return sorted(points, key=lambda pt: (pt.t, pt.eta))


def front_by_eta(points):
    fronts = {}
    for pt in points:
        fronts.setdefault(pt.eta, []).append(pt)
    return {eta: sorted(pts, key=lambda q: q.t) for eta, pts in sorted(fronts.items())}


# ---------------------------------------------------------------------------
# csv output


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    return repr(float(v))


def pareto_csv(points) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "eta", "manhattan_cost", "euclidean_cost", "converged"])
    for pt in points:
        w.writerow([_fmt(pt.t), _fmt(pt.eta), _fmt(pt.manhattan_cost), _fmt(pt.euclidean_cost), _fmt(pt.converged)])
    return buf.getvalue()


def trace_csv(report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter", "f", "grad_l1", "cost", "violation"])
    for rec in report.trace:
        w.writerow([rec.iteration, _fmt(rec.f), _fmt(rec.grad_l1), _fmt(rec.cost), _fmt(rec.violation)])
    return buf.getvalue()


def write_text(path, text):
    Path(path).write_text(text)


def build_problem(spec: ExperimentSpec) -> ConstrainedOtProblem:
    if spec.kind is ExperimentKind.RANDOM_ASSIGNMENT:
        t_I, t_E = spec.thresholds if spec.thresholds is not None else (0.5, 0.5)
        return gen_random_assignment(spec.n, spec.seed, t_I, t_E)
    if spec.kind is ExperimentKind.RANKING_DCG:
        t_I, t_E = spec.thresholds if spec.thresholds is not None else (None, None)
        return gen_ranking_dcg(spec.n, spec.seed, t_I, t_E)
    raise InvalidInput("pareto experiments are run through pareto_sweep")
