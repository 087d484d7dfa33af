import re

import numpy as np
import pytest

from constrained_ot.model import ConstraintKind, Constraint, DualState, make_problem

_ACCEPTANCE = pytest.StashKey[dict]()


def random_problem(seed, n, k=1, l=1, uniform=False):
    """Random instance with ``k`` inequality and ``l`` equality constraints (raw matrices)."""
    rng = np.random.default_rng(seed)
    C = rng.uniform(0, 1, (n, n))
    if uniform:
        r = c = np.full(n, 1.0 / n)
    else:
        r = rng.uniform(0.5, 1.5, n)
        c = rng.uniform(0.5, 1.5, n)
        r, c = r / r.sum(), c / c.sum()
    cons = [Constraint(rng.uniform(-1, 1, (n, n)), ConstraintKind.INEQUALITY_GE) for _ in range(k)]
    cons += [Constraint(rng.uniform(-1, 1, (n, n)), ConstraintKind.EQUALITY) for _ in range(l)]
    return make_problem(C, r, c, cons)


def feasible_problem(seed, n, k=1, l=1):
    """Like :func:`random_problem`, but ``r c^T`` satisfies every constraint.

    Random equality constraints on a tiny instance are often jointly
    infeasible with the marginals, which makes the dual unbounded.
    """
    p = random_problem(seed, n, k, l)
    P0 = np.outer(p.r, p.c)
    cons = []
    for con in p.constraints:
        D = con.matrix - float(np.sum(con.matrix * P0))
        if con.is_inequality:
            D = D + 0.1
        cons.append(Constraint(D, con.kind))
    return make_problem(p.cost, p.r, p.c, cons)


def random_state(p, eta, seed, scale=0.3):
    rng = np.random.default_rng(seed)
    return DualState(
        rng.normal(0, scale, p.n), rng.normal(0, scale, p.n), rng.normal(0, scale, p.n_constraints), eta
    )


@pytest.fixture
def acceptance(request):
    """Record ``(criterion, passed, detail)`` for the end-of-run summary.

    Criterion labels are numbers with an optional suffix, e.g. ``"6b"``.
    """
    results = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number, title, passed, detail):
        results[number] = (title, bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    def key(label):
        num, suffix = re.match(r"(\d+)(.*)", str(label)).groups()
        return int(num), suffix

    for number in sorted(results, key=key):
        title, passed, detail = results[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {str(number):>3}: {title} ({detail})")
