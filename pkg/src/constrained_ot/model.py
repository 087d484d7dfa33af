"""
Problem representation for optimal transport under linear constraints.

Every user-level constraint ``D . P >= t``, ``D . P <= t`` or ``D . P = t`` is
stored in homogenized form, either ``D' . P >= 0`` or ``D' . P = 0``, which is
valid because transport plans carry unit mass. Inequalities are always stored
before equalities, so the constraint dual vector ``a`` has the layout
``(a_1 .. a_K, a_{K+1} .. a_{K+L})``.
"""

import enum
import json
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import InstanceFormatError, InvalidInput

MARGINAL_SUM_TOL = 1e-6


class ConstraintKind(enum.Enum):
    INEQUALITY_GE = "ge"
    EQUALITY = "eq"


class Sense(enum.Enum):
    """Direction of a raw (non-homogenized) constraint ``D . P  <sense>  t``."""

    GE = "ge"
    LE = "le"
    EQ = "eq"


@dataclass(frozen=True, eq=False)
class Constraint:
    matrix: np.ndarray
    kind: ConstraintKind

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def is_inequality(self):
        return self.kind is ConstraintKind.INEQUALITY_GE


def homogenize_constraint(D, t, kind, sense):
    """Fold the threshold ``t`` of ``D . P <sense> t`` into the matrix.

    Parameters
    ----------
    D : array-like, shape (n, n)
    t : float
    kind : ConstraintKind
        Requested kind; it must agree with ``sense`` (``EQ`` pairs with
        ``EQUALITY``, ``GE``/``LE`` with ``INEQUALITY_GE``).
    sense : Sense or str

    Returns
    -------
    Constraint
        ``(D - t 1, ge)`` for ``GE``, ``(t 1 - D, ge)`` for ``LE`` and
        ``(D - t 1, eq)`` for ``EQ``.
    """
    sense = Sense(sense.value if isinstance(sense, Sense) else sense)
    kind = ConstraintKind(kind.value if isinstance(kind, ConstraintKind) else kind)
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1] or D.shape[0] < 1:
        raise InvalidInput(f"constraint matrix must be square n x n, got shape {D.shape}")
    if not np.all(np.isfinite(D)) or not math.isfinite(t):
        raise InvalidInput("constraint matrix and threshold must be finite")
    expected = ConstraintKind.EQUALITY if sense is Sense.EQ else ConstraintKind.INEQUALITY_GE
    if kind is not expected:
        raise InvalidInput(f"sense {sense.value!r} is incompatible with kind {kind.value!r}")
    if sense is Sense.LE:
        return Constraint(t - D, kind)
    return Constraint(D - t, kind)


def constraint_from_threshold(D, t, sense):
    """Shorthand for :func:`homogenize_constraint` with the kind implied by ``sense``."""
    sense = Sense(sense.value if isinstance(sense, Sense) else sense)
    kind = ConstraintKind.EQUALITY if sense is Sense.EQ else ConstraintKind.INEQUALITY_GE
    return homogenize_constraint(D, t, kind, sense)


@dataclass(frozen=True, eq=False)
class ConstrainedOtProblem:
    """Cost matrix, marginals and homogenized constraints.

    Build instances through :func:`make_problem`, which validates and
    renormalizes; the raw constructor only reorders constraints so that the
    inequalities come first.
    """

    cost: np.ndarray
    r: np.ndarray
    c: np.ndarray
    constraints: tuple = field(default=())

    def __post_init__(self):
        cons = tuple(self.constraints)
        ordered = tuple(k for k in cons if k.is_inequality) + tuple(
            k for k in cons if not k.is_inequality
        )
        object.__setattr__(self, "constraints", ordered)
        for name in ("cost", "r", "c"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self):
        return self.cost.shape[0]

    @property
    def k_ineq(self):
        return sum(1 for k in self.constraints if k.is_inequality)

    @property
    def l_eq(self):
        return len(self.constraints) - self.k_ineq

    @property
    def n_constraints(self):
        return len(self.constraints)

    @cached_property
    def d_stack(self):
        """Constraint matrices stacked into shape ``(K+L, n, n)``."""
        if not self.constraints:
            return np.zeros((0,) + self.cost.shape)
        return np.stack([k.matrix for k in self.constraints])

    @cached_property
    def c_d(self):
        """Largest entry-wise sup-norm over the constraint matrices (0 when none)."""
        if not self.constraints:
            return 0.0
        return float(np.max(np.abs(self.d_stack)))

    def with_constraints(self, constraints):
        return make_problem(self.cost, self.r, self.c, constraints)


def validate_problem(p: ConstrainedOtProblem) -> ConstrainedOtProblem:
    """Check every structural invariant and return a renormalized copy.

    Raises
    ------
    InvalidInput
        On dimension mismatch, non-finite data, negative marginal entries or
        marginal sums further than ``1e-6`` from one.
    """
    cost, r, c = p.cost, p.r, p.c
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1] or cost.shape[0] < 1:
        raise InvalidInput(f"cost must be a square n x n matrix, got shape {cost.shape}")
    n = cost.shape[0]
    if r.shape != (n,) or c.shape != (n,):
        raise InvalidInput(
            f"dimension mismatch: cost is {n}x{n} but r has shape {r.shape}, c has shape {c.shape}"
        )
    if not np.all(np.isfinite(cost)):
        raise InvalidInput("cost matrix has non-finite entries")
    for name, v in (("r", r), ("c", c)):
        if not np.all(np.isfinite(v)):
            raise InvalidInput(f"marginal {name} has non-finite entries")
        if np.any(v < 0):
            raise InvalidInput(f"marginal {name} has a negative entry")
        if abs(v.sum() - 1.0) > MARGINAL_SUM_TOL:
            raise InvalidInput(f"marginal {name} sums to {v.sum()!r}, expected 1")
    for idx, k in enumerate(p.constraints):
        if k.matrix.shape != (n, n):
            raise InvalidInput(
                f"dimension mismatch: constraint {idx} has shape {k.matrix.shape}, cost is {n}x{n}"
            )
        if not np.all(np.isfinite(k.matrix)):
            raise InvalidInput(f"constraint {idx} has non-finite entries")
    if np.any(r == 0) or np.any(c == 0):
        warnings.warn("marginal has zero entries; those rows/columns carry no mass", stacklevel=2)
    return ConstrainedOtProblem(cost, r / r.sum(), c / c.sum(), p.constraints)


def make_problem(cost, r, c, constraints: Sequence[Constraint] = ()) -> ConstrainedOtProblem:
    return validate_problem(ConstrainedOtProblem(cost, r, c, tuple(constraints)))


@dataclass(frozen=True, eq=False)
class DualState:
    """Dual variables ``(x, y, a)`` together with the ``eta`` they belong to."""

    x: np.ndarray
    y: np.ndarray
    a: np.ndarray
    eta: float

    def __post_init__(self):
        for name in ("x", "y", "a"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not self.eta > 0:
            raise InvalidInput(f"eta must be positive, got {self.eta!r}")
        if not (
            np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.a))
        ):
            raise InvalidInput("dual state has non-finite entries")

    @classmethod
    def zeros(cls, problem, eta):
        n = problem.n
        return cls(np.zeros(n), np.zeros(n), np.zeros(problem.n_constraints), eta)

    def replace(self, **changes):
        kw = dict(x=self.x, y=self.y, a=self.a, eta=self.eta)
        kw.update(changes)
        return DualState(**kw)

    def as_vector(self):
        return np.concatenate([self.x, self.y, self.a])

    @classmethod
    def from_vector(cls, z, n, eta):
        z = np.asarray(z, dtype=float)
        return cls(z[:n], z[n : 2 * n], z[2 * n :], eta)


# ---------------------------------------------------------------------------
# instance files


def _read_reals(doc, key, count, where=None):
    name = where or key
    if key not in doc:
        raise InstanceFormatError(name, "missing")
    vals = doc[key]
    if not isinstance(vals, list):
        raise InstanceFormatError(name, f"expected a list of {count} reals")
    if len(vals) != count:
        raise InstanceFormatError(name, f"expected {count} reals, got {len(vals)}")
    try:
        arr = np.array(vals, dtype=float)
    except (TypeError, ValueError):
        raise InstanceFormatError(name, "contains non-numeric entries") from None
    if not np.all(np.isfinite(arr)):
        raise InstanceFormatError(name, "contains non-finite entries")
    return arr


def problem_from_dict(doc) -> ConstrainedOtProblem:
    if not isinstance(doc, dict):
        raise InstanceFormatError("<root>", "expected a JSON object")
    n = doc.get("n")
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise InstanceFormatError("n", f"expected a positive integer, got {n!r}")
    cost = _read_reals(doc, "cost", n * n).reshape(n, n)
    r = _read_reals(doc, "r", n)
    c = _read_reals(doc, "c", n)
    raw = doc.get("constraints", [])
    if not isinstance(raw, list):
        raise InstanceFormatError("constraints", "expected a list")
    cons = []
    for i, item in enumerate(raw):
        where = f"constraints[{i}]"
        if not isinstance(item, dict):
            raise InstanceFormatError(where, "expected an object")
        D = _read_reals(item, "matrix", n * n, f"{where}.matrix").reshape(n, n)
        sense = item.get("sense")
        if sense not in ("ge", "le", "eq"):
            raise InstanceFormatError(f"{where}.sense", f"expected 'ge', 'le' or 'eq', got {sense!r}")
        t = item.get("threshold", 0.0)
        if not isinstance(t, (int, float)) or isinstance(t, bool) or not math.isfinite(t):
            raise InstanceFormatError(f"{where}.threshold", f"expected a finite real, got {t!r}")
        cons.append(constraint_from_threshold(D, float(t), sense))
    return make_problem(cost, r, c, cons)


def problem_to_dict(p: ConstrainedOtProblem) -> dict:
    """Serialize in homogenized form (threshold 0)."""
    return {
        "n": p.n,
        "cost": p.cost.ravel().tolist(),
        "r": p.r.tolist(),
        "c": p.c.tolist(),
        "constraints": [
            {
                "matrix": k.matrix.ravel().tolist(),
                "sense": "ge" if k.is_inequality else "eq",
                "threshold": 0.0,
            }
            for k in p.constraints
        ],
    }


def load_instance(path) -> ConstrainedOtProblem:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError("<document>", f"invalid JSON ({exc})") from None
    return problem_from_dict(doc)


def save_instance(p: ConstrainedOtProblem, path):
    # json writes floats with repr(), which round-trips doubles exactly
    Path(path).write_text(json.dumps(problem_to_dict(p)))
