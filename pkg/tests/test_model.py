import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from constrained_ot.exceptions import InstanceFormatError, InvalidInput
from constrained_ot.model import (
    Constraint,
    ConstraintKind,
    DualState,
    Sense,
    constraint_from_threshold,
    homogenize_constraint,
    load_instance,
    make_problem,
    problem_from_dict,
    problem_to_dict,
    save_instance,
)

from conftest import random_problem


def test_zero_threshold_ge_keeps_matrix():
    D = np.arange(9.0).reshape(3, 3)
    k = homogenize_constraint(D, 0.0, ConstraintKind.INEQUALITY_GE, Sense.GE)
    assert k.kind is ConstraintKind.INEQUALITY_GE
    np.testing.assert_array_equal(k.matrix, D)


def test_threshold_equal_to_entries_gives_zero_equality():
    k = homogenize_constraint(np.ones((2, 2)), 1.0, ConstraintKind.EQUALITY, Sense.EQ)
    assert k.kind is ConstraintKind.EQUALITY
    np.testing.assert_array_equal(k.matrix, np.zeros((2, 2)))


def test_le_threshold_flips_sign():
    k = homogenize_constraint(np.eye(2), 0.5, ConstraintKind.INEQUALITY_GE, Sense.LE)
    np.testing.assert_array_equal(k.matrix, [[-0.5, 0.5], [0.5, -0.5]])
    assert k.is_inequality


def test_kind_sense_mismatch_rejected():
    with pytest.raises(InvalidInput):
        homogenize_constraint(np.eye(2), 0.0, ConstraintKind.EQUALITY, Sense.GE)
    with pytest.raises(InvalidInput):
        homogenize_constraint(np.ones((2, 3)), 0.0, ConstraintKind.EQUALITY, Sense.EQ)


@settings(max_examples=50, deadline=None)
@given(
    st.integers(2, 6),
    st.floats(-2, 2),
    st.sampled_from(["ge", "le", "eq"]),
    st.integers(0, 2**32 - 1),
)
def test_homogenized_constraint_agrees_on_unit_mass_plans(n, t, sense, seed):
    rng = np.random.default_rng(seed)
    D = rng.uniform(-1, 1, (n, n))
    P = rng.uniform(0, 1, (n, n))
    P /= P.sum()
    k = constraint_from_threshold(D, t, sense)
    val = float(np.sum(D * P))
    hom = float(np.sum(k.matrix * P))
    expected = {"ge": val - t, "le": t - val, "eq": val - t}[sense]
    assert hom == pytest.approx(expected, abs=1e-12)


def test_uniform_unconstrained_problem_is_valid():
    u = np.full(4, 0.25)
    p = make_problem(np.random.default_rng(0).normal(size=(4, 4)), u, u)
    assert p.n == 4 and p.n_constraints == 0 and p.c_d == 0.0
    assert p.d_stack.shape == (0, 4, 4)


def test_marginal_sum_error():
    with pytest.raises(InvalidInput, match="sums to"):
        make_problem(np.zeros((2, 2)), [0.7, 0.4], [0.5, 0.5])


def test_dimension_mismatch():
    k = Constraint(np.zeros((3, 3)), ConstraintKind.EQUALITY)
    with pytest.raises(InvalidInput, match="dimension mismatch"):
        make_problem(np.zeros((2, 2)), [0.5, 0.5], [0.5, 0.5], [k])
    with pytest.raises(InvalidInput, match="dimension mismatch"):
        make_problem(np.zeros((2, 2)), [0.5, 0.5], [1.0], [])


def test_nonfinite_and_negative_rejected():
    with pytest.raises(InvalidInput):
        make_problem([[0, np.inf], [1, 0]], [0.5, 0.5], [0.5, 0.5])
    with pytest.raises(InvalidInput):
        make_problem(np.zeros((2, 2)), [1.5, -0.5], [0.5, 0.5])


def test_zero_marginal_warns():
    with pytest.warns(UserWarning):
        make_problem(np.zeros((2, 2)), [1.0, 0.0], [0.5, 0.5])


def test_marginals_renormalized():
    p = make_problem(np.zeros((2, 2)), [0.5 + 1e-9, 0.5], [0.5, 0.5])
    assert abs(p.r.sum() - 1.0) <= 1e-12


def test_inequalities_ordered_first():
    eq = Constraint(np.ones((2, 2)), ConstraintKind.EQUALITY)
    ge = Constraint(np.eye(2), ConstraintKind.INEQUALITY_GE)
    p = make_problem(np.zeros((2, 2)), [0.5, 0.5], [0.5, 0.5], [eq, ge, eq])
    assert [k.kind for k in p.constraints] == [ConstraintKind.INEQUALITY_GE] + [ConstraintKind.EQUALITY] * 2
    assert (p.k_ineq, p.l_eq) == (1, 2)
    assert p.c_d == 1.0


def test_dual_state_validation_and_roundtrip():
    with pytest.raises(InvalidInput):
        DualState(np.zeros(2), np.zeros(2), np.zeros(0), 0.0)
    with pytest.raises(InvalidInput):
        DualState(np.array([np.nan, 0]), np.zeros(2), np.zeros(0), 1.0)
    s = DualState([1.0, 2.0], [3.0, 4.0], [5.0], 2.0)
    t = DualState.from_vector(s.as_vector(), 2, 2.0)
    np.testing.assert_array_equal(t.as_vector(), s.as_vector())
    assert s.replace(eta=3.0).eta == 3.0


def test_json_roundtrip(tmp_path):
    p = random_problem(3, 4, k=1, l=2)
    path = tmp_path / "inst.json"
    save_instance(p, path)
    q = load_instance(path)
    np.testing.assert_array_equal(q.cost, p.cost)
    # marginals are renormalized on load, which may move the last bit
    np.testing.assert_allclose(q.r, p.r, rtol=0, atol=1e-15)
    np.testing.assert_allclose(q.c, p.c, rtol=0, atol=1e-15)
    for a, b in zip(p.constraints, q.constraints):
        np.testing.assert_array_equal(a.matrix, b.matrix)
        assert a.kind is b.kind


def test_json_thresholds_are_homogenized():
    doc = {
        "n": 2,
        "cost": [0, 1, 1, 0],
        "r": [0.5, 0.5],
        "c": [0.5, 0.5],
        "constraints": [{"matrix": [1, 0, 0, 1], "sense": "le", "threshold": 0.5}],
    }
    p = problem_from_dict(doc)
    np.testing.assert_array_equal(p.constraints[0].matrix, [[-0.5, 0.5], [0.5, -0.5]])
    assert problem_to_dict(p)["constraints"][0]["sense"] == "ge"


@pytest.mark.parametrize(
    "patch, field",
    [
        ({"n": "two"}, "n"),
        ({"cost": [0, 1, 1]}, "cost"),
        ({"r": [0.5, "x"]}, "r"),
        ({"constraints": [{"matrix": [1, 0, 0, 1], "sense": "gt"}]}, "constraints[0].sense"),
        ({"constraints": [{"matrix": [1, 0, 0], "sense": "eq"}]}, "constraints[0].matrix"),
        ({"constraints": [{"matrix": [1, 0, 0, 1], "sense": "eq", "threshold": "a"}]}, "constraints[0].threshold"),
    ],
)
def test_malformed_fields_are_named(patch, field):
    doc = {"n": 2, "cost": [0, 1, 1, 0], "r": [0.5, 0.5], "c": [0.5, 0.5]}
    doc.update(patch)
    with pytest.raises(InstanceFormatError) as exc:
        problem_from_dict(doc)
    assert exc.value.field == field
    assert f"'{field}'" in str(exc.value)


def test_invalid_json_document(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"n": 2, "cost": [0, 1, 1, 0],')
    with pytest.raises(InstanceFormatError, match="invalid JSON"):
        load_instance(path)
