import numpy as np
import pytest

from bifurc import (
    PROBLEMS,
    Parameters,
    ProblemDefinition,
    check_derivatives,
    get_problem,
)


@pytest.mark.parametrize("name", sorted(PROBLEMS))
def test_builtin_derivative_callbacks_match_fd(name):
    problem = get_problem(name)
    q = problem.default_state + 0.1 * np.sin(np.arange(problem.dim))
    report = check_derivatives(problem, q=q, trials=3, seed=1)
    assert report.finite
    assert report.ok(1e-6), report.errors


def test_brusselator_base_state_is_exact_for_any_length():
    problem = get_problem("brusselator_1d", grid_points=31)
    for L in (0.1, 0.513, 1.7):
        p = problem.parameters.with_value("L", L)
        r = problem.residual(problem.default_state, p)
        assert np.linalg.norm(r) < 1e-12


def test_brusselator_0d_base_state():
    problem = get_problem("brusselator_0d")
    p = problem.parameters
    assert np.allclose(problem.default_state, [p["A"], p["B"] / p["A"]])
    assert np.linalg.norm(problem.residual(problem.default_state, p)) < 1e-14


def test_parameters_accessors_and_updates():
    p = Parameters(("a", "b", "c"), (1.0, 2.0, 3.0), 1)
    assert p.active_name == "b" and p.active_value == 2.0
    assert p["c"] == 3.0 and p.index("a") == 0
    q = p.with_value("a", -1.0).with_active_value(9.0).with_active("c")
    assert tuple(q.values) == (-1.0, 9.0, 3.0) and q.active_name == "c"
    assert tuple(p.values) == (1.0, 2.0, 3.0)  # original untouched
    r = p.with_updates(a=0.5, c=0.25)
    assert tuple(r.values) == (0.5, 2.0, 0.25)
    assert p.to_dict() == {"a": 1.0, "b": 2.0, "c": 3.0}


def test_parameters_reject_unknown_names():
    p = Parameters(("a",), (1.0,), 0)
    with pytest.raises(KeyError):
        p.index("nope")
    with pytest.raises(KeyError):
        p.with_updates(nope=1.0)


def test_get_problem_unknown_name_raises():
    with pytest.raises(ValueError, match="unknown problem"):
        get_problem("no_such_problem")


def test_parameter_overrides_through_factory():
    problem = get_problem("brusselator_0d", B=6.5)
    assert problem.parameters["B"] == 6.5


def test_hb_capability_tracks_polynomial_degree():
    for name in PROBLEMS:
        assert get_problem(name).hb_capable  # all built-ins are cubic or less
    lin = get_problem("scalar_fold")
    assert lin.polynomial_degree == 2


def test_default_state_shape_is_validated():
    good = get_problem("scalar_fold")
    with pytest.raises(ValueError, match="default_state"):
        ProblemDefinition(
            name="bad", dim=2, parameters=good.parameters,
            residual=good.residual, jacobian=good.jacobian,
            param_gradient=good.param_gradient,
            hessian_apply=good.hessian_apply, third_apply=good.third_apply,
            mixed_param_jacobian_apply=good.mixed_param_jacobian_apply,
            default_state=np.zeros(3),
        )


def test_identity_mass_defaults():
    problem = get_problem("scalar_pitchfork")
    p = problem.parameters
    v = np.array([2.5])
    assert problem.mass(np.array([0.3]), p, v) == pytest.approx(2.5)
    assert np.allclose(problem.mass_matrix(np.array([0.3]), p).toarray(), [[1.0]])
    assert problem.dmass_state(np.array([0.3]), p, v, v) == pytest.approx(0.0)
    assert problem.dmass_param(np.array([0.3]), p, 0, v) == pytest.approx(0.0)
