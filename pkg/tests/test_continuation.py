import numpy as np
import pytest

from bifurc import (
    MonitorSettings,
    NewtonSettings,
    StepControl,
    adapt_step,
    compute_tangent,
    correct_moore_penrose,
    get_problem,
    locate_from_candidate,
    newton_solve,
    predict,
    refine_candidate,
    trace_branch,
)


def _fold_at(alpha):
    problem = get_problem("scalar_fold")
    p = problem.parameters.with_value("a1", alpha)
    q = newton_solve(problem, np.array([np.sqrt(-alpha)]), p).q
    return problem, q, p


def test_tangent_matches_implicit_derivative():
    # on a1 = -q^2 the branch slope is dq/da1 = -1/(2q)
    problem, q, p = _fold_at(-1.0)
    tan = compute_tangent(problem, q, p)
    assert tan.y_alpha == -1.0
    slope = tan.y_q[0] / tan.y_alpha
    assert slope == pytest.approx(-1.0 / (2.0 * q[0]), rel=1e-12)


def test_predict_moves_against_alpha_for_positive_step():
    problem, q, p = _fold_at(-1.0)
    tan = compute_tangent(problem, q, p)
    q1, p1 = predict(q, p, tan, 0.1)
    assert p1.active_value < p.active_value
    assert np.linalg.norm(q1 - q) < 0.1


def test_corrector_zero_iterations_on_branch():
    problem, q, p = _fold_at(-1.0)
    tan = compute_tangent(problem, q, p)
    result = correct_moore_penrose(problem, q, p, tan)
    assert result.iterations == 0
    assert np.array_equal(result.q, q)


def test_corrector_returns_to_branch():
    problem, q, p = _fold_at(-1.0)
    tan = compute_tangent(problem, q, p)
    result = correct_moore_penrose(problem, q + 0.05, p.with_active_value(
        p.active_value + 0.03), tan)
    assert result.iterations > 0
    a = result.params.active_value
    assert result.q[0] ** 2 + a == pytest.approx(0.0, abs=1e-10)
    assert result.residual_norms[-1] < 1e-10
    # refreshed tangent still satisfies the canonical normalization
    assert result.tangent.y_alpha == -1.0


def test_adapt_step_targets_iteration_count():
    control = StepControl(h0=0.02, h_min=1e-6, h_max=0.1, target_iterations=3)
    assert adapt_step(0.02, 1, control) == pytest.approx(0.04)  # doubles
    assert adapt_step(0.02, 5, control) == pytest.approx(0.01)  # halves
    assert adapt_step(0.02, 3, control) == pytest.approx(0.02)
    assert adapt_step(0.09, 0, control) == pytest.approx(0.1)  # clamped
    assert adapt_step(-0.02, 1, control) == pytest.approx(-0.04)  # sign kept
    assert abs(adapt_step(2e-6, 8, control)) >= control.h_min


def test_trace_traverses_fold_and_labels_stability():
    problem, q, p = _fold_at(-1.0)
    branch = trace_branch(
        problem, q, p,
        control=StepControl(h0=-0.05, h_max=0.1),
        monitor=MonitorSettings(nev=1),
        max_points=50,
    )
    qs = np.array([pt.q[0] for pt in branch.points])
    alphas = np.array([pt.alpha for pt in branch.points])
    assert qs.min() < -0.5 and qs.max() > 0.5  # rounded the turn
    assert alphas.max() < 1e-3  # never leaves the solution set a1 <= 0
    labels = {pt.stability_label for pt in branch.points}
    assert "stable" in labels and "unstable" in labels
    on_curve = np.abs(qs**2 + alphas)
    assert on_curve.max() < 1e-9


def test_trace_stops_at_parameter_bound():
    problem, q, p = _fold_at(-1.0)
    branch = trace_branch(
        problem, q, p,
        control=StepControl(h0=0.05, h_max=0.05),
        param_range=(-1.2, -0.9),
        max_points=100,
    )
    assert branch.status == "param-bound"
    assert branch.points[-1].alpha <= -1.2 + 0.2  # stops promptly past bound


def test_trace_reports_step_failure():
    problem, q, p = _fold_at(-1.0)
    branch = trace_branch(
        problem, q, p,
        control=StepControl(h0=0.05, h_min=0.05, h_max=0.05),
        corrector=NewtonSettings(abs_tol=1e-13, max_iterations=1),
        max_points=30,
    )
    assert branch.status == "step-failure"
    assert len(branch.points) >= 1


def test_trace_max_points_status():
    problem, q, p = _fold_at(-1.0)
    branch = trace_branch(problem, q, p,
                          control=StepControl(h0=0.01, h_max=0.01),
                          max_points=5)
    assert branch.status == "max-points"
    assert len(branch.points) == 5


def test_hopf_candidate_detected_refined_and_located():
    problem = get_problem("brusselator_0d")
    p = problem.parameters.with_value("B", 4.2)
    q = newton_solve(problem, problem.default_state, p).q
    branch = trace_branch(
        problem, q, p,
        control=StepControl(h0=-0.05, h_max=0.2),
        monitor=MonitorSettings(nev=2),
        param_range=(4.0, 6.0),
        max_points=40,
    )
    events = [e for e in branch.events if e.kind == "hopf-candidate"]
    assert len(events) == 1
    lo = branch.points[events[0].index_before].alpha
    hi = branch.points[events[0].index_after].alpha
    assert min(lo, hi) < 5.0 < max(lo, hi)

    cand = refine_candidate(problem, branch, events[0])
    assert abs(cand.value.real) < 1e-8
    assert cand.omega == pytest.approx(2.0, abs=1e-4)
    assert abs(cand.sigma_history[-1]) < abs(cand.sigma_history[0])

    point = locate_from_candidate(problem, cand)
    assert point.kind == "hopf"
    assert point.params["B"] == pytest.approx(5.0, abs=1e-9)
    assert point.omega == pytest.approx(2.0, abs=1e-9)


def test_tangent_continuity_through_turn():
    problem, q, p = _fold_at(-0.04)
    branch = trace_branch(problem, q, p,
                          control=StepControl(h0=-0.02, h_max=0.02),
                          max_points=12)
    tans = [pt.tangent for pt in branch.points]
    for a, b in zip(tans, tans[1:]):
        dot = float(a.y_q @ b.y_q) + a.y_alpha * b.y_alpha
        assert dot > 0.0  # orientation never flips between accepted points
