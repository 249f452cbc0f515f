import numpy as np
import pytest

from bifurc import (
    LocatorSettings,
    NewtonSettings,
    StepControl,
    eigs,
    get_problem,
    locate_bifurcation,
    newton_solve,
    normal_form,
    trace_bifurcation_curve,
    weakly_nonlinear_predict,
)
from bifurc.bifurcation import (
    _g_and_modes,
    _g_param_derivative,
    _g_state_row,
)
from bifurc.errors import (
    LocatorDivergenceError,
    NoOrbitPredictedError,
    ReclassifyCandidateError,
)

from helpers import tail_amplitude


def _hopf_point_0d(B_seed=4.8):
    problem = get_problem("brusselator_0d")
    p = problem.parameters.with_value("B", B_seed)
    q = newton_solve(problem, problem.default_state, p).q
    return problem, locate_bifurcation(problem, q, p, kind="hopf", omega0=2.0)


def test_fold_located_exactly_on_scalar_problem():
    problem = get_problem("scalar_fold")
    p = problem.parameters.with_value("a1", -0.05)
    q0 = np.array([np.sqrt(0.05)])
    point = locate_bifurcation(problem, q0, p, kind="steady")
    assert point.kind == "fold"
    assert abs(point.q[0]) + abs(point.params["a1"]) < 1e-12
    assert point.omega == 0.0
    mags = point.g_history
    assert mags[-1] < 1e-10 < mags[0]


def test_pitchfork_located_from_symmetric_branch():
    problem = get_problem("scalar_pitchfork")
    p = problem.parameters.with_value("a1", -0.3)
    point = locate_bifurcation(problem, np.array([0.0]), p, kind="steady")
    assert point.kind == "pitchfork"
    assert abs(point.q[0]) + abs(point.params["a1"]) < 1e-12


def test_hopf_located_exactly_on_0d_brusselator():
    problem, point = _hopf_point_0d()
    assert point.kind == "hopf"
    assert point.params["B"] == pytest.approx(5.0, abs=1e-10)
    assert point.omega == pytest.approx(2.0, abs=1e-10)
    # modes come back normalized against the mass matrix and biorthogonal
    m = np.eye(2)
    assert abs(np.vdot(point.mode, m @ point.mode)) == pytest.approx(1.0, abs=1e-10)
    assert np.vdot(point.adjoint, m @ point.mode) == pytest.approx(1.0, abs=1e-8)


def test_criticality_derivative_rows_match_fd():
    # freeze the seeds and differentiate g by central differences in every
    # unknown; the assembled rows must match
    problem = get_problem("brusselator_0d")
    p = problem.parameters.with_value("B", 4.9)
    q = newton_solve(problem, problem.default_state, p).q
    omega = 1.93
    pairs = eigs(problem, q, p, shift=2.0j, nev=2, want_adjoint=True)
    best = min(pairs, key=lambda pr: abs(pr.value - 2.0j))
    wseed, vseed = best.mode, best.adjoint
    mass = problem.mass_matrix(q, p)

    def g_at(qv, pv, wv):
        g, _, _, _ = _g_and_modes(problem, qv, pv, wv, vseed, wseed,
                                  problem.mass_matrix(qv, pv))
        return g

    g0, qhat, qdag, _ = _g_and_modes(problem, q, p, omega, vseed, wseed, mass)
    h = 1e-6

    row = _g_state_row(problem, q, p, omega, qhat, qdag, mass)
    for i in range(problem.dim):
        e = np.zeros(problem.dim)
        e[i] = h
        fd = (g_at(q + e, p, omega) - g_at(q - e, p, omega)) / (2 * h)
        assert abs(row[i] - fd) < 1e-6 * max(1.0, abs(fd))

    j = p.active_index
    fd = (g_at(q, p.with_active_value(p.active_value + h), omega)
          - g_at(q, p.with_active_value(p.active_value - h), omega)) / (2 * h)
    dg = _g_param_derivative(problem, q, p, j, omega, qhat, qdag)
    assert abs(dg - fd) < 1e-6 * max(1.0, abs(fd))

    fd = (g_at(q, p, omega + h) - g_at(q, p, omega - h)) / (2 * h)
    dw = np.vdot(qdag, 1j * (mass @ qhat))
    assert abs(dw - fd) < 1e-6 * max(1.0, abs(fd))


def test_locator_divergence_raises_with_history():
    problem = get_problem("scalar_fold")
    p = problem.parameters.with_value("a1", -4.0)
    with pytest.raises(LocatorDivergenceError) as exc:
        locate_bifurcation(problem, np.array([2.0]), p, kind="steady",
                           settings=LocatorSettings(max_iterations=1))
    assert len(exc.value.g_history) >= 1


def test_hopf_locator_reclassifies_when_frequency_collapses():
    problem = get_problem("scalar_fold")
    p = problem.parameters.with_value("a1", -0.04)
    with pytest.raises(ReclassifyCandidateError):
        locate_bifurcation(problem, np.array([0.2]), p, kind="hopf",
                           omega0=0.05)


def test_fold_normal_form_exact():
    problem = get_problem("scalar_fold")
    p = problem.parameters.with_value("a1", -0.02)
    point = locate_bifurcation(problem, np.array([0.15]), p, kind="steady")
    nf = normal_form(problem, point)
    assert nf.kind == "fold"
    assert nf.param_coeffs["a1"] == pytest.approx(-1.0, abs=1e-10)
    assert nf.beta == pytest.approx(-1.0, abs=1e-10)
    assert nf.supercritical is None


def test_pitchfork_normal_form_exact():
    problem = get_problem("scalar_pitchfork")
    p = problem.parameters.with_value("a1", -0.1)
    point = locate_bifurcation(problem, np.array([0.0]), p, kind="steady")
    nf = normal_form(problem, point)
    assert nf.kind == "pitchfork"
    # dR/dq = -a1 + 3 q^2, so the critical eigenvalue moves as +1 * a1
    assert nf.param_coeffs["a1"] == pytest.approx(1.0, abs=1e-10)
    assert nf.beta == pytest.approx(-3.0, abs=1e-10)
    assert nf.supercritical


def test_hopf_normal_form_matches_closed_form():
    problem, point = _hopf_point_0d()
    nf = normal_form(problem, point)
    assert nf.param_coeffs["B"] == pytest.approx(0.5 + 0.0j, abs=1e-10)
    assert nf.beta.real == pytest.approx(-1.0 / 3.0, abs=1e-10)
    assert nf.beta.imag == pytest.approx(-10.0 / 27.0, abs=1e-10)
    assert nf.supercritical


def test_eigenvalue_drift_matches_fd_both_parameters():
    problem, point = _hopf_point_0d()
    nf = normal_form(problem, point)
    h = 1e-5
    for name in ("A", "B"):
        lams = []
        for sgn in (1.0, -1.0):
            pp = point.params.with_value(name, point.params[name] + sgn * h)
            q = newton_solve(problem, point.q, pp).q
            pairs = eigs(problem, q, pp, shift=2.0j, nev=2)
            lams.append(min((pr.value for pr in pairs),
                            key=lambda z: abs(z - 1j * point.omega)))
        fd = (lams[0] - lams[1]) / (2 * h)
        assert abs(nf.param_coeffs[name] - fd) < 1e-6 * abs(fd)


def test_weakly_nonlinear_orbit_prediction_structure():
    problem, point = _hopf_point_0d()
    nf = normal_form(problem, point)
    seed = weakly_nonlinear_predict(problem, point, nf, 0.08, harmonics=4)
    assert seed.order == 4
    assert np.allclose(np.real(seed.coeffs[0]), point.q, atol=1e-12)
    assert np.linalg.norm(seed.coeffs[1]) > 0.0
    assert np.linalg.norm(seed.coeffs[2]) == 0.0
    # amplitude grows like sqrt(dB) and the frequency shifts linearly
    seed2 = weakly_nonlinear_predict(problem, point, nf, 0.02, harmonics=4)
    ratio = np.linalg.norm(seed.coeffs[1]) / np.linalg.norm(seed2.coeffs[1])
    assert ratio == pytest.approx(2.0, rel=1e-10)
    assert seed.omega != point.omega


def test_weakly_nonlinear_prediction_agrees_with_time_integration():
    problem, point = _hopf_point_0d()
    nf = normal_form(problem, point)
    dB = 0.05
    seed = weakly_nonlinear_predict(problem, point, nf, dB, harmonics=3)
    predicted = 2.0 * abs(seed.coeffs[1][0])
    pp = point.params.with_active_value(point.params["B"] + dB)
    q = newton_solve(problem, point.q, pp).q
    measured = tail_amplitude(problem, q + np.array([1e-2, -1e-2]), pp)
    assert measured == pytest.approx(predicted, rel=0.1)


def test_no_orbit_on_wrong_side_raises():
    problem, point = _hopf_point_0d()
    nf = normal_form(problem, point)
    with pytest.raises(NoOrbitPredictedError) as exc:
        weakly_nonlinear_predict(problem, point, nf, -0.05)
    assert exc.value.amplitude_sq < 0.0


def test_fold_curve_reproduces_cusp_geometry():
    problem = get_problem("scalar_cusp")
    qs = np.sqrt(0.1)
    p = problem.parameters.with_updates(a1=-2.0 * qs**3, a2=-0.3)
    point = locate_bifurcation(problem, np.array([qs]), p.with_active("a1"),
                               kind="steady")
    assert point.kind == "fold"
    curve = trace_bifurcation_curve(
        problem, point, "a2",
        control=StepControl(h0=-0.02, h_max=0.05),
        max_points=50,
    )
    assert len(curve.points) == 50
    for cp in curve.points:
        a1, a2 = cp.params["a1"], cp.params["a2"]
        assert abs(4.0 * a2**3 + 27.0 * a1**2) < 1e-8 * (1.0 + abs(a2) ** 3)
    kinds = {ev.kind for ev in curve.events}
    assert "cusp-candidate" in kinds


def test_hopf_curve_follows_analytic_locus():
    # 0-D Brusselator: Hopf locus B = 1 + A^2 with omega = A
    problem, point = _hopf_point_0d()
    curve = trace_bifurcation_curve(
        problem, point, "A",
        control=StepControl(h0=0.05, h_max=0.1),
        max_points=25,
    )
    assert len(curve.points) == 25
    for cp in curve.points:
        a, b = cp.params["A"], cp.params["B"]
        assert b == pytest.approx(1.0 + a * a, abs=1e-8)
        assert cp.omega == pytest.approx(a, abs=1e-8)
        assert cp.beta is not None and cp.beta.real < 0.0
    spanned = max(cp.params["A"] for cp in curve.points) - min(
        cp.params["A"] for cp in curve.points)
    assert spanned > 0.5
