import numpy as np
import pytest
import scipy.sparse as sp

from bifurc import (
    EigenPair,
    Parameters,
    ProblemDefinition,
    classify_stability,
    eigs,
    get_problem,
    solve_pencil,
)
from bifurc.errors import ShiftSingularError

from helpers import linear_test_problem


def test_growth_rate_sign_convention():
    # R = diag(1,2,3) q decays at rates 1, 2, 3: growth rates are negative
    problem = linear_test_problem((1.0, 2.0, 3.0))
    pairs = eigs(problem, np.zeros(3), problem.parameters, nev=3)
    values = sorted(pr.value.real for pr in pairs)
    assert np.allclose(values, [-3.0, -2.0, -1.0], atol=1e-12)
    for pr in pairs:
        assert abs(pr.value.imag) < 1e-12
        assert pr.residual < 1e-12


def test_mass_matrix_scales_rates():
    a = sp.csr_matrix(np.diag([1.0, 2.0]))
    m = sp.csr_matrix(2.0 * np.eye(2))
    pairs = solve_pencil(a, m, nev=2)
    values = sorted(pr.value.real for pr in pairs)
    assert np.allclose(values, [-1.0, -0.5], atol=1e-13)


def test_modes_satisfy_pencil_to_tolerance():
    problem = get_problem("brusselator_1d", grid_points=31)
    p = problem.parameters.with_value("L", 0.5)
    pairs = eigs(problem, problem.default_state, p, shift=2.0j, nev=4)
    a = problem.jacobian(problem.default_state, p)
    for pr in pairs:
        resid = np.linalg.norm(pr.value * pr.mode + a @ pr.mode)
        assert resid < 1e-8
        assert np.linalg.norm(pr.mode) == pytest.approx(1.0, abs=1e-12)


def test_dense_and_arnoldi_agree():
    # the doubled-real path may return both members of a conjugate pair, so
    # check each dense value has an Arnoldi match rather than exact ordering
    problem = get_problem("brusselator_1d", grid_points=31)
    p = problem.parameters.with_value("L", 0.52)
    dense = eigs(problem, problem.default_state, p, shift=2.1j, nev=4,
                 method="dense")
    krylov = eigs(problem, problem.default_state, p, shift=2.1j, nev=6,
                  method="arnoldi")
    for pr in dense:
        gap = min(abs(pr.value - kp.value) for kp in krylov)
        assert gap < 1e-8


def test_auto_method_picks_dense_for_small_problems():
    problem = get_problem("brusselator_0d")
    pairs = eigs(problem, problem.default_state, problem.parameters, nev=2)
    # analytic: tr = B - 1 - A^2 = -1, det = A^2 = 4
    expect = (-1.0 + 1j * np.sqrt(15.0)) / 2.0
    best = min((pr.value for pr in pairs), key=lambda z: abs(z - expect))
    assert abs(best - expect) < 1e-12


def test_adjoint_modes_pair_with_direct_modes():
    problem = get_problem("brusselator_1d", grid_points=31)
    p = problem.parameters.with_value("L", 0.5)
    q = problem.default_state
    pairs = eigs(problem, q, p, shift=2.0j, nev=3, want_adjoint=True)
    a = problem.jacobian(q, p).toarray()
    m = np.eye(problem.dim)
    for pr in pairs:
        resid = np.linalg.norm(
            np.conj(pr.value) * pr.adjoint + a.T.conj() @ pr.adjoint
        )
        assert pr.adjoint_residual < 1e-7
        assert resid < 1e-7
    # biorthogonality across distinct eigenvalues
    for i, pi in enumerate(pairs):
        for j, pj in enumerate(pairs):
            inner = np.vdot(pi.adjoint, m @ pj.mode)
            if abs(pi.value - pj.value) > 1e-6:
                assert abs(inner) < 1e-7


def test_arnoldi_with_real_shift_matches_dense():
    problem = get_problem("brusselator_1d", grid_points=26)
    p = problem.parameters.with_value("L", 0.7)
    dense = eigs(problem, problem.default_state, p, shift=0.0, nev=4,
                 method="dense")
    krylov = eigs(problem, problem.default_state, p, shift=0.0, nev=4,
                  method="arnoldi")
    dv = sorted((pr.value for pr in dense), key=lambda z: (round(z.imag, 6), z.real))
    kv = sorted((pr.value for pr in krylov), key=lambda z: (round(z.imag, 6), z.real))
    assert np.allclose(dv, kv, atol=1e-8)


def test_shift_at_eigenvalue_raises():
    problem = linear_test_problem((1.0, 2.0))
    with pytest.raises(ShiftSingularError):
        eigs(problem, np.zeros(2), problem.parameters, shift=-1.0, nev=1,
             method="arnoldi")


def test_classify_stability_labels():
    def pair(value):
        return EigenPair(value=value, mode=np.ones(1), residual=0.0)

    assert classify_stability([pair(-0.5 + 1j)]) == "stable"
    assert classify_stability([pair(0.5 + 1j), pair(-1.0)]) == "unstable"
    assert classify_stability([pair(1e-12 + 2j)]) == "marginal"


def test_deterministic_across_calls():
    problem = get_problem("brusselator_1d", grid_points=41)
    p = problem.parameters.with_value("L", 0.6)
    a = eigs(problem, problem.default_state, p, shift=2.0j, nev=4,
             method="arnoldi")
    b = eigs(problem, problem.default_state, p, shift=2.0j, nev=4,
             method="arnoldi")
    for pa, pb in zip(a, b):
        assert pa.value == pb.value
        assert np.array_equal(pa.mode, pb.mode)
