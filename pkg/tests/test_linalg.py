import numpy as np
import pytest
import scipy.sparse as sp

from bifurc import (
    BorderedSystem,
    factor,
    factor_complex,
    solve_bordered,
)
from bifurc.errors import BorderedSingularError, SingularMatrixError


def _random_sparse(rng, n, complex_=False):
    a = rng.standard_normal((n, n))
    if complex_:
        a = a + 1j * rng.standard_normal((n, n))
    a[np.abs(a) < 0.8] = 0.0
    a = a + n * np.eye(n)  # diagonally dominant, comfortably invertible
    return sp.csr_matrix(a)


def test_factorization_matches_dense_solve():
    rng = np.random.default_rng(11)
    a = _random_sparse(rng, 25)
    fact = factor(a)
    b = rng.standard_normal(25)
    assert np.allclose(fact.solve(b), np.linalg.solve(a.toarray(), b), atol=1e-11)


def test_factorization_complex_rhs_and_transpose():
    rng = np.random.default_rng(12)
    a = _random_sparse(rng, 17)
    fact = factor(a)
    b = rng.standard_normal(17) + 1j * rng.standard_normal(17)
    assert np.allclose(fact.solve(b), np.linalg.solve(a.toarray(), b), atol=1e-11)
    bt = rng.standard_normal(17)
    assert np.allclose(
        fact.solve(bt, transpose=True), np.linalg.solve(a.toarray().T, bt), atol=1e-11
    )


def test_complex_factorization_matches_dense():
    rng = np.random.default_rng(13)
    a = _random_sparse(rng, 20, complex_=True)
    fact = factor_complex(sp.csr_matrix(a.real), sp.csr_matrix(a.imag))
    b = rng.standard_normal(20) + 1j * rng.standard_normal(20)
    dense = a.toarray()
    assert np.allclose(fact.solve(b), np.linalg.solve(dense, b), atol=1e-10)
    assert np.allclose(
        fact.solve(b, adjoint=True), np.linalg.solve(dense.conj().T, b), atol=1e-10
    )


def test_exactly_singular_matrix_raises():
    a = sp.csr_matrix(np.diag([1.0, 0.0, 2.0]))
    with pytest.raises(SingularMatrixError):
        factor(a)


def _random_bordered(rng, n, k):
    core = _random_sparse(rng, n)
    cols = rng.standard_normal((n, k))
    rows = rng.standard_normal((k, n))
    corner = rng.standard_normal((k, k))
    return BorderedSystem(core, cols, rows, corner)


def _monolithic(system):
    n, k = system.n, system.k
    full = np.zeros((n + k, n + k))
    full[:n, :n] = system.core.toarray()
    full[:n, n:] = system.border_cols
    full[n:, :n] = system.border_rows
    full[n:, n:] = system.corner
    return full


@pytest.mark.parametrize("n,k", [(8, 1), (20, 2), (35, 3)])
def test_bordered_solve_matches_monolithic(n, k):
    rng = np.random.default_rng(100 + n)
    for _ in range(5):
        system = _random_bordered(rng, n, k)
        top = rng.standard_normal(n)
        bottom = rng.standard_normal(k)
        sol = solve_bordered(system, top, bottom)
        ref = np.linalg.solve(_monolithic(system), np.concatenate([top, bottom]))
        err = np.linalg.norm(np.concatenate([sol.x, sol.y]) - ref)
        assert err / np.linalg.norm(ref) < 1e-11


def test_bordered_core_solutions_exposed():
    rng = np.random.default_rng(7)
    system = _random_bordered(rng, 12, 2)
    sol = solve_bordered(system, rng.standard_normal(12), np.zeros(2))
    # core_border_solves holds inv(core) @ border_cols, used for tangents
    ref = np.linalg.solve(system.core.toarray(), system.border_cols)
    assert np.allclose(sol.core_border_solves, ref, atol=1e-10)


def test_singular_augmented_system_raises():
    core = sp.identity(5, format="csr")
    cols = np.zeros((5, 1))
    rows = np.zeros((1, 5))
    corner = np.zeros((1, 1))
    with pytest.raises(BorderedSingularError):
        solve_bordered(BorderedSystem(core, cols, rows, corner),
                       np.ones(5), np.zeros(1))


def test_bordered_accuracy_with_ill_conditioned_core():
    # near-singular core, well-conditioned augmented matrix: refinement keeps
    # the full-system residual at working precision
    rng = np.random.default_rng(42)
    n = 15
    a = rng.standard_normal((n, n)) + n * np.eye(n)
    u, s, vt = np.linalg.svd(a)
    s[-1] = 1e-11
    core = sp.csr_matrix(u @ np.diag(s) @ vt)
    cols = u[:, -1:].copy()
    rows = vt[-1:, :].copy()
    system = BorderedSystem(core, cols, rows, np.zeros((1, 1)))
    top = rng.standard_normal(n)
    bottom = rng.standard_normal(1)
    sol = solve_bordered(system, top, bottom)
    full = _monolithic(system)
    resid = full @ np.concatenate([sol.x, sol.y]) - np.concatenate([top, bottom])
    assert np.linalg.norm(resid) < 1e-9


def test_bordered_accepts_prebuilt_factorization():
    rng = np.random.default_rng(5)
    system = _random_bordered(rng, 10, 1)
    fact = factor(system.core)
    top = rng.standard_normal(10)
    a = solve_bordered(system, top, np.zeros(1))
    b = solve_bordered(system, top, np.zeros(1), fact=fact)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
