"""Shared oracles for the test suite.

Everything here is an independent route to a quantity the library computes
analytically: trigonometric collocation for harmonic-balance residuals and
direct time integration for orbits and monodromy.  Keeping the oracles dumb
(sampling, quadrature, dense linear algebra) is the point.
"""

import numpy as np
from scipy.integrate import solve_ivp


def sample_orbit(state, t):
    """Real state of a FourierState at time t (scalar or array)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.tile(np.real(state.coeffs[0]), (t.size, 1))
    for m in range(1, state.order + 1):
        phase = np.exp(1j * m * state.omega * t)[:, None]
        out = out + 2.0 * np.real(state.coeffs[m][None, :] * phase)
    return out


def sample_orbit_velocity(state, t):
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros((t.size, state.dim))
    for m in range(1, state.order + 1):
        phase = np.exp(1j * m * state.omega * t)[:, None]
        out = out + 2.0 * np.real(
            1j * m * state.omega * state.coeffs[m][None, :] * phase
        )
    return out


def dft_residual(problem, state, params, samples=64):
    """Fourier coefficients of M(q(t)) qdot(t) + R(q(t); a) by collocation.

    Returns an (order+1, dim) complex array in the same one-sided convention
    as the harmonic-balance residual: row 0 is the time mean, row n pairs
    with exp(i n omega t) so that f(t) = F0 + sum 2 Re(Fn exp(i n omega t)).
    """
    ts = (2.0 * np.pi / state.omega) * np.arange(samples) / samples
    qs = sample_orbit(state, ts)
    vs = sample_orbit_velocity(state, ts)
    rows = np.empty((samples, state.dim))
    for j in range(samples):
        rows[j] = problem.mass(qs[j], params, vs[j]) + problem.residual(qs[j], params)
    coeffs = np.empty((state.order + 1, state.dim), dtype=complex)
    for n in range(state.order + 1):
        phase = np.exp(-1j * n * state.omega * ts)
        coeffs[n] = (rows * phase[:, None]).mean(axis=0)
    return coeffs


def integrate_flow(problem, q0, params, t_final, rtol=1e-10, atol=1e-12):
    """Time integration of M qdot = -R for identity-mass problems."""

    def rhs(t, y):
        return -problem.residual(y, params)

    sol = solve_ivp(rhs, (0.0, t_final), np.asarray(q0, dtype=float),
                    rtol=rtol, atol=atol, max_step=0.5, dense_output=True)
    assert sol.success
    return sol


def tail_amplitude(problem, q0, params, t_final=400.0, tail=0.25, component=0):
    """Half peak-to-peak amplitude of one component over the trailing window."""
    sol = integrate_flow(problem, q0, params, t_final)
    mask = sol.t > (1.0 - tail) * t_final
    x = sol.y[component][mask]
    return 0.5 * (x.max() - x.min())


def monodromy_matrix(problem, state, params, rtol=1e-11, atol=1e-12):
    """Fundamental solution over one period along a FourierState orbit.

    Integrates the variational equation dv/dt = -J(q(t)) v with the orbit
    evaluated from its Fourier representation, columns of the identity as
    initial conditions.  Identity mass only.
    """
    n = state.dim
    T = state.period

    def rhs(t, y):
        q = sample_orbit(state, t)[0]
        jac = problem.jacobian(q, params)
        return -(jac @ y.reshape(n, n)).ravel()

    sol = solve_ivp(rhs, (0.0, T), np.eye(n).ravel(), rtol=rtol, atol=atol,
                    max_step=T / 50.0)
    assert sol.success
    return sol.y[:, -1].reshape(n, n)


def random_fourier_state(rng, dim, order, scale=0.5):
    from bifurc import FourierState

    coeffs = np.zeros((order + 1, dim), dtype=complex)
    coeffs[0] = rng.standard_normal(dim)
    for m in range(1, order + 1):
        coeffs[m] = scale * (rng.standard_normal(dim) + 1j * rng.standard_normal(dim)) / m
    return FourierState(coeffs, rng.uniform(0.5, 3.0))


def linear_test_problem(diag=(1.0, 2.0, 3.0)):
    """R = K q with constant diagonal K; spectrum of the flow is -diag."""
    import scipy.sparse as sp
    from bifurc import Parameters, ProblemDefinition

    k = np.asarray(diag, dtype=float)
    n = k.size
    kmat = sp.csr_matrix(np.diag(k))
    zero = lambda *args: np.zeros(n)
    return ProblemDefinition(
        name=f"linear_diag{n}", dim=n,
        parameters=Parameters(("a",), (0.0,), 0),
        residual=lambda q, p: kmat @ q,
        jacobian=lambda q, p: kmat,
        param_gradient=lambda q, p, j: np.zeros(n),
        hessian_apply=lambda q, p, u, v: np.zeros(n),
        third_apply=lambda q, p, u, v, w: np.zeros(n),
        mixed_param_jacobian_apply=lambda q, p, j, v: np.zeros(n),
        polynomial_degree=1,
    )
