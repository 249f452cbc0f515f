"""Harmonic-balance periodic orbits and Floquet analysis through a Hill matrix.

An orbit is a truncated Fourier series q(t) = qhat_0 + 2 Re sum_n qhat_n
e^{i n w t}.  For residuals polynomial of degree <= 3 the harmonic-balance
residual assembled here is exactly the Fourier transform of M qdot + R(q(t)):
every product term whose source harmonics all lie within the truncation is
kept, and higher harmonics of the result are projected away, so no aliasing
or quadrature error enters.

The real unknown vector is [qhat_0; Re qhat_1; Im qhat_1; ...; omega] with a
scalar phase constraint closing the square system.  The Jacobian is built
from operator harmonics Jhat_s (the Fourier coefficients of the linearized
operator around the orbit), which double as the blocks of the Hill matrix
used for Floquet exponents.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import linalg, stability
from .errors import (
    CollapsedToSteadyError,
    HBDivergenceError,
    ShiftSingularError,
    SingularMatrixError,
    UnsupportedProblemError,
)
from .continuation import StepControl, Tangent, _StepFailure, _trace_loop
from .problem import Parameters, ProblemDefinition


@dataclass
class FourierState:
    """Truncated Fourier representation of a periodic state.

    ``coeffs[m]`` is the m-th harmonic (row 0 the mean, kept real);
    harmonics for negative indices are implied conjugates.
    """

    coeffs: np.ndarray
    omega: float

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if self.coeffs.ndim != 2 or self.coeffs.shape[0] < 2:
            raise ValueError("coeffs must be (order + 1, dim) with order >= 1")
        self.omega = float(self.omega)

    @property
    def order(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.coeffs.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return np.real(self.coeffs[0])

    @property
    def period(self) -> float:
        return 2.0 * np.pi / self.omega

    def amplitude(self) -> float:
        return float(
            np.sqrt(sum(np.linalg.norm(self.coeffs[m]) ** 2
                        for m in range(1, self.order + 1)))
        )

    def copy(self) -> "FourierState":
        return FourierState(self.coeffs.copy(), self.omega)

    def conjugated(self) -> "FourierState":
        """Time-reversed representation of the same orbit (omega negated)."""
        return FourierState(np.conj(self.coeffs), -self.omega)

    def rotated(self, theta: float) -> "FourierState":
        c = self.coeffs.copy()
        for m in range(1, self.order + 1):
            c[m] = c[m] * np.exp(1j * m * theta)
        return FourierState(c, self.omega)

    def sample_time(self, t):
        """q(t) for scalar or array t, shape (..., dim)."""
        t = np.asarray(t, dtype=np.float64)
        out = np.broadcast_to(self.mean, t.shape + (self.dim,)).copy()
        for m in range(1, self.order + 1):
            phase = np.exp(1j * m * self.omega * t)[..., None]
            out += 2.0 * np.real(self.coeffs[m] * phase)
        return out

    def to_real_vector(self) -> np.ndarray:
        parts = [np.real(self.coeffs[0])]
        for m in range(1, self.order + 1):
            parts.append(np.real(self.coeffs[m]))
            parts.append(np.imag(self.coeffs[m]))
        parts.append([self.omega])
        return np.concatenate(parts)

    @classmethod
    def from_real_vector(cls, u, dim: int, order: int) -> "FourierState":
        u = np.asarray(u, dtype=np.float64)
        if u.size != (2 * order + 1) * dim + 1:
            raise ValueError("real vector length does not match (dim, order)")
        coeffs = np.zeros((order + 1, dim), dtype=np.complex128)
        coeffs[0] = u[:dim]
        pos = dim
        for m in range(1, order + 1):
            coeffs[m] = u[pos:pos + dim] + 1j * u[pos + dim:pos + 2 * dim]
            pos += 2 * dim
        return cls(coeffs, float(u[-1]))


@dataclass
class HBSettings:
    abs_tol: float = 1e-10
    rel_tol: float = 0.0
    max_iterations: int = 30
    collapse_tol: float = 1e-8
    omega_floor: float = 1e-8


def _require_hb(problem: ProblemDefinition):
    if not problem.hb_capable:
        raise UnsupportedProblemError(
            "harmonic balance needs a polynomial residual of degree <= 3"
        )


def _mass_coeffs(problem, state: FourierState, p) -> np.ndarray:
    """Harmonics m_n of the mass term, so that Fhat_n = i n w m_n + r_n.

    Constant-mass problems give m_n = M qhat_n exactly; the state-dependent
    corrections below follow the series expansion literally and are
    experimental.
    """
    C = state.coeffs
    N = state.order
    q0 = state.mean
    m = np.zeros_like(C)
    for n in range(1, N + 1):
        m[n] = problem.mass(q0, p, C[n])
    if problem.mass_jacobian_apply is not None:
        for n in range(1, N + 1):
            for j in range(1, n):
                m[n] += 0.5 * problem.dmass_state(q0, p, C[j], C[n - j])
            for j in range(1, N + 1):
                for k in range(1, N + 1):
                    if 1 <= j + k - n <= N:
                        m[n] += 0.5 * problem.dmass_state2(
                            q0, p, C[j], C[k], np.conj(C[j + k - n])
                        )
                    if 1 <= j - k - n <= N:
                        m[n] += 0.5 * problem.dmass_state2(
                            q0, p, C[j], np.conj(C[k]), np.conj(C[j - k - n])
                        )
            for j in range(1, n):
                for k in range(1, n - j):
                    if n - j - k >= 1:
                        m[n] += (1.0 / 6.0) * problem.dmass_state2(
                            q0, p, C[j], C[k], C[n - j - k]
                        )
    return m


def hb_residual(problem: ProblemDefinition, state: FourierState, p) -> np.ndarray:
    """Complex harmonics Fhat_n of M qdot + R(q(t)), rows n = 0..order.

    Exact for polynomial residuals of degree <= 3 (see module docstring);
    row 0 is real up to roundoff.
    """
    _require_hb(problem)
    C = state.coeffs
    N = state.order
    q0 = state.mean
    omega = state.omega
    H = problem.hessian_apply
    T3 = problem.third_apply

    F = np.zeros_like(C)
    r0 = problem.residual(q0, p).astype(np.complex128)
    for j in range(1, N + 1):
        r0 += H(q0, p, C[j], np.conj(C[j]))
    for j in range(1, N + 1):
        for k in range(1, N + 1 - j):
            s = j + k
            term = T3(q0, p, C[j], C[k], np.conj(C[s]))
            r0 += 0.5 * (term + np.conj(term))
    F[0] = r0

    jac = problem.jacobian(q0, p)
    mcoef = _mass_coeffs(problem, state, p)
    for n in range(1, N + 1):
        r = jac @ C[n]
        for j in range(1, n):
            r += 0.5 * H(q0, p, C[j], C[n - j])
        for j in range(n + 1, N + 1):
            r += H(q0, p, C[j], np.conj(C[j - n]))
        for j in range(1, n - 1):
            for k in range(1, n - j):
                l = n - j - k
                if l >= 1:
                    r += (1.0 / 6.0) * T3(q0, p, C[j], C[k], C[l])
        for j in range(1, N + 1):
            for k in range(1, N + 1):
                if 1 <= j + k - n <= N:
                    r += 0.5 * T3(q0, p, C[j], C[k], np.conj(C[j + k - n]))
                if 1 <= j - k - n <= N:
                    r += 0.5 * T3(q0, p, C[j], np.conj(C[k]),
                                  np.conj(C[j - k - n]))
        F[n] = 1j * n * omega * mcoef[n] + r
    return F


def _phase_rows(problem, ref: FourierState, p) -> np.ndarray:
    """Frozen phase-constraint vectors d_n = i n m_n at the reference state,
    scaled to unit overall norm."""
    m = _mass_coeffs(problem, ref, p)
    d = np.zeros_like(m)
    for n in range(1, ref.order + 1):
        d[n] = 1j * n * m[n]
    scale = np.sqrt(sum(np.linalg.norm(d[n]) ** 2 for n in range(1, ref.order + 1)))
    if scale > 0.0:
        d /= scale
    return d


def phase_constraint(state: FourierState, d: np.ndarray) -> float:
    """c = sum_n Re <d_n, qhat_n>, zero at the reference by construction."""
    c = 0.0
    for n in range(1, state.order + 1):
        c += float(np.real(np.vdot(d[n], state.coeffs[n])))
    return c


def hb_residual_real(problem, state, p, d) -> np.ndarray:
    """Stacked real residual [Fhat_0; Re/Im Fhat_n ...; phase] matching the
    real unknown layout of FourierState.to_real_vector."""
    F = hb_residual(problem, state, p)
    parts = [np.real(F[0])]
    for n in range(1, state.order + 1):
        parts.append(np.real(F[n]))
        parts.append(np.imag(F[n]))
    parts.append([phase_constraint(state, d)])
    return np.concatenate(parts)


def operator_harmonics(problem, state: FourierState, p) -> list:
    """Fourier coefficients Jhat_s (s = 0..2 order) of the operator
    d_q R(q(t)): Jhat_s = J(qhat_0) delta_s0 + H(qhat_s, .) +
    1/2 sum_{k+l=s} T3(qhat_k, qhat_l, .), with negative harmonic indices
    meaning conjugates.  Jhat_{-s} = conj(Jhat_s).
    """
    _require_hb(problem)
    C = state.coeffs
    N = state.order
    n = state.dim
    q0 = state.mean
    eye = np.eye(n)

    def signed(k):
        return C[k] if k >= 0 else np.conj(C[-k])

    def apply_matrix(fn):
        cols = [fn(eye[i]) for i in range(n)]
        return sp.csr_matrix(np.column_stack(cols))

    out = []
    for s in range(0, 2 * N + 1):
        total = sp.csr_matrix((n, n), dtype=np.complex128)
        if s == 0:
            total = problem.jacobian(q0, p).astype(np.complex128)
        elif s <= N:
            total = total + apply_matrix(
                lambda e: problem.hessian_apply(q0, p, C[s], e)
            )
        pairs = []
        for k in range(-N, N + 1):
            l = s - k
            if k == 0 or l == 0 or abs(l) > N or k > l:
                continue
            pairs.append((k, l))
        for k, l in pairs:
            weight = 0.5 if k == l else 1.0
            u, v = signed(k), signed(l)
            total = total + weight * apply_matrix(
                lambda e: problem.third_apply(q0, p, u, v, e)
            )
        out.append(total.tocsr())
    return out


def hb_jacobian(problem, state: FourierState, p, d) -> sp.csr_matrix:
    """Real sparse Jacobian of hb_residual_real at the current state.

    Wirtinger blocks: with B = dFhat_n / dqhat_m and C = dFhat_n / dqhat_m*,
    Re dF = Re(B+C) dx - Im(B-C) dy and Im dF = Im(B+C) dx + Re(B-C) dy.
    For constant mass the blocks are exactly the operator harmonics plus the
    i n w M diagonal; state-dependent mass falls back to finite differences.
    """
    if problem.mass_jacobian_apply is not None:
        return _fd_jacobian(problem, state, p, d)
    N = state.order
    n = state.dim
    q0 = state.mean
    omega = state.omega
    Js = operator_harmonics(problem, state, p)
    mass = problem.mass_matrix(q0, p).astype(np.complex128)
    mcoef = _mass_coeffs(problem, state, p)

    def jsig(s):
        return Js[s] if s >= 0 else np.conj(Js[-s])

    nblocks = 2 * N + 2
    grid = [[None] * nblocks for _ in range(nblocks)]

    def row_ids(neq):
        # (real row, imag row) block indices for equation harmonic neq
        return (0, None) if neq == 0 else (2 * neq - 1, 2 * neq)

    def col_ids(mun):
        return (0, None) if mun == 0 else (2 * mun - 1, 2 * mun)

    def add(i, j, block):
        block = sp.csr_matrix(block)
        grid[i][j] = block if grid[i][j] is None else grid[i][j] + block

    zero = sp.csr_matrix((n, n), dtype=np.complex128)
    for neq in range(0, N + 1):
        r_re, r_im = row_ids(neq)
        for mun in range(0, N + 1):
            c_re, c_im = col_ids(mun)
            if mun == 0:
                B = jsig(neq)
                add(r_re, c_re, B.real)
                if r_im is not None:
                    add(r_im, c_re, B.imag)
                continue
            B = jsig(neq - mun)
            Cc = jsig(neq + mun) if neq + mun <= 2 * N else zero
            if neq == mun:
                B = B + 1j * neq * omega * mass
            plus, minus = (B + Cc).tocsr(), (B - Cc).tocsr()
            add(r_re, c_re, plus.real)
            add(r_re, c_im, -minus.imag)
            if r_im is not None:
                add(r_im, c_re, plus.imag)
                add(r_im, c_im, minus.real)

    # assemble the (2N+1)n block square, then border with omega column and
    # phase row
    core = sp.bmat(
        [[grid[i][j] if grid[i][j] is not None
          else sp.csr_matrix((n, n)) for j in range(nblocks - 1)]
         for i in range(nblocks - 1)],
        format="csr",
    )
    wcol = np.zeros(core.shape[0])
    for neq in range(1, N + 1):
        dfdw = 1j * neq * mcoef[neq]
        r_re, r_im = row_ids(neq)
        wcol[r_re * n:(r_re + 1) * n] = np.real(dfdw)
        wcol[r_im * n:(r_im + 1) * n] = np.imag(dfdw)
    prow = np.zeros(core.shape[0])
    for mun in range(1, N + 1):
        c_re, c_im = col_ids(mun)
        prow[c_re * n:(c_re + 1) * n] = np.real(d[mun])
        prow[c_im * n:(c_im + 1) * n] = np.imag(d[mun])
    full = sp.bmat(
        [[core, wcol[:, None]], [prow[None, :], np.zeros((1, 1))]],
        format="csr",
    )
    return full


def _fd_jacobian(problem, state, p, d, step=None):
    """Central-difference Jacobian over the real unknowns (experimental
    state-dependent-mass path)."""
    u0 = state.to_real_vector()
    m = u0.size
    if step is None:
        step = np.cbrt(np.finfo(float).eps)
    cols = np.empty((m, m))
    for i in range(m):
        h = step * max(1.0, abs(u0[i]))
        up, um = u0.copy(), u0.copy()
        up[i] += h
        um[i] -= h
        sp_ = FourierState.from_real_vector(up, state.dim, state.order)
        sm_ = FourierState.from_real_vector(um, state.dim, state.order)
        cols[:, i] = (
            hb_residual_real(problem, sp_, p, d)
            - hb_residual_real(problem, sm_, p, d)
        ) / (2.0 * h)
    return sp.csr_matrix(cols)


@dataclass
class HBResult:
    state: FourierState
    converged: bool
    iterations: int
    residual_norms: list


def hb_solve(
    problem: ProblemDefinition,
    state0: FourierState,
    params: Parameters | None = None,
    settings: HBSettings | None = None,
) -> HBResult:
    """Newton iteration on the square real harmonic-balance system.

    The phase constraint is frozen at the initial guess.  Raises
    HBDivergenceError (with the residual-norm history) if the budget runs
    out, and CollapsedToSteadyError when the converged orbit has no harmonic
    content left.  The returned state always has omega > 0 (a negative
    frequency is folded by conjugating the harmonics, which represents the
    same orbit).
    """
    _require_hb(problem)
    p = params if params is not None else problem.parameters
    st = settings or HBSettings()
    state = state0.copy()
    d = _phase_rows(problem, state0, p)
    norms = []
    tol = None
    for it in range(st.max_iterations):
        G = hb_residual_real(problem, state, p, d)
        gnorm = float(np.linalg.norm(G))
        norms.append(gnorm)
        if tol is None:
            tol = max(st.abs_tol, st.rel_tol * gnorm)
        if not np.isfinite(gnorm):
            raise HBDivergenceError("non-finite harmonic-balance residual", norms)
        if gnorm <= tol:
            return _finish_hb(state, it, norms, st)
        jac = hb_jacobian(problem, state, p, d)
        try:
            fact = linalg.factor(jac)
        except SingularMatrixError as exc:
            raise HBDivergenceError(
                f"singular harmonic-balance Jacobian: {exc}", norms
            ) from exc
        du = fact.solve(G)
        u = state.to_real_vector() - du
        state = FourierState.from_real_vector(u, state.dim, state.order)
        if abs(state.omega) < st.omega_floor:
            raise HBDivergenceError("frequency collapsed during solve", norms)
        if state.omega < 0.0:
            state = state.conjugated()
    raise HBDivergenceError(
        f"harmonic balance did not converge in {st.max_iterations} iterations",
        norms,
    )


def _finish_hb(state, iterations, norms, st):
    if state.omega < 0.0:
        state = state.conjugated()
    scale = max(1.0, float(np.linalg.norm(state.mean)))
    if state.amplitude() < st.collapse_tol * scale:
        raise CollapsedToSteadyError(
            "orbit collapsed onto the steady state during the solve"
        )
    return HBResult(state, True, iterations, norms)


def _hb_param_gradient(problem, state, p, d, j):
    """d/dalpha_j of the real residual by central differences (the
    parameter enters the assembled harmonics in too many places to be worth
    hand-differentiating)."""
    h = np.cbrt(np.finfo(float).eps) * max(1.0, abs(p.values[j]))
    name = p.names[j]
    gp = hb_residual_real(problem, state, p.with_value(name, p.values[j] + h), d)
    gm = hb_residual_real(problem, state, p.with_value(name, p.values[j] - h), d)
    return (gp - gm) / (2.0 * h)


@dataclass
class HBBranchPoint:
    state: FourierState
    params: Parameters
    corrector_iterations: int
    step: float

    @property
    def alpha(self) -> float:
        return self.params.active_value


@dataclass
class HBBranch:
    points: list = field(default_factory=list)
    status: str = "max-points"


def hb_trace_branch(
    problem: ProblemDefinition,
    state0: FourierState,
    params: Parameters | None = None,
    control: StepControl | None = None,
    settings: HBSettings | None = None,
    param_range=(-np.inf, np.inf),
    max_points: int = 50,
) -> HBBranch:
    """Continue a periodic orbit in the active parameter.

    Moore-Penrose stepping over the full real harmonic vector: the corrector
    borders the harmonic-balance Jacobian with the parameter-gradient column
    and the tangent row, and the tangent refreshes each iteration from the
    border-column solve.  The phase reference is refrozen at each accepted
    point.
    """
    _require_hb(problem)
    p0 = params if params is not None else problem.parameters
    control = control or StepControl()
    st = settings or HBSettings()

    start = hb_solve(problem, state0, p0, st)
    ref = {"d": _phase_rows(problem, start.state, p0)}
    dim, order = start.state.dim, start.state.order

    def unpack(x):
        return FourierState.from_real_vector(x, dim, order)

    def tangent_from(fact, problem_, state_, p_):
        col = _hb_param_gradient(problem_, state_, p_, ref["d"], p_.active_index)
        return Tangent(y_q=fact.solve(col), y_alpha=-1.0), col

    def correct(x_guess, s_guess, tan):
        state = unpack(x_guess)
        p = p0.with_active_value(s_guess)
        norms = []
        for it in range(st.max_iterations):
            G = hb_residual_real(problem, state, p, ref["d"])
            gnorm = float(np.linalg.norm(G))
            norms.append(gnorm)
            if not np.isfinite(gnorm):
                raise HBDivergenceError("non-finite orbit iterate", norms)
            if gnorm <= st.abs_tol:
                return state, p, tan, it
            jac = hb_jacobian(problem, state, p, ref["d"])
            col = _hb_param_gradient(problem, state, p, ref["d"], p.active_index)
            system = linalg.BorderedSystem(
                jac, col[:, None], tan.y_q[None, :],
                np.array([[tan.y_alpha]]),
            )
            fact = linalg.factor(jac)
            sol = linalg.solve_bordered(system, G, np.zeros(1), fact=fact)
            u = state.to_real_vector() - sol.x
            state = FourierState.from_real_vector(u, dim, order)
            p = p.with_active_value(p.active_value - float(sol.y[0]))
            fresh = Tangent(y_q=sol.core_border_solves[:, 0], y_alpha=-1.0)
            if fresh.dot(tan) < 0.0:
                fresh = fresh.flipped()
            tan = fresh
            if state.omega < 0.0:
                raise HBDivergenceError("frequency sign flipped on branch", norms)
        raise HBDivergenceError("orbit corrector did not converge", norms)

    def attempt(x, s, tan, h):
        scale = h / tan.norm
        x_guess = x + scale * tan.y_q
        s_guess = s + scale * tan.y_alpha
        try:
            state, p, tan_new, iters = correct(x_guess, s_guess, tan)
            # orbit must keep harmonic content while tracing
            if state.amplitude() < st.collapse_tol * max(
                1.0, float(np.linalg.norm(state.mean))
            ):
                raise CollapsedToSteadyError("orbit amplitude vanished on branch")
        except (HBDivergenceError, SingularMatrixError,
                CollapsedToSteadyError) as exc:
            raise _StepFailure(str(exc)) from exc
        ref["d"] = _phase_rows(problem, state, p)
        jac = hb_jacobian(problem, state, p, ref["d"])
        fact = linalg.factor(jac)
        exact_tan, _ = tangent_from(fact, problem, state, p)
        if exact_tan.dot(tan_new) < 0.0:
            exact_tan = exact_tan.flipped()
        return state.to_real_vector(), p.active_value, exact_tan, iters

    jac0 = hb_jacobian(problem, start.state, p0, ref["d"])
    tan0, _ = tangent_from(linalg.factor(jac0), problem, start.state, p0)
    entries, status = _trace_loop(
        start.state.to_real_vector(), p0.active_value, tan0, attempt, control,
        param_range, max_points,
    )
    branch = HBBranch(status=status)
    for x, s, tan, iters, h in entries:
        branch.points.append(
            HBBranchPoint(unpack(x), p0.with_active_value(s), iters, h)
        )
    return branch


def hill_matrices(problem, state: FourierState, p, order: int | None = None):
    """Real Galerkin matrices of the linearization around the orbit.

    Basis {1, cos(m w t), sin(m w t)} for m = 1..order per component, block
    layout [const, cos_1, sin_1, ...].  Returns (H, M) with
    H v = <M v' + d_q R(q(t)) v> and M = blockdiag(mass); Floquet exponents
    solve (lambda M + H) u = 0.
    """
    if problem.mass_jacobian_apply is not None:
        raise UnsupportedProblemError(
            "Hill matrices require a state-independent mass operator"
        )
    N = state.order
    Nh = order if order is not None else N
    n = state.dim
    omega = state.omega
    q0 = state.mean
    Js = operator_harmonics(problem, state, p)
    P = [Js[0].real.tocsr()]
    Q = [None]
    for s in range(1, 2 * N + 1):
        P.append((2.0 * Js[s].real).tocsr())
        Q.append((-2.0 * Js[s].imag).tocsr())
    mass = problem.mass_matrix(q0, p).tocsr()

    nb = 2 * Nh + 1
    grid = [[None] * nb for _ in range(nb)]

    def add(i, j, block):
        grid[i][j] = block.copy() if grid[i][j] is None else grid[i][j] + block

    CONST = 0

    def cos_ix(m):
        return 2 * m - 1

    def sin_ix(m):
        return 2 * m

    # diagonal mean operator
    for b in range(nb):
        add(b, b, P[0])
    # time-derivative coupling within each harmonic
    for m in range(1, Nh + 1):
        add(cos_ix(m), sin_ix(m), m * omega * mass)
        add(sin_ix(m), cos_ix(m), -m * omega * mass)
    # oscillatory operator harmonics times basis functions, projected back
    for s in range(1, 2 * N + 1):
        Ps, Qs = P[s], Q[s]
        if s <= Nh:
            add(cos_ix(s), CONST, Ps)
            add(sin_ix(s), CONST, Qs)
        for m in range(1, Nh + 1):
            # cos_s * cos_m and sin_s * cos_m
            dlo, dhi = abs(s - m), s + m
            if dlo == 0:
                add(CONST, cos_ix(m), 0.5 * Ps)
            elif dlo <= Nh:
                add(cos_ix(dlo), cos_ix(m), 0.5 * Ps)
            if dhi <= Nh:
                add(cos_ix(dhi), cos_ix(m), 0.5 * Ps)
            e1 = s - m
            if e1 > 0 and e1 <= Nh:
                add(sin_ix(e1), cos_ix(m), 0.5 * Qs)
            elif e1 < 0 and -e1 <= Nh:
                add(sin_ix(-e1), cos_ix(m), -0.5 * Qs)
            if dhi <= Nh:
                add(sin_ix(dhi), cos_ix(m), 0.5 * Qs)
            # cos_s * sin_m and sin_s * sin_m
            f1 = m - s
            if f1 > 0 and f1 <= Nh:
                add(sin_ix(f1), sin_ix(m), 0.5 * Ps)
            elif f1 < 0 and -f1 <= Nh:
                add(sin_ix(-f1), sin_ix(m), -0.5 * Ps)
            if dhi <= Nh:
                add(sin_ix(dhi), sin_ix(m), 0.5 * Ps)
            if dlo == 0:
                add(CONST, sin_ix(m), 0.5 * Qs)
            elif dlo <= Nh:
                add(cos_ix(dlo), sin_ix(m), 0.5 * Qs)
            if dhi <= Nh:
                add(cos_ix(dhi), sin_ix(m), -0.5 * Qs)

    hmat = sp.bmat(
        [[grid[i][j] if grid[i][j] is not None
          else sp.csr_matrix((n, n)) for j in range(nb)] for i in range(nb)],
        format="csr",
    )
    mhill = sp.block_diag([mass] * nb, format="csr")
    return hmat, mhill


def phase_mode_vector(state: FourierState, order: int | None = None) -> np.ndarray:
    """qdot(t) in the Hill basis: the exact zero-exponent mode of the orbit."""
    N = state.order
    Nh = order if order is not None else N
    n = state.dim
    omega = state.omega
    out = np.zeros((2 * Nh + 1) * n)
    for m in range(1, min(N, Nh) + 1):
        a = -2.0 * m * omega * np.imag(state.coeffs[m])
        b = -2.0 * m * omega * np.real(state.coeffs[m])
        out[(2 * m - 1) * n:(2 * m) * n] = a
        out[(2 * m) * n:(2 * m + 1) * n] = b
    nrm = np.linalg.norm(out)
    return out / nrm if nrm > 0 else out


@dataclass
class FloquetPair:
    """Floquet exponent with its Hill-basis mode."""

    value: complex
    mode: np.ndarray
    residual: float
    phase_overlap: float = 0.0
    is_phase: bool = False
    in_principal_strip: bool = True


def floquet(
    problem: ProblemDefinition,
    state: FourierState,
    params: Parameters | None = None,
    nev: int = 8,
    order: int | None = None,
    shift: complex = 0.0,
    method: str = "auto",
) -> list:
    """Floquet exponents of the orbit from the Hill pencil.

    Exponents repeat in vertical towers spaced by i omega; pairs inside the
    principal strip |Im| <= omega/2 are flagged, and the translational
    (phase) mode is tagged by its overlap with qdot.
    """
    p = params if params is not None else problem.parameters
    hmat, mhill = hill_matrices(problem, state, p, order=order)
    try:
        pairs = stability.solve_pencil(
            hmat, mhill, shift=shift, nev=nev, method=method
        )
    except ShiftSingularError:
        pairs = stability.solve_pencil(
            hmat, mhill, shift=shift + 1e-3 * state.omega * (1.0 + 0.37j),
            nev=nev, method=method,
        )
    vph = phase_mode_vector(state, order=order)
    out = []
    for pr in pairs:
        ov = abs(np.vdot(vph, pr.mode))
        strip = abs(pr.value.imag) <= 0.5 * state.omega * (1.0 + 1e-9)
        out.append(
            FloquetPair(
                value=pr.value, mode=pr.mode, residual=pr.residual,
                phase_overlap=float(ov), in_principal_strip=bool(strip),
            )
        )
    small = [fp for fp in out if abs(fp.value) <= 0.5 * state.omega]
    if small:
        best = max(small, key=lambda fp: fp.phase_overlap)
        if best.phase_overlap > 0.1:
            best.is_phase = True
    return out


def classify_orbit(pairs, sigma_tol: float = 1e-6) -> str:
    """Stability of the orbit from its principal-strip exponents, ignoring
    the phase mode."""
    watched = [fp for fp in pairs if fp.in_principal_strip and not fp.is_phase]
    if any(fp.value.real > sigma_tol for fp in watched):
        return "unstable"
    if any(abs(fp.value.real) <= sigma_tol for fp in watched):
        return "marginal"
    return "stable"
