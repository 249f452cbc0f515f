"""Location, classification, and two-parameter tracing of bifurcations.

A bifurcation of the steady problem is pinned down by a minimally augmented
system: the steady residual plus a scalar criticality function ``g`` that
vanishes exactly when ``T = i omega M + d_q R`` is singular.  ``g`` comes
from one bordered solve with the current mode seeds, and its exact
derivatives come from one adjoint solve, so each Newton iteration on the
augmented system costs a handful of factorizations regardless of how ``g``
is wired internally.

Conventions: eigenvalues solve ``[lambda M + d_q R] qhat = 0``; the adjoint
mode is normalized so ``<qdag, M qhat> = 1`` with the Hermitian pairing
``<a, b> = conj(a) . b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import linalg, stability
from .continuation import (
    StepControl,
    Tangent,
    _detect_crossings,
    _StepFailure,
    _trace_loop,
)
from .errors import (
    BorderedSingularError,
    LocatorDivergenceError,
    NoOrbitPredictedError,
    ReclassifyCandidateError,
    ResonanceError,
    SingularMatrixError,
)
from .problem import Parameters, ProblemDefinition


@dataclass
class LocatorSettings:
    res_tol: float = 1e-10
    g_tol: float = 1e-10
    max_iterations: int = 40
    class_tol: float = 1e-6
    omega_floor: float = 1e-8
    refine: int = 3


@dataclass
class BifPoint:
    """Converged bifurcation point with its critical mode pair."""

    kind: str  # "hopf" | "fold" | "pitchfork"
    q: np.ndarray
    params: Parameters
    omega: float
    mode: np.ndarray
    adjoint: np.ndarray
    g_history: list
    iterations: int

    @property
    def value(self) -> complex:
        return 1j * self.omega


def _regularized_factor(matrix, scale_hint=1.0):
    """Factor a (possibly exactly singular) real core, nudging the diagonal
    by a tiny multiple of the matrix scale until the factorization exists.
    Callers refine against the true matrix, so the nudge only perturbs the
    preconditioner, not the answers."""
    try:
        return linalg.factor(matrix)
    except SingularMatrixError:
        pass
    n = matrix.shape[0]
    base = max(float(abs(matrix).sum(axis=1).max()), scale_hint)
    delta = 1e-12 * base
    for _ in range(4):
        try:
            return linalg.factor(matrix + delta * sp.identity(n, format="csr"))
        except SingularMatrixError:
            delta *= 1e3
    raise SingularMatrixError("core factorization failed even with regularization")


def _factor_T(jac, mass, omega):
    """Factorization of T = i omega M + J (real path when omega == 0)."""
    if omega == 0.0:
        return _regularized_factor(jac), True
    wm = (omega * mass).tocsr()
    try:
        return linalg.factor_complex(jac, wm), False
    except SingularMatrixError:
        n = jac.shape[0]
        base = float(abs(jac).sum(axis=1).max()) + abs(omega) * float(
            abs(mass).sum(axis=1).max()
        )
        delta = 1e-12 * max(base, 1.0)
        for _ in range(4):
            try:
                fact = linalg.factor_complex(
                    jac + delta * sp.identity(n, format="csr"), wm
                )
                return fact, False
            except SingularMatrixError:
                delta *= 1e3
        raise


def _g_and_modes(problem, q, p, omega, vseed, wseed, mass):
    """Criticality value and raw bordered modes at the current iterate.

    Solves T qhat = g M wseed with <M vseed, qhat> = 1 and the adjoint
    analogue, via one direct and one adjoint solve of T.  The raw modes make
    dg/dmu = <qdag, (dT/dmu) qhat> exact with no extra normalization.
    """
    jac = problem.jacobian(q, p)
    fact, real_path = _factor_T(jac, mass, omega)
    b = mass @ wseed
    c = mass @ vseed
    if real_path:
        xb = fact.solve(np.real(b))
        ya = fact.solve(np.real(c), transpose=True)
    else:
        xb = fact.solve(b.astype(np.complex128))
        ya = fact.solve(c.astype(np.complex128), adjoint=True)
    denom = np.vdot(c, xb)
    if abs(denom) < 1e-300:
        raise BorderedSingularError("criticality borders collapsed")
    g = 1.0 / denom
    qhat = g * xb
    qdag = np.conj(g) * ya
    return g, qhat, qdag, jac


def _g_state_row(problem, q, p, omega, qhat, qdag, mass):
    """Row of dg/dq_i = <qdag, (i w dM(e_i) + d_qq R(e_i, .)) qhat>."""
    n = problem.dim
    row = np.empty(n, dtype=np.complex128)
    basis = np.eye(n)
    for i in range(n):
        vec = problem.hessian_apply(q, p, basis[i], qhat)
        if omega != 0.0 and problem.mass_jacobian_apply is not None:
            vec = vec + 1j * omega * problem.dmass_state(q, p, basis[i], qhat)
        row[i] = np.vdot(qdag, vec)
    return row


def _g_param_derivative(problem, q, p, j, omega, qhat, qdag):
    vec = problem.mixed_param_jacobian_apply(q, p, j, qhat)
    if omega != 0.0 and problem.mass_param_gradient_apply is not None:
        vec = vec + 1j * omega * problem.dmass_param(q, p, j, qhat)
    return np.vdot(qdag, vec)


def classify_zero_eigenvalue(problem, q, p, qdag, qhat, class_tol=1e-6) -> str:
    """Fold if the adjoint mode sees the parameter forcing, else pitchfork.

    The forcing norm is floored against the mixed state-parameter derivative
    along the mode, so a forcing that vanishes at the point itself (the
    symmetric-branch signature) classifies as a pitchfork even when roundoff
    leaves it slightly nonzero.
    """
    dr = problem.param_gradient(q, p, p.active_index)
    scale = float(np.linalg.norm(dr))
    mixed = abs(np.vdot(qdag, problem.mixed_param_jacobian_apply(
        q, p, p.active_index, qhat)))
    if scale <= class_tol * (scale + mixed):
        return "pitchfork"
    proj = abs(np.vdot(qdag, dr))
    return "fold" if proj > class_tol * scale else "pitchfork"


def _auto_seeds(problem, q, p, omega):
    shift = 1j * omega if omega > 0.0 else 0.0
    pairs = stability.eigs(
        problem, q, p, shift=shift, nev=6, want_adjoint=True
    )
    target = 1j * omega
    best = min(pairs, key=lambda pr: abs(pr.value - target))
    return best.mode.astype(np.complex128), best.adjoint.astype(np.complex128)


def locate_bifurcation(
    problem: ProblemDefinition,
    q0,
    params: Parameters,
    kind: str = "steady",
    omega0: float = 0.0,
    mode0=None,
    adjoint0=None,
    settings: LocatorSettings | None = None,
) -> BifPoint:
    """Newton iteration on the minimally augmented system.

    ``kind="hopf"`` solves for (q, alpha, omega) with the complex
    criticality function contributing two real rows; any other kind solves
    for (q, alpha) at omega = 0 and the result is classified as fold or
    pitchfork from the adjoint mode's overlap with the parameter forcing.

    Convergence requires both the steady residual and |g| below tolerance,
    checked before each solve so an exactly singular final Jacobian is never
    factored.  Non-convergence raises LocatorDivergenceError with the |g|
    history; a Hopf iteration whose frequency collapses raises
    ReclassifyCandidateError so the caller can relocate at omega = 0.
    """
    st = settings or LocatorSettings()
    is_hopf = kind == "hopf"
    q = np.asarray(q0, dtype=np.float64).copy()
    p = params
    omega = float(omega0) if is_hopf else 0.0
    if is_hopf and omega <= 0.0:
        raise ValueError("hopf location needs omega0 > 0")
    if mode0 is None or adjoint0 is None:
        mode0, adjoint0 = _auto_seeds(problem, q, p, omega)
    wseed = np.asarray(mode0, dtype=np.complex128)
    vseed = np.asarray(adjoint0, dtype=np.complex128)
    mass = problem.mass_matrix(q, p)
    g_history = []
    qhat = wseed
    qdag = vseed
    for it in range(st.max_iterations):
        res = problem.residual(q, p)
        rnorm = float(np.linalg.norm(res))
        mass = problem.mass_matrix(q, p)
        g, qhat, qdag, jac = _g_and_modes(problem, q, p, omega, vseed, wseed, mass)
        g_history.append(abs(g))
        if not np.isfinite(rnorm) or not np.isfinite(abs(g)):
            raise LocatorDivergenceError("non-finite locator iterate", g_history)
        if rnorm <= st.res_tol and abs(g) <= st.g_tol:
            return _finalize_point(
                problem, q, p, omega, qhat, qdag, mass, g_history, it, is_hopf, st
            )
        row_q = _g_state_row(problem, q, p, omega, qhat, qdag, mass)
        d_alpha = _g_param_derivative(
            problem, q, p, p.active_index, omega, qhat, qdag
        )
        galpha = problem.param_gradient(q, p, p.active_index)
        if is_hopf:
            d_omega = np.vdot(qdag, 1j * (mass @ qhat))
            cols = np.column_stack([galpha, np.zeros_like(galpha)])
            rows = np.vstack([row_q.real, row_q.imag])
            corner = np.array(
                [[d_alpha.real, d_omega.real], [d_alpha.imag, d_omega.imag]]
            )
            rhs_bot = np.array([g.real, g.imag])
        else:
            cols = galpha[:, None]
            rows = np.real(row_q)[None, :]
            corner = np.array([[np.real(d_alpha)]])
            rhs_bot = np.array([np.real(g)])
        system = linalg.BorderedSystem(jac, cols, rows, corner)
        fact = _regularized_factor(jac)
        sol = linalg.solve_bordered(system, res, rhs_bot, fact=fact, refine=st.refine)
        q = q - sol.x
        p = p.with_active_value(p.active_value - float(sol.y[0]))
        if is_hopf:
            omega -= float(sol.y[1])
            if omega < 0.0:
                omega = -omega
                qhat = np.conj(qhat)
                qdag = np.conj(qdag)
            if omega < st.omega_floor:
                raise ReclassifyCandidateError(
                    "frequency collapsed during hopf location; "
                    "relocate as a zero-eigenvalue point"
                )
        wseed = qhat / max(np.linalg.norm(qhat), 1e-300)
        vseed = qdag / max(np.linalg.norm(qdag), 1e-300)
    raise LocatorDivergenceError(
        f"locator did not converge in {st.max_iterations} iterations", g_history
    )


def _finalize_point(
    problem, q, p, omega, qhat, qdag, mass, g_history, iterations, is_hopf, st
):
    mnorm = np.sqrt(abs(np.vdot(qhat, mass @ qhat)))
    qhat = qhat / mnorm
    k = int(np.argmax(np.abs(qhat)))
    phase = qhat[k] / abs(qhat[k])
    qhat = qhat / phase
    qdag = qdag / phase
    pairing = np.vdot(qdag, mass @ qhat)
    qdag = qdag / np.conj(pairing)
    if is_hopf:
        kind = "hopf"
    else:
        qhat = np.real(qhat)
        qdag = np.real(qdag)
        kind = classify_zero_eigenvalue(problem, q, p, qdag, qhat, st.class_tol)
    return BifPoint(
        kind=kind,
        q=q,
        params=p,
        omega=omega,
        mode=qhat,
        adjoint=qdag,
        g_history=g_history,
        iterations=iterations,
    )


def locate_from_candidate(problem, candidate, settings=None) -> BifPoint:
    """Run the locator seeded by a secant-refined candidate."""
    omega = candidate.omega
    kind = "hopf" if omega > 1e-6 else "steady"
    return locate_bifurcation(
        problem,
        candidate.q,
        candidate.params,
        kind=kind,
        omega0=omega,
        mode0=candidate.mode,
        adjoint0=candidate.adjoint,
        settings=settings,
    )


@dataclass
class NormalForm:
    """Reduced amplitude dynamics at a bifurcation point.

    ``dA/dt = sum_j param_coeffs[j] dalpha_j A^m + beta A^k`` with (m, k) =
    (0, 2) at a fold and (1, 3) at a Hopf or pitchfork; for a Hopf the
    coefficients are complex and A is the complex amplitude of the critical
    mode.
    """

    kind: str
    omega: float
    param_coeffs: dict
    beta: complex

    @property
    def supercritical(self):
        if self.kind == "fold":
            return None
        return bool(self.beta.real < 0.0)


def _deflated_solve(fact, jac, border, rhs, refine=3):
    """Solve J x = rhs with J singular along ``border``; the bordered system
    pins the component along the critical mode to zero."""
    system = linalg.BorderedSystem(
        jac, border[:, None], border[None, :].conj(), np.zeros((1, 1))
    )
    if np.iscomplexobj(rhs) or np.iscomplexobj(border):
        xr = linalg.solve_bordered(system, np.real(rhs), np.zeros(1), fact=fact,
                                   refine=refine)
        xi = linalg.solve_bordered(system, np.imag(rhs), np.zeros(1), fact=fact,
                                   refine=refine)
        return xr.x + 1j * xi.x
    sol = linalg.solve_bordered(system, rhs, np.zeros(1), fact=fact, refine=refine)
    return sol.x


def normal_form(
    problem: ProblemDefinition, point: BifPoint, settings: LocatorSettings | None = None
) -> NormalForm:
    """Normal-form coefficients from the located mode pair.

    Fold: quadratic coefficient ``beta = -1/2 <qdag, H(qhat, qhat)>`` and
    constant forcing ``-<qdag, d_alpha R>`` per parameter.

    Hopf and pitchfork: the eigenvalue drift per parameter is the total
    derivative along the steady branch (chain rule through the state), and
    ``beta`` is the cubic coefficient built from the second and third
    directional derivatives with the two standard resolvent solves.  At a
    pitchfork the resolvents are taken orthogonal to the critical mode
    through a bordered solve.  A singular double-frequency solve raises
    ResonanceError.
    """
    st = settings or LocatorSettings()
    q, p, omega = point.q, point.params, point.omega
    qhat = point.mode.astype(np.complex128)
    qdag = point.adjoint.astype(np.complex128)
    mass = problem.mass_matrix(q, p)
    jac = problem.jacobian(q, p)
    names = p.names

    if point.kind == "fold":
        coeffs = {}
        for j, name in enumerate(names):
            coeffs[name] = complex(-np.vdot(qdag, problem.param_gradient(q, p, j)))
        h_qq = problem.hessian_apply(q, p, np.real(qhat), np.real(qhat))
        beta = complex(-0.5 * np.vdot(qdag, h_qq))
        return NormalForm("fold", 0.0, coeffs, beta)

    singular_core = point.kind == "pitchfork"
    fact = _regularized_factor(jac)
    mq = mass @ np.real(qhat) if singular_core else None

    def solve_real(rhs):
        if singular_core:
            return _deflated_solve(fact, jac, mq, rhs, refine=st.refine)
        return fact.solve(rhs)

    lam = 1j * omega
    coeffs = {}
    for j, name in enumerate(names):
        dr = problem.param_gradient(q, p, j)
        dq_star = -solve_real(dr)
        vec = problem.mixed_param_jacobian_apply(q, p, j, qhat)
        vec = vec + problem.hessian_apply(q, p, dq_star, qhat)
        if problem.mass_param_gradient_apply is not None:
            vec = vec + lam * problem.dmass_param(q, p, j, qhat)
        if problem.mass_jacobian_apply is not None:
            vec = vec + lam * problem.dmass_state(q, p, dq_star, qhat)
        coeffs[name] = complex(-np.vdot(qdag, vec))

    h_11_rhs = problem.hessian_apply(q, p, qhat, np.conj(qhat))
    h11 = solve_real(np.real(h_11_rhs))
    h_20_rhs = problem.hessian_apply(q, p, qhat, qhat)
    if omega == 0.0:
        h20 = solve_real(np.real(h_20_rhs)).astype(np.complex128)
    else:
        try:
            fact2, _ = _factor_T(jac, mass, 2.0 * omega)
        except SingularMatrixError as exc:
            raise ResonanceError(
                "double-frequency solve is singular (2:1 resonance)"
            ) from exc
        h20 = fact2.solve(h_20_rhs.astype(np.complex128))
        res2 = abs(2j * omega * (mass @ h20) + jac @ h20 - h_20_rhs).max()
        if not np.isfinite(res2) or res2 > 1e-6 * (1.0 + abs(h_20_rhs).max()):
            raise ResonanceError(
                "double-frequency solve lost accuracy (near 2:1 resonance)"
            )
    cubic = problem.third_apply(q, p, qhat, qhat, np.conj(qhat))
    cubic = cubic - problem.hessian_apply(q, p, np.conj(qhat), h20)
    cubic = cubic - 2.0 * problem.hessian_apply(q, p, qhat, h11)
    beta = complex(-0.5 * np.vdot(qdag, cubic))
    return NormalForm(point.kind, omega, coeffs, beta)


def weakly_nonlinear_predict(
    problem: ProblemDefinition,
    point: BifPoint,
    nf: NormalForm,
    delta_alpha: float,
    harmonics: int = 3,
):
    """First-order amplitude prediction a parameter step past the point.

    For a Hopf the result is a Fourier orbit seed (mean at the bifurcation
    state, first harmonic on the critical mode, frequency shifted by the
    linear and cubic corrections); for fold or pitchfork it is the displaced
    steady state.  Raises NoOrbitPredictedError when the amplitude equation
    has no orbit on that side.
    """
    name = point.params.active_name
    r = nf.param_coeffs[name] * delta_alpha
    if nf.kind == "fold":
        amp2 = -r.real / nf.beta.real
        if amp2 <= 0.0:
            raise NoOrbitPredictedError(
                "no fold branch on this side", amplitude_sq=amp2
            )
        return point.q + np.sqrt(amp2) * np.real(point.mode)
    amp2 = -r.real / nf.beta.real
    if amp2 <= 0.0:
        raise NoOrbitPredictedError(
            "amplitude equation has no orbit for this parameter step",
            amplitude_sq=amp2,
        )
    amp = float(np.sqrt(amp2))
    if nf.kind == "pitchfork":
        return point.q + amp * np.real(point.mode)
    from .hb import FourierState

    omega_shift = point.omega + r.imag + nf.beta.imag * amp2
    coeffs = np.zeros((harmonics + 1, problem.dim), dtype=np.complex128)
    coeffs[0] = point.q
    coeffs[1] = amp * point.mode
    return FourierState(coeffs=coeffs, omega=float(omega_shift))


@dataclass
class CurvePoint:
    q: np.ndarray
    params: Parameters
    omega: float
    tangent: Tangent
    beta: complex = None
    eigenvalues: list = None

    def value(self, name):
        return self.params[name]


@dataclass
class CurveEvent:
    kind: str
    index_before: int
    index_after: int
    detail: str = ""


@dataclass
class BifCurve:
    kind: str
    points: list = field(default_factory=list)
    events: list = field(default_factory=list)
    status: str = "max-points"


def _curve_g_system(problem, q, p, omega, vseed, wseed, is_hopf, j1, j2, st):
    """Residuals, borders, and corner blocks of the two-parameter curve
    corrector at the current iterate (tangent row appended by the caller)."""
    mass = problem.mass_matrix(q, p)
    g, qhat, qdag, jac = _g_and_modes(problem, q, p, omega, vseed, wseed, mass)
    row_q = _g_state_row(problem, q, p, omega, qhat, qdag, mass)
    d_a1 = _g_param_derivative(problem, q, p, j1, omega, qhat, qdag)
    d_a2 = _g_param_derivative(problem, q, p, j2, omega, qhat, qdag)
    g1 = problem.param_gradient(q, p, j1)
    g2 = problem.param_gradient(q, p, j2)
    if is_hopf:
        d_om = np.vdot(qdag, 1j * (mass @ qhat))
        cols = np.column_stack([g1, np.zeros_like(g1), g2])
        rows = np.vstack([row_q.real, row_q.imag])
        corner = np.array(
            [
                [d_a1.real, d_om.real, d_a2.real],
                [d_a1.imag, d_om.imag, d_a2.imag],
            ]
        )
        gvals = np.array([g.real, g.imag])
    else:
        cols = np.column_stack([g1, g2])
        rows = np.real(row_q)[None, :]
        corner = np.array([[np.real(d_a1), np.real(d_a2)]])
        gvals = np.array([np.real(g)])
    return jac, cols, rows, corner, gvals, g, qhat, qdag


def _curve_tangent(jac, cols, rows, corner, g2_col, g2_corner, st):
    """Curve tangent with the secondary parameter slot fixed to -1: solve the
    square (state, alpha1[, omega]) block against the secondary-parameter
    column of the extended Jacobian."""
    k = rows.shape[0]
    system = linalg.BorderedSystem(jac, cols[:, :k], rows, corner[:, :k])
    fact = _regularized_factor(jac)
    sol = linalg.solve_bordered(system, g2_col, g2_corner, fact=fact, refine=st.refine)
    y_x = np.concatenate([sol.x, sol.y])
    return Tangent(y_q=y_x, y_alpha=-1.0)


def trace_bifurcation_curve(
    problem: ProblemDefinition,
    point: BifPoint,
    second: str,
    control: StepControl | None = None,
    settings: LocatorSettings | None = None,
    param_range=(-np.inf, np.inf),
    max_points: int = 100,
    track_normal_form: bool = True,
    monitor=None,
) -> BifCurve:
    """Trace the curve of bifurcation points over a second parameter.

    The corrector solves the augmented system (steady residual plus
    criticality rows) together with a frozen tangent row, bordered on the
    steady Jacobian; mode seeds carry over from point to point.  Each
    accepted point can evaluate the relevant normal-form coefficient, and
    sign changes raise codimension-two flags: "bautin-candidate" on a Hopf
    curve, "cusp-candidate" on a fold curve.  A Hopf curve whose frequency
    collapses stops with a "bogdanov-takens-candidate" flag; an optional
    eigenvalue monitor flags "fold-hopf-candidate" crossings.
    """
    control = control or StepControl()
    st = settings or LocatorSettings()
    is_hopf = point.kind == "hopf"
    p0 = point.params
    j1 = p0.active_index
    j2 = p0.index(second)
    if j1 == j2:
        raise ValueError("secondary parameter must differ from the active one")
    n = problem.dim

    seeds = {
        "v": point.adjoint.astype(np.complex128),
        "w": point.mode.astype(np.complex128),
    }

    def pack(q, a1, omega):
        extra = [a1, omega] if is_hopf else [a1]
        return np.concatenate([q, extra])

    def unpack(x):
        q = x[:n]
        a1 = float(x[n])
        omega = float(x[n + 1]) if is_hopf else 0.0
        return q, a1, omega

    def params_at(a1, a2):
        return p0.with_updates(**{p0.names[j1]: a1, second: a2})

    def correct(x_guess, s_guess, tan):
        q, a1, omega = unpack(x_guess)
        a2 = s_guess
        vseed, wseed = seeds["v"], seeds["w"]
        qhat, qdag = wseed, vseed
        k = 3 if is_hopf else 2
        y_q = tan.y_q[:n]
        y_tail = np.concatenate([tan.y_q[n:], [tan.y_alpha]])
        for it in range(st.max_iterations):
            p = params_at(a1, a2)
            res = problem.residual(q, p)
            rnorm = float(np.linalg.norm(res))
            jac, cols, rows, corner, gvals, g, qhat, qdag = _curve_g_system(
                problem, q, p, omega, vseed, wseed, is_hopf, j1, j2, st
            )
            if not np.isfinite(rnorm) or not np.all(np.isfinite(gvals)):
                raise LocatorDivergenceError("non-finite curve iterate", [])
            if rnorm <= st.res_tol and abs(g) <= st.g_tol:
                return q, a1, omega, a2, qhat, qdag, jac, cols, rows, corner, it
            full_rows = np.vstack([rows, y_q[None, :]])
            full_corner = np.vstack([corner, y_tail[None, :]])
            rhs_bot = np.concatenate([gvals, [0.0]])
            system = linalg.BorderedSystem(jac, cols, full_rows, full_corner)
            fact = _regularized_factor(jac)
            sol = linalg.solve_bordered(
                system, res, rhs_bot, fact=fact, refine=st.refine
            )
            q = q - sol.x
            a1 -= float(sol.y[0])
            if is_hopf:
                omega -= float(sol.y[1])
                a2 -= float(sol.y[2])
                if omega < 0.0:
                    omega = -omega
                    qhat, qdag = np.conj(qhat), np.conj(qdag)
                    vseed, wseed = np.conj(vseed), np.conj(wseed)
            else:
                a2 -= float(sol.y[1])
            vseed = qdag / max(np.linalg.norm(qdag), 1e-300)
            wseed = qhat / max(np.linalg.norm(qhat), 1e-300)
        raise LocatorDivergenceError("curve corrector did not converge", [])

    def tangent_at(jac, cols, rows, corner, q, p, omega, qhat, qdag):
        g2_col = cols[:, -1]
        g2_corner = corner[:, -1]
        try:
            return _curve_tangent(jac, cols[:, :-1], rows, corner, g2_col,
                                  g2_corner, st)
        except (BorderedSingularError, SingularMatrixError):
            y_q = np.real(qhat)
            nrm = np.linalg.norm(y_q)
            y_x = np.concatenate([y_q / nrm, [0.0, 0.0] if is_hopf else [0.0]])
            return Tangent(y_q=y_x, y_alpha=0.0)

    def attempt(x, s, tan, h):
        scale = h / tan.norm
        x_guess = x + scale * tan.y_q
        s_guess = s + scale * tan.y_alpha
        try:
            out = correct(x_guess, s_guess, tan)
        except (
            LocatorDivergenceError,
            SingularMatrixError,
            BorderedSingularError,
            ReclassifyCandidateError,
        ) as exc:
            raise _StepFailure(str(exc)) from exc
        q, a1, omega, a2, qhat, qdag, jac, cols, rows, corner, iters = out
        seeds["v"], seeds["w"] = qdag, qhat
        tan_new = tangent_at(jac, cols, rows, corner, q, params_at(a1, a2),
                             omega, qhat, qdag)
        stored_modes.append((qhat, qdag))
        return pack(q, a1, omega), a2, tan_new, iters

    stored_modes = []

    # tangent at the start point, via one corrector-free assembly
    p_start = params_at(p0.values[j1], p0.values[j2])
    jac0, cols0, rows0, corner0, gvals0, g0, qhat0, qdag0 = _curve_g_system(
        problem, point.q, p_start, point.omega, seeds["v"], seeds["w"],
        is_hopf, j1, j2, st,
    )
    tan0 = tangent_at(jac0, cols0, rows0, corner0, point.q, p_start,
                      point.omega, qhat0, qdag0)
    stored_modes.append((qhat0, qdag0))

    x0 = pack(point.q, p0.values[j1], point.omega)
    entries, status = _trace_loop(
        x0, p0.values[j2], tan0, attempt, control, param_range, max_points
    )

    curve = BifCurve(kind=point.kind, status=status)
    prev_beta = None
    prev_eigs = None
    for idx, (x, s, tan, iters, h) in enumerate(entries):
        q, a1, omega = unpack(x)
        p = params_at(a1, s)
        qhat, qdag = stored_modes[idx]
        cp = CurvePoint(q=q, params=p, omega=omega, tangent=tan)
        if track_normal_form:
            cp.beta = _curve_beta(problem, q, p, omega, qhat, qdag, point.kind)
            if prev_beta is not None and cp.beta.real * prev_beta.real < 0.0:
                kind = "bautin-candidate" if is_hopf else "cusp-candidate"
                curve.events.append(
                    CurveEvent(kind, idx - 1, idx,
                               f"real part of beta crossed zero near "
                               f"{second}={s:.6g}")
                )
            prev_beta = cp.beta
        if monitor is not None:
            pairs = stability.eigs(
                problem, q, p, shift=monitor.shift, nev=monitor.nev,
                method=monitor.method,
            )
            keep = []
            for pr in pairs:
                if is_hopf and abs(pr.value - 1j * omega) < 1e-6 * (1 + omega):
                    continue
                if not is_hopf and abs(pr.value) < 1e-6:
                    continue
                keep.append(pr.value)
            if prev_eigs is not None:
                for ev in _detect_crossings(prev_eigs, keep, idx - 1, idx):
                    curve.events.append(
                        CurveEvent("fold-hopf-candidate", idx - 1, idx,
                                   f"eigenvalue {ev.lam_after:.6g} crossed")
                    )
            prev_eigs = keep
        if is_hopf and omega < max(1e3 * st.omega_floor, 1e-6):
            curve.events.append(
                CurveEvent("bogdanov-takens-candidate", max(idx - 1, 0), idx,
                           "frequency collapsed along the hopf curve")
            )
            curve.points.append(cp)
            curve.status = "degenerate"
            break
        curve.points.append(cp)
    return curve


def _curve_beta(problem, q, p, omega, qhat, qdag, kind):
    """Normal-form coefficient tracked along a curve (quadratic on a fold
    curve, cubic on a hopf curve), from the current raw mode pair."""
    mass = problem.mass_matrix(q, p)
    mnorm = np.sqrt(abs(np.vdot(qhat, mass @ qhat)))
    qh = qhat / mnorm
    pairing = np.vdot(qdag, mass @ qh)
    if abs(pairing) < 1e-300:
        return complex(np.nan)
    qd = qdag / np.conj(pairing)
    if kind != "hopf":
        qh_r, qd_r = np.real(qh), np.real(qd)
        h_qq = problem.hessian_apply(q, p, qh_r, qh_r)
        return complex(-0.5 * np.vdot(qd_r, h_qq))
    pt = BifPoint("hopf", q, p, omega, qh, qd, [], 0)
    try:
        return normal_form(problem, pt).beta
    except (ResonanceError, SingularMatrixError):
        return complex(np.nan)
