"""Pseudo-arclength continuation of steady branches (Moore-Penrose corrector).

The predictor steps along the normalized tangent ``y = (y_q, y_alpha)`` of
the branch; the corrector solves the residual together with an
orthogonality-to-tangent row, refreshing the tangent each iteration from the
core solves already performed (the border-column solve of the bordered
system *is* the new tangent, so it costs nothing extra).

A step of size ``h`` moves approximately ``h`` in ``(q, alpha)`` arclength;
``h``'s sign selects the direction along the branch at the start and is kept
consistent afterwards by aligning consecutive tangents.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg, stability
from .errors import (
    BorderedSingularError,
    CorrectorDivergenceError,
    SingularJacobianError,
    SingularMatrixError,
    TangentSingularError,
)
from .nlsolve import NewtonSettings, newton_solve
from .problem import Parameters, ProblemDefinition


@dataclass
class Tangent:
    """Branch tangent ``(y_q, y_alpha)``, canonically built with
    ``y_alpha = -1`` and negated as a whole when direction continuity
    requires it.  Not normalized; use :attr:`norm`."""

    y_q: np.ndarray
    y_alpha: float = -1.0

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.y_q, self.y_q) + self.y_alpha**2))

    def dot(self, other: "Tangent") -> float:
        return float(np.dot(self.y_q, other.y_q) + self.y_alpha * other.y_alpha)

    def flipped(self) -> "Tangent":
        return Tangent(-self.y_q, -self.y_alpha)


@dataclass
class StepControl:
    h0: float = 0.02
    h_min: float = 1e-8
    h_max: float = 0.1
    target_iterations: int = 3
    growth_cap: float = 2.0
    shrink_cap: float = 0.5

    def __post_init__(self):
        if self.h_min <= 0 or self.h_max < self.h_min:
            raise ValueError("need 0 < h_min <= h_max")
        if abs(self.h0) < self.h_min or abs(self.h0) > self.h_max:
            raise ValueError("h0 magnitude must lie within [h_min, h_max]")


@dataclass
class MonitorSettings:
    """Eigenvalue watch along a branch."""

    nev: int = 6
    shift: complex = 0.0
    method: str = "auto"
    sigma_tol: float = stability.SIGMA_TOL


@dataclass
class Event:
    """Sign change of an eigenvalue real part between consecutive points."""

    kind: str  # "hopf-candidate" | "steady-candidate"
    index_before: int
    index_after: int
    lam_before: complex
    lam_after: complex

    @property
    def omega_estimate(self) -> float:
        return 0.5 * (abs(self.lam_before.imag) + abs(self.lam_after.imag))


@dataclass
class BranchPoint:
    q: np.ndarray
    params: Parameters
    tangent: Tangent
    corrector_iterations: int
    step: float
    eigenvalues: list = None
    stability_label: str = None

    @property
    def alpha(self) -> float:
        return self.params.active_value


@dataclass
class Branch:
    points: list = field(default_factory=list)
    events: list = field(default_factory=list)
    status: str = "max-points"

    def alphas(self) -> np.ndarray:
        return np.array([pt.alpha for pt in self.points])


def compute_tangent(
    problem: ProblemDefinition,
    q,
    params: Parameters,
    fact: linalg.Factorization | None = None,
) -> Tangent:
    """Tangent from ``d_q R y_q = d_alpha R`` with ``y_alpha = -1``."""
    q = np.asarray(q, dtype=np.float64)
    try:
        if fact is None:
            fact = linalg.factor(problem.jacobian(q, params))
        y_q = fact.solve(problem.param_gradient(q, params, params.active_index))
    except SingularMatrixError as exc:
        raise TangentSingularError(f"tangent undefined: {exc}") from exc
    return Tangent(y_q=y_q, y_alpha=-1.0)


def predict(q, params: Parameters, tangent: Tangent, h: float):
    """Euler predictor ``(q, alpha) + (h/||y||) (y_q, y_alpha)``."""
    scale = h / tangent.norm
    q_guess = np.asarray(q, dtype=np.float64) + scale * tangent.y_q
    p_guess = params.with_active_value(params.active_value + scale * tangent.y_alpha)
    return q_guess, p_guess


@dataclass
class CorrectorResult:
    q: np.ndarray
    params: Parameters
    tangent: Tangent
    iterations: int
    residual_norms: list


def correct_moore_penrose(
    problem: ProblemDefinition,
    q_guess,
    params_guess: Parameters,
    tangent: Tangent,
    settings: NewtonSettings | None = None,
) -> CorrectorResult:
    """Correct a predicted point back onto the branch.

    Each iteration solves the Jacobian bordered with the parameter gradient
    column and the current-tangent row (corner ``y_alpha``), moving the
    iterate orthogonally to the tangent; the border-column core solve is
    harvested as the refreshed tangent for the next iteration.

    Raises
    ------
    CorrectorDivergenceError
        No convergence within the iteration budget (carries residual history).
    """
    settings = settings or NewtonSettings()
    q = np.asarray(q_guess, dtype=np.float64).copy()
    p = params_guess
    tan = tangent
    res = problem.residual(q, p)
    r_norm = float(np.linalg.norm(res))
    tol = max(settings.abs_tol, settings.rel_tol * r_norm)
    norms = [r_norm]
    for it in range(settings.max_iterations):
        if not np.isfinite(r_norm):
            raise CorrectorDivergenceError("non-finite residual", norms)
        if r_norm <= tol:
            return CorrectorResult(q, p, tan, it, norms)
        jac = problem.jacobian(q, p)
        galpha = problem.param_gradient(q, p, p.active_index)
        system = linalg.BorderedSystem(
            core=jac,
            border_cols=galpha[:, None],
            border_rows=tan.y_q[None, :],
            corner=np.array([[tan.y_alpha]]),
        )
        sol = linalg.solve_bordered(system, res, np.zeros(1))
        q = q - sol.x
        p = p.with_active_value(p.active_value - float(sol.y[0]))
        fresh = Tangent(y_q=sol.core_border_solves[:, 0], y_alpha=-1.0)
        if fresh.dot(tan) < 0.0:
            fresh = fresh.flipped()
        tan = fresh
        res = problem.residual(q, p)
        r_norm = float(np.linalg.norm(res))
        norms.append(r_norm)
    if r_norm <= tol:
        return CorrectorResult(q, p, tan, settings.max_iterations, norms)
    raise CorrectorDivergenceError(
        f"corrector stalled at residual {r_norm:.3e}", norms
    )


def adapt_step(h: float, iterations: int, control: StepControl) -> float:
    """Step update ``h * 2^((target - iterations)/2)``, growth/shrink capped
    per step, magnitude clamped to ``[h_min, h_max]``, sign preserved."""
    factor = 2.0 ** (0.5 * (control.target_iterations - iterations))
    factor = min(max(factor, control.shrink_cap), control.growth_cap)
    hn = h * factor
    mag = min(max(abs(hn), control.h_min), control.h_max)
    return float(np.copysign(mag, hn))


class _StepFailure(Exception):
    pass


def _trace_loop(x0, s0, tan0, attempt, control, s_range, max_points, on_accept=None):
    """Shared predictor-corrector loop over an abstract state ``x`` and a
    scalar continuation parameter ``s``.

    ``attempt(x, s, tangent, h) -> (x', s', tangent', iterations)`` performs
    one predict-correct step and raises ``_StepFailure`` if it cannot.
    Returns (list of (x, s, tangent, iterations, h), status).
    """
    entries = [(x0, s0, tan0, 0, 0.0)]
    if on_accept:
        on_accept(0, x0, s0)
    h = control.h0
    status = "max-points"
    lo, hi = s_range
    while len(entries) < max_points:
        x, s, tan, _, _ = entries[-1]
        try:
            xn, sn, tann, iters = attempt(x, s, tan, h)
        except _StepFailure:
            if abs(h) * 0.5 < control.h_min:
                status = "step-failure"
                break
            h *= 0.5
            continue
        if tann.dot(tan) < 0.0:
            tann = tann.flipped()
        entries.append((xn, sn, tann, iters, h))
        if on_accept:
            on_accept(len(entries) - 1, xn, sn)
        if not (lo <= sn <= hi):
            status = "param-bound"
            break
        h = adapt_step(h, iters, control)
    return entries, status


def trace_branch(
    problem: ProblemDefinition,
    q0,
    params: Parameters | None = None,
    control: StepControl | None = None,
    corrector: NewtonSettings | None = None,
    monitor: MonitorSettings | None = None,
    param_range=(-np.inf, np.inf),
    max_points: int = 100,
) -> Branch:
    """Trace the steady branch through ``(q0, params)``.

    The start point is first converged at fixed parameter.  Each accepted
    point stores the exact tangent (recomputed at the point), corrector cost,
    and, when ``monitor`` is given, the leading eigenvalues and a stability
    label; a sign change of any watched real part between consecutive points
    is recorded as an :class:`Event` with its bracketing indices.

    Stops on the parameter range, ``max_points``, or a failed step at the
    minimum step size (see ``Branch.status``).
    """
    p = params if params is not None else problem.parameters
    control = control or StepControl()
    corrector = corrector or NewtonSettings()
    start = newton_solve(problem, np.asarray(q0, dtype=np.float64), p, corrector)
    if not start.converged:
        raise CorrectorDivergenceError(
            f"start point failed to converge: {start.message}", start.residual_norms
        )
    q_start = start.q
    tan0 = compute_tangent(problem, q_start, p)

    def attempt(q, s, tan, h):
        pp = p.with_active_value(s)
        q_guess, p_guess = predict(q, pp, tan, h)
        try:
            res = correct_moore_penrose(problem, q_guess, p_guess, tan, corrector)
        except (
            CorrectorDivergenceError,
            SingularJacobianError,
            SingularMatrixError,
            BorderedSingularError,
        ) as exc:
            raise _StepFailure(str(exc)) from exc
        exact_tan = compute_tangent(problem, res.q, res.params)
        if exact_tan.dot(res.tangent) < 0.0:
            exact_tan = exact_tan.flipped()
        return res.q, res.params.active_value, exact_tan, res.iterations

    entries, status = _trace_loop(
        q_start, p.active_value, tan0, attempt, control, param_range, max_points
    )

    branch = Branch(status=status)
    prev_eigs = None
    for idx, (q, s, tan, iters, h) in enumerate(entries):
        pt = BranchPoint(
            q=q,
            params=p.with_active_value(s),
            tangent=tan,
            corrector_iterations=iters,
            step=h,
        )
        if monitor is not None:
            pairs = stability.eigs(
                problem, q, pt.params,
                shift=monitor.shift, nev=monitor.nev, method=monitor.method,
            )
            pt.eigenvalues = [pr.value for pr in pairs]
            pt.stability_label = stability.classify_stability(pairs, monitor.sigma_tol)
            if prev_eigs is not None:
                branch.events.extend(
                    _detect_crossings(prev_eigs, pt.eigenvalues, idx - 1, idx)
                )
            prev_eigs = pt.eigenvalues
        branch.points.append(pt)
    return branch


def _detect_crossings(before, after, i_before, i_after):
    """Match eigenvalues of consecutive points by proximity (canonical
    upper-half-plane members only) and flag real-part sign changes."""
    up_b = [lam for lam in before if lam.imag >= 0.0]
    up_a = [lam for lam in after if lam.imag >= 0.0]
    events = []
    used = set()
    for lam_b in up_b:
        best, best_d = None, np.inf
        for j, lam_a in enumerate(up_a):
            if j in used:
                continue
            d = abs(lam_a - lam_b)
            if d < best_d:
                best, best_d = j, d
        if best is None:
            continue
        used.add(best)
        lam_a = up_a[best]
        if lam_b.real * lam_a.real < 0.0:
            kind = (
                "hopf-candidate"
                if max(abs(lam_b.imag), abs(lam_a.imag)) > 1e-6
                else "steady-candidate"
            )
            events.append(Event(kind, i_before, i_after, lam_b, lam_a))
    return events


@dataclass
class RefinedCandidate:
    """Secant-refined bifurcation candidate, ready to seed the locator."""

    q: np.ndarray
    params: Parameters
    value: complex
    mode: np.ndarray
    adjoint: np.ndarray
    sigma_history: list

    @property
    def omega(self) -> float:
        return abs(float(self.value.imag))


def refine_candidate(
    problem: ProblemDefinition,
    branch: Branch,
    event: Event,
    corrector: NewtonSettings | None = None,
    monitor: MonitorSettings | None = None,
    max_steps: int = 20,
    sigma_target: float = 1e-8,
) -> RefinedCandidate:
    """Secant iteration on the watched eigenvalue's real part over alpha.

    Starting from the event's bracketing branch points, each step solves the
    steady state at the secant parameter and re-evaluates the tracked
    eigenvalue (matched by proximity to the previous one).  Ends when
    ``|Re lambda| < sigma_target`` or after ``max_steps``; the final point
    carries direct and adjoint modes for the bifurcation locator.
    """
    corrector = corrector or NewtonSettings()
    monitor = monitor or MonitorSettings()
    pa = branch.points[event.index_before]
    pb = branch.points[event.index_after]
    a_alpha, b_alpha = pa.alpha, pb.alpha
    a_sig, b_sig = event.lam_before.real, event.lam_after.real
    qa, qb = pa.q, pb.q
    lam_track = event.lam_after
    q_c, p_c, lam_c = qb, pb.params, lam_track
    history = [a_sig, b_sig]
    for _ in range(max_steps):
        if abs(b_sig - a_sig) < 1e-300:
            alpha_c = 0.5 * (a_alpha + b_alpha)
        else:
            alpha_c = b_alpha - b_sig * (b_alpha - a_alpha) / (b_sig - a_sig)
        t = 0.0 if b_alpha == a_alpha else (alpha_c - a_alpha) / (b_alpha - a_alpha)
        q_guess = (1.0 - t) * qa + t * qb
        p_c = pa.params.with_active_value(alpha_c)
        sol = newton_solve(problem, q_guess, p_c, corrector)
        if not sol.converged:
            raise CorrectorDivergenceError(
                f"steady re-solve failed during refinement: {sol.message}",
                sol.residual_norms,
            )
        q_c = sol.q
        pairs = stability.eigs(
            problem, q_c, p_c, shift=monitor.shift, nev=monitor.nev,
            method=monitor.method,
        )
        lam_c = min((pr.value for pr in pairs), key=lambda z: abs(z - lam_track))
        lam_track = lam_c
        sig_c = lam_c.real
        history.append(sig_c)
        if abs(sig_c) < sigma_target:
            break
        qa, a_alpha, a_sig = qb, b_alpha, b_sig
        qb, b_alpha, b_sig = q_c, alpha_c, sig_c
    # final solve retargeted at the refined eigenvalue so the adjoint run
    # only has to converge the modes the locator actually needs
    shift_final = 1j * lam_track.imag + max(1e-3, 10.0 * abs(lam_track.real))
    pairs = stability.eigs(
        problem, q_c, p_c, shift=shift_final, nev=2,
        method=monitor.method, want_adjoint=True,
    )
    best = min(pairs, key=lambda pr: abs(pr.value - lam_track))
    return RefinedCandidate(
        q=q_c, params=p_c, value=best.value, mode=best.mode,
        adjoint=best.adjoint, sigma_history=history,
    )
