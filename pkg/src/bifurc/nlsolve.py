"""Newton solves for steady states, with deflation away from known roots.

The deflated iteration rescales the plain Newton step by a scalar factor, so
a deflated step is exactly parallel to the undeflated one; with no known
solutions the factor is exactly 1.0 and the iterates are bitwise identical to
plain Newton (both solvers share one loop).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import DeflationSingularError, SingularJacobianError
from .problem import Parameters, ProblemDefinition

#: Roots closer than this are treated as coincident by deflation.
COINCIDENT_TOL = 1e-12


@dataclass
class NewtonSettings:
    abs_tol: float = 1e-10
    rel_tol: float = 0.0
    max_iterations: int = 25
    damping: str = "none"  # "none" | "backtracking"
    max_halvings: int = 8

    def __post_init__(self):
        if self.damping not in ("none", "backtracking"):
            raise ValueError(f"unknown damping {self.damping!r}")
        if self.abs_tol <= 0 and self.rel_tol <= 0:
            raise ValueError("at least one tolerance must be positive")


@dataclass
class NewtonResult:
    """Outcome of a Newton run; ``converged`` is False on divergence, with the
    reason in ``message``.  Histories include the initial point."""

    q: np.ndarray
    converged: bool
    iterations: int
    residual_norms: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    message: str = ""


def deflation_scale(q, known_solutions, delta_q, power: float = 2.0, shift: float = 1.0):
    """Scalar factor turning a Newton step into its deflated counterpart.

    For each known root ``r`` with offset ``d = q - r`` the factor contributes

        (1 + shift*||d||^p) / (1 + shift*||d||^p - p * <d, dq> / ||d||^2)

    multiplied over all known roots (sequential deflation).  The empty product
    is exactly 1.0.

    Raises
    ------
    DeflationSingularError
        If ``q`` coincides with a known root (distance below 1e-12).
    """
    scale = 1.0
    q = np.asarray(q, dtype=np.float64)
    dq = np.asarray(delta_q, dtype=np.float64)
    for root in known_solutions:
        diff = q - np.asarray(root, dtype=np.float64)
        dist = float(np.linalg.norm(diff))
        if dist < COINCIDENT_TOL:
            raise DeflationSingularError(
                f"iterate within {dist:.3e} of a known solution"
            )
        dp = dist**power
        numer = 1.0 + shift * dp
        denom = numer - power * float(diff @ dq) / (dist * dist)
        scale *= numer / denom
    return scale


def _backtrack(problem, q, p, step, r_norm, settings):
    """Halve the step until the residual norm decreases (bounded)."""
    s = 1.0
    for _ in range(settings.max_halvings):
        trial = q - s * step
        if np.linalg.norm(problem.residual(trial, p)) < r_norm:
            break
        s *= 0.5
    return q - s * step


def _newton_loop(problem, q0, p, settings, known_solutions):
    q = np.asarray(q0, dtype=np.float64).copy()
    if q.shape != (problem.dim,):
        raise ValueError(f"initial state shape {q.shape} != ({problem.dim},)")
    res = problem.residual(q, p)
    r_norm = float(np.linalg.norm(res))
    tol = max(settings.abs_tol, settings.rel_tol * r_norm)
    norms = [r_norm]
    iterates = [q.copy()]
    for it in range(settings.max_iterations):
        if not np.isfinite(r_norm):
            return NewtonResult(q, False, it, norms, iterates, "non-finite residual")
        if r_norm <= tol:
            return _finish(q, it, norms, iterates, known_solutions, settings)
        try:
            fact = linalg.factor(problem.jacobian(q, p))
        except linalg.SingularMatrixError as exc:
            raise SingularJacobianError(
                f"singular Jacobian at iteration {it}: {exc}", iterate=q, alpha=p
            ) from exc
        dq = fact.solve(res)
        step = deflation_scale(q, known_solutions, dq) * dq
        if settings.damping == "backtracking":
            q = _backtrack(problem, q, p, step, r_norm, settings)
        else:
            q = q - step
        res = problem.residual(q, p)
        r_norm = float(np.linalg.norm(res))
        norms.append(r_norm)
        iterates.append(q.copy())
    if r_norm <= tol:
        return _finish(q, settings.max_iterations, norms, iterates, known_solutions, settings)
    return NewtonResult(
        q, False, settings.max_iterations, norms, iterates,
        f"no convergence in {settings.max_iterations} iterations "
        f"(residual {r_norm:.3e})",
    )


def _finish(q, iterations, norms, iterates, known_solutions, settings):
    guard = 10.0 * max(settings.abs_tol, np.finfo(float).eps)
    for root in known_solutions:
        if np.linalg.norm(q - np.asarray(root)) <= guard:
            return NewtonResult(
                q, False, iterations, norms, iterates,
                "converged onto a deflated solution",
            )
    return NewtonResult(q, True, iterations, norms, iterates)


def newton_solve(
    problem: ProblemDefinition,
    q0,
    params: Parameters | None = None,
    settings: NewtonSettings | None = None,
) -> NewtonResult:
    """Solve ``R(q; a) = 0`` by Newton iteration from ``q0``.

    Convergence is declared when ``||R||_2 <= max(abs_tol, rel_tol*||R_0||)``
    (checked before the first step, so an exact root costs no factorization).

    Raises
    ------
    SingularJacobianError
        If the Jacobian cannot be factored at some iterate.
    """
    p = params if params is not None else problem.parameters
    return _newton_loop(problem, q0, p, settings or NewtonSettings(), ())


def deflated_newton_solve(
    problem: ProblemDefinition,
    q0,
    known_solutions,
    params: Parameters | None = None,
    settings: NewtonSettings | None = None,
) -> NewtonResult:
    """Newton iteration deflated away from ``known_solutions``.

    The step is the plain Newton step times :func:`deflation_scale`.  A run
    that lands within ``10 * abs_tol`` of a known root is reported as a
    divergence ("converged onto a deflated solution") rather than a find.
    With an empty ``known_solutions`` the iterates reproduce
    :func:`newton_solve` bitwise.
    """
    p = params if params is not None else problem.parameters
    known = [np.asarray(r, dtype=np.float64) for r in known_solutions]
    return _newton_loop(problem, q0, p, settings or NewtonSettings(), known)
