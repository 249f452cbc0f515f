"""Exception types shared across the toolbox.

Solver routines that can fail for *numerical* reasons raise subclasses of
:class:`NumericalError` carrying enough state to diagnose or restart the
computation.  Plain misuse (bad shapes, unknown names, out-of-range settings)
raises stock ``ValueError``/``KeyError``.
"""

from __future__ import annotations


class NumericalError(RuntimeError):
    """Base class for numerical failures."""


class SingularMatrixError(NumericalError):
    """Factorization hit an (almost) exactly zero pivot."""

    def __init__(self, message: str, pivot: float = 0.0):
        super().__init__(message)
        self.pivot = pivot


class BorderedSingularError(NumericalError):
    """The Schur complement of a bordered system is singular."""


class SingularJacobianError(NumericalError):
    """Newton hit a singular Jacobian; carries the offending iterate."""

    def __init__(self, message: str, iterate=None, alpha=None):
        super().__init__(message)
        self.iterate = iterate
        self.alpha = alpha


class DeflationSingularError(NumericalError):
    """Deflation evaluated at (numerically) a known solution."""


class TangentSingularError(NumericalError):
    """Branch tangent undefined (singular Jacobian at the point)."""


class CorrectorDivergenceError(NumericalError):
    """Predictor-corrector step failed to converge at the minimum step."""

    def __init__(self, message: str, residual_norms=None):
        super().__init__(message)
        self.residual_norms = list(residual_norms or [])


class EigsConvergenceError(NumericalError):
    """Krylov iteration did not reach the requested residual tolerance."""


class ShiftSingularError(NumericalError):
    """The shifted operator is singular (shift equals an eigenvalue)."""


class LocatorDivergenceError(NumericalError):
    """Bifurcation locator failed; carries the |g| history."""

    def __init__(self, message: str, g_history=None):
        super().__init__(message)
        self.g_history = list(g_history or [])


class ReclassifyCandidateError(NumericalError):
    """A Hopf candidate collapsed to omega ~ 0 (or vice versa)."""


class ResonanceError(NumericalError):
    """A normal-form resolvent is singular (e.g. 2:1 resonance)."""


class NoOrbitPredictedError(NumericalError):
    """Weakly nonlinear amplitude is not real on the requested side."""

    def __init__(self, message: str, amplitude_sq: float = 0.0):
        super().__init__(message)
        self.amplitude_sq = amplitude_sq


class HBDivergenceError(NumericalError):
    """Harmonic-balance Newton diverged."""

    def __init__(self, message: str, residual_norms=None):
        super().__init__(message)
        self.residual_norms = list(residual_norms or [])


class CollapsedToSteadyError(NumericalError):
    """Harmonic-balance iteration collapsed onto a steady state."""


class UnsupportedProblemError(ValueError):
    """Operation requires capabilities the problem does not declare."""
