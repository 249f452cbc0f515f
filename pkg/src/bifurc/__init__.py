"""Continuation and bifurcation analysis of M(q) qdot + R(q; alpha) = 0.

The package covers steady-state continuation with pseudo-arclength
prediction and Moore-Penrose correction, eigenvalue monitoring of the
(J, M) pencil, minimally augmented location and classification of fold,
pitchfork, and Hopf points, normal-form coefficients with weakly nonlinear
orbit prediction, two-parameter bifurcation-curve tracing with codimension-2
flags, harmonic-balance periodic orbits for polynomial residuals of degree
up to three, and Floquet exponents from the Hill pencil of the converged
orbit.
"""

__version__ = "0.1.0"

from .errors import (
    BorderedSingularError,
    CollapsedToSteadyError,
    CorrectorDivergenceError,
    DeflationSingularError,
    EigsConvergenceError,
    HBDivergenceError,
    LocatorDivergenceError,
    NoOrbitPredictedError,
    NumericalError,
    ReclassifyCandidateError,
    ResonanceError,
    ShiftSingularError,
    SingularJacobianError,
    SingularMatrixError,
    TangentSingularError,
    UnsupportedProblemError,
)
from .problem import (
    DerivativeReport,
    Parameters,
    ProblemDefinition,
    PROBLEMS,
    check_derivatives,
    get_problem,
)
from .linalg import (
    BorderedSystem,
    BorderedSolution,
    ComplexFactorization,
    Factorization,
    factor,
    factor_complex,
    solve_bordered,
)
from .nlsolve import (
    NewtonResult,
    NewtonSettings,
    deflated_newton_solve,
    deflation_scale,
    newton_solve,
)
from .stability import EigenPair, classify_stability, eigs, solve_pencil
from .continuation import (
    Branch,
    BranchPoint,
    CorrectorResult,
    Event,
    MonitorSettings,
    RefinedCandidate,
    StepControl,
    Tangent,
    adapt_step,
    compute_tangent,
    correct_moore_penrose,
    predict,
    refine_candidate,
    trace_branch,
)
from .bifurcation import (
    BifCurve,
    BifPoint,
    CurveEvent,
    CurvePoint,
    LocatorSettings,
    NormalForm,
    locate_bifurcation,
    locate_from_candidate,
    normal_form,
    trace_bifurcation_curve,
    weakly_nonlinear_predict,
)
from .hb import (
    FloquetPair,
    FourierState,
    HBBranch,
    HBBranchPoint,
    HBResult,
    HBSettings,
    classify_orbit,
    floquet,
    hb_jacobian,
    hb_residual,
    hb_solve,
    hb_trace_branch,
    hill_matrices,
    phase_mode_vector,
)

__all__ = [name for name in dir() if not name.startswith("_")]
