"""Problem definitions: residual systems of the form ``M(q; a) q' + R(q; a) = 0``.

A :class:`ProblemDefinition` bundles the residual ``R``, its derivatives up to
third order (as multilinear *apply* callbacks, never stored tensors), the mass
operator ``M`` and its derivatives, and parameter metadata.  The multilinear
callbacks must be written with plain array arithmetic so that complex
directions flow through them by bilinearity; every built-in problem is
polynomial, which makes that automatic.

Built-ins
---------
``brusselator_1d``   reaction-diffusion two-species system on [0, 1]
``brusselator_0d``   its well-mixed two-variable reduction
``scalar_fold``      R = q^2 + a1
``scalar_pitchfork`` R = q^3 - a1 q
``scalar_cusp``      R = q^3 + a2 q + a1
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Parameters:
    """Ordered named real parameters with one marked active for continuation."""

    names: tuple
    values: np.ndarray
    active_index: int = 0

    def __post_init__(self):
        names = tuple(self.names)
        values = np.array(self.values, dtype=np.float64).ravel()
        if len(names) != len(set(names)):
            raise ValueError(f"duplicate parameter names in {names}")
        if values.size != len(names):
            raise ValueError("values length must match names")
        if not np.all(np.isfinite(values)):
            raise ValueError("parameter values must be finite")
        if not (0 <= self.active_index < len(names)):
            raise ValueError(f"active_index {self.active_index} out of range")
        values.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", values)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown parameter {name!r}; have {self.names}") from None

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.index(name)])

    @property
    def active_name(self) -> str:
        return self.names[self.active_index]

    @property
    def active_value(self) -> float:
        return float(self.values[self.active_index])

    def with_value(self, name_or_index, value) -> "Parameters":
        idx = name_or_index if isinstance(name_or_index, int) else self.index(name_or_index)
        vals = self.values.copy()
        vals[idx] = value
        return Parameters(self.names, vals, self.active_index)

    def with_active_value(self, value) -> "Parameters":
        return self.with_value(self.active_index, value)

    def with_active(self, name: str) -> "Parameters":
        return Parameters(self.names, self.values.copy(), self.index(name))

    def with_updates(self, **kwargs) -> "Parameters":
        p = self
        for k, v in kwargs.items():
            p = p.with_value(k, v)
        return p

    def to_dict(self) -> dict:
        return {n: float(v) for n, v in zip(self.names, self.values)}


@dataclass
class ProblemDefinition:
    """Residual system with derivative callbacks.

    Required callbacks take ``(q, params)`` leading arguments:

    residual(q, p)                        -> (n,) array
    jacobian(q, p)                        -> n-by-n sparse CSR, d_q R
    param_gradient(q, p, j)               -> (n,) array, d_{a_j} R
    hessian_apply(q, p, u, v)             -> (n,) array, d_qq R (u, v); symmetric bilinear
    third_apply(q, p, u, v, w)            -> (n,) array, d_qqq R (u, v, w); symmetric trilinear
    mixed_param_jacobian_apply(q, p, j, v)-> (n,) array, d_{a_j} d_q R applied to v

    Mass callbacks default to the identity/constant operator when ``None``:

    mass_apply(q, p, v), mass_jacobian_apply(q, p, u, v)  [d_q M(u) v],
    mass_second_apply(q, p, u, v, w)  [d_qq M(u, v) w],
    mass_param_gradient_apply(q, p, j, v)  [d_{a_j} M v].

    ``polynomial_degree`` of ``None`` marks the residual as non-polynomial;
    harmonic balance requires degree <= 3.
    """

    name: str
    dim: int
    parameters: Parameters
    residual: Callable
    jacobian: Callable
    param_gradient: Callable
    hessian_apply: Callable
    third_apply: Callable
    mixed_param_jacobian_apply: Callable
    default_state: np.ndarray = None
    mass_apply: Optional[Callable] = None
    mass_jacobian_apply: Optional[Callable] = None
    mass_second_apply: Optional[Callable] = None
    mass_param_gradient_apply: Optional[Callable] = None
    identity_mass: bool = True
    polynomial_degree: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.default_state is None:
            self.default_state = np.zeros(self.dim)
        self.default_state = np.asarray(self.default_state, dtype=np.float64)
        if self.default_state.shape != (self.dim,):
            raise ValueError("default_state must have shape (dim,)")

    # mass operator with identity/constant defaults

    def mass(self, q, p, v):
        if self.mass_apply is None:
            return np.asarray(v).copy()
        return self.mass_apply(q, p, v)

    def mass_matrix(self, q, p) -> sp.csr_matrix:
        """Assemble M column-by-column; cheap identity fast path."""
        if self.mass_apply is None:
            return sp.identity(self.dim, format="csr")
        cols = [self.mass_apply(q, p, e) for e in np.eye(self.dim)]
        return sp.csr_matrix(np.column_stack(cols))

    def dmass_state(self, q, p, u, v):
        if self.mass_jacobian_apply is None:
            return np.zeros_like(np.asarray(v))
        return self.mass_jacobian_apply(q, p, u, v)

    def dmass_state2(self, q, p, u, v, w):
        if self.mass_second_apply is None:
            return np.zeros_like(np.asarray(w))
        return self.mass_second_apply(q, p, u, v, w)

    def dmass_param(self, q, p, j, v):
        if self.mass_param_gradient_apply is None:
            return np.zeros_like(np.asarray(v))
        return self.mass_param_gradient_apply(q, p, j, v)

    @property
    def hb_capable(self) -> bool:
        return self.polynomial_degree is not None and self.polynomial_degree <= 3


def _interior_laplacian(m: int) -> sp.csr_matrix:
    """Second-difference matrix (1, -2, 1) on m interior points."""
    main = -2.0 * np.ones(m)
    off = np.ones(m - 1)
    return sp.diags([off, main, off], offsets=[-1, 0, 1], format="csr")


def brusselator_1d(grid_points: int = 201, **overrides) -> ProblemDefinition:
    """Two-species reaction-diffusion system on [0, 1] with Dirichlet ends.

        X_t = A - (B+1) X + X^2 Y + (D_X / L^2) X_xx
        Y_t = B X - X^2 Y + (D_Y / L^2) Y_xx

    Discretized with second-order central differences on ``grid_points``
    equally spaced points; the Dirichlet values X = A, Y = B/A at both ends
    are eliminated, leaving 2 * (grid_points - 2) unknowns ordered
    ``[X_1..X_m, Y_1..Y_m]``.  Residual orientation is ``q' = -R(q)``, so the
    base state ``(A, B/A)`` has exactly zero residual.  The domain length L
    is the default continuation parameter.
    """
    if grid_points < 3:
        raise ValueError("need at least 3 grid points")
    m = grid_points - 2
    dx = 1.0 / (grid_points - 1)
    lap = _interior_laplacian(m)
    ends = np.zeros(m)
    ends[0] = 1.0
    ends[-1] = 1.0

    params = Parameters(
        names=("A", "B", "DX", "DY", "L"),
        values=np.array([2.0, 5.45, 0.008, 0.004, 0.5]),
        active_index=4,
    )
    for k, v in overrides.items():
        params = params.with_value(k, v)

    def split(q):
        return q[:m], q[m:]

    def coeffs(p):
        a = p.values
        return a[0], a[1], a[2] / (a[4] ** 2 * dx * dx), a[3] / (a[4] ** 2 * dx * dx)

    def diffusion_terms(q, p):
        """(lap X + bc_X, lap Y + bc_Y) without diffusivity prefactors."""
        x, y = split(q)
        aa, bb, _, _ = coeffs(p)
        return lap @ x + aa * ends, lap @ y + (bb / aa) * ends

    def residual(q, p):
        x, y = split(q)
        aa, bb, cx, cy = coeffs(p)
        dub_x, dub_y = diffusion_terms(q, p)
        rx = -aa + (bb + 1.0) * x - x * x * y - cx * dub_x
        ry = -bb * x + x * x * y - cy * dub_y
        return np.concatenate([rx, ry])

    def jacobian(q, p):
        x, y = split(q)
        _, bb, cx, cy = coeffs(p)
        two_xy = 2.0 * x * y
        xsq = x * x
        jxx = sp.diags((bb + 1.0) - two_xy) - cx * lap
        jxy = sp.diags(-xsq)
        jyx = sp.diags(-bb + two_xy)
        jyy = sp.diags(xsq) - cy * lap
        return sp.bmat([[jxx, jxy], [jyx, jyy]], format="csr")

    def param_gradient(q, p, j):
        x, y = split(q)
        a = p.values
        aa, bb, cx, cy = coeffs(p)
        dub_x, dub_y = diffusion_terms(q, p)
        g = np.zeros(2 * m)
        if j == 0:  # A: source and both boundary injections
            g[:m] = -1.0 - cx * ends
            g[m:] = cy * (bb / aa**2) * ends
        elif j == 1:  # B
            g[:m] = x
            g[m:] = -x - cy * (1.0 / aa) * ends
        elif j == 2:  # DX
            g[:m] = -dub_x / (a[4] ** 2 * dx * dx)
        elif j == 3:  # DY
            g[m:] = -dub_y / (a[4] ** 2 * dx * dx)
        elif j == 4:  # L
            g[:m] = (2.0 * cx / a[4]) * dub_x
            g[m:] = (2.0 * cy / a[4]) * dub_y
        else:
            raise IndexError(f"parameter index {j} out of range")
        return g

    def hessian_apply(q, p, u, v):
        x, y = split(q)
        ux, uy = split(np.asarray(u))
        vx, vy = split(np.asarray(v))
        core = 2.0 * y * ux * vx + 2.0 * x * (ux * vy + uy * vx)
        return np.concatenate([-core, core])

    def third_apply(q, p, u, v, w):
        ux, uy = split(np.asarray(u))
        vx, vy = split(np.asarray(v))
        wx, wy = split(np.asarray(w))
        core = 2.0 * (ux * vx * wy + ux * vy * wx + uy * vx * wx)
        return np.concatenate([-core, core])

    def mixed_param_jacobian_apply(q, p, j, v):
        a = p.values
        vx, vy = split(np.asarray(v))
        out = np.zeros(2 * m, dtype=np.asarray(v).dtype)
        if j == 1:  # B
            out[:m] = vx
            out[m:] = -vx
        elif j == 2:  # DX
            out[:m] = -(lap @ vx) / (a[4] ** 2 * dx * dx)
        elif j == 3:  # DY
            out[m:] = -(lap @ vy) / (a[4] ** 2 * dx * dx)
        elif j == 4:  # L
            cx = a[2] / (a[4] ** 2 * dx * dx)
            cy = a[3] / (a[4] ** 2 * dx * dx)
            out[:m] = (2.0 * cx / a[4]) * (lap @ vx)
            out[m:] = (2.0 * cy / a[4]) * (lap @ vy)
        elif j != 0:
            raise IndexError(f"parameter index {j} out of range")
        return out

    a0, b0 = params["A"], params["B"]
    base = np.concatenate([np.full(m, a0), np.full(m, b0 / a0)])
    return ProblemDefinition(
        name="brusselator_1d",
        dim=2 * m,
        parameters=params,
        residual=residual,
        jacobian=jacobian,
        param_gradient=param_gradient,
        hessian_apply=hessian_apply,
        third_apply=third_apply,
        mixed_param_jacobian_apply=mixed_param_jacobian_apply,
        default_state=base,
        polynomial_degree=3,
        meta={"grid_points": grid_points, "interior": m},
    )


def brusselator_0d(**overrides) -> ProblemDefinition:
    """Well-mixed two-variable reduction; Hopf at B = A^2 + 1 with omega = A."""
    params = Parameters(names=("A", "B"), values=np.array([2.0, 4.0]), active_index=1)
    for k, v in overrides.items():
        params = params.with_value(k, v)

    def residual(q, p):
        a, b = p.values
        x, y = q
        return np.array([-a + (b + 1.0) * x - x * x * y, -b * x + x * x * y])

    def jacobian(q, p):
        _, b = p.values
        x, y = q
        return sp.csr_matrix(
            np.array([[(b + 1.0) - 2.0 * x * y, -x * x], [-b + 2.0 * x * y, x * x]])
        )

    def param_gradient(q, p, j):
        x = q[0]
        if j == 0:
            return np.array([-1.0, 0.0])
        if j == 1:
            return np.array([x, -x])
        raise IndexError(f"parameter index {j} out of range")

    def hessian_apply(q, p, u, v):
        x, y = q
        u = np.asarray(u)
        v = np.asarray(v)
        core = 2.0 * y * u[0] * v[0] + 2.0 * x * (u[0] * v[1] + u[1] * v[0])
        return np.array([-core, core])

    def third_apply(q, p, u, v, w):
        u, v, w = np.asarray(u), np.asarray(v), np.asarray(w)
        core = 2.0 * (u[0] * v[0] * w[1] + u[0] * v[1] * w[0] + u[1] * v[0] * w[0])
        return np.array([-core, core])

    def mixed_param_jacobian_apply(q, p, j, v):
        v = np.asarray(v)
        if j == 0:
            return np.zeros(2, dtype=v.dtype)
        if j == 1:
            return np.array([v[0], -v[0]])
        raise IndexError(f"parameter index {j} out of range")

    a0, b0 = params["A"], params["B"]
    return ProblemDefinition(
        name="brusselator_0d",
        dim=2,
        parameters=params,
        residual=residual,
        jacobian=jacobian,
        param_gradient=param_gradient,
        hessian_apply=hessian_apply,
        third_apply=third_apply,
        mixed_param_jacobian_apply=mixed_param_jacobian_apply,
        default_state=np.array([a0, b0 / a0]),
        polynomial_degree=3,
    )


def scalar_fold(**overrides) -> ProblemDefinition:
    """R = q^2 + a1; fold of equilibria at (q, a1) = (0, 0)."""
    params = Parameters(names=("a1",), values=np.array([-1.0]))
    for k, v in overrides.items():
        params = params.with_value(k, v)
    return ProblemDefinition(
        name="scalar_fold",
        dim=1,
        parameters=params,
        residual=lambda q, p: q * q + p.values[0],
        jacobian=lambda q, p: sp.csr_matrix(np.array([[2.0 * q[0]]])),
        param_gradient=lambda q, p, j: np.ones(1),
        hessian_apply=lambda q, p, u, v: 2.0 * np.asarray(u) * np.asarray(v),
        third_apply=lambda q, p, u, v, w: np.zeros(1, dtype=np.result_type(u, v, w)),
        mixed_param_jacobian_apply=lambda q, p, j, v: np.zeros(1, dtype=np.asarray(v).dtype),
        default_state=np.array([2.0]),
        polynomial_degree=2,
    )


def scalar_pitchfork(**overrides) -> ProblemDefinition:
    """R = q^3 - a1 q; symmetric pitchfork of the trivial branch at a1 = 0."""
    params = Parameters(names=("a1",), values=np.array([1.0]))
    for k, v in overrides.items():
        params = params.with_value(k, v)
    return ProblemDefinition(
        name="scalar_pitchfork",
        dim=1,
        parameters=params,
        residual=lambda q, p: q**3 - p.values[0] * q,
        jacobian=lambda q, p: sp.csr_matrix(np.array([[3.0 * q[0] ** 2 - p.values[0]]])),
        param_gradient=lambda q, p, j: -q.astype(np.float64),
        hessian_apply=lambda q, p, u, v: 6.0 * q * np.asarray(u) * np.asarray(v),
        third_apply=lambda q, p, u, v, w: 6.0 * np.asarray(u) * np.asarray(v) * np.asarray(w),
        mixed_param_jacobian_apply=lambda q, p, j, v: -np.asarray(v),
        default_state=np.array([0.5]),
        polynomial_degree=3,
    )


def scalar_cusp(**overrides) -> ProblemDefinition:
    """R = q^3 + a2 q + a1; folds on 4 a2^3 + 27 a1^2 = 0, cusp at the origin."""
    params = Parameters(names=("a1", "a2"), values=np.array([0.0, 0.0]), active_index=0)
    for k, v in overrides.items():
        params = params.with_value(k, v)

    def param_gradient(q, p, j):
        if j == 0:
            return np.ones(1)
        if j == 1:
            return q.astype(np.float64)
        raise IndexError(f"parameter index {j} out of range")

    def mixed(q, p, j, v):
        v = np.asarray(v)
        if j == 0:
            return np.zeros(1, dtype=v.dtype)
        if j == 1:
            return v.copy()
        raise IndexError(f"parameter index {j} out of range")

    return ProblemDefinition(
        name="scalar_cusp",
        dim=1,
        parameters=params,
        residual=lambda q, p: q**3 + p.values[1] * q + p.values[0],
        jacobian=lambda q, p: sp.csr_matrix(np.array([[3.0 * q[0] ** 2 + p.values[1]]])),
        param_gradient=param_gradient,
        hessian_apply=lambda q, p, u, v: 6.0 * q * np.asarray(u) * np.asarray(v),
        third_apply=lambda q, p, u, v, w: 6.0 * np.asarray(u) * np.asarray(v) * np.asarray(w),
        mixed_param_jacobian_apply=mixed,
        default_state=np.array([1.0]),
        polynomial_degree=3,
    )


PROBLEMS = {
    "brusselator_1d": brusselator_1d,
    "brusselator_0d": brusselator_0d,
    "scalar_fold": scalar_fold,
    "scalar_pitchfork": scalar_pitchfork,
    "scalar_cusp": scalar_cusp,
}


def get_problem(name: str, **options) -> ProblemDefinition:
    """Instantiate a built-in problem by name; parameter overrides as kwargs."""
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; available: {sorted(PROBLEMS)}") from None
    return factory(**options)


@dataclass
class DerivativeReport:
    """Max relative errors per callback family from central finite differences."""

    errors: dict
    finite: bool
    step: float

    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    def ok(self, tol: float = 1e-6) -> bool:
        return self.finite and self.max_error() < tol


def _rel_err(analytic, reference) -> float:
    analytic = np.asarray(analytic, dtype=np.complex128)
    reference = np.asarray(reference, dtype=np.complex128)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(reference))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - reference) / scale)


def check_derivatives(
    problem: ProblemDefinition,
    q=None,
    params: Parameters | None = None,
    trials: int = 5,
    seed: int = 0,
) -> DerivativeReport:
    """Compare every derivative callback against central finite differences.

    The FD step is ``eps**(1/3) * max(1, ||q||)``.  Random directions are
    drawn from a seeded generator so reports are reproducible.  Mismatches do
    not raise; they show up as O(1) relative errors in the report.
    """
    p = params if params is not None else problem.parameters
    q = problem.default_state.copy() if q is None else np.asarray(q, dtype=np.float64)
    rng = np.random.default_rng(seed)
    h = np.finfo(float).eps ** (1.0 / 3.0) * max(1.0, float(np.linalg.norm(q)))
    errs: dict = {}
    finite = True

    def note(key, val):
        nonlocal finite
        if not np.isfinite(val):
            finite = False
        errs[key] = max(errs.get(key, 0.0), val)

    for _ in range(trials):
        u = rng.standard_normal(problem.dim)
        v = rng.standard_normal(problem.dim)
        w = rng.standard_normal(problem.dim)

        jac = problem.jacobian(q, p)
        fd = (problem.residual(q + h * v, p) - problem.residual(q - h * v, p)) / (2 * h)
        note("jacobian", _rel_err(jac @ v, fd))

        hess = problem.hessian_apply(q, p, u, v)
        fd = (
            problem.jacobian(q + h * u, p) @ v - problem.jacobian(q - h * u, p) @ v
        ) / (2 * h)
        note("hessian", _rel_err(hess, fd))

        third = problem.third_apply(q, p, u, v, w)
        fd = (
            problem.hessian_apply(q + h * w, p, u, v)
            - problem.hessian_apply(q - h * w, p, u, v)
        ) / (2 * h)
        note("third", _rel_err(third, fd))

        fdm = (problem.mass(q + h * u, p, v) - problem.mass(q - h * u, p, v)) / (2 * h)
        note("mass_jacobian", _rel_err(problem.dmass_state(q, p, u, v), fdm))

        fdm = (
            problem.dmass_state(q + h * w, p, u, v)
            - problem.dmass_state(q - h * w, p, u, v)
        ) / (2 * h)
        note("mass_second", _rel_err(problem.dmass_state2(q, p, u, v, w), fdm))

        for j in range(len(p.names)):
            hj = np.finfo(float).eps ** (1.0 / 3.0) * max(1.0, abs(p.values[j]))
            pp = p.with_value(j, p.values[j] + hj)
            pm = p.with_value(j, p.values[j] - hj)
            fd = (problem.residual(q, pp) - problem.residual(q, pm)) / (2 * hj)
            note("param_gradient", _rel_err(problem.param_gradient(q, p, j), fd))

            fd = (problem.jacobian(q, pp) @ v - problem.jacobian(q, pm) @ v) / (2 * hj)
            note(
                "mixed_param_jacobian",
                _rel_err(problem.mixed_param_jacobian_apply(q, p, j, v), fd),
            )

            fd = (problem.mass(q, pp, v) - problem.mass(q, pm, v)) / (2 * hj)
            note("mass_param_gradient", _rel_err(problem.dmass_param(q, p, j, v), fd))

    return DerivativeReport(errors=errs, finite=finite, step=h)
