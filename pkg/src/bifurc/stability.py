"""Generalized eigenvalue analysis of ``[lambda * M + d_q R] q_hat = 0``.

Eigenvalues are growth rates: a steady state is unstable when any
``sigma = Re(lambda)`` exceeds the tolerance.  The solver is shift-and-invert
Arnoldi with full reorthogonalization and restarts; complex shifts are
factored in real arithmetic through the doubled form.  Small pencils
(n <= 200) fall back to a dense full-spectrum solve, which doubles as the
independent reference for the Krylov path in the tests.

Adjoint (left) modes come from the same factorization via transpose solves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import linalg
from .errors import EigsConvergenceError, ShiftSingularError
from .problem import Parameters, ProblemDefinition

DENSE_CUTOFF = 200
EIG_TOL = 1e-8
SIGMA_TOL = 1e-8


@dataclass
class EigenPair:
    """One eigensolution of the pencil.

    ``value`` is the growth-rate eigenvalue lambda, ``mode`` the unit-norm
    right eigenvector (phase fixed: largest component real positive),
    ``adjoint`` the left eigenvector when requested, ``residual`` the 2-norm
    of ``(lambda M + A) mode``.
    """

    value: complex
    mode: np.ndarray
    residual: float
    adjoint: np.ndarray = None
    adjoint_residual: float = None

    @property
    def growth_rate(self) -> float:
        return float(self.value.real)

    @property
    def frequency(self) -> float:
        return float(self.value.imag)


def _normalize_phase(vec: np.ndarray) -> np.ndarray:
    v = np.asarray(vec, dtype=np.complex128)
    nrm = np.linalg.norm(v)
    if nrm == 0.0:
        return v
    v = v / nrm
    k = int(np.argmax(np.abs(v)))
    pivot = v[k]
    if abs(pivot) > 0:
        v = v * (abs(pivot) / pivot)
    return v


def _pencil_residual(a, m, lam, vec) -> float:
    return float(np.linalg.norm(lam * (m @ vec) + a @ vec))


def _sort_key(shift):
    def key(pair):
        d = abs(pair.value - shift)
        return (round(d, 12), -pair.value.imag, pair.value.real)

    return key


def _dense_pairs(a, m, shift, nev, want_adjoint):
    ad = np.asarray(a.todense(), dtype=np.float64)
    md = np.asarray(m.todense(), dtype=np.float64)
    if want_adjoint:
        w, vl, vr = scipy.linalg.eig(-ad, md, left=True, right=True)
    else:
        w, vr = scipy.linalg.eig(-ad, md)
        vl = None
    pairs = []
    for i in range(len(w)):
        lam = complex(w[i])
        if not np.isfinite(lam.real) or not np.isfinite(lam.imag):
            continue  # infinite eigenvalue of a singular mass operator
        mode = _normalize_phase(vr[:, i])
        pair = EigenPair(lam, mode, _pencil_residual(a, m, lam, mode))
        if vl is not None:
            adj = _normalize_phase(vl[:, i])
            pair.adjoint = adj
            pair.adjoint_residual = float(
                np.linalg.norm(np.conj(lam) * (m.T @ adj) + a.T @ adj)
            )
        pairs.append(pair)
    pairs.sort(key=_sort_key(shift))
    return pairs[:nev]


class _ShiftInvertOp:
    """v -> (shift*M + A)^-1 M v in real arithmetic.

    Real shifts factor the real matrix directly; complex shifts factor the
    doubled real form, and vectors are packed as [Re; Im] blocks of length 2n.
    """

    def __init__(self, a, m, shift, transpose=False):
        self.m = m
        self.transpose = transpose
        self.complex_shift = abs(complex(shift).imag) != 0.0
        try:
            if self.complex_shift:
                p = complex(shift).real * m + a
                q = complex(shift).imag * m
                self.fact = linalg.factor_complex(p, q)
            else:
                self.fact = linalg.factor(complex(shift).real * m + a)
        except linalg.SingularMatrixError as exc:
            raise ShiftSingularError(
                f"shifted operator singular at shift {shift}: {exc}"
            ) from exc
        self.n = a.shape[0]
        self.dim = 2 * self.n if self.complex_shift else self.n

    def apply(self, v: np.ndarray) -> np.ndarray:
        if self.complex_shift:
            z = v[: self.n] + 1j * v[self.n :]
            rhs = (self.m.T @ z) if self.transpose else (self.m @ z)
            w = self.fact.solve(rhs, adjoint=self.transpose)
            return np.concatenate([w.real, w.imag])
        rhs = (self.m.T @ v) if self.transpose else (self.m @ v)
        return self.fact.solve(rhs, transpose=self.transpose)


def _arnoldi(op: _ShiftInvertOp, v0: np.ndarray, m: int):
    """Arnoldi with full (two-pass) reorthogonalization.

    Returns (V, H, k) with V of shape (n, k+1), H of shape (k+1, k); k < m
    signals a happy breakdown (exact invariant subspace).
    """
    n = op.dim
    m = min(m, n)
    v = np.zeros((n, m + 1))
    h = np.zeros((m + 1, m))
    v[:, 0] = v0 / np.linalg.norm(v0)
    for j in range(m):
        w = op.apply(v[:, j])
        for _ in range(2):
            c = v[:, : j + 1].T @ w
            h[: j + 1, j] += c
            w -= v[:, : j + 1] @ c
        hn = np.linalg.norm(w)
        h[j + 1, j] = hn
        if hn < 1e-14 * max(1.0, np.abs(h[: j + 1, j]).max()):
            return v[:, : j + 1], h[: j + 2, : j + 1], j + 1
        v[:, j + 1] = w / hn
    return v, h, m


def _candidates_from_ritz(op, v, h, k, shift):
    """Ritz pairs of the Hessenberg mapped back to pencil coordinates.

    Returns a list of (lambda, complex mode) candidates; for complex shifts
    both the operator and its conjugate contribute Ritz values, so candidate
    modes from both interpretations are returned and the projection step
    downstream keeps whichever actually solves the pencil.
    """
    theta, svec = np.linalg.eig(h[:k, :k])
    out = []
    for i in range(len(theta)):
        th = complex(theta[i])
        if th == 0.0:
            continue
        u = v[:, :k] @ svec[:, i]
        if op.complex_shift:
            n = op.n
            z_direct = u[:n]  # eigvec of C^-1 M stacked as [z; -iz]
            z_conj = np.conj(u[:n])  # eigvec of the conjugate block
            out.append((shift - 1.0 / th, z_direct))
            out.append((shift - 1.0 / np.conj(th), z_conj))
        else:
            out.append((shift - 1.0 / th, u))
    return out


def _project_refine(a, m, basis, shift, nev):
    """Rayleigh-Ritz of the original pencil on span(basis) (complex, onb)."""
    q, _ = np.linalg.qr(basis)
    hp = q.conj().T @ (a @ q)
    mp = q.conj().T @ (m @ q)
    w, y = scipy.linalg.eig(-hp, mp)
    pairs = []
    for i in range(len(w)):
        lam = complex(w[i])
        if not (np.isfinite(lam.real) and np.isfinite(lam.imag)):
            continue
        mode = _normalize_phase(q @ y[:, i])
        pairs.append(EigenPair(lam, mode, _pencil_residual(a, m, lam, mode)))
    pairs.sort(key=_sort_key(shift))
    return pairs[:nev]


def _krylov_pairs(a, m, shift, nev, tol, krylov_dim, max_restarts, seed):
    op = _ShiftInvertOp(a, m, shift)
    kdim = krylov_dim or max(2 * nev + 10, 30)
    kdim = min(kdim, op.dim)
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(op.dim)
    best = None
    for restart in range(max_restarts):
        v, h, k = _arnoldi(op, v0, kdim)
        cands = _candidates_from_ritz(op, v, h, k, shift)
        if not cands:
            v0 = rng.standard_normal(op.dim)
            continue
        cands.sort(key=lambda c: abs(c[0] - shift))
        keep = [c[1] for c in cands[: max(2 * nev + 4, nev)]]
        basis = np.column_stack(keep)
        pairs = _project_refine(a, m, basis, shift, nev)
        if best is None or max(p.residual for p in pairs) < max(
            p.residual for p in best
        ):
            best = pairs
        if pairs and max(p.residual for p in pairs) < tol:
            return pairs
        # restart from the current best subspace, packed back into one
        # real vector so no information leaves real arithmetic
        mix = np.zeros(op.dim)
        for j, p in enumerate(pairs):
            vec = p.mode
            if op.complex_shift:
                stacked = np.concatenate([vec.real, vec.imag])
            else:
                stacked = vec.real + vec.imag
            mix += stacked / (j + 1.0)
        nrm = np.linalg.norm(mix)
        v0 = mix / nrm if nrm > 0 else rng.standard_normal(op.dim)
    worst = max(p.residual for p in best) if best else np.inf
    raise EigsConvergenceError(
        f"eigensolver did not reach tol={tol:g} in {max_restarts} restarts "
        f"(best residual {worst:.3e})"
    )


def _attach_adjoints(a, m, shift, pairs, tol, krylov_dim, max_restarts, seed):
    """Left eigenvectors via the transpose operator on the same shift."""
    op = _ShiftInvertOp(a, m, shift, transpose=True)
    kdim = krylov_dim or max(2 * len(pairs) + 10, 30)
    kdim = min(kdim, op.dim)
    rng = np.random.default_rng(seed + 1)
    at = a.T.tocsr()
    mt = m.T.tocsr()
    targets = [np.conj(p.value) for p in pairs]
    found = {}
    for _ in range(max_restarts):
        v0 = rng.standard_normal(op.dim)
        v, h, k = _arnoldi(op, v0, kdim)
        # transpose-op Ritz values theta' correspond to direct eigenvalues
        # lambda with conj(theta') = 1/(shift - lambda)
        theta, svec = np.linalg.eig(h[:k, :k])
        cands = []
        for i in range(len(theta)):
            th = complex(theta[i])
            if th == 0.0:
                continue
            u = v[:, :k] @ svec[:, i]
            if op.complex_shift:
                cands.append(u[: op.n])
                cands.append(np.conj(u[: op.n]))
            else:
                cands.append(u)
        basis = np.column_stack(cands)
        q, _ = np.linalg.qr(basis)
        for idx, lam_bar in enumerate(targets):
            if idx in found:
                continue
            # minimize ||(conj(lam) M^T + A^T) w|| over the subspace
            opmat = np.asarray((lam_bar * mt + at) @ q)
            _, sv, vh = np.linalg.svd(opmat, full_matrices=False)
            w = _normalize_phase(q @ vh[-1].conj())
            res = float(np.linalg.norm(lam_bar * (mt @ w) + at @ w))
            if res < tol:
                found[idx] = (w, res)
        if len(found) == len(pairs):
            break
    for idx, p in enumerate(pairs):
        if idx in found:
            p.adjoint, p.adjoint_residual = found[idx]
        else:
            raise EigsConvergenceError(
                f"adjoint mode for lambda={p.value} did not converge"
            )
    return pairs


def solve_pencil(
    a,
    m=None,
    shift: complex = 0.0,
    nev: int = 6,
    tol: float = EIG_TOL,
    want_adjoint: bool = False,
    method: str = "auto",
    krylov_dim: int | None = None,
    max_restarts: int = 50,
    seed: int = 7,
) -> list:
    """Eigenpairs of ``[lambda M + A] x = 0`` nearest ``shift``.

    ``method`` is ``"auto"`` (dense for n <= 200, Krylov otherwise),
    ``"dense"``, or ``"arnoldi"``.  Results are sorted by distance to the
    shift.  Every returned pair satisfies ``residual < tol`` on the Krylov
    path; the dense path reports whatever LAPACK achieved.
    """
    a = linalg.as_csr(a)
    n = a.shape[0]
    m = sp.identity(n, format="csr") if m is None else linalg.as_csr(m)
    if m.shape != a.shape:
        raise ValueError("mass and Jacobian shapes differ")
    nev = min(nev, n)
    if method not in ("auto", "dense", "arnoldi"):
        raise ValueError(f"unknown method {method!r}")
    use_dense = method == "dense" or (method == "auto" and n <= DENSE_CUTOFF)
    if use_dense:
        return _dense_pairs(a, m, shift, nev, want_adjoint)
    pairs = _krylov_pairs(a, m, shift, nev, tol, krylov_dim, max_restarts, seed)
    if want_adjoint:
        _attach_adjoints(a, m, shift, pairs, tol, krylov_dim, max_restarts, seed)
    return pairs


def eigs(
    problem: ProblemDefinition,
    q,
    params: Parameters | None = None,
    shift: complex = 0.0,
    nev: int = 6,
    **kwargs,
) -> list:
    """Leading eigenpairs of the steady state ``q`` of ``problem``."""
    p = params if params is not None else problem.parameters
    a = problem.jacobian(np.asarray(q, dtype=np.float64), p)
    m = problem.mass_matrix(np.asarray(q, dtype=np.float64), p)
    return solve_pencil(a, m, shift=shift, nev=nev, **kwargs)


def classify_stability(pairs, sigma_tol: float = SIGMA_TOL) -> str:
    """"unstable" if any growth rate exceeds ``sigma_tol``, "marginal" if any
    sits within it, "stable" otherwise."""
    rates = [p.growth_rate for p in pairs]
    if any(s > sigma_tol for s in rates):
        return "unstable"
    if any(abs(s) <= sigma_tol for s in rates):
        return "marginal"
    return "stable"
