"""Sparse matrices, LU factorization, and bordered (arrowhead) solves.

Everything at this layer is real arithmetic.  Complex shifted operators
``P + iQ`` are handled through their doubled real form so that downstream
modules never need a complex factorization.

All routines are pure: factor objects can be reused for any number of solves
and are never mutated by them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import BorderedSingularError, SingularMatrixError

# Relative pivot threshold below which a factorization is declared singular.
PIVOT_RTOL = 1e-14


def as_csr(a) -> sp.csr_matrix:
    """Coerce a dense array or any scipy sparse matrix to CSR with float64 data."""
    if sp.issparse(a):
        return a.tocsr().astype(np.float64)
    return sp.csr_matrix(np.asarray(a, dtype=np.float64))


def identity(n: int) -> sp.csr_matrix:
    return sp.identity(n, format="csr")


class Factorization:
    """Exact sparse LU of a square real matrix.

    Parameters
    ----------
    matrix : scipy sparse or dense, square
        Matrix to factor.  Stored internally as CSC for the factorization.

    Raises
    ------
    SingularMatrixError
        If structural elimination fails or the smallest pivot falls below
        ``PIVOT_RTOL`` times the largest row sum of the matrix.
    """

    def __init__(self, matrix):
        a = as_csr(matrix)
        if a.shape[0] != a.shape[1]:
            raise ValueError(f"matrix must be square, got {a.shape}")
        self.shape = a.shape
        self._row_norm = float(np.abs(a).sum(axis=1).max()) if a.nnz else 0.0
        try:
            self._lu = spla.splu(a.tocsc())
        except RuntimeError as exc:  # SuperLU reports exact singularity this way
            raise SingularMatrixError(f"sparse LU failed: {exc}", pivot=0.0) from exc
        pivots = np.abs(self._lu.U.diagonal())
        pmin = float(pivots.min()) if pivots.size else 0.0
        if pmin < PIVOT_RTOL * self._row_norm or pmin == 0.0:
            raise SingularMatrixError(
                f"matrix numerically singular: min pivot {pmin:.3e} "
                f"against row norm {self._row_norm:.3e}",
                pivot=pmin,
            )

    def solve(self, b, transpose: bool = False):
        """Solve ``A x = b`` (or ``A^T x = b``).  Accepts real or complex ``b``
        and 1-D or 2-D right-hand sides; complex systems are solved as two
        real solves against the same factorization."""
        b = np.asarray(b)
        if b.shape[0] != self.shape[0]:
            raise ValueError(f"rhs length {b.shape[0]} != {self.shape[0]}")
        trans = "T" if transpose else "N"
        if np.iscomplexobj(b):
            xr = self._lu.solve(np.ascontiguousarray(b.real), trans=trans)
            xi = self._lu.solve(np.ascontiguousarray(b.imag), trans=trans)
            return xr + 1j * xi
        return self._lu.solve(np.ascontiguousarray(b, dtype=np.float64), trans=trans)


def factor(matrix) -> Factorization:
    """Factor a square real sparse matrix; see :class:`Factorization`."""
    return Factorization(matrix)


class ComplexFactorization:
    """LU of ``C = P + iQ`` (P, Q real sparse) via the doubled real form.

    The doubled matrix ``[[P, -Q], [Q, P]]`` represents complex
    multiplication by C acting on stacked (real, imag) vectors; its transpose
    doubles ``C^H``, so adjoint solves come from transpose solves of the same
    factorization.
    """

    def __init__(self, p, q):
        p = as_csr(p)
        q = as_csr(q)
        if p.shape != q.shape or p.shape[0] != p.shape[1]:
            raise ValueError("real and imaginary parts must be square and congruent")
        self.n = p.shape[0]
        doubled = sp.bmat([[p, -q], [q, p]], format="csr")
        self._fact = Factorization(doubled)

    def solve(self, b, adjoint: bool = False):
        """Solve ``C x = b`` or, with ``adjoint=True``, ``C^H x = b``."""
        b = np.asarray(b, dtype=np.complex128)
        if b.shape[0] != self.n:
            raise ValueError(f"rhs length {b.shape[0]} != {self.n}")
        stacked = np.concatenate([b.real, b.imag])
        z = self._fact.solve(stacked, transpose=adjoint)
        return z[: self.n] + 1j * z[self.n :]


def factor_complex(p, q) -> ComplexFactorization:
    """Factor ``P + iQ`` through its doubled real form."""
    return ComplexFactorization(p, q)


@dataclass
class BorderedSystem:
    """Square system with a sparse core and k dense borders::

        [ core          border_cols ] [x]   [rhs_top   ]
        [ border_rows   corner      ] [y] = [rhs_bottom]

    ``core`` is n-by-n sparse, ``border_cols`` n-by-k, ``border_rows`` k-by-n,
    ``corner`` k-by-k.
    """

    core: object
    border_cols: np.ndarray
    border_rows: np.ndarray
    corner: np.ndarray

    def __post_init__(self):
        self.border_cols = np.atleast_2d(np.asarray(self.border_cols, dtype=np.float64))
        self.border_rows = np.atleast_2d(np.asarray(self.border_rows, dtype=np.float64))
        self.corner = np.atleast_2d(np.asarray(self.corner, dtype=np.float64))
        n = self.core.shape[0]
        if self.border_cols.shape[0] != n:
            # allow (k, n) input orientation for columns passed as rows of vectors
            if self.border_cols.shape[1] == n:
                self.border_cols = self.border_cols.T
            else:
                raise ValueError("border_cols shape incompatible with core")
        k = self.border_cols.shape[1]
        if self.border_rows.shape != (k, n):
            raise ValueError("border_rows must be (k, n)")
        if self.corner.shape != (k, k):
            raise ValueError("corner must be (k, k)")
        self.k = k
        self.n = n


@dataclass
class BorderedSolution:
    """Solution of a bordered system plus reusable intermediates.

    ``core_border_solves`` holds ``core^-1 @ border_cols`` (n-by-k); the
    continuation corrector harvests the refreshed branch tangent from it.
    """

    x: np.ndarray
    y: np.ndarray
    core_border_solves: np.ndarray
    schur: np.ndarray = field(repr=False, default=None)


def solve_bordered(
    system: BorderedSystem,
    rhs_top,
    rhs_bottom,
    fact: Factorization | None = None,
    refine: int = 2,
) -> BorderedSolution:
    """Solve a bordered system by block Schur elimination on the core.

    Parameters
    ----------
    system : BorderedSystem
    rhs_top : (n,) array
    rhs_bottom : (k,) array
    fact : Factorization, optional
        Reused factorization of ``system.core``; factored here when absent.
    refine : int
        Number of iterative-refinement passes through the same elimination.
        Refinement measures the residual of the *full* augmented system, so
        accuracy survives ill-conditioned cores (e.g. on fold curves) as long
        as the bordered matrix itself is well conditioned.

    Raises
    ------
    BorderedSingularError
        If the k-by-k Schur complement is numerically singular.
    SingularMatrixError
        If the core cannot be factored and no ``fact`` was supplied.
    """
    f = np.asarray(rhs_top, dtype=np.float64)
    g = np.atleast_1d(np.asarray(rhs_bottom, dtype=np.float64))
    if fact is None:
        fact = factor(system.core)
    b = system.border_cols
    c = system.border_rows
    d = system.corner
    xb = fact.solve(b)  # core^-1 B, one solve per border column
    if xb.ndim == 1:
        xb = xb[:, None]
    schur = d - c @ xb
    sv = np.linalg.svd(schur, compute_uv=False)
    if sv[-1] <= PIVOT_RTOL * max(sv[0], 1.0):
        raise BorderedSingularError(
            f"Schur complement singular (singular values {sv})"
        )

    def eliminate(ft, gb):
        xf = fact.solve(ft)
        y = np.linalg.solve(schur, gb - c @ xf)
        x = xf - xb @ y
        return x, y

    x, y = eliminate(f, g)
    core = system.core
    for _ in range(max(0, refine)):
        r_top = f - (core @ x + b @ y)
        r_bot = g - (c @ x + d @ y)
        dx, dy = eliminate(r_top, r_bot)
        x = x + dx
        y = y + dy
    return BorderedSolution(x=x, y=y, core_border_solves=xb, schur=schur)
