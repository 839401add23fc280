"""Shared numerical kernels: sparse products, Thomas elimination, cached
sparse LU and right-preconditioned GMRES."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when an elimination meets a (numerically) vanishing pivot."""


def as_csr(matrix) -> sp.csr_matrix:
    """Return ``matrix`` in canonical CSR form (sorted indices, no stored zeros)."""
    A = sp.csr_matrix(matrix, copy=True)
    A.eliminate_zeros()
    A.sort_indices()
    A.sum_duplicates()
    return A


def spmv(matrix: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    """Sparse matrix-vector product ``matrix @ x``.

    Row-major, index-ordered accumulation (the CSR kernel), so repeated calls
    are bitwise reproducible.
    """
    x = np.asarray(x)
    if matrix.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {matrix.shape} @ {x.shape}")
    return matrix @ x


# ---------------------------------------------------------------------------
# Thomas algorithm
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThomasFactors:
    """Elimination factors for a batch of tridiagonal systems.

    All arrays have shape ``(batch, n)``; ``lower[:, 0]`` and ``upper[:, -1]``
    are ignored.
    """

    lower: np.ndarray
    inv_pivot: np.ndarray
    upper_scaled: np.ndarray

    @property
    def n(self) -> int:
        return self.lower.shape[1]


def thomas_factor(lower, diag, upper, pivot_tol: float = 1e-14) -> ThomasFactors:
    """Factor one or many tridiagonal matrices without pivoting.

    ``diag`` may be 1-D (single system) or 2-D ``(batch, n)``; ``lower`` and
    ``upper`` broadcast against it.
    """
    diag = np.atleast_2d(np.asarray(diag))
    dtype = np.result_type(diag, np.asarray(lower), np.asarray(upper), np.float64)
    batch, n = diag.shape
    lo = np.broadcast_to(np.asarray(lower, dtype=dtype), (batch, n)).copy()
    up = np.broadcast_to(np.asarray(upper, dtype=dtype), (batch, n)).copy()
    d = diag.astype(dtype)
    scale = max(np.max(np.abs(d)), np.max(np.abs(lo)), np.max(np.abs(up)), 1e-300)

    inv_pivot = np.empty((batch, n), dtype=dtype)
    cp = np.zeros((batch, n), dtype=dtype)
    pivot = d[:, 0]
    for i in range(n):
        if i > 0:
            pivot = d[:, i] - lo[:, i] * cp[:, i - 1]
        bad = np.abs(pivot) <= pivot_tol * scale
        if np.any(bad):
            raise SingularMatrixError(
                f"vanishing pivot at row {i} (system {int(np.argmax(bad))})"
            )
        inv_pivot[:, i] = 1.0 / pivot
        if i < n - 1:
            cp[:, i] = up[:, i] * inv_pivot[:, i]
    return ThomasFactors(lower=lo, inv_pivot=inv_pivot, upper_scaled=cp)


def thomas_apply(factors: ThomasFactors, rhs: np.ndarray) -> np.ndarray:
    """Solve with precomputed factors; ``rhs`` has shape ``(batch, n)``."""
    lo, ip, cp = factors.lower, factors.inv_pivot, factors.upper_scaled
    rhs = np.atleast_2d(rhs)
    y = np.empty(np.broadcast_shapes(rhs.shape, ip.shape),
                 dtype=np.result_type(rhs, ip))
    y[:, 0] = rhs[:, 0] * ip[:, 0]
    for i in range(1, factors.n):
        y[:, i] = (rhs[:, i] - lo[:, i] * y[:, i - 1]) * ip[:, i]
    for i in range(factors.n - 2, -1, -1):
        y[:, i] -= cp[:, i] * y[:, i + 1]
    return y


def thomas_solve(lower, diag, upper, rhs) -> np.ndarray:
    """Solve a tridiagonal system ``T x = rhs`` by Thomas elimination.

    ``lower[i]`` multiplies ``x[i-1]`` and ``upper[i]`` multiplies ``x[i+1]``
    in row ``i`` (so ``lower[0]`` and ``upper[-1]`` are unused).
    """
    single = np.ndim(diag) == 1
    factors = thomas_factor(lower, diag, upper)
    x = thomas_apply(factors, np.atleast_2d(rhs))
    return x[0] if single else x


# ---------------------------------------------------------------------------
# Sparse LU
# ---------------------------------------------------------------------------

@dataclass
class LUFactorization:
    """A reusable sparse LU factorization (SuperLU)."""

    shape: tuple
    dtype: np.dtype
    _lu: spla.SuperLU = field(repr=False)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs)
        if np.iscomplexobj(rhs) and not np.issubdtype(self.dtype, np.complexfloating):
            return self._lu.solve(rhs.real) + 1j * self._lu.solve(rhs.imag)
        if np.issubdtype(self.dtype, np.complexfloating):
            rhs = rhs.astype(self.dtype)
        return self._lu.solve(rhs)


def sparse_lu(matrix) -> LUFactorization:
    """Factor a square sparse matrix; raises ``SingularMatrixError`` if singular."""
    A = sp.csc_matrix(matrix)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got {A.shape}")
    try:
        lu = spla.splu(A, permc_spec="COLAMD")
    except RuntimeError as exc:  # SuperLU reports exact singularity this way
        raise SingularMatrixError(str(exc)) from exc
    return LUFactorization(shape=A.shape, dtype=A.dtype, _lu=lu)


def lu_solve(factorization: LUFactorization, rhs: np.ndarray) -> np.ndarray:
    return factorization.solve(rhs)


# ---------------------------------------------------------------------------
# GMRES
# ---------------------------------------------------------------------------

@dataclass
class GmresOutcome:
    x: np.ndarray
    iterations: int
    residuals: list
    converged: bool
    breakdown: bool = False


def gmres(
    apply_A: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    x0: Optional[np.ndarray] = None,
    apply_P_inv: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    tol: float = 1e-10,
    max_iter: int = 500,
    breakdown_tol: float = 1e-14,
    atol: float = 0.0,
    reference: str = "initial",
) -> GmresOutcome:
    """Full (unrestarted) right-preconditioned GMRES with modified Gram-Schmidt.

    Stops when ``||b - A x_l|| <= max(tol * rho, atol)`` where ``rho`` is
    ``||b - A x_0||`` (``reference="initial"``) or ``||b||``
    (``reference="rhs"``). Convergence is read off
    the Hessenberg least-squares residual and confirmed by an explicit residual
    before it is reported; if the confirmation fails (roundoff), the cycle is
    restarted from the current iterate with the remaining budget.

    ``residuals`` holds the residual estimate after each iteration divided
    by ``rho``.
    """
    if reference not in ("initial", "rhs"):
        raise ValueError(f"unknown residual reference {reference!r}")
    b = np.asarray(b)
    if x0 is None:
        x = np.zeros_like(b, dtype=np.result_type(b, np.float64))
    else:
        x = np.array(x0, dtype=np.result_type(b, x0, np.float64))
    precond = apply_P_inv if apply_P_inv is not None else (lambda v: v)

    r = b - apply_A(x)
    beta0 = float(np.linalg.norm(r))
    if not np.isfinite(beta0):
        raise FloatingPointError("non-finite initial residual in GMRES")
    rho = beta0 if reference == "initial" else float(np.linalg.norm(b))
    rho = rho if rho > 0 else 1.0
    history = [beta0 / rho]
    target = max(tol * rho, atol)
    if beta0 <= target:
        return GmresOutcome(x=x, iterations=0, residuals=history, converged=True)

    total = 0
    breakdown = False
    while True:
        beta = float(np.linalg.norm(r))
        x, k, est, breakdown = _gmres_cycle(
            apply_A, precond, x, r, beta, target, max_iter - total, breakdown_tol
        )
        total += k
        history.extend(e / rho for e in est)
        r = b - apply_A(x)
        true_abs = float(np.linalg.norm(r))
        true_rel = true_abs / rho
        if not np.isfinite(true_rel):
            raise FloatingPointError("non-finite GMRES iterate")
        if true_abs <= target:
            history[-1] = true_rel
            return GmresOutcome(x=x, iterations=total, residuals=history,
                                converged=True, breakdown=breakdown)
        if breakdown or total >= max_iter or k == 0:
            return GmresOutcome(x=x, iterations=total, residuals=history,
                                converged=False, breakdown=breakdown)


def _gmres_cycle(apply_A, precond, x, r, beta, target, budget, breakdown_tol):
    m = max(budget, 0)
    dtype = np.result_type(r, np.float64)
    # Z keeps the preconditioned directions so that the update x + Z y is
    # consistent with the Arnoldi relation even if applying the
    # preconditioner is only accurate to rounding
    V = [r / beta]
    Z = []
    H = np.zeros((m + 1, m), dtype=dtype)
    cs = np.zeros(m, dtype=dtype)
    sn = np.zeros(m, dtype=dtype)
    g = np.zeros(m + 1, dtype=dtype)
    g[0] = beta
    estimates = []
    breakdown = False
    k = 0
    for j in range(m):
        Z.append(precond(V[j]))
        w = apply_A(Z[j])
        if not np.all(np.isfinite(w)):
            raise FloatingPointError(f"non-finite operator output at GMRES iteration {j + 1}")
        for i in range(j + 1):
            H[i, j] = np.vdot(V[i], w)
            w = w - H[i, j] * V[i]
        H[j + 1, j] = np.linalg.norm(w)
        for i in range(j):
            t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
            H[i + 1, j] = -np.conj(sn[i]) * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = t
        sub = H[j + 1, j]
        denom = np.hypot(abs(H[j, j]), abs(sub))
        if H[j, j] == 0:
            cs[j], sn[j] = 0.0, 1.0
        else:
            phase = H[j, j] / abs(H[j, j])
            cs[j] = abs(H[j, j]) / denom
            sn[j] = phase * np.conj(sub) / denom
        H[j, j] = cs[j] * H[j, j] + sn[j] * sub
        H[j + 1, j] = 0.0
        g[j + 1] = -np.conj(sn[j]) * g[j]
        g[j] = cs[j] * g[j]
        k = j + 1
        estimates.append(float(abs(g[j + 1])))
        if estimates[-1] <= target:
            break
        if abs(sub) < breakdown_tol * beta:
            breakdown = True
            break
        V.append(w / sub)
    if k == 0:
        return x, 0, estimates, breakdown
    y = _back_substitute(H[:k, :k], g[:k])
    return x + y @ np.array(Z[:k]), k, estimates, breakdown


def _back_substitute(R: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = R.shape[0]
    if np.any(np.diag(R) == 0):
        # singular after breakdown: minimum-norm least-squares step
        return np.linalg.lstsq(R, g, rcond=None)[0]
    y = np.zeros(k, dtype=np.result_type(R, g))
    for i in range(k - 1, -1, -1):
        y[i] = (g[i] - R[i, i + 1:] @ y[i + 1:]) / R[i, i]
    return y
