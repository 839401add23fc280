"""Parallel-in-time preconditioners for the all-at-once policy systems.

Two variants:

* ``NkpaPreconditioner`` replaces the block-diagonal policy ``Theta`` by its
  nearest Kronecker product ``I_t (x) Psi`` and ``B`` by the alpha-circulant
  ``B_alpha``; every frequency then needs one solve with
  ``lam_n Psi - (Psi L + Psi - I)``.
* ``ProjectedPreconditioner`` keeps ``Theta`` exact, restricts the system to
  the active rows and preconditions with ``S_1 M_alpha^{-1} S_1^T``.  Its
  frequency matrices ``lam_n I - L`` do not depend on the policy and are
  factored once per run.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .all_at_once import (AllAtOnceSystem, InnerResult, apply_M, apply_Mk,
                          residual_floor_scale)
from .alpha_circulant import (AlphaCirculant, step_a_half, step_a_transform,
                              step_c_half, step_c_transform)
from .linear_kernels import (SingularMatrixError, gmres, sparse_lu, thomas_apply,
                             thomas_factor)
from .market_models import SpatialSystem

PSI_STRATEGIES = ("average", "rounded", "mode")


@dataclass(frozen=True)
class PsiDiagonal:
    values: np.ndarray
    strategy: str


def compute_psi(mask: np.ndarray, n_t: int, n_s: int, strategy: str = "average") -> PsiDiagonal:
    """Diagonal ``Psi`` approximating the time blocks of the policy mask.

    ``average`` is the Frobenius-nearest Kronecker factor (block mean);
    ``rounded`` thresholds the mean at 0.5 and ``mode`` takes the majority
    bit, both resolving ties to 1.
    """
    blocks = np.asarray(mask, dtype=float).reshape(n_t, n_s)
    mean = blocks.mean(axis=0)
    if strategy == "average":
        values = mean
    elif strategy == "rounded":
        values = (mean >= 0.5).astype(float)
    elif strategy == "mode":
        ones = blocks.sum(axis=0)
        values = (2 * ones >= n_t).astype(float)
    else:
        raise ValueError(f"unknown Psi strategy {strategy!r}; choose from {PSI_STRATEGIES}")
    return PsiDiagonal(values=values, strategy=strategy)


def _is_tridiagonal(L) -> bool:
    A = sp.coo_matrix(L)
    return A.nnz == 0 or int(np.max(np.abs(A.row - A.col))) <= 1


class FrequencySolves:
    """Independent complex solves, one matrix per planned frequency.

    Tridiagonal families go through a batched Thomas elimination; anything
    else through one cached sparse LU per frequency.  ``workers > 1`` splits
    the frequencies across threads; each frequency's arithmetic is identical
    either way.
    """

    def __init__(self, lam: np.ndarray, L, weight: Optional[np.ndarray] = None,
                 workers: int = 1, describe=None):
        self.lam = np.asarray(lam)
        self.workers = max(1, int(workers))
        self.factorizations = 0
        n = L.shape[0]
        w = np.ones(n) if weight is None else np.asarray(weight, float)
        self.tridiagonal = _is_tridiagonal(L)
        # matrix for frequency n: I + diag(w) (lam_n I - L - I)
        if self.tridiagonal:
            Ld = L.diagonal(0)
            lower = -w * np.concatenate(([0.0], L.diagonal(-1)))
            upper = -w * np.concatenate((L.diagonal(1), [0.0]))
            diag = 1.0 + w[None, :] * (self.lam[:, None] - Ld[None, :] - 1.0)
            self._chunks = []
            for idx in self._split(len(self.lam)):
                try:
                    f = thomas_factor(lower, diag[idx], upper)
                except SingularMatrixError as exc:
                    raise SingularMatrixError(self._singular_message(exc, idx, describe)) from exc
                self._chunks.append((idx, f))
            self.factorizations = len(self.lam)
        else:
            Lc = sp.csr_matrix(L, dtype=complex)
            W = sp.diags(w.astype(complex))
            eye = sp.identity(n, dtype=complex, format="csr")
            self._lu = []
            for k, lam_k in enumerate(self.lam):
                try:
                    self._lu.append(sparse_lu((eye + W @ (lam_k * eye - Lc - eye)).tocsc()))
                except SingularMatrixError as exc:
                    raise SingularMatrixError(
                        self._singular_message(exc, np.array([k]), describe)) from exc
                self.factorizations += 1

    def _split(self, count):
        return [c for c in np.array_split(np.arange(count), min(self.workers, count)) if c.size]

    def _singular_message(self, exc, idx, describe):
        msg = str(exc)
        k = idx[0]
        if "system" in msg:
            k = idx[int(msg.rsplit("system", 1)[1].strip(" )"))]
        extra = f"; {describe()}" if describe else ""
        return f"singular frequency matrix n={k}, lambda={self.lam[k]:.6g}{extra}"

    def solve(self, Z: np.ndarray) -> np.ndarray:
        out = np.empty_like(Z, dtype=complex)
        if self.tridiagonal:
            def run(chunk):
                idx, f = chunk
                out[idx] = thomas_apply(f, Z[idx])
            tasks = self._chunks
        else:
            def run(idx):
                for k in idx:
                    out[k] = self._lu[k].solve(Z[k])
            tasks = self._split(len(self.lam))
        if self.workers > 1 and len(tasks) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                list(pool.map(run, tasks))
        else:
            for t in tasks:
                run(t)
        return out


def _planned(circ: AlphaCirculant, halving: bool) -> np.ndarray:
    lam = circ.lam
    return lam[: circ.n_t // 2 + 1] if halving else lam


class NkpaPreconditioner:
    """Inverse of ``P = I + (I_t (x) Psi)(M_alpha - I)`` applied in three steps."""

    def __init__(self, spatial: SpatialSystem, circ: AlphaCirculant, psi: PsiDiagonal,
                 workers: int = 1, halving: bool = True):
        self.circ = circ
        self.psi = psi
        self.n_s = spatial.size
        self.halving = halving

        def describe():
            v = psi.values
            return (f"Psi[{psi.strategy}]: {int(np.sum(v == 1))} ones, "
                    f"{int(np.sum((v > 0) & (v < 1)))} fractional, {int(np.sum(v == 0))} zeros")

        self.solves = FrequencySolves(_planned(circ, halving), spatial.L, weight=psi.values,
                                      workers=workers, describe=describe)

    def apply(self, r: np.ndarray) -> np.ndarray:
        if self.halving:
            z1 = step_a_half(self.circ, r, self.n_s)
            return step_c_half(self.circ, self.solves.solve(z1), self.n_s).ravel()
        z1 = step_a_transform(self.circ, r, self.n_s)
        return step_c_transform(self.circ, self.solves.solve(z1), self.n_s).ravel()

    __call__ = apply


def build_nkpa(spatial: SpatialSystem, circ: AlphaCirculant, psi: PsiDiagonal,
               workers: int = 1, halving: bool = True) -> NkpaPreconditioner:
    return NkpaPreconditioner(spatial, circ, psi, workers=workers, halving=halving)


def apply_nkpa(precond: NkpaPreconditioner, r: np.ndarray) -> np.ndarray:
    return precond.apply(r)


class ProjectedPreconditioner:
    """``S_1 M_alpha^{-1} S_1^T`` for a changing active set; factorizations of
    ``lam_n I - L`` are built once and reused."""

    def __init__(self, spatial: SpatialSystem, circ: AlphaCirculant, workers: int = 1,
                 halving: bool = True):
        self.circ = circ
        self.n_s = spatial.size
        self.halving = halving
        self.solves = FrequencySolves(_planned(circ, halving), spatial.L, workers=workers)
        self.active = np.arange(circ.n_t * self.n_s)

    @property
    def factorizations(self) -> int:
        return self.solves.factorizations

    def set_active(self, active: np.ndarray) -> None:
        active = np.asarray(active)
        if active.size and np.any(np.diff(active) <= 0):
            raise ValueError("active index set must be sorted and duplicate-free")
        self.active = active

    def apply_full(self, r: np.ndarray) -> np.ndarray:
        """``M_alpha^{-1} r`` on the full space-time vector."""
        if self.halving:
            z1 = step_a_half(self.circ, r, self.n_s)
            return step_c_half(self.circ, self.solves.solve(z1), self.n_s).ravel()
        z1 = step_a_transform(self.circ, r, self.n_s)
        return step_c_transform(self.circ, self.solves.solve(z1), self.n_s).ravel()

    def apply(self, r_reduced: np.ndarray) -> np.ndarray:
        full = np.zeros(self.circ.n_t * self.n_s)
        full[self.active] = r_reduced
        return self.apply_full(full)[self.active]

    __call__ = apply


def apply_projected(precond: ProjectedPreconditioner, r_reduced: np.ndarray) -> np.ndarray:
    return precond.apply(r_reduced)


@dataclass
class ReducedSystem:
    """Policy system restricted to the active rows ``S_1``.

    The inactive unknowns are fixed at ``fixed`` (= Phi there); ``matvec``
    applies ``S_1 M S_1^T`` and ``rhs`` is ``S_1 f_k - S_1 M S_2^T y_2``.
    """

    system: AllAtOnceSystem
    active: np.ndarray
    inactive: np.ndarray
    fixed: np.ndarray
    rhs: np.ndarray

    @property
    def empty(self) -> bool:
        return self.active.size == 0

    def matvec(self, y: np.ndarray) -> np.ndarray:
        full = np.zeros(self.system.size)
        full[self.active] = y
        return apply_M(self.system, full)[self.active]

    def scatter(self, y: np.ndarray) -> np.ndarray:
        v = np.empty(self.system.size)
        v[self.inactive] = self.fixed
        v[self.active] = y
        return v


def reduce_policy_system(system: AllAtOnceSystem, mask: np.ndarray,
                         f_k: Optional[np.ndarray] = None) -> ReducedSystem:
    mask = np.asarray(mask, dtype=bool)
    if f_k is None:
        f_k = system.Phi + mask * (system.f - system.Phi)
    active = np.flatnonzero(mask)
    inactive = np.flatnonzero(~mask)
    fixed = f_k[inactive]
    if active.size == 0:
        return ReducedSystem(system, active, inactive, fixed, np.zeros(0))
    complement = np.zeros(system.size)
    complement[inactive] = fixed
    rhs = f_k[active] - apply_M(system, complement)[active]
    return ReducedSystem(system, active, inactive, fixed, rhs)


# ---------------------------------------------------------------------------
# inner solvers used by the outer policy iteration
# ---------------------------------------------------------------------------

@dataclass
class NkpaInnerSolver:
    """Right-preconditioned GMRES on the full policy system with a fresh
    NKPA preconditioner per policy.

    ``reference`` selects what ``tol`` is relative to (see ``gmres``); the
    default ``"rhs"`` stops at ``tol * ||f_k||``.
    """

    alpha: float = 1e-8
    psi_strategy: str = "average"
    tol: float = 1e-10
    max_iter: int = 500
    workers: int = 1
    roundoff: float = 1e-14
    reference: str = "rhs"
    name: str = field(default="nkpa", init=False)

    def __call__(self, system: AllAtOnceSystem, mask, f_k, w0) -> InnerResult:
        t0 = time.perf_counter()
        circ = AlphaCirculant(self.alpha, system.n_t, system.tau)
        psi = compute_psi(mask, system.n_t, system.n_s, self.psi_strategy)
        precond = build_nkpa(system.spatial, circ, psi, workers=self.workers)
        t1 = time.perf_counter()
        theta = np.asarray(mask, float)
        out = gmres(lambda x: apply_Mk(system, theta, x), f_k, x0=w0,
                    apply_P_inv=precond.apply, tol=self.tol, max_iter=self.max_iter,
                    atol=self.roundoff * residual_floor_scale(system, mask, w0, f_k),
                    reference=self.reference)
        return InnerResult(v=out.x, iterations=out.iterations, residuals=out.residuals,
                           converged=out.converged, setup_seconds=t1 - t0,
                           solve_seconds=time.perf_counter() - t1)


@dataclass
class ProjectedInnerSolver:
    """GMRES on the reduced (active-row) system with the projected
    preconditioner, whose factorizations persist across policy iterations."""

    alpha: float = 1e-8
    tol: float = 1e-10
    max_iter: int = 500
    workers: int = 1
    roundoff: float = 1e-14
    reference: str = "initial"
    name: str = field(default="projected", init=False)
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def preconditioner(self, system: AllAtOnceSystem) -> ProjectedPreconditioner:
        key = id(system)
        if key not in self._cache:
            circ = AlphaCirculant(self.alpha, system.n_t, system.tau)
            self._cache = {key: (system, ProjectedPreconditioner(system.spatial, circ,
                                                                 workers=self.workers))}
        return self._cache[key][1]

    def __call__(self, system: AllAtOnceSystem, mask, f_k, w0) -> InnerResult:
        t0 = time.perf_counter()
        precond = self.preconditioner(system)
        reduced = reduce_policy_system(system, mask, f_k)
        t1 = time.perf_counter()
        if reduced.empty:
            return InnerResult(v=reduced.scatter(np.zeros(0)), setup_seconds=t1 - t0)
        precond.set_active(reduced.active)
        out = gmres(reduced.matvec, reduced.rhs, x0=w0[reduced.active],
                    apply_P_inv=precond.apply, tol=self.tol, max_iter=self.max_iter,
                    atol=self.roundoff * residual_floor_scale(system, mask, w0, f_k),
                    reference=self.reference)
        return InnerResult(v=reduced.scatter(out.x), iterations=out.iterations,
                           residuals=out.residuals, converged=out.converged,
                           setup_seconds=t1 - t0, solve_seconds=time.perf_counter() - t1)


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------

def _dense_operator(apply, n: int) -> np.ndarray:
    eye = np.eye(n)
    return np.column_stack([apply(eye[:, k]) for k in range(n)])


def spectrum_diagnostics(system: AllAtOnceSystem, mask: np.ndarray, kind: str = "nkpa",
                         alpha: float = 1e-8, psi_strategy: str = "average",
                         max_dim: int = 4096) -> dict:
    """Eigenvalues of the policy operator and of its preconditioned version.

    ``kind="nkpa"`` returns keys ``"M_k"`` and ``"P_inv_M_k"``;
    ``kind="projected"`` returns ``"M_reduced"`` and ``"P_inv_M_reduced"``.
    """
    if system.size > max_dim:
        raise ValueError(f"dimension {system.size} exceeds max_dim={max_dim}")
    mask = np.asarray(mask, dtype=bool)
    circ = AlphaCirculant(alpha, system.n_t, system.tau)
    if kind == "nkpa":
        theta = mask.astype(float)
        Mk = _dense_operator(lambda x: apply_Mk(system, theta, x), system.size)
        pre = build_nkpa(system.spatial, circ,
                         compute_psi(mask, system.n_t, system.n_s, psi_strategy))
        PinvM = _dense_operator(lambda x: pre.apply(apply_Mk(system, theta, x)), system.size)
        return {"M_k": np.linalg.eigvals(Mk), "P_inv_M_k": np.linalg.eigvals(PinvM)}
    if kind == "projected":
        reduced = reduce_policy_system(system, mask)
        if reduced.empty:
            return {"M_reduced": np.zeros(0), "P_inv_M_reduced": np.zeros(0)}
        pre = ProjectedPreconditioner(system.spatial, circ)
        pre.set_active(reduced.active)
        n = reduced.active.size
        Mr = _dense_operator(reduced.matvec, n)
        PinvM = _dense_operator(lambda y: pre.apply(reduced.matvec(y)), n)
        return {"M_reduced": np.linalg.eigvals(Mr), "P_inv_M_reduced": np.linalg.eigvals(PinvM)}
    raise ValueError(f"unknown preconditioner kind {kind!r}")


def write_spectrum(path, eigenvalues: np.ndarray) -> None:
    """Plain text, one ``re im`` pair per line."""
    with open(path, "w") as fh:
        for z in np.asarray(eigenvalues, dtype=complex):
            fh.write(f"{z.real:.17g} {z.imag:.17g}\n")
