"""The alpha-circulant time matrix and its scaled-FFT diagonalisation.

``B_alpha = (1/tau) * [[1, ..., -alpha], [-1, 1], ..., [-1, 1]]`` satisfies
``B_alpha = V D V^{-1}`` with ``V^{-1} = F Gamma`` and ``V = Gamma^{-1} F^*``,
where ``Gamma = diag(alpha^{j/n_t})`` and ``F`` is the unitary DFT
(``omega = exp(-2 pi i / n_t)``).  The eigenvalue at DFT index ``k`` is
``(1 - alpha^{1/n_t} omega^k) / tau``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


def eigenvalues(alpha: float, n_t: int, tau: float) -> np.ndarray:
    """Eigenvalues of ``B_alpha`` ordered by forward-DFT frequency index."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if n_t < 1 or tau <= 0:
        raise ValueError("need n_t >= 1 and tau > 0")
    k = np.arange(n_t)
    return (1.0 - alpha ** (1.0 / n_t) * np.exp(-2j * np.pi * k / n_t)) / tau


@dataclass(frozen=True)
class ConjugatePlan:
    """Frequencies to solve explicitly and the mirrored ones recovered by conjugation."""

    solve: tuple
    mirror: dict  # mirrored index -> solved index


def conjugate_pair_plan(n_t: int) -> ConjugatePlan:
    """Zero-based plan: solve ``0..n_t//2``, mirror ``n_t-k`` onto ``k``."""
    if n_t < 1:
        raise ValueError("n_t must be positive")
    solve = tuple(range(n_t // 2 + 1))
    mirror = {n_t - k: k for k in range(1, (n_t + 1) // 2)}
    return ConjugatePlan(solve=solve, mirror=mirror)


@dataclass(frozen=True)
class AlphaCirculant:
    alpha: float
    n_t: int
    tau: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.alpha < 1e-12:
            log.warning("alpha=%g: the scaled Fourier basis is badly conditioned", self.alpha)

    @property
    def lam(self) -> np.ndarray:
        return eigenvalues(self.alpha, self.n_t, self.tau)

    @property
    def scaling(self) -> np.ndarray:
        """Diagonal of ``Gamma``: ``alpha^(j/n_t)`` for ``j = 0..n_t-1``."""
        return self.alpha ** (np.arange(self.n_t) / self.n_t)

    @property
    def plan(self) -> ConjugatePlan:
        return conjugate_pair_plan(self.n_t)

    def dense(self) -> np.ndarray:
        B = np.eye(self.n_t) - np.eye(self.n_t, k=-1)
        B[0, -1] -= self.alpha
        return B / self.tau


def _blocks(x, n_t, n_s):
    x = np.asarray(x)
    if x.size != n_t * n_s:
        raise ValueError(f"expected {n_t * n_s} entries, got {x.size}")
    return x.reshape(n_t, n_s)


def step_a_transform(circ: AlphaCirculant, r: np.ndarray, n_s: int) -> np.ndarray:
    """``(V^{-1} (x) I_s) r``: scale time block ``j`` by ``alpha^(j/n_t)``, then
    take the unitary DFT across time.  Returns shape ``(n_t, n_s)``."""
    R = _blocks(r, circ.n_t, n_s)
    return np.fft.fft(circ.scaling[:, None] * R, axis=0, norm="ortho")


def step_c_transform(circ: AlphaCirculant, z: np.ndarray, n_s: int,
                     real: bool = True, imag_tol: float = 1e-10) -> np.ndarray:
    """``(V (x) I_s) z``: inverse unitary DFT across time, then undo the scaling.

    With ``real=True`` the real part is returned and a ``ValueError`` is
    raised if the discarded imaginary part exceeds ``imag_tol * ||z||`` times
    the condition number ``alpha^(-(n_t-1)/n_t)`` of the scaling, which is
    the factor by which the unscaling amplifies FFT rounding.
    """
    Z = _blocks(z, circ.n_t, n_s)
    out = np.fft.ifft(Z, axis=0, norm="ortho") / circ.scaling[:, None]
    if not real:
        return out
    residue = np.linalg.norm(out.imag)
    cond = 1.0 / circ.scaling[-1]
    if residue > imag_tol * cond * max(np.linalg.norm(Z), 1e-300):
        raise ValueError(f"imaginary residue {residue:.3e} after the inverse transform")
    return out.real


def step_a_half(circ: AlphaCirculant, r: np.ndarray, n_s: int) -> np.ndarray:
    """Planned frequencies of ``step_a_transform`` for real input, shape
    ``(n_t//2 + 1, n_s)``; the rest are their conjugates."""
    R = _blocks(r, circ.n_t, n_s)
    return np.fft.rfft(circ.scaling[:, None] * R, axis=0, norm="ortho")


def step_c_half(circ: AlphaCirculant, z_half: np.ndarray, n_s: int) -> np.ndarray:
    """Inverse of ``step_a_half`` given only the planned frequencies."""
    out = np.fft.irfft(z_half, n=circ.n_t, axis=0, norm="ortho")
    return out / circ.scaling[:, None]
