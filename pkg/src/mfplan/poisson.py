"""Spectral solvers for the projection step's Poisson systems.

Both variants solve ``-Lap(phi) = rhs`` where ``Lap = divergence o gradient``
on the same layout as :mod:`mfplan.grid`:

* fixed terminal density: pure Neumann Laplacian, diagonalised by the
  orthonormal type-II cosine basis, singular on constants (pseudo-inverse);
* free terminal density: Neumann at ``t = 0`` and a zero ghost past ``t = 1``
  in time, diagonalised by the quarter-shifted cosine basis
  ``cos((j + 1/2)(k + 1/2) pi / (n + 1/2))``; invertible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .grid import GridShape, StaggeredFields, divergence, gradient

logger = logging.getLogger(__name__)

__all__ = [
    "SpectralPlan",
    "solve_neumann",
    "solve_mfg",
    "solve",
    "operator_norm_checks",
    "closed_form_norms",
]


def cosine_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix; row ``k`` is the k-th Neumann eigenvector."""
    j = np.arange(n) + 0.5
    k = np.arange(n)[:, None]
    C = np.cos(np.pi * k * j / n) * np.sqrt(2.0 / n)
    C[0] = np.sqrt(1.0 / n)
    return C


def shifted_cosine_matrix(n: int) -> np.ndarray:
    """Orthonormal quarter-shifted cosine basis of the free-terminal time operator."""
    j = np.arange(n) + 0.5
    k = np.arange(n)[:, None] + 0.5
    return np.sqrt(4.0 / (2 * n + 1)) * np.cos(np.pi * k * j / (n + 0.5))


def neumann_eigenvalues_1d(n: int) -> np.ndarray:
    return -4.0 * n * n * np.sin(np.arange(n) * np.pi / (2 * n)) ** 2


def shifted_eigenvalues_1d(n: int) -> np.ndarray:
    return -4.0 * n * n * np.sin((np.arange(n) + 0.5) * np.pi / (2 * (n + 0.5))) ** 2


@dataclass
class SpectralPlan:
    """Eigen-decomposition of the grid Laplacian for one grid layout.

    ``method='fft'`` uses scipy's fast DCT on the Neumann axes; ``'direct'``
    applies the dense basis matrices on every axis. The free-terminal time
    axis always uses the dense matrix.
    """

    shape: GridShape
    method: str = "fft"
    eigenvalues: np.ndarray = field(init=False, repr=False)
    compat_warnings: int = field(default=0, init=False)

    def __post_init__(self):
        if self.method not in ("fft", "direct"):
            raise ValueError(f"unknown transform method {self.method!r}")
        lams = []
        self._mats = []
        for axis, n in enumerate(self.shape.n):
            if self.shape.free_end(axis):
                lams.append(shifted_eigenvalues_1d(n))
                self._mats.append(shifted_cosine_matrix(n))
            else:
                lams.append(neumann_eigenvalues_1d(n))
                self._mats.append(cosine_matrix(n))
        total = np.zeros(self.shape.n)
        for axis, lam in enumerate(lams):
            s = [1] * len(self.shape.n)
            s[axis] = -1
            total = total + lam.reshape(s)
        self.eigenvalues = total

    @property
    def variant(self) -> str:
        return "MFG" if self.shape.free_terminal else "MFP"

    def _apply(self, u: np.ndarray, inverse: bool) -> np.ndarray:
        out = np.asarray(u, dtype=float)
        fast = []
        for axis, C in enumerate(self._mats):
            if self.method == "fft" and not self.shape.free_end(axis):
                fast.append(axis)
            else:
                M = C.T if inverse else C
                out = np.moveaxis(np.tensordot(M, out, axes=([1], [axis])), 0, axis)
        if fast:
            fn = scipy.fft.idctn if inverse else scipy.fft.dctn
            out = fn(out, type=2, norm="ortho", axes=fast)
        return out

    def forward(self, u: np.ndarray) -> np.ndarray:
        """Coefficients ``<u, Psi^i>`` for every mode ``i``."""
        return self._apply(u, inverse=False)

    def inverse(self, coeffs: np.ndarray) -> np.ndarray:
        return self._apply(coeffs, inverse=True)

    def basis(self, index) -> np.ndarray:
        """The eigenvector ``Psi^i`` as a central array (0-based mode index)."""
        e = np.zeros(self.shape.n)
        e[tuple(index)] = 1.0
        return self.inverse(e)


def solve_neumann(
    rhs: np.ndarray, plan: SpectralPlan, tol_compat: float | None = 1e-8, reference: float = 0.0
) -> np.ndarray:
    """Zero-mean solution of ``-Lap(phi) = rhs`` with pure Neumann conditions.

    A mean component of ``rhs`` above ``tol_compat * max(||rhs||_F, reference)``
    is projected out and counted in ``plan.compat_warnings``. ``reference``
    should carry the size of the data ``rhs`` was formed from, since a nearly
    feasible residual is small while its rounding error is not.
    ``tol_compat=None`` applies the pseudo-inverse silently.
    """
    if plan.shape.free_terminal:
        raise ValueError("solve_neumann needs a fixed-terminal plan")
    plan.shape.check_center(rhs)
    c = plan.forward(rhs)
    scale = max(float(np.linalg.norm(rhs)), reference)
    if tol_compat is not None and scale > 0 and abs(c.flat[0]) > tol_compat * scale:
        plan.compat_warnings += 1
        logger.warning("incompatible Poisson right-hand side: mean mode %.3e", c.flat[0])
    lam = plan.eigenvalues.copy()
    lam.flat[0] = 1.0
    c = c / (-lam)
    c.flat[0] = 0.0
    return plan.inverse(c)


def solve_mfg(rhs: np.ndarray, plan: SpectralPlan) -> np.ndarray:
    """Solution of ``-Lap(phi) = rhs`` on the free-terminal layout (always unique)."""
    if not plan.shape.free_terminal:
        raise ValueError("solve_mfg needs a free-terminal plan")
    plan.shape.check_center(rhs)
    return plan.inverse(plan.forward(rhs) / (-plan.eigenvalues))


def solve(rhs: np.ndarray, plan: SpectralPlan, reference: float = 0.0) -> np.ndarray:
    if plan.shape.free_terminal:
        return solve_mfg(rhs, plan)
    return solve_neumann(rhs, plan, reference=reference)


def closed_form_norms(shape: GridShape) -> tuple[float, float]:
    """Exact operator norms from the spectra.

    ``Grad o Lap^-1`` maps ``Psi^i`` to a vector of length ``1/sqrt|lambda_i|``;
    ``Grad o Lap^-1 o Div`` is the orthogonal projection onto the range of
    ``Grad``, with singular values ``sigma_d^2/|lambda_i|`` summed over d.
    """
    plan = SpectralPlan(shape)
    lam = np.abs(plan.eigenvalues).ravel()
    nz = lam > 0
    glinv = float(np.max(1.0 / np.sqrt(lam[nz])))
    # singular values of the projection: sum_d sigma_{d,i}^2 / |lambda_i| per mode
    sig2 = np.zeros(shape.n)
    for axis, n in enumerate(shape.n):
        if shape.free_end(axis):
            s = shifted_eigenvalues_1d(n)
        else:
            s = neumann_eigenvalues_1d(n)
        r = [1] * len(shape.n)
        r[axis] = -1
        sig2 = sig2 + np.abs(s).reshape(r)
    ratio = sig2.ravel()[nz] / lam[nz]
    return float(np.max(ratio)), glinv


def operator_norm_checks(shape: GridShape, iters: int = 300, seed: int = 0) -> tuple[float, float]:
    """Power-iteration estimates of ``||Grad Lap^-1 Div||`` and ``||Grad Lap^-1||``.

    These are operator norms for the weighted 2-norm, which coincide with the
    Frobenius-induced norms since domain and range carry the same weight.
    """
    plan = SpectralPlan(shape)
    rng = np.random.default_rng(seed)

    def lap_inv(u):
        if shape.free_terminal:
            return -solve_mfg(u, plan)
        return -solve_neumann(u, plan, tol_compat=None)

    # A = Grad Lap^-1, A^T = Lap^-1 (-Div)
    u = rng.standard_normal(shape.n)
    norm_b = 0.0
    for _ in range(iters):
        u /= np.linalg.norm(u)
        v = gradient(lap_inv(u), shape)
        norm_b = float(np.linalg.norm(v.ravel()))
        u = lap_inv(-divergence(v, shape))

    # Grad Lap^-1 Div is symmetric, so plain power iteration suffices
    f = StaggeredFields(
        rng.standard_normal(shape.face_shape(0)),
        tuple(rng.standard_normal(shape.face_shape(d)) for d in range(1, len(shape.n))),
    )
    norm_a = 0.0
    for _ in range(iters):
        f = f * (1.0 / np.linalg.norm(f.ravel()))
        f = gradient(lap_inv(divergence(f, shape)), shape)
        norm_a = float(np.linalg.norm(f.ravel()))
    return norm_a, norm_b
