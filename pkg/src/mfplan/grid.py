"""Staggered grids on the unit box [0, 1]^(D+1) and their discrete operators.

Axis 0 is time, axes 1..D are space. A grid with ``n = (n_0, ..., n_D)`` has
cell centres at ``(j + 1/2) / n_d`` (0-based ``j``) and faces at ``j / n_d``.

Storage convention (used by every stencil in this package): the 0-based array
index ``i`` of a face-valued quantity along its staggered axis is the face at
position ``(i + 1) / n_d``, i.e. half-index ``i + 3/2`` in 1-based cell
numbering. Boundary faces ``0`` and ``n_d`` are not stored: density values
there come from the boundary data, flux values there are zero.

With ``free_terminal=True`` (potential mean-field games) the density array
additionally stores the terminal face ``t = 1`` as its last time slice.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "GridShape",
    "StaggeredFields",
    "BoundaryData",
    "average_to_center",
    "average_to_faces",
    "divergence",
    "gradient",
    "laplacian",
    "inner",
    "norms",
]


@dataclass(frozen=True)
class GridShape:
    """Segment counts per axis, time first.

    Parameters
    ----------
    n : sequence of int
        ``(n_0, n_1, ..., n_D)``; every entry must be at least 2.
    free_terminal : bool
        If True the terminal density slice is an unknown (MFG layout).
    """

    n: tuple[int, ...]
    free_terminal: bool = False

    def __post_init__(self):
        n = tuple(int(v) for v in self.n)
        if len(n) < 2:
            raise ValueError("GridShape needs a time axis and at least one space axis")
        if any(v < 2 for v in n):
            raise ValueError(f"every n_d must be >= 2, got {n}")
        object.__setattr__(self, "n", n)

    @property
    def ndim(self) -> int:
        """Number of space dimensions D."""
        return len(self.n) - 1

    @property
    def deltas(self) -> tuple[float, ...]:
        return tuple(1.0 / v for v in self.n)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.deltas))

    @property
    def space_volume(self) -> float:
        return float(np.prod(self.deltas[1:]))

    @property
    def center_shape(self) -> tuple[int, ...]:
        return self.n

    @property
    def space_shape(self) -> tuple[int, ...]:
        return self.n[1:]

    def face_shape(self, axis: int) -> tuple[int, ...]:
        s = list(self.n)
        if not (axis == 0 and self.free_terminal):
            s[axis] -= 1
        return tuple(s)

    def free_end(self, axis: int) -> bool:
        return axis == 0 and self.free_terminal

    def center_coords(self, axis: int) -> np.ndarray:
        return (np.arange(self.n[axis]) + 0.5) / self.n[axis]

    def face_coords(self, axis: int) -> np.ndarray:
        m = self.face_shape(axis)[axis]
        return np.arange(1, m + 1) / self.n[axis]

    def space_mesh(self) -> list[np.ndarray]:
        """Cell-centre coordinates of the spatial grid, ``indexing='ij'``."""
        return np.meshgrid(*[self.center_coords(d) for d in range(1, len(self.n))], indexing="ij")

    def coarsen(self) -> GridShape:
        if any(v % 2 for v in self.n):
            raise ValueError(f"cannot coarsen {self.n}: every n_d must be even")
        return GridShape(tuple(v // 2 for v in self.n), self.free_terminal)

    def zeros(self) -> StaggeredFields:
        return StaggeredFields(
            np.zeros(self.face_shape(0)),
            tuple(np.zeros(self.face_shape(d)) for d in range(1, len(self.n))),
        )

    def ones(self) -> StaggeredFields:
        return StaggeredFields(
            np.ones(self.face_shape(0)),
            tuple(np.ones(self.face_shape(d)) for d in range(1, len(self.n))),
        )

    def check(self, fields: StaggeredFields) -> None:
        if len(fields.M) != self.ndim:
            raise ValueError(f"expected {self.ndim} flux components, got {len(fields.M)}")
        for axis, arr in enumerate(fields.components()):
            if arr.shape != self.face_shape(axis):
                raise ValueError(
                    f"component {axis} has shape {arr.shape}, expected {self.face_shape(axis)}"
                )

    def check_center(self, u: np.ndarray) -> None:
        if np.shape(u) != self.n:
            raise ValueError(f"central field has shape {np.shape(u)}, expected {self.n}")


@dataclass
class StaggeredFields:
    """Density ``P`` on time faces and fluxes ``M[d-1]`` on space faces of axis d."""

    P: np.ndarray
    M: tuple[np.ndarray, ...]

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.M = tuple(np.asarray(m, dtype=float) for m in self.M)

    def components(self) -> tuple[np.ndarray, ...]:
        return (self.P, *self.M)

    def copy(self) -> StaggeredFields:
        return StaggeredFields(self.P.copy(), tuple(m.copy() for m in self.M))

    def ravel(self) -> np.ndarray:
        return np.concatenate([c.ravel() for c in self.components()])

    @classmethod
    def from_vector(cls, vec: np.ndarray, shape: GridShape) -> StaggeredFields:
        parts, pos = [], 0
        for axis in range(len(shape.n)):
            s = shape.face_shape(axis)
            size = int(np.prod(s))
            parts.append(np.asarray(vec[pos : pos + size], dtype=float).reshape(s))
            pos += size
        if pos != len(vec):
            raise ValueError(f"vector length {len(vec)} does not match grid {shape.n}")
        return cls(parts[0], tuple(parts[1:]))

    @property
    def size(self) -> int:
        return sum(c.size for c in self.components())

    def __add__(self, other: StaggeredFields) -> StaggeredFields:
        return StaggeredFields(self.P + other.P, tuple(a + b for a, b in zip(self.M, other.M)))

    def __sub__(self, other: StaggeredFields) -> StaggeredFields:
        return StaggeredFields(self.P - other.P, tuple(a - b for a, b in zip(self.M, other.M)))

    def __mul__(self, c: float) -> StaggeredFields:
        return StaggeredFields(self.P * c, tuple(m * c for m in self.M))

    __rmul__ = __mul__

    def __neg__(self) -> StaggeredFields:
        return self * -1.0

    def axpy(self, a: float, other: StaggeredFields) -> StaggeredFields:
        """Return ``self + a * other``."""
        return StaggeredFields(
            self.P + a * other.P, tuple(m + a * o for m, o in zip(self.M, other.M))
        )

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(c)) for c in self.components())


@dataclass
class BoundaryData:
    """Initial (and, for planning problems, terminal) density samples at cell centres.

    ``rho1`` is None for the free-terminal layout.
    """

    rho0: np.ndarray
    rho1: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.rho0 = np.asarray(self.rho0, dtype=float)
        if self.rho1 is not None:
            self.rho1 = np.asarray(self.rho1, dtype=float)
            if self.rho1.shape != self.rho0.shape:
                raise ValueError("rho0 and rho1 must share a spatial shape")
        if np.any(self.rho0 < 0) or (self.rho1 is not None and np.any(self.rho1 < 0)):
            raise ValueError("boundary densities must be nonnegative")

    def check(self, shape: GridShape) -> None:
        if self.rho0.shape != shape.space_shape:
            raise ValueError(f"rho0 has shape {self.rho0.shape}, expected {shape.space_shape}")
        if shape.free_terminal != (self.rho1 is None):
            raise ValueError("rho1 must be given exactly when the terminal density is fixed")

    def avg_term(self, shape: GridShape) -> np.ndarray:
        """Boundary contribution to the time average (half the boundary density)."""
        key = ("avg", shape)
        if key not in self._cache:
            out = np.zeros(shape.n)
            out[0] = 0.5 * self.rho0
            if self.rho1 is not None:
                out[-1] += 0.5 * self.rho1
            self._cache[key] = out
        return self._cache[key]

    def div_term(self, shape: GridShape) -> np.ndarray:
        """Boundary contribution to the discrete time derivative."""
        key = ("div", shape)
        if key not in self._cache:
            out = np.zeros(shape.n)
            out[0] = -self.rho0 * shape.n[0]
            if self.rho1 is not None:
                out[-1] += self.rho1 * shape.n[0]
            self._cache[key] = out
        return self._cache[key]


# -- one-axis stencils --------------------------------------------------------


def _ax(axis: int, s) -> tuple:
    return (slice(None),) * axis + (s,)


def _resized(a: np.ndarray, axis: int, length: int) -> np.ndarray:
    shp = list(a.shape)
    shp[axis] = length
    return np.empty(shp)


def face_avg(a: np.ndarray, axis: int, free_end: bool = False) -> np.ndarray:
    """Average face values to cell centres along ``axis`` (boundary faces are zero)."""
    m = a.shape[axis]
    out = _resized(a, axis, m if free_end else m + 1)
    out[_ax(axis, 0)] = a[_ax(axis, 0)]
    np.add(a[_ax(axis, slice(None, -1))], a[_ax(axis, slice(1, None))], out=out[_ax(axis, slice(1, m))])
    if not free_end:
        out[_ax(axis, m)] = a[_ax(axis, m - 1)]
    out *= 0.5
    return out


def face_diff(a: np.ndarray, axis: int, n: int, free_end: bool = False) -> np.ndarray:
    m = a.shape[axis]
    out = _resized(a, axis, m if free_end else m + 1)
    out[_ax(axis, 0)] = a[_ax(axis, 0)]
    np.subtract(a[_ax(axis, slice(1, None))], a[_ax(axis, slice(None, -1))], out=out[_ax(axis, slice(1, m))])
    if not free_end:
        np.negative(a[_ax(axis, m - 1)], out=out[_ax(axis, m)])
    out *= n
    return out


def center_avg(u: np.ndarray, axis: int, free_end: bool = False) -> np.ndarray:
    """Adjoint of :func:`face_avg`."""
    k = u.shape[axis]
    out = _resized(u, axis, k if free_end else k - 1)
    np.add(u[_ax(axis, slice(None, -1))], u[_ax(axis, slice(1, None))], out=out[_ax(axis, slice(0, k - 1))])
    if free_end:
        out[_ax(axis, k - 1)] = u[_ax(axis, k - 1)]
    out *= 0.5
    return out


def center_diff(u: np.ndarray, axis: int, n: int, free_end: bool = False) -> np.ndarray:
    """Negative adjoint of :func:`face_diff`."""
    k = u.shape[axis]
    out = _resized(u, axis, k if free_end else k - 1)
    np.subtract(u[_ax(axis, slice(1, None))], u[_ax(axis, slice(None, -1))], out=out[_ax(axis, slice(0, k - 1))])
    if free_end:
        np.negative(u[_ax(axis, k - 1)], out=out[_ax(axis, k - 1)])
    out *= n
    return out


# -- operators ------------------------------------------------------------------


def average_to_center(fields: StaggeredFields, bnd: BoundaryData, shape: GridShape):
    """Average staggered values to cell centres.

    Returns ``(rho_bar, m_bar)`` where ``m_bar`` is a list of D central arrays.
    The boundary densities enter through ``bnd.avg_term``; the flux boundary
    faces contribute zero.
    """
    shape.check(fields)
    rho_bar = face_avg(fields.P, 0, shape.free_terminal) + bnd.avg_term(shape)
    m_bar = [face_avg(m, d + 1) for d, m in enumerate(fields.M)]
    return rho_bar, m_bar


def average_to_faces(rho_part: np.ndarray, m_parts: Sequence[np.ndarray], shape: GridShape):
    """Map central values back to the staggered faces (adjoint averaging)."""
    shape.check_center(rho_part)
    for u in m_parts:
        shape.check_center(u)
    if len(m_parts) != shape.ndim:
        raise ValueError(f"expected {shape.ndim} flux components, got {len(m_parts)}")
    return StaggeredFields(
        center_avg(rho_part, 0, shape.free_terminal),
        tuple(center_avg(u, d + 1) for d, u in enumerate(m_parts)),
    )


def divergence(fields: StaggeredFields, shape: GridShape, *, space_only: bool = False) -> np.ndarray:
    """Discrete space-time divergence ``D_0 P + sum_d D_d M_d``.

    The continuity residual of a candidate is ``divergence(f) + bnd.div_term(shape)``.
    """
    shape.check(fields)
    out = np.zeros(shape.n)
    if not space_only:
        out += face_diff(fields.P, 0, shape.n[0], shape.free_terminal)
    for d, m in enumerate(fields.M):
        out += face_diff(m, d + 1, shape.n[d + 1])
    return out


def gradient(phi: np.ndarray, shape: GridShape) -> StaggeredFields:
    """Face differences of a central field over every axis (the negative adjoint of divergence)."""
    shape.check_center(phi)
    return StaggeredFields(
        center_diff(phi, 0, shape.n[0], shape.free_terminal),
        tuple(center_diff(phi, d, shape.n[d]) for d in range(1, len(shape.n))),
    )


def laplacian(phi: np.ndarray, shape: GridShape) -> np.ndarray:
    """Three-point Laplacian, homogeneous Neumann on every side.

    In the free-terminal layout the time axis is closed at ``t = 1`` by a zero
    ghost value instead, matching ``divergence(gradient(phi))``.
    """
    shape.check_center(phi)
    phi = np.asarray(phi, dtype=float)
    out = np.zeros(shape.n)
    for axis, n in enumerate(shape.n):
        free = shape.free_end(axis)
        lo = [slice(None)] * phi.ndim
        lo[axis] = slice(0, 1)
        hi = [slice(None)] * phi.ndim
        hi[axis] = slice(-1, None)
        # reflecting ghost cells reproduce the one-sided boundary rows
        ghost_hi = np.zeros_like(phi[tuple(hi)]) if free else phi[tuple(hi)]
        p = np.concatenate([phi[tuple(lo)], phi, ghost_hi], axis=axis)
        core = [slice(None)] * phi.ndim
        core[axis] = slice(1, -1)
        left = [slice(None)] * phi.ndim
        left[axis] = slice(0, -2)
        right = [slice(None)] * phi.ndim
        right[axis] = slice(2, None)
        out += (p[tuple(left)] - 2.0 * p[tuple(core)] + p[tuple(right)]) * (n * n)
    return out


def inner(a, b) -> float:
    """Unweighted inner product of two central arrays or two staggered field sets."""
    if isinstance(a, StaggeredFields):
        return float(sum(np.dot(x.ravel(), y.ravel()) for x, y in zip(a.components(), b.components())))
    return float(np.dot(np.ravel(a), np.ravel(b)))


def norms(x, shape: GridShape) -> tuple[float, float, float]:
    """Return ``(frobenius, weighted_l2, max_abs)``.

    ``weighted_l2 = sqrt(prod(deltas)) * frobenius`` approximates the L2 norm
    over space-time.
    """
    if isinstance(x, StaggeredFields):
        comps = x.components()
    else:
        comps = (np.asarray(x, dtype=float),)
    fro = float(np.sqrt(sum(np.dot(c.ravel(), c.ravel()) for c in comps)))
    sup = float(max((np.max(np.abs(c)) if c.size else 0.0) for c in comps))
    return fro, float(np.sqrt(shape.cell_volume)) * fro, sup
