"""Closed-form 1D transport reference and brute-force oracles for testing.

The reference problem moves ``rho0(x) = x + 1/2`` to the uniform density on
[0, 1]. Its Monge map is the CDF ``T(x) = x^2/2 + x/2``, so particles follow
``X_t(x) = (1 - t) x + t T(x)`` and the optimal density/flux are

    rho*(t, y) = (x + 1/2) / X_t'(x),   m*(t, y) = rho*(t, y) (T(x) - x)

with ``x = X_t^{-1}(y)``. The squared Wasserstein distance is 1/120.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .grid import BoundaryData, GridShape, StaggeredFields, divergence

__all__ = [
    "exact_density",
    "exact_flux",
    "exact_w2sq",
    "monge_w2sq",
    "printed_flux",
    "boundary_data",
    "sample_exact",
    "dense_constraint",
    "dense_projection_oracle",
    "finite_diff_gradient_oracle",
]

_T_SMALL = 1e-6


def _check_domain(t, x):
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any((t < 0) | (t > 1)) or np.any((x < 0) | (x > 1)):
        raise ValueError("exact solution is defined on [0, 1] x [0, 1] only")
    return np.broadcast_arrays(t, x)


def _root(t, S):
    return np.sqrt(2.0 * t * S + (t / 2.0 - 1.0) ** 2)


def exact_density(t, x):
    """Optimal density; the ``t = 0`` branch is used for ``t < 1e-6``."""
    t, x = _check_domain(t, x)
    small = t < _T_SMALL
    ts = np.where(small, 1.0, t)
    S = _root(ts, x)
    rho = (S + ts - 1.0) / (ts * S)
    out = np.where(small, x + 0.5, rho)
    return out if out.ndim else float(out)


def _lagrangian_origin(t, y):
    # root of (t/2) x^2 + (1 - t/2) x - y = 0 in cancellation-free form
    S = np.sqrt((1.0 - t / 2.0) ** 2 + 2.0 * t * y)
    return 2.0 * y / ((1.0 - t / 2.0) + S), S


def exact_flux(t, x):
    """Optimal flux ``m*(t, x)``; zero at ``x = 0`` and ``x = 1`` for every t."""
    t, x = _check_domain(t, x)
    x0, S = _lagrangian_origin(t, x)
    out = (x0 + 0.5) / S * 0.5 * (x0 * x0 - x0)
    return out if out.ndim else float(out)


def printed_flux(t, x):
    """The flux as an explicit function of ``(t, x)``; ill-conditioned as ``t -> 0``."""
    t, x = _check_domain(t, x)
    small = t < _T_SMALL
    ts = np.where(small, 1.0, t)
    S = _root(ts, x)
    m = x / ts**2 - (3 - ts) / (2 * ts**3) * S - (ts - 1) * (ts**2 - 4) / (8 * ts**3) / S - (3 * ts - 4) / (2 * ts**3)
    out = np.where(small, 0.25 * x * (x - 1) * (2 * x + 1), m)
    return out if out.ndim else float(out)


def exact_w2sq() -> float:
    return 1.0 / 120.0


def monge_w2sq(n: int = 200001) -> float:
    """``int (T(x) - x)^2 rho0(x) dx`` by composite Simpson quadrature."""
    from scipy.integrate import simpson

    x = np.linspace(0.0, 1.0, n)
    T = 0.5 * x * x + 0.5 * x
    return float(simpson((T - x) ** 2 * (x + 0.5), x=x))


def boundary_data(n1: int) -> BoundaryData:
    """Cell-centre samples of the reference end densities."""
    x = (np.arange(n1) + 0.5) / n1
    return BoundaryData(x + 0.5, np.ones(n1))


def sample_exact(shape: GridShape) -> StaggeredFields:
    """Exact density/flux at the staggered nodes of a 1D grid."""
    if shape.ndim != 1 or shape.free_terminal:
        raise ValueError("the reference solution is a 1D planning problem")
    tP = shape.face_coords(0)[:, None]
    xP = shape.center_coords(1)[None, :]
    tM = shape.center_coords(0)[:, None]
    xM = shape.face_coords(1)[None, :]
    return StaggeredFields(exact_density(tP, xP), (exact_flux(tM, xM),))


# -- brute-force oracles ------------------------------------------------------


def dense_constraint(shape: GridShape, bnd: BoundaryData):
    """Assemble ``A`` and ``b`` with ``Div(x) + rho_D = A x - b`` column by column."""
    size = sum(int(np.prod(shape.face_shape(a))) for a in range(len(shape.n)))
    A = np.zeros((int(np.prod(shape.n)), size))
    e = np.zeros(size)
    for k in range(size):
        e[k] = 1.0
        A[:, k] = divergence(StaggeredFields.from_vector(e, shape), shape).ravel()
        e[k] = 0.0
    b = -bnd.div_term(shape).ravel()
    return A, b


def dense_projection_oracle(fields: StaggeredFields, bnd: BoundaryData, shape: GridShape, max_unknowns: int = 2000):
    """Minimise ``||y - x||^2`` subject to the discrete continuity equation via a KKT solve."""
    x0 = fields.ravel()
    if x0.size > max_unknowns:
        raise ValueError(f"{x0.size} unknowns exceed the oracle cap of {max_unknowns}")
    A, b = dense_constraint(shape, bnd)
    m, n = A.shape
    K = np.zeros((n + m, n + m))
    K[:n, :n] = np.eye(n)
    K[:n, n:] = A.T
    K[n:, :n] = A
    rhs = np.concatenate([x0, b])
    # the constraint rows are rank-deficient by one in the fixed-terminal layout
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return StaggeredFields.from_vector(sol[:n], shape)


def finite_diff_gradient_oracle(
    f: Callable[[StaggeredFields], float], fields: StaggeredFields, h: float = 1e-6
) -> StaggeredFields:
    """Central differences of ``f`` in every coordinate of ``fields``."""
    shape_parts = [c.shape for c in fields.components()]
    x = fields.ravel().astype(float)
    g = np.zeros_like(x)

    def build(v):
        parts, pos = [], 0
        for s in shape_parts:
            size = int(np.prod(s))
            parts.append(v[pos : pos + size].reshape(s))
            pos += size
        return StaggeredFields(parts[0], tuple(parts[1:]))

    for k in range(x.size):
        xp = x.copy()
        xp[k] += h
        xm = x.copy()
        xm[k] -= h
        g[k] = (f(build(xp)) - f(build(xm))) / (2 * h)
    return build(g)
