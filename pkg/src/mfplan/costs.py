"""Running costs, interaction terms and the discrete objective with its gradient.

The pointwise integrand is

    Y(rho, m, x) = L(rho, m) + lambda_E * F_E(rho) + lambda_Q * rho * Q(x)

with the kinetic cost ``L(rho, m) = |m|^2 / (2 rho)``. The discrete objective
sums Y over cell centres after averaging the staggered unknowns there.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .grid import BoundaryData, GridShape, StaggeredFields, average_to_center, average_to_faces

logger = logging.getLogger(__name__)

DEFAULT_FLOOR = 1e-8


class CostKind(str, enum.Enum):
    OT = "ot"
    ENTROPY = "entropy"
    QUADRATIC = "quadratic"
    RECIPROCAL = "reciprocal"


@dataclass
class CostModel:
    """Interaction/preference weights and the spatial fields they act on.

    ``Q`` and ``G`` are arrays over the spatial cell centres (or None for zero).
    """

    kind: CostKind = CostKind.OT
    lambda_E: float = 0.0
    lambda_Q: float = 0.0
    Q: np.ndarray | None = None
    lambda_G: float = 0.0
    G: np.ndarray | None = None

    def __post_init__(self):
        self.kind = CostKind(self.kind)
        if self.lambda_E < 0 or self.lambda_Q < 0 or self.lambda_G < 0:
            raise ValueError("cost weights must be nonnegative")
        if self.kind is CostKind.OT and (self.lambda_E != 0 or self.lambda_Q != 0):
            raise ValueError("the OT model has no interaction terms (lambda_E = lambda_Q = 0)")
        if self.Q is not None:
            self.Q = np.asarray(self.Q, dtype=float)
            if not np.all(np.isfinite(self.Q)) or np.any(self.Q < 0):
                raise ValueError("Q must be finite and nonnegative")
        if self.G is not None:
            self.G = np.asarray(self.G, dtype=float)

    def preference(self, shape: GridShape) -> np.ndarray | float:
        """``lambda_Q * Q`` broadcastable over the central grid."""
        if self.Q is None or self.lambda_Q == 0:
            return 0.0
        if self.Q.shape != shape.space_shape:
            raise ValueError(f"Q has shape {self.Q.shape}, expected {shape.space_shape}")
        return self.lambda_Q * self.Q


# -- pointwise pieces -----------------------------------------------------------


def dynamic_cost(beta0: float, beta) -> float:
    """Kinetic cost ``|beta|^2 / (2 beta0)`` extended to ``beta0 = 0``."""
    if beta0 < 0:
        raise ValueError(f"density must be nonnegative, got {beta0}")
    b2 = float(np.sum(np.square(beta)))
    if beta0 > 0:
        return b2 / (2.0 * beta0)
    return 0.0 if b2 == 0 else np.inf


def dynamic_cost_grad(beta0: float, beta, floor: float = DEFAULT_FLOOR):
    """Return ``(dL/dbeta0, dL/dbeta)``; densities below ``floor`` are clamped."""
    if beta0 < floor:
        logger.debug("clamping density %g to floor %g", beta0, floor)
        beta0 = floor
    beta = np.asarray(beta, dtype=float)
    return -float(np.sum(beta * beta)) / (2.0 * beta0 * beta0), beta / beta0


def interaction(kind, rho, floor: float = DEFAULT_FLOOR):
    """Interaction energy ``F_E`` and its derivative, elementwise.

    At ``rho = 0`` the entropy and reciprocal energies are 0 (they are only
    integrated where the density is positive) and the derivative is taken
    at ``floor``.
    """
    kind = CostKind(kind)
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ValueError("interaction energy needs a nonnegative density")
    return _interaction(kind, rho, floor)


def _interaction(kind: CostKind, rho: np.ndarray, floor: float):
    if kind is CostKind.OT:
        return np.zeros_like(rho), np.zeros_like(rho)
    if kind is CostKind.QUADRATIC:
        return 0.5 * rho * rho, rho.copy()
    rc = np.maximum(rho, floor)
    pos = rho > 0
    if kind is CostKind.ENTROPY:
        val = np.where(pos, rc * np.log(rc), 0.0)
        return val, np.log(rc) + 1.0
    val = np.where(pos, 1.0 / rc, 0.0)
    return val, -1.0 / (rc * rc)


def kinetic(rho_bar: np.ndarray, m_bar, floor: float = DEFAULT_FLOOR, cap: float | None = None):
    """Smoothed kinetic cost and its partials ``(value, d/drho, [d/dm_d])``.

    Without ``cap`` the density is clamped at ``floor``. With a velocity cap
    ``V`` the cost is ``sup_{|b| <= V} (b.m - |b|^2 rho / 2)``: it equals
    ``|m|^2 / (2 rho)`` wherever ``|m| <= V rho`` and continues as the convex
    C^1 function ``V |m| - V^2 rho / 2`` elsewhere, so negative densities
    cost ``V^2 |rho| / 2``.
    """
    m2 = sum(m * m for m in m_bar)
    if cap is None:
        rc = np.maximum(rho_bar, floor)
        return m2 / (2.0 * rc), -m2 / (2.0 * rc * rc), [m / rc for m in m_bar]
    mn = np.sqrt(m2)
    inside = (mn <= cap * rho_bar) & (rho_bar > 0)
    rs = np.where(inside, rho_bar, 1.0)
    mu = np.where(mn > 0, mn, 1.0)
    # work with the velocity m / rho, bounded by V inside, so tiny densities stay finite
    vel = [m / rs for m in m_bar]
    v2 = sum(v * v for v in vel)
    val = np.where(inside, 0.5 * v2 * rs, cap * mn - 0.5 * cap * cap * rho_bar)
    g0 = np.where(inside, -0.5 * v2, -0.5 * cap * cap)
    gm = [np.where(inside, v, cap * m / mu) for v, m in zip(vel, m_bar)]
    return val, g0, gm


def point_cost(rho_bar: np.ndarray, m_bar, model: CostModel, shape: GridShape) -> np.ndarray:
    """Integrand Y at every cell centre; ``inf`` where the kinetic cost is infinite."""
    m2 = sum(m * m for m in m_bar)
    with np.errstate(divide="ignore", invalid="ignore"):
        kin = np.where(rho_bar > 0, m2 / (2.0 * np.where(rho_bar > 0, rho_bar, 1.0)), np.inf)
    kin = np.where((rho_bar == 0) & (m2 == 0), 0.0, kin)
    out = kin
    if model.lambda_E:
        fe, _ = _interaction(model.kind, np.maximum(rho_bar, 0.0), DEFAULT_FLOOR)
        out = out + model.lambda_E * fe
    pref = model.preference(shape)
    if np.ndim(pref) or pref:
        out = out + rho_bar * pref
    return out


def objective_value(
    fields: StaggeredFields, bnd: BoundaryData, model: CostModel, shape: GridShape
) -> float:
    """Volume-weighted objective ``prod(deltas) * sum_j Y(rho_bar_j, m_bar_j, x_j)``.

    For the free-terminal layout the terminal preference
    ``lambda_G * space_volume * sum P(t=1) G`` is added.
    """
    rho_bar, m_bar = average_to_center(fields, bnd, shape)
    val = shape.cell_volume * float(np.sum(point_cost(rho_bar, m_bar, model, shape)))
    if shape.free_terminal:
        val += shape.space_volume * terminal_value(fields, model)
    return val


def smoothed_objective(
    fields: StaggeredFields,
    bnd: BoundaryData,
    model: CostModel,
    shape: GridShape,
    floor: float = DEFAULT_FLOOR,
    cap: float | None = None,
) -> float:
    """Objective with the smoothed kinetic cost of :func:`kinetic`, always finite.

    This is the function whose gradient :func:`objective_grad` returns (up to
    the volume factor); it is what the solvers trace.
    """
    rho_bar, m_bar = average_to_center(fields, bnd, shape)
    rc = np.maximum(rho_bar, floor)
    y, _, _ = kinetic(rho_bar, m_bar, floor, cap)
    if model.lambda_E:
        fe, _ = _interaction(model.kind, rc, floor)
        y = y + model.lambda_E * fe
    y = y + rho_bar * model.preference(shape)
    val = shape.cell_volume * float(np.sum(y))
    if shape.free_terminal:
        val += shape.space_volume * terminal_value(fields, model)
    return val


def pointwise_grad(rho_bar, m_bar, model: CostModel, shape: GridShape, floor: float, cap: float | None = None):
    """Partials ``(Y_0, [Y_1..Y_D])`` at the cell centres."""
    rc = np.maximum(rho_bar, floor)
    _, y0, ym = kinetic(rho_bar, m_bar, floor, cap)
    if model.lambda_E:
        _, dfe = _interaction(model.kind, rc, floor)
        y0 = y0 + model.lambda_E * dfe
    y0 = y0 + model.preference(shape)
    return y0, ym


def objective_grad(
    fields: StaggeredFields,
    bnd: BoundaryData,
    model: CostModel,
    shape: GridShape,
    floor: float = DEFAULT_FLOOR,
    cap: float | None = None,
) -> StaggeredFields:
    """Gradient of the unweighted sum ``sum_j Y`` with respect to ``(P, M)``.

    Central partials are pulled back to the faces with the adjoint averaging.
    On the free-terminal layout the terminal preference is included, scaled
    so that the result is the gradient of ``smoothed_objective / cell_volume``.
    """
    rho_bar, m_bar = average_to_center(fields, bnd, shape)
    y0, ym = pointwise_grad(rho_bar, m_bar, model, shape, floor, cap)
    g = average_to_faces(y0, ym, shape)
    if shape.free_terminal:
        g = mfg_terminal_grad(g, model, scale=1.0 / shape.deltas[0])
    return g


def terminal_value(fields: StaggeredFields, model: CostModel) -> float:
    """``lambda_G * sum P(t=1) G`` (unweighted)."""
    if model.G is None or model.lambda_G == 0:
        return 0.0
    return model.lambda_G * float(np.sum(fields.P[-1] * model.G))


def mfg_terminal_grad(grad: StaggeredFields, model: CostModel, scale: float = 1.0) -> StaggeredFields:
    """Add ``scale * lambda_G * G`` to the terminal density slice of ``grad``."""
    if model.G is None or model.lambda_G == 0:
        return grad
    if model.G.shape != grad.P.shape[1:]:
        raise ValueError(f"G has shape {model.G.shape}, expected {grad.P.shape[1:]}")
    P = grad.P.copy()
    P[-1] += scale * model.lambda_G * model.G
    return StaggeredFields(P, grad.M)
