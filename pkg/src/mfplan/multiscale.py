"""Grid transfers between nested staggered grids and the multilevel drivers.

Fine and coarse grids differ by a factor 2 on every axis. A fine staggered
point takes the average over its nearest coarse points in physical
coordinates (ties included); restriction inverts that relation with
weights ``1/|neighbourhood|``. Because the Euclidean argmin over a product
index set is itself a product, both transfers factor into one-axis rules:

* cell-centre axis: a fine cell copies its coarse parent, a coarse cell is
  the mean of its two children;
* face axis: even fine faces sit on a coarse face and copy it, odd ones
  average the two coarse faces around them (boundary slots hold the pinned
  densities or zero flux); a coarse face is ``(f_l/2 + f + f_r/2) / 2``.
"""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .costs import CostModel
from .grid import BoundaryData, GridShape, StaggeredFields
from .solver import (
    Problem,
    SolveReport,
    SolverConfig,
    append_record,
    feasibility_residue,
    fista,
    mass_residue,
    project,
)

logger = logging.getLogger(__name__)

__all__ = [
    "LevelHierarchy",
    "prolong",
    "restrict",
    "restrict_center",
    "ml_fista",
    "mg_fista",
]


def _repeat_center(u: np.ndarray, axis: int) -> np.ndarray:
    return np.repeat(u, 2, axis=axis)


def _mean_center(u: np.ndarray, axis: int) -> np.ndarray:
    if u.shape[axis] % 2:
        raise ValueError(f"axis {axis} of length {u.shape[axis]} cannot be halved")
    v = np.moveaxis(u, axis, 0)
    return np.moveaxis(0.5 * (v[0::2] + v[1::2]), 0, axis)


def _prolong_face(c: np.ndarray, axis: int, lo, hi) -> np.ndarray:
    """One face axis, coarse to fine. ``lo``/``hi`` are the boundary slots (hi None when free)."""
    v = np.moveaxis(c, axis, 0)
    parts = [np.broadcast_to(lo, v.shape[1:])[None], v]
    if hi is not None:
        parts.append(np.broadcast_to(hi, v.shape[1:])[None])
    ext = np.concatenate(parts)  # ext[k] sits at position k / n_coarse
    mids = 0.5 * (ext[:-1] + ext[1:])
    # fine face j / n_fine, stored at j - 1: odd j between coarse faces, even j on one
    out = np.empty((mids.shape[0] + v.shape[0],) + v.shape[1:])
    out[0::2] = mids
    out[1::2] = v
    return np.moveaxis(out, 0, axis)


def _restrict_face(f: np.ndarray, axis: int, free: bool) -> np.ndarray:
    """One face axis, fine to coarse, with weights 1 (coinciding face) and 1/2 (neighbours)."""
    v = np.moveaxis(f, axis, 0)
    if free:
        # the terminal face has a single half-weight neighbour
        on, left, right = v[1::2], v[0::2], v[2::2]
        out = np.empty_like(on)
        out[:-1] = (on[:-1] + 0.5 * left[:-1] + 0.5 * right) / 2.0
        out[-1] = (on[-1] + 0.5 * left[-1]) / 1.5
    else:
        out = (v[1::2] + 0.5 * v[0:-1:2] + 0.5 * v[2::2]) / 2.0
    return np.moveaxis(out, 0, axis)


def _check_pair(coarse: GridShape, fine: GridShape) -> None:
    if coarse.free_terminal != fine.free_terminal or any(f != 2 * c for c, f in zip(coarse.n, fine.n)):
        raise ValueError(f"grids {coarse.n} and {fine.n} are not related by a factor 2 per axis")
    if len(coarse.n) != len(fine.n):
        raise ValueError("grids have different dimensions")


def prolong(fields: StaggeredFields, bnd: BoundaryData, coarse: GridShape, fine: GridShape) -> StaggeredFields:
    """Coarse-to-fine transfer; ``bnd`` holds the coarse-level end densities."""
    _check_pair(coarse, fine)
    coarse.check(fields)
    comps = []
    for axis, c in enumerate(fields.components()):
        if axis == 0:
            hi = None if coarse.free_terminal else bnd.rho1
            u = _prolong_face(c, 0, bnd.rho0, hi)
        else:
            u = _prolong_face(c, axis, 0.0, 0.0)
        for other in range(len(fine.n)):
            if other != axis:
                u = _repeat_center(u, other)
        comps.append(u)
    return StaggeredFields(comps[0], tuple(comps[1:]))


def restrict(fields: StaggeredFields, fine: GridShape) -> StaggeredFields:
    """Fine-to-coarse weighted average over the inverse neighbourhoods."""
    coarse = fine.coarsen()
    fine.check(fields)
    comps = []
    for axis, f in enumerate(fields.components()):
        u = _restrict_face(f, axis, fine.free_end(axis))
        for other in range(len(fine.n)):
            if other != axis:
                u = _mean_center(u, other)
        comps.append(u)
    out = StaggeredFields(comps[0], tuple(comps[1:]))
    coarse.check(out)
    return out


def restrict_center(u: np.ndarray) -> np.ndarray:
    """Block mean over 2 x ... x 2 cells; preserves the discrete mass."""
    out = np.asarray(u, dtype=float)
    for axis in range(out.ndim):
        out = _mean_center(out, axis)
    return out


# -- hierarchy ------------------------------------------------------------------


@dataclass
class LevelHierarchy:
    """Nested problems; ``problems[0]`` is the finest level.

    Coarse boundary densities, ``Q`` and ``G`` are block means of the finer
    ones, so every level carries the same total mass. Axes may have
    different resolutions as long as all of them halve together.
    """

    problems: list

    @classmethod
    def build(cls, problem: Problem, levels: int) -> LevelHierarchy:
        if levels < 1:
            raise ValueError("need at least one level")
        n = np.array(problem.shape.n)
        if np.any(n % 2 ** (levels - 1)):
            raise ValueError(f"every n_d of {problem.shape.n} must be divisible by 2^{levels - 1}")
        if np.any(n // 2 ** (levels - 1) < 2):
            raise ValueError(f"{levels} levels would leave fewer than 2 cells on an axis of {problem.shape.n}")
        problems = [problem]
        for _ in range(levels - 1):
            p = problems[-1]
            bnd = BoundaryData(
                restrict_center(p.bnd.rho0),
                None if p.bnd.rho1 is None else restrict_center(p.bnd.rho1),
            )
            m = p.model
            model = CostModel(
                m.kind,
                m.lambda_E,
                m.lambda_Q,
                None if m.Q is None else restrict_center(m.Q),
                m.lambda_G,
                None if m.G is None else restrict_center(m.G),
            )
            problems.append(Problem(p.shape.coarsen(), bnd, model))
        return cls(problems)

    @property
    def levels(self) -> int:
        return len(self.problems)

    @property
    def shapes(self) -> list:
        return [p.shape for p in self.problems]

    def prolong(self, fields: StaggeredFields, level: int) -> StaggeredFields:
        """From ``level`` (0-based, 0 finest) to ``level - 1``."""
        p = self.problems[level]
        return prolong(fields, p.bnd, p.shape, self.problems[level - 1].shape)

    def restrict(self, fields: StaggeredFields, level: int) -> StaggeredFields:
        """From ``level`` to ``level + 1``."""
        return restrict(fields, self.problems[level].shape)


def _level_config(config: SolverConfig, level_tols: Sequence[float] | None, level: int) -> SolverConfig:
    if level_tols is None:
        return config
    return replace(config, tol=float(level_tols[level]))


def _merge(reports: list, final: SolveReport, seconds: float) -> SolveReport:
    out = copy.copy(final)
    out.level_iterations = [r.iterations for r in reports]
    out.iterations = int(sum(out.level_iterations))
    out.max_feasibility = max(r.max_feasibility for r in reports)
    out.max_mass_residue = max(r.max_mass_residue for r in reports)
    out.seconds = seconds
    return out


def ml_fista(
    problem: Problem,
    config: SolverConfig,
    levels: int = 3,
    *,
    hierarchy: LevelHierarchy | None = None,
    level_tols: Sequence[float] | None = None,
) -> SolveReport:
    """Solve on the coarsest grid, then warm-start each finer level from the prolonged solution.

    ``level_tols[l]`` overrides the tolerance on level ``l`` (0 finest).
    The returned report's traces come from the finest level;
    ``level_iterations`` lists iterations per level, finest first.
    """
    hier = hierarchy or LevelHierarchy.build(problem, levels)
    t0 = time.perf_counter()
    reports = [None] * hier.levels
    top = hier.levels - 1
    rep = fista(hier.problems[top], _level_config(config, level_tols, top))
    reports[top] = rep
    for level in range(top - 1, -1, -1):
        init = hier.prolong(rep.fields, level + 1)
        rep = fista(hier.problems[level], _level_config(config, level_tols, level), init)
        reports[level] = rep
        logger.info("level %d: %d iterations", level, rep.iterations)
    return _merge(reports, reports[0], time.perf_counter() - t0)


def mg_fista(
    problem: Problem,
    config: SolverConfig,
    levels: int = 3,
    smoothing: int = 5,
    *,
    hierarchy: LevelHierarchy | None = None,
    level_tols: Sequence[float] | None = None,
) -> SolveReport:
    """V-cycle: ``smoothing`` FISTA steps per level going down, full solve at the
    coarsest level, then ``x_l + Solve(Pro(x_{l+1})) - Pro(x_{l+1})`` going up.

    The corrected sum is generally off the constraint set, so each corrected
    iterate is projected before it is used or returned. ``level_iterations``
    lists the smoothing passes (finest first), the coarsest solve, then the
    correction solves (coarse to fine).
    """
    if smoothing < 0:
        raise ValueError("smoothing must be >= 0")
    hier = hierarchy or LevelHierarchy.build(problem, levels)
    t0 = time.perf_counter()
    top = hier.levels - 1
    pre = [None] * hier.levels
    reports = []

    x = hier.problems[0].shape.ones()
    for level in range(hier.levels):
        if level > 0:
            x = hier.restrict(x, level - 1)
        r = fista(hier.problems[level], config, x, max_iters=smoothing, stop_on_tol=False)
        reports.append(r)
        x = r.fields
        pre[level] = x

    rep = fista(hier.problems[top], _level_config(config, level_tols, top), pre[top])
    reports.append(rep)
    x = rep.fields
    for level in range(top - 1, -1, -1):
        pro = hier.prolong(x, level + 1)
        rep = fista(hier.problems[level], _level_config(config, level_tols, level), pro)
        reports.append(rep)
        x = project(pre[level] + rep.fields - pro, hier.problems[level])

    fine = hier.problems[0]
    final = copy.copy(rep)
    final.fields = x
    final.recorded_iters = list(rep.recorded_iters)
    for name in ("objective", "stationarity", "feasibility", "mass", "min_density", "elapsed"):
        setattr(final, name, list(getattr(rep, name)))
    seconds = time.perf_counter() - t0
    append_record(final, rep.iterations, x, fine, rep.step, config.density_floor, seconds, config.velocity_cap)
    merged = _merge(reports, final, seconds)
    if config.track_residues:
        merged.max_feasibility = max(merged.max_feasibility, feasibility_residue(x, fine) / fine.scale)
        merged.max_mass_residue = max(merged.max_mass_residue, mass_residue(x, fine))
    return merged
