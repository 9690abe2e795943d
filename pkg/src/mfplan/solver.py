"""Accelerated projected-gradient (FISTA) solvers for planning and game problems.

Each iteration takes a gradient step on the discrete objective, projects
exactly onto the discrete continuity constraint with one spectral Poisson
solve, and extrapolates with the FISTA momentum weights. Because the
projection is exact, every iterate conserves mass to rounding error.
"""

from __future__ import annotations

import functools
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .costs import DEFAULT_FLOOR, CostModel, objective_grad, smoothed_objective
from .grid import BoundaryData, GridShape, StaggeredFields, average_to_center, divergence, face_avg, gradient
from .poisson import SpectralPlan, solve

logger = logging.getLogger(__name__)

__all__ = [
    "Problem",
    "SolverConfig",
    "SolveReport",
    "SolverDivergence",
    "project",
    "residues",
    "fista",
    "append_record",
    "feasibility_residue",
    "mass_residue",
    "stationarity_residue",
    "solve_mfp",
    "solve_mfg",
]


class SolverDivergence(RuntimeError):
    """Raised when the objective blows up; ``report`` holds the partial trace."""

    def __init__(self, message: str, report: SolveReport):
        super().__init__(message)
        self.report = report


@functools.lru_cache(maxsize=32)
def get_plan(shape: GridShape) -> SpectralPlan:
    return SpectralPlan(shape)


@dataclass
class Problem:
    """A discretised planning (fixed terminal) or game (free terminal) problem.

    Use :meth:`planning` or :meth:`game` to build one from density samples.
    """

    shape: GridShape
    bnd: BoundaryData
    model: CostModel = field(default_factory=CostModel)

    def __post_init__(self):
        self.bnd.check(self.shape)

    @classmethod
    def planning(cls, n, rho0, rho1, model: CostModel | None = None, rtol: float = 1e-8) -> Problem:
        """Fixed-terminal problem; the two masses must agree to ``rtol``.

        ``rho1`` is rescaled by a factor within ``1 +- rtol`` so that the
        discrete masses agree to rounding error, which keeps the Poisson
        right-hand sides exactly compatible.
        """
        rho0 = np.asarray(rho0, dtype=float)
        rho1 = np.asarray(rho1, dtype=float)
        s0, s1 = rho0.sum(), rho1.sum()
        if not math.isclose(s0, s1, rel_tol=rtol, abs_tol=rtol):
            raise ValueError(f"unbalanced masses: {s0:.12g} vs {s1:.12g} (sum of samples)")
        if s1 > 0:
            rho1 = rho1 * (s0 / s1)
        return cls(GridShape(tuple(n)), BoundaryData(rho0, rho1), model or CostModel())

    @classmethod
    def game(cls, n, rho0, model: CostModel | None = None) -> Problem:
        """Free-terminal problem with the preference ``lambda_G * G`` in ``model``."""
        return cls(GridShape(tuple(n), free_terminal=True), BoundaryData(rho0), model or CostModel())

    @property
    def plan(self) -> SpectralPlan:
        return get_plan(self.shape)

    @property
    def initial_mass(self) -> float:
        return self.shape.space_volume * float(self.bnd.rho0.sum())

    @property
    def scale(self) -> float:
        """Reference magnitude for feasibility tolerances."""
        return 1.0 + float(np.sqrt(self.shape.cell_volume) * np.linalg.norm(self.bnd.div_term(self.shape)))


@dataclass
class SolverConfig:
    """FISTA settings.

    ``step`` is the constant step for the unweighted objective gradient, or
    the initial step when ``backtracking`` is on. ``tol`` bounds the weighted
    2-norm of the change between consecutive iterates, rescaled by
    ``step / eta`` when the line search has shrunk the step. ``track_residues``
    checks feasibility and mass after every projection (two extra stencil
    passes per iteration).
    """

    step: float = 0.1
    backtracking: bool = False
    shrink: float = 0.5
    growth: float = 1.0
    tol: float = 1e-4
    max_iters: int = 10000
    density_floor: float = DEFAULT_FLOOR
    velocity_cap: float | None = None
    record_every: int = 1
    restart: bool = False
    divergence_threshold: float = 1e12
    track_residues: bool = True

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if self.growth < 1:
            raise ValueError("growth must be >= 1")
        if self.density_floor <= 0 or (self.velocity_cap is not None and self.velocity_cap <= 0):
            raise ValueError("density_floor and velocity_cap must be positive")
        if self.tol <= 0 or self.max_iters < 0 or self.record_every < 1:
            raise ValueError("tol > 0, max_iters >= 0 and record_every >= 1 required")


@dataclass
class SolveReport:
    fields: StaggeredFields
    iterations: int = 0
    converged: bool = False
    seconds: float = 0.0
    step: float = 0.0
    recorded_iters: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    stationarity: list = field(default_factory=list)
    feasibility: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    min_density: list = field(default_factory=list)
    elapsed: list = field(default_factory=list)
    max_feasibility: float = 0.0
    max_mass_residue: float = 0.0
    level_iterations: list = field(default_factory=list)

    @property
    def final_objective(self) -> float:
        return self.objective[-1] if self.objective else float("nan")

    def rows(self):
        """Diagnostics rows ``(iter, objective, stationarity, feasibility, mass, min_density, seconds)``."""
        return list(
            zip(
                self.recorded_iters,
                self.objective,
                self.stationarity,
                self.feasibility,
                self.mass,
                self.min_density,
                self.elapsed,
            )
        )


def project(fields: StaggeredFields, problem: Problem) -> StaggeredFields:
    """Euclidean projection onto ``{Div(P, M) + rho_D = 0}``.

    Solves ``-Lap(phi) = Div(P, M) + rho_D`` and adds ``Grad(phi)``; on the
    free-terminal layout the same formula realises ``x - A^T (A A^T)^-1 (A x + b)``.
    """
    shape = problem.shape
    b = problem.bnd.div_term(shape)
    r = divergence(fields, shape) + b
    phi = solve(r, problem.plan, reference=float(np.linalg.norm(b)))
    return fields + gradient(phi, shape)


def feasibility_residue(fields: StaggeredFields, problem: Problem) -> float:
    r = divergence(fields, problem.shape) + problem.bnd.div_term(problem.shape)
    return float(np.sqrt(problem.shape.cell_volume) * np.linalg.norm(r))


def mass_residue(fields: StaggeredFields, problem: Problem) -> float:
    """Largest deviation of a time slice's mass from the initial mass."""
    shape = problem.shape
    axes = tuple(range(1, len(shape.n)))
    # the time average commutes with the spatial sum, so average the slice sums
    face_mass = fields.P.sum(axis=axes)
    bnd_mass = problem.bnd.avg_term(shape).sum(axis=axes)
    slice_mass = shape.space_volume * (face_avg(face_mass, 0, shape.free_terminal) + bnd_mass)
    return float(np.max(np.abs(slice_mass - problem.initial_mass)))


def _grad(fields, problem: Problem, floor: float, cap=None) -> StaggeredFields:
    return objective_grad(fields, problem.bnd, problem.model, problem.shape, floor, cap)


def _value(fields, problem: Problem, floor: float, cap=None) -> float:
    return smoothed_objective(fields, problem.bnd, problem.model, problem.shape, floor, cap)


def stationarity_residue(
    fields: StaggeredFields, problem: Problem, eta: float, floor: float, cap: float | None = None
) -> float:
    """Projected-gradient norm ``||x - proj(x - eta grad)||_2 / eta``."""
    g = _grad(fields, problem, floor, cap)
    step = fields - project(fields.axpy(-eta, g), problem)
    return float(np.sqrt(problem.shape.cell_volume) * np.linalg.norm(step.ravel())) / eta


def residues(
    fields: StaggeredFields, problem: Problem, eta: float, floor: float = DEFAULT_FLOOR, cap: float | None = None
):
    """``(stationarity, feasibility, mass)`` residues of a candidate solution."""
    return (
        stationarity_residue(fields, problem, eta, floor, cap),
        feasibility_residue(fields, problem),
        mass_residue(fields, problem),
    )


def _weighted(fields: StaggeredFields, shape: GridShape) -> float:
    return float(np.sqrt(shape.cell_volume) * np.linalg.norm(fields.ravel()))


def append_record(
    report: SolveReport,
    k: int,
    fields: StaggeredFields,
    problem: Problem,
    eta: float,
    floor: float,
    elapsed: float,
    cap: float | None = None,
) -> float:
    """Append one diagnostics row to ``report`` and return the objective."""
    obj = _value(fields, problem, floor, cap)
    report.recorded_iters.append(k)
    report.objective.append(obj)
    report.stationarity.append(stationarity_residue(fields, problem, eta, floor, cap))
    report.feasibility.append(feasibility_residue(fields, problem))
    report.mass.append(mass_residue(fields, problem))
    rho_bar, _ = average_to_center(fields, problem.bnd, problem.shape)
    report.min_density.append(float(rho_bar.min()))
    report.elapsed.append(elapsed)
    return obj


def fista(
    problem: Problem,
    config: SolverConfig,
    init: StaggeredFields | None = None,
    *,
    max_iters: int | None = None,
    stop_on_tol: bool = True,
) -> SolveReport:
    """Run FISTA from ``init`` (default all ones) until the iterate change is below tol.

    With ``stop_on_tol=False`` exactly ``max_iters`` iterations are taken.
    """
    shape = problem.shape
    floor = config.density_floor
    vcap = config.velocity_cap
    cap = config.max_iters if max_iters is None else max_iters
    x = shape.ones() if init is None else init.copy()
    shape.check(x)
    x_hat = x.copy()
    tau = 1.0
    eta = config.step
    scale = problem.scale
    report = SolveReport(fields=x, step=eta)
    t0 = time.perf_counter()

    def record(k: int, fields: StaggeredFields):
        obj = append_record(report, k, fields, problem, eta, floor, time.perf_counter() - t0, vcap)
        if not np.isfinite(obj) or obj > config.divergence_threshold:
            report.fields = fields
            report.iterations = k
            report.seconds = time.perf_counter() - t0
            raise SolverDivergence(f"objective {obj:.3e} exceeded threshold at iteration {k}", report)

    k = 0
    converged = False
    while k < cap:
        g = _grad(x_hat, problem, floor, vcap)
        if config.backtracking:
            f_hat = _value(x_hat, problem, floor, vcap) / shape.cell_volume
            while True:
                x_new = project(x_hat.axpy(-eta, g), problem)
                d = x_new - x_hat
                lhs = _value(x_new, problem, floor, vcap) / shape.cell_volume
                dd = d.ravel()
                rhs = f_hat + float(np.dot(g.ravel(), dd)) + float(np.dot(dd, dd)) / (2 * eta)
                if lhs <= rhs + 1e-12 * abs(rhs) or eta < 1e-14:
                    break
                eta *= config.shrink
        else:
            x_new = project(x_hat.axpy(-eta, g), problem)
        k += 1

        if config.track_residues:
            feas = feasibility_residue(x_new, problem)
            report.max_feasibility = max(report.max_feasibility, feas / scale)
            report.max_mass_residue = max(report.max_mass_residue, mass_residue(x_new, problem))

        step_diff = x_new - x
        # a collapsed line-search step must not pass for convergence
        change = _weighted(step_diff, shape) * (config.step / eta)
        if not x_new.all_finite():
            report.fields = x_new
            report.iterations = k
            raise SolverDivergence(f"non-finite iterate at iteration {k}", report)

        tau_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * tau * tau))
        omega = (tau - 1.0) / tau_new
        if config.restart and float(np.dot((x_hat - x_new).ravel(), step_diff.ravel())) > 0:
            # gradient-mapping restart test
            tau_new, omega = 1.0, 0.0
        x_hat = x_new.axpy(omega, step_diff)
        x, tau = x_new, tau_new
        if config.growth > 1:
            eta = min(eta * config.growth, config.step)

        done = stop_on_tol and change <= config.tol
        if k % config.record_every == 0 or done or k == cap:
            record(k, x)
        if done:
            converged = True
            break

    if k == 0:
        record(0, x)
    report.fields = x
    report.iterations = k
    report.converged = converged
    report.step = eta
    report.seconds = time.perf_counter() - t0
    report.level_iterations = [k]
    return report


def solve_mfp(problem: Problem, config: SolverConfig | None = None, init=None) -> SolveReport:
    """Planning problem: both end densities fixed."""
    if problem.shape.free_terminal:
        raise ValueError("solve_mfp needs a fixed-terminal problem; use solve_mfg")
    return fista(problem, config or SolverConfig(), init)


def solve_mfg(problem: Problem, config: SolverConfig | None = None, init=None) -> SolveReport:
    """Potential game: terminal density free, penalised by ``lambda_G * G``."""
    if not problem.shape.free_terminal:
        raise ValueError("solve_mfg needs a free-terminal problem; use solve_mfp")
    return fista(problem, config or SolverConfig(), init)
