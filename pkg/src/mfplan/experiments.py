"""Experiment drivers behind the command line: single runs, grid ladders, benchmarks.

Every driver writes plain CSV (17 significant digits, so values round-trip
exactly) plus a ``key=value`` summary. Wall-clock times go to their own
files so that the diagnostics of two identical runs are byte-identical.
"""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .analytic import exact_w2sq, sample_exact
from .config import ConfigError, RunConfig, snapshot_index
from .grid import StaggeredFields, average_to_center, norms
from .multiscale import ml_fista, mg_fista
from .solver import Problem, SolveReport, SolverDivergence, fista, project

logger = logging.getLogger(__name__)

__all__ = [
    "RunResult",
    "initial_fields",
    "solve_config",
    "snapshots",
    "reference_errors",
    "run",
    "convergence_study",
    "empirical_orders",
    "bench",
    "parse_variant",
    "read_csv",
]

DIAG_HEADER = ("iter", "objective", "stationarity", "feasibility", "mass", "min_density")


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path) -> tuple[list, list]:
    """Header and rows of a CSV written here, numbers parsed back to float."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))

    def parse(v):
        try:
            return float(v)
        except ValueError:
            return v

    return rows[0], [[parse(v) for v in r] for r in rows[1:]]


def write_summary(path: Path, items: dict) -> Path:
    path.write_text("".join(f"{k}={fmt(v)}\n" for k, v in items.items()))
    return path


# -- solving -----------------------------------------------------------------------


def initial_fields(problem: Problem, init: str = "ones", seed: int | None = None) -> StaggeredFields | None:
    """Starting point: ``ones`` (None, the solver default), a projected linear
    interpolation of the end densities, or projected seeded noise around ones."""
    shape = problem.shape
    if init == "ones":
        return None
    if init == "linear":
        t = shape.face_coords(0).reshape((-1,) + (1,) * (len(shape.n) - 1))
        rho1 = problem.bnd.rho0 if problem.bnd.rho1 is None else problem.bnd.rho1
        P = (1 - t) * problem.bnd.rho0 + t * rho1
        x = StaggeredFields(P, tuple(np.zeros(shape.face_shape(a)) for a in range(1, len(shape.n))))
        return project(x, problem)
    if init == "random":
        rng = np.random.default_rng(0 if seed is None else seed)
        x = shape.ones()
        noise = StaggeredFields.from_vector(0.1 * rng.standard_normal(x.size), shape)
        return project(x + noise, problem)
    raise ConfigError(f"unknown init {init!r}")


def parse_variant(text: str) -> tuple[str, int | None]:
    """``fista``, ``mlfista`` or ``mgfista(K)``."""
    m = re.fullmatch(r"\s*(fista|mlfista|mgfista)\s*(?:\(\s*(\d+)\s*\))?\s*", text)
    if not m:
        raise ConfigError(f"unknown solver variant {text!r}")
    k = None if m.group(2) is None else int(m.group(2))
    if k is not None and m.group(1) != "mgfista":
        raise ConfigError(f"only mgfista takes a smoothing count, got {text!r}")
    return m.group(1), k


def solve_config(cfg: RunConfig, problem: Problem | None = None, seed: int | None = None) -> SolveReport:
    problem = problem or cfg.problem()
    if cfg.variant == "fista":
        return fista(problem, cfg.solver, initial_fields(problem, cfg.init, seed))
    if cfg.init != "ones":
        raise ConfigError("the multilevel variants start from ones on their first level")
    if cfg.variant == "mlfista":
        return ml_fista(problem, cfg.solver, cfg.levels)
    return mg_fista(problem, cfg.solver, cfg.levels, cfg.smoothing)


def snapshots(fields: StaggeredFields, problem: Problem, times) -> list:
    """``(t_j, rho_bar[j])`` for the central slice nearest to each requested time."""
    rho_bar, _ = average_to_center(fields, problem.bnd, problem.shape)
    n0 = problem.shape.n[0]
    out = []
    for t in times:
        j = snapshot_index(t, n0)
        out.append(((j + 0.5) / n0, rho_bar[j]))
    return out


def _is_reference(cfg: RunConfig) -> bool:
    return (
        cfg.mode == "planning"
        and cfg.kind == "ot"
        and len(cfg.shape) == 2
        and cfg.rho0.replace(" ", "") == "ot1d_exact"
        and cfg.rho1.replace(" ", "") == "ot1d_exact"
    )


def reference_errors(fields: StaggeredFields, objective: float, problem: Problem) -> dict:
    """Errors against the closed-form 1D transport solution.

    ``w2_error`` compares twice the kinetic objective (which converges to
    half the squared distance) with 1/120.
    """
    E = fields - sample_exact(problem.shape)
    _, l2, linf = norms(E, problem.shape)
    return {"l2_error": l2, "linf_error": linf, "w2_error": abs(2.0 * objective - exact_w2sq())}


# -- run -----------------------------------------------------------------------------


@dataclass
class RunResult:
    report: SolveReport
    problem: Problem
    summary: dict
    files: list = field(default_factory=list)


def _write_snapshot(out: Path, t: float, rho: np.ndarray, problem: Problem, formats) -> list:
    files = []
    tag = f"snapshot_t{t:.4f}"
    if "csv" in formats:
        if rho.ndim == 1:
            x = problem.shape.center_coords(1)
            files.append(write_csv(out / f"{tag}.csv", ("x", "rho"), zip(x, rho)))
        else:
            flat = rho.reshape(rho.shape[0], -1)
            header = [f"c{j}" for j in range(flat.shape[1])]
            files.append(write_csv(out / f"{tag}.csv", header, flat))
    if "pgm" in formats and rho.ndim == 2:
        top = float(np.max(rho))
        img = np.zeros(rho.shape) if top <= 0 else np.clip(rho / top, 0, 1)
        path = out / f"{tag}.pgm"
        Image.fromarray(np.round(255 * img).astype(np.uint8)).save(path)
        files.append(path)
    return files


def _write_traces(out: Path, report: SolveReport) -> list:
    rows = [r[:6] for r in report.rows()]
    return [
        write_csv(out / "diagnostics.csv", DIAG_HEADER, rows),
        write_csv(out / "timings.csv", ("iter", "seconds"), zip(report.recorded_iters, report.elapsed)),
    ]


def run(cfg: RunConfig, out_dir, seed: int | None = None) -> RunResult:
    """Solve one configuration and write diagnostics, snapshots and a summary.

    On divergence the partial diagnostics are written before the error is
    re-raised.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem = cfg.problem()
    try:
        report = solve_config(cfg, problem, seed)
    except SolverDivergence as exc:
        _write_traces(out, exc.report)
        raise
    files = _write_traces(out, report)
    for t, rho in snapshots(report.fields, problem, cfg.snapshots):
        files += _write_snapshot(out, t, rho, problem, cfg.formats)
    summary = {
        "variant": cfg.variant,
        "shape": "x".join(str(n) for n in cfg.shape),
        "iterations": report.iterations,
        "level_iterations": " ".join(str(k) for k in report.level_iterations),
        "converged": report.converged,
        "objective": report.final_objective,
        "stationarity": report.stationarity[-1] if report.stationarity else float("nan"),
        "max_feasibility": report.max_feasibility,
        "max_mass_residue": report.max_mass_residue,
    }
    if _is_reference(cfg):
        summary.update(reference_errors(report.fields, report.final_objective, problem))
    files.append(write_summary(out / "summary.txt", summary))
    (out / "wallclock.txt").write_text(f"seconds={fmt(report.seconds)}\n")
    return RunResult(report, problem, summary, files)


# -- convergence study -------------------------------------------------------------


def empirical_orders(n0, errors) -> list:
    """``log(e_coarse / e_fine) / log(n_fine / n_coarse)`` for consecutive grids."""
    out = []
    for (na, ea), (nb, eb) in zip(zip(n0, errors), zip(n0[1:], errors[1:])):
        out.append(math.log(ea / eb) / math.log(nb / na) if ea > 0 and eb > 0 else float("nan"))
    return out


def convergence_study(cfg: RunConfig, grids, out_dir=None) -> list:
    """Solve the 1D reference transport problem on each grid and tabulate errors.

    Returns one dict per grid; the first row has NaN orders.
    """
    if not _is_reference(cfg):
        raise ConfigError("the convergence study needs the 1D reference transport problem (rho0 = rho1 = ot1d_exact)")
    rows = []
    for n in grids:
        c = replace(cfg, shape=tuple(n))
        problem = c.problem()
        report = solve_config(c, problem)
        row = {
            "n0": c.shape[0],
            "n1": c.shape[1],
            "iterations": report.iterations,
            "converged": report.converged,
            "objective": report.final_objective,
        }
        row.update(reference_errors(report.fields, report.final_objective, problem))
        logger.info("grid %s: %s", c.shape, row)
        rows.append(row)
    n0 = [r["n0"] for r in rows]
    for key in ("l2_error", "linf_error", "w2_error"):
        orders = [float("nan")] + empirical_orders(n0, [r[key] for r in rows])
        for r, o in zip(rows, orders):
            r[key.replace("_error", "_order")] = o
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        header = list(rows[0])
        write_csv(out / "convergence.csv", header, [[r[k] for k in header] for r in rows])
        (out / "convergence.md").write_text(_markdown(rows))
    return rows


def _markdown(rows) -> str:
    lines = [
        "| grid | iterations | l2 error | order | linf error | order | W2^2 error | order |",
        "|---|---|---|---|---|---|---|---|",
    ]
    for r in rows:

        def o(key):
            return "" if math.isnan(r[key]) else f"{r[key]:.2f}"

        lines.append(
            f"| ({r['n0']},{r['n1']}) | {r['iterations']} | {r['l2_error']:.2e} | {o('l2_order')} "
            f"| {r['linf_error']:.2e} | {o('linf_order')} | {r['w2_error']:.2e} | {o('w2_order')} |"
        )
    return "\n".join(lines) + "\n"


# -- bench -----------------------------------------------------------------------------


BENCH_HEADER = (
    "variant",
    "iterations",
    "level_iterations",
    "seconds",
    "objective",
    "stationarity",
    "max_feasibility",
    "max_mass_residue",
)


def bench(cfg: RunConfig, variants, out_dir=None) -> list:
    """Run each variant on the same problem and tolerance, sequentially."""
    problem = cfg.problem()
    rows = []
    for text in variants:
        name, k = parse_variant(text)
        c = replace(cfg, variant=name, smoothing=cfg.smoothing if k is None else k)
        report = solve_config(c, problem)
        rows.append(
            {
                "variant": text.strip(),
                "iterations": report.iterations,
                "level_iterations": " ".join(str(i) for i in report.level_iterations),
                "seconds": report.seconds,
                "objective": report.final_objective,
                "stationarity": report.stationarity[-1],
                "max_feasibility": report.max_feasibility,
                "max_mass_residue": report.max_mass_residue,
            }
        )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "bench.csv", BENCH_HEADER, [[r[k] for k in BENCH_HEADER] for r in rows])
    return rows
