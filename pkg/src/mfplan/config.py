"""Experiment configuration: INI files, density sources and PGM loading.

A run is described by an INI file with three sections::

    [problem]
    mode = planning            ; or: game
    shape = 64, 256            ; n_0 (time) then one entry per space axis
    kind = ot                  ; ot | entropy | quadratic | reciprocal
    lambda_E = 0
    lambda_Q = 0
    lambda_G = 0
    rho0 = gaussian(0.3, 0.1) + uniform(0.5)
    rho1 = gaussian(0.7, 0.1) + uniform(0.5)
    Q = none
    G = none

    [solver]
    variant = fista            ; fista | mlfista | mgfista
    step = 0.1
    tol = 1e-4
    max_iters = 10000
    levels = 3
    smoothing = 5
    init = ones                ; ones | linear | random

    [output]
    snapshots = 0.1, 0.5, 0.9
    formats = csv              ; csv and/or pgm

Density expressions are sums of terms, optionally scaled by constants
(``2 * gaussian(...)``, ``-rho1``):

``uniform(c=1)``
    the constant ``c``.
``gaussian(center, sigma, weight=1)``
    an isotropic Gaussian sampled at cell centres and rescaled to carry
    discrete mass ``weight`` (so truncation at the box edges is undone).
``ot1d_exact``
    the 1D reference pair: ``x + 1/2`` for ``rho0``, ones for ``rho1``.
``image("file.pgm", normalize=True)``
    a binary PGM file (quoted path, relative to the INI file), resampled to the grid by nearest neighbour.
``mask("file.pgm")`` / ``box(lo, hi)``
    0/1 fields: a thresholded PGM, or an axis-aligned box.
``rho0`` / ``rho1``
    the already-built end densities (useful for ``G = -rho1``).

End densities are normalised to unit mass.
"""

from __future__ import annotations

import ast
import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .costs import CostKind, CostModel
from .grid import GridShape
from .solver import Problem, SolverConfig

__all__ = [
    "ConfigError",
    "DensitySource",
    "RunConfig",
    "load_config",
    "parse_config",
    "load_image_density",
    "evaluate_source",
]

VARIANTS = ("fista", "mlfista", "mgfista")
INITS = ("ones", "linear", "random")
FORMATS = ("csv", "pgm")
MAX_IMAGE_PIXELS = 4096 * 4096
SOURCES = ("uniform", "gaussian", "ot1d_exact", "image", "mask", "box")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending line when known."""


# -- density sources --------------------------------------------------------------


def load_image_density(path, shape, normalize: bool = True, mask: bool = False) -> np.ndarray:
    """Read an 8- or 16-bit binary PGM and resample it to ``shape`` (rows along axis 0).

    Grey levels are scaled to [0, 1]. With ``mask`` the result is thresholded
    at 0.5; otherwise it is optionally normalised to unit mean.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.format != "PPM" or im.mode not in ("L", "I", "I;16", "I;16B"):
                raise OSError(f"{path}: not a greyscale binary PGM (format {im.format}, mode {im.mode})")
            if im.width * im.height > MAX_IMAGE_PIXELS:
                raise OSError(f"{path}: image of {im.width}x{im.height} pixels is too large")
            bits = 8 if im.mode == "L" else 16
            data = np.asarray(im, dtype=float)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read density image {path}: {exc}") from exc
    data = data / (2**bits - 1)
    shape = tuple(int(s) for s in shape)
    if data.ndim != len(shape):
        raise ValueError(f"{path}: image is {data.ndim}D, grid is {len(shape)}D")
    # nearest neighbour: output cell centre -> source pixel containing it
    for axis, n in enumerate(shape):
        src = data.shape[axis]
        idx = np.minimum(((np.arange(n) + 0.5) * src / n).astype(int), src - 1)
        data = np.take(data, idx, axis=axis)
    if mask:
        return (data >= 0.5).astype(float)
    if normalize:
        total = data.mean()
        if total <= 0:
            raise ValueError(f"{path}: image has zero mass and cannot be normalised")
        data = data / total
    return data


@dataclass
class DensitySource:
    """A parsed density expression, evaluated lazily on a grid."""

    text: str
    base: Path = field(default_factory=Path.cwd)

    def __post_init__(self):
        try:
            self.tree = ast.parse(self.text.strip(), mode="eval").body
        except SyntaxError as exc:
            raise ConfigError(f"cannot parse density expression {self.text!r}: {exc.msg}") from None
        for node in ast.walk(self.tree):
            if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in SOURCES):
                raise ConfigError(f"unknown density source {ast.unparse(node.func)!r} in {self.text!r}")
            if isinstance(node, ast.Name) and node.id not in SOURCES + ("rho0", "rho1"):
                raise ConfigError(f"unknown name {node.id!r} in density expression {self.text!r}")

    def evaluate(self, shape: GridShape, which: str = "rho0", env: dict | None = None) -> np.ndarray:
        return _Evaluator(shape, which, env or {}, self.base).visit(self.tree)


def evaluate_source(text: str, shape: GridShape, which: str = "rho0", env: dict | None = None, base=None):
    return DensitySource(text, Path(base) if base else Path.cwd()).evaluate(shape, which, env)


def _literal(node):
    try:
        return ast.literal_eval(node)
    except ValueError:
        raise ConfigError(f"expected a literal, got {ast.unparse(node)!r}") from None


def _vector(value, ndim: int, name: str) -> np.ndarray:
    v = np.atleast_1d(np.asarray(value, dtype=float))
    if v.size == 1 and ndim > 1:
        v = np.repeat(v, ndim)
    if v.shape != (ndim,):
        raise ConfigError(f"{name} needs {ndim} coordinate(s), got {value!r}")
    return v


class _Evaluator(ast.NodeVisitor):
    def __init__(self, shape: GridShape, which: str, env: dict, base: Path):
        self.shape = shape
        self.which = which
        self.env = env
        self.base = base
        self.space = tuple(shape.space_mesh())

    def generic_visit(self, node):
        raise ConfigError(f"unsupported construct in density expression: {ast.unparse(node)!r}")

    def visit_Constant(self, node):
        if not isinstance(node.value, (int, float)):
            raise ConfigError(f"unexpected literal {node.value!r}")
        return float(node.value)

    def visit_UnaryOp(self, node):
        if isinstance(node.op, ast.USub):
            return -self.visit(node.operand)
        if isinstance(node.op, ast.UAdd):
            return self.visit(node.operand)
        return self.generic_visit(node)

    def visit_BinOp(self, node):
        a, b = self.visit(node.left), self.visit(node.right)
        if isinstance(node.op, ast.Add):
            return a + b
        if isinstance(node.op, ast.Sub):
            return a - b
        if isinstance(node.op, ast.Mult):
            return a * b
        return self.generic_visit(node)

    def visit_Name(self, node):
        if node.id in self.env:
            return np.array(self.env[node.id], dtype=float)
        if node.id in ("uniform", "ot1d_exact"):
            return self._call(node.id, [], {})
        raise ConfigError(f"unknown name {node.id!r} in density expression")

    def visit_Call(self, node):
        if not isinstance(node.func, ast.Name):
            return self.generic_visit(node)
        args = [_literal(a) for a in node.args]
        kwargs = {k.arg: _literal(k.value) for k in node.keywords}
        return self._call(node.func.id, args, kwargs)

    def _call(self, name, args, kwargs):
        shape = self.shape
        ndim = len(shape.n) - 1
        try:
            if name == "uniform":
                return np.full(shape.space_shape, float(_bind(args, kwargs, ("c",), {"c": 1.0})["c"]))
            if name == "gaussian":
                p = _bind(args, kwargs, ("center", "sigma", "weight"), {"weight": 1.0})
                c = _vector(p["center"], ndim, "center")
                sigma = float(p["sigma"])
                if sigma <= 0:
                    raise ConfigError("sigma must be positive")
                r2 = sum((x - ci) ** 2 for x, ci in zip(self.space, c))
                g = np.exp(-r2 / (2 * sigma * sigma))
                return float(p["weight"]) * g / (g.mean() * shape.space_volume * np.prod(shape.space_shape))
            if name == "ot1d_exact":
                if ndim != 1:
                    raise ConfigError("ot1d_exact is a 1D source")
                x = self.space[0]
                return x + 0.5 if self.which == "rho0" else np.ones_like(x)
            if name == "image":
                p = _bind(args, kwargs, ("path", "normalize"), {"normalize": True})
                return load_image_density(self.base / p["path"], shape.space_shape, normalize=bool(p["normalize"]))
            if name == "mask":
                p = _bind(args, kwargs, ("path",), {})
                return load_image_density(self.base / p["path"], shape.space_shape, mask=True)
            if name == "box":
                p = _bind(args, kwargs, ("lo", "hi"), {})
                lo, hi = _vector(p["lo"], ndim, "lo"), _vector(p["hi"], ndim, "hi")
                inside = np.ones(shape.space_shape, dtype=bool)
                for x, a, b in zip(self.space, lo, hi):
                    inside &= (x >= a) & (x <= b)
                return inside.astype(float)
        except TypeError as exc:
            raise ConfigError(f"{name}: {exc}") from None
        raise ConfigError(f"unknown density source {name!r}")


def _bind(args, kwargs, names, defaults):
    if len(args) > len(names):
        raise TypeError(f"expected at most {len(names)} arguments")
    out = dict(defaults)
    out.update(zip(names, args))
    for k, v in kwargs.items():
        if k not in names:
            raise TypeError(f"unexpected argument {k!r}")
        out[k] = v
    missing = [n for n in names if n not in out]
    if missing:
        raise TypeError(f"missing argument(s) {', '.join(missing)}")
    return out


# -- run configuration ---------------------------------------------------------------


@dataclass
class RunConfig:
    """Everything needed to reproduce one experiment."""

    shape: tuple
    mode: str = "planning"
    kind: str = "ot"
    lambda_E: float = 0.0
    lambda_Q: float = 0.0
    lambda_G: float = 0.0
    rho0: str = "uniform"
    rho1: str = "uniform"
    Q: str | None = None
    G: str | None = None
    variant: str = "fista"
    levels: int = 3
    smoothing: int = 5
    init: str = "ones"
    solver: SolverConfig = field(default_factory=SolverConfig)
    snapshots: tuple = ()
    formats: tuple = ("csv",)
    base: Path = field(default_factory=Path.cwd)

    def __post_init__(self):
        self.shape = tuple(int(v) for v in self.shape)
        GridShape(self.shape)
        if self.mode not in ("planning", "game"):
            raise ConfigError(f"mode must be planning or game, not {self.mode!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {', '.join(VARIANTS)}")
        if self.variant == "mgfista" and (self.smoothing < 0 or self.levels < 2):
            raise ConfigError("mgfista needs smoothing >= 0 and levels >= 2")
        if self.variant != "fista" and self.levels < 1:
            raise ConfigError("levels must be >= 1")
        if self.init not in INITS:
            raise ConfigError(f"init must be one of {', '.join(INITS)}")
        if any(not 0 <= t <= 1 for t in self.snapshots):
            raise ConfigError("snapshot times must lie in [0, 1]")
        if any(f not in FORMATS for f in self.formats):
            raise ConfigError(f"formats must be drawn from {', '.join(FORMATS)}")

    @property
    def grid(self) -> GridShape:
        return GridShape(self.shape, free_terminal=self.mode == "game")

    def densities(self) -> dict:
        """Evaluate the end densities (unit mass), ``Q`` and ``G``."""
        grid = self.grid
        out = {}
        for which in ("rho0", "rho1"):
            if which == "rho1" and self.mode == "game":
                continue
            rho = DensitySource(getattr(self, which), self.base).evaluate(grid, which, out)
            rho = np.broadcast_to(rho, grid.space_shape).astype(float)
            if np.any(rho < 0) or not np.all(np.isfinite(rho)):
                raise ConfigError(f"{which} must be finite and nonnegative")
            mass = rho.sum() * grid.space_volume
            if mass <= 0:
                raise ConfigError(f"{which} has zero mass")
            out[which] = rho / mass
        for name in ("Q", "G"):
            text = getattr(self, name)
            if text is not None:
                val = DensitySource(text, self.base).evaluate(grid, "rho1", out)
                out[name] = np.broadcast_to(val, grid.space_shape).astype(float)
        return out

    def problem(self) -> Problem:
        d = self.densities()
        model = CostModel(
            CostKind(self.kind),
            self.lambda_E,
            self.lambda_Q,
            d.get("Q"),
            self.lambda_G,
            d.get("G"),
        )
        if self.mode == "game":
            return Problem.game(self.shape, d["rho0"], model)
        return Problem.planning(self.shape, d["rho0"], d["rho1"], model)


_SOLVER_FIELDS = {f.name: f for f in dataclasses.fields(SolverConfig)}


def _convert(section: configparser.SectionProxy, key: str, kind):
    raw = section[key]
    if kind is bool:
        return section.getboolean(key)
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind == "floats":
        return tuple(float(v) for v in raw.replace(",", " ").split())
    if kind == "ints":
        return tuple(int(v) for v in raw.replace(",", " ").split())
    if kind == "words":
        return tuple(v for v in raw.replace(",", " ").split())
    if kind == "optional":
        return None if raw.strip().lower() in ("", "none") else raw.strip()
    return raw.strip()


_PROBLEM_KEYS = {
    "shape": "ints",
    "mode": str,
    "kind": str,
    "lambda_e": float,
    "lambda_q": float,
    "lambda_g": float,
    "rho0": str,
    "rho1": str,
    "q": "optional",
    "g": "optional",
}
_RUN_KEYS = {"variant": str, "levels": int, "smoothing": int, "init": str}
_OUTPUT_KEYS = {"snapshots": "floats", "formats": "words"}
_NAMES = {"lambda_e": "lambda_E", "lambda_q": "lambda_Q", "lambda_g": "lambda_G", "q": "Q", "g": "G"}


def _line_of(text: str, section: str, key: str) -> int | None:
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip().lower()
        elif current == section and s.split("=", 1)[0].strip().lower() == key:
            return i
    return None


def parse_config(text: str, base=None, source: str = "<config>") -> RunConfig:
    """Parse INI ``text``; errors carry ``source:line`` of the offending key."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    for name in cp.sections():
        if name not in ("problem", "solver", "output"):
            line = next(i for i, ln in enumerate(text.splitlines(), 1) if ln.strip() == f"[{name}]")
            raise ConfigError(f"{source}:{line}: unknown section [{name}]")
    if not cp.has_section("problem") or "shape" not in cp["problem"]:
        raise ConfigError(f"{source}: [problem] shape is required")

    kwargs: dict = {"base": Path(base) if base else Path.cwd()}
    solver_kwargs: dict = {}

    def take(section_name, table, sink, names=None):
        if not cp.has_section(section_name):
            return
        section = cp[section_name]
        for key in section:
            try:
                if key in table:
                    sink[(names or {}).get(key, key)] = _convert(section, key, table[key])
                elif section_name == "solver" and key in _SOLVER_FIELDS:
                    f = _SOLVER_FIELDS[key]
                    kind = {"float": float, "int": int, "bool": bool}.get(str(f.type).split(" ")[0], float)
                    if key == "velocity_cap":
                        solver_kwargs[key] = None if section[key].strip().lower() == "none" else float(section[key])
                    else:
                        solver_kwargs[key] = _convert(section, key, kind)
                else:
                    raise ConfigError(f"unknown key {key!r}")
            except (ValueError, TypeError) as exc:
                line = _line_of(text, section_name, key)
                raise ConfigError(f"{source}:{line}: [{section_name}] {key}: {exc}") from None

    take("problem", _PROBLEM_KEYS, kwargs, _NAMES)
    take("solver", _RUN_KEYS, kwargs)
    take("output", _OUTPUT_KEYS, kwargs)
    try:
        kwargs["solver"] = SolverConfig(**solver_kwargs)
        cfg = RunConfig(**kwargs)
        # parse expressions early so syntax errors surface with the config
        for key in ("rho0", "rho1", "Q", "G"):
            value = getattr(cfg, key)
            if value is not None:
                DensitySource(value, cfg.base)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, base=path.parent, source=str(path))


def snapshot_index(t: float, n0: int) -> int:
    """Nearest central time slice ``t_j = (j + 1/2) / n0`` (0-based)."""
    return min(max(int(math.floor(t * n0)), 0), n0 - 1)
