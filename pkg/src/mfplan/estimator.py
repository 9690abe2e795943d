"""scikit-learn style wrappers around the functional solvers.

``fit`` takes the end densities as arrays over the spatial cell centres and
solves the transport problem; ``transform``/``predict`` map a list of times
in [0, 1] to density snapshots. Hyperparameters live in ``__init__`` so
``get_params``/``set_params``/``clone`` work as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .config import snapshot_index
from .costs import CostModel
from .grid import average_to_center
from .multiscale import mg_fista, ml_fista
from .solver import Problem, SolverConfig, fista

__all__ = ["TransportPlanner", "MeanFieldGame"]


def _field(a, name):
    if a is None:
        return None
    a = np.asarray(a, dtype=float)
    ndim = a.ndim
    out = check_array(a.reshape(1, -1) if ndim == 1 else a, ensure_2d=False, allow_nd=True, input_name=name)
    return out.reshape(a.shape)


class _Base(TransformerMixin, BaseEstimator):
    def _config(self) -> SolverConfig:
        return SolverConfig(
            step=self.step,
            backtracking=self.backtracking,
            tol=self.tol,
            max_iters=self.max_iters,
            density_floor=self.density_floor,
            velocity_cap=self.velocity_cap,
            record_every=self.record_every,
        )

    def _model(self, Q, G) -> CostModel:
        return CostModel(self.kind, self.lambda_E, self.lambda_Q, Q, getattr(self, "lambda_G", 0.0), G)

    def _solve(self, problem: Problem):
        cfg = self._config()
        if self.variant == "fista":
            rep = fista(problem, cfg)
        elif self.variant == "mlfista":
            rep = ml_fista(problem, cfg, self.levels)
        elif self.variant == "mgfista":
            rep = mg_fista(problem, cfg, self.levels, self.smoothing)
        else:
            raise ValueError(f"unknown variant {self.variant!r}")
        self.problem_ = problem
        self.report_ = rep
        self.P_ = rep.fields.P
        self.M_ = rep.fields.M
        self.n_iter_ = rep.iterations
        self.objective_ = rep.final_objective
        self.converged_ = rep.converged
        self.rho_bar_, _ = average_to_center(rep.fields, problem.bnd, problem.shape)
        return self

    def transform(self, X):
        """Density snapshots at the times in ``X``: shape ``(len(X),) + space``."""
        check_is_fitted(self, "P_")
        t = check_array(np.asarray(X, dtype=float).reshape(-1, 1), input_name="X").ravel()
        if np.any((t < 0) | (t > 1)):
            raise ValueError("snapshot times must lie in [0, 1]")
        n0 = self.problem_.shape.n[0]
        return np.stack([self.rho_bar_[snapshot_index(v, n0)] for v in t])

    def predict(self, X):
        return self.transform(X)

    def score(self, X=None, y=None):
        """Negative objective, so larger is better."""
        check_is_fitted(self, "P_")
        return -self.objective_


class TransportPlanner(_Base):
    """Planning problem between two densities (optimal transport when ``kind='ot'``).

    Parameters
    ----------
    n_time : int
        Number of time cells.
    kind, lambda_E, lambda_Q :
        Interaction model and weights; ``Q`` is passed to :meth:`fit`.
    variant : {'fista', 'mlfista', 'mgfista'}
    levels, smoothing : int
        Hierarchy depth and smoothing passes for the multilevel variants.

    Attributes
    ----------
    P_, M_ : ndarray
        Staggered density and flux components of the solution.
    rho_bar_ : ndarray
        Density at the cell centres, time first.
    report_ : SolveReport
    n_iter_ : int
    """

    def __init__(
        self,
        n_time=16,
        kind="ot",
        lambda_E=0.0,
        lambda_Q=0.0,
        variant="fista",
        levels=3,
        smoothing=5,
        step=0.1,
        backtracking=False,
        tol=1e-4,
        max_iters=10000,
        density_floor=1e-8,
        velocity_cap=None,
        record_every=100,
    ):
        self.n_time = n_time
        self.kind = kind
        self.lambda_E = lambda_E
        self.lambda_Q = lambda_Q
        self.variant = variant
        self.levels = levels
        self.smoothing = smoothing
        self.step = step
        self.backtracking = backtracking
        self.tol = tol
        self.max_iters = max_iters
        self.density_floor = density_floor
        self.velocity_cap = velocity_cap
        self.record_every = record_every

    def fit(self, X, y, Q=None):
        """Transport ``X`` (initial density samples) to ``y`` (terminal samples).

        Both must be nonnegative with the same shape and total mass.
        """
        rho0, rho1 = _field(X, "X"), _field(y, "y")
        if rho0.shape != rho1.shape:
            raise ValueError(f"X has shape {rho0.shape} but y has shape {rho1.shape}")
        if np.any(rho0 < 0) or np.any(rho1 < 0):
            raise ValueError("densities must be nonnegative")
        n = (int(self.n_time),) + rho0.shape
        return self._solve(Problem.planning(n, rho0, rho1, self._model(_field(Q, "Q"), None)))


class MeanFieldGame(_Base):
    """Potential game: the terminal density is free and pays ``lambda_G * G``.

    Same parameters as :class:`TransportPlanner` plus ``lambda_G``;
    :meth:`fit` takes the initial density and the terminal cost ``G``.
    """

    def __init__(
        self,
        n_time=16,
        kind="entropy",
        lambda_E=0.0,
        lambda_Q=0.0,
        lambda_G=1.0,
        variant="fista",
        levels=3,
        smoothing=5,
        step=0.1,
        backtracking=False,
        tol=1e-4,
        max_iters=10000,
        density_floor=1e-8,
        velocity_cap=None,
        record_every=100,
    ):
        self.n_time = n_time
        self.kind = kind
        self.lambda_E = lambda_E
        self.lambda_Q = lambda_Q
        self.lambda_G = lambda_G
        self.variant = variant
        self.levels = levels
        self.smoothing = smoothing
        self.step = step
        self.backtracking = backtracking
        self.tol = tol
        self.max_iters = max_iters
        self.density_floor = density_floor
        self.velocity_cap = velocity_cap
        self.record_every = record_every

    def fit(self, X, G, Q=None):
        rho0 = _field(X, "X")
        if np.any(rho0 < 0):
            raise ValueError("densities must be nonnegative")
        G = _field(G, "G")
        if G.shape != rho0.shape:
            raise ValueError(f"G has shape {G.shape}, expected {rho0.shape}")
        n = (int(self.n_time),) + rho0.shape
        return self._solve(Problem.game(n, rho0, self._model(_field(Q, "Q"), G)))
