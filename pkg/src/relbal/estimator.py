"""Estimator-style wrapper around the balance solvers."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _validation as v
from .balance_solver import SolveConfig, gradient_descent_D, t_iterate
from .exceptions import ConfigError
from .fubini_study import bergman, default_grid, h_s_density
from .geometry import reference_gram_diagonal
from .hermitian_space import InnerProduct, orbit_project, random_inner_product
from .kempf_ness import group_residual


class RelativeBalancedMetric(BaseEstimator):
    """Balanced inner product on a polarized toric model.

    Parameters
    ----------
    model : descriptor
        ``[(dim, k), ...]`` factor list, e.g. ``[(1, 3)]`` or ``[(1, 2), (2, 1)]``.
    torus : {"maximal", "trivial"} or list of int
        Torus coordinates used for the character splitting.
    group : {"sl", "gc", "gct"}
        Orbit on which the solve takes place.
    method : {"t_iterate", "gradient"}
    grid_level, max_iters, tol, damping
        Passed to :class:`SolveConfig`.
    random_state : int or None
        Seed for a random start; ``None`` starts from the reference Gram.

    Attributes
    ----------
    model_, splitting_, grid_ : model, character splitting and quadrature grid
    inner_product_ : InnerProduct
    index_ : IndexVector or None
    trace_ : SolveTrace
    n_iter_ : int
    """

    def __init__(self, model=((1, 3),), torus="maximal", group="gct", method="t_iterate",
                 grid_level=2, max_iters=200, tol=1e-9, damping=1.0, random_state=None):
        self.model = model
        self.torus = torus
        self.group = group
        self.method = method
        self.grid_level = grid_level
        self.max_iters = max_iters
        self.tol = tol
        self.damping = damping
        self.random_state = random_state

    def _start(self, X):
        if X is not None:
            return v.check_inner_product(X, self.splitting_)
        if self.random_state is None:
            G = reference_gram_diagonal(self.model_, self.grid_level)
            return InnerProduct.from_matrix(G, self.splitting_)
        rng = np.random.default_rng(self.random_state)
        return random_inner_product(self.splitting_, rng, 1.0, self.group)

    def fit(self, X=None, y=None):
        """Solve for a balanced inner product; ``X`` is an optional start."""
        self.model_ = v.check_model(self.model)
        group = v.check_group(self.group)
        v.check_positive_int(self.grid_level, "grid_level")
        self.splitting_ = v.check_splitting(self.model_, self.torus)
        self.grid_ = default_grid(self.model_, self.splitting_, self.grid_level)
        cfg = SolveConfig(group=group, max_iters=self.max_iters, tol=self.tol,
                          damping=self.damping, grid_level=self.grid_level)
        m0 = orbit_project(self._start(X), group)
        if self.method == "t_iterate":
            trace = t_iterate(m0, self.grid_, cfg)
        elif self.method == "gradient":
            trace = gradient_descent_D(m0, self.grid_, cfg)
        else:
            raise ConfigError(f"unknown method {self.method!r}")
        self.trace_ = trace
        self.inner_product_ = trace.final
        self.index_ = trace.index
        self.n_iter_ = trace.iterations
        return self

    def transform(self, X):
        """Rescaling factor ``h_s / h_ref`` of the balanced metric at points ``X``."""
        check_is_fitted(self, "inner_product_")
        X = v.check_points(X, self.model_)
        return np.array([h_s_density(self.inner_product_, z, self.model_) for z in X])

    def bergman_density(self):
        check_is_fitted(self, "inner_product_")
        return bergman(self.inner_product_, self.grid_)

    def score(self, X=None, y=None):
        """Negative group residual of the fitted inner product."""
        check_is_fitted(self, "inner_product_")
        return -group_residual(self.inner_product_, self.grid_, self.trace_.group)
