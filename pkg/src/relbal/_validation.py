"""Input checks shared by the estimator and the command line."""
from __future__ import annotations

import numpy as np

from .exceptions import ConfigError, DomainError
from .geometry import PolarizedModel, build_model
from .hermitian_space import InnerProduct, normalize_group, splitting_from_weights


def check_model(model):
    if isinstance(model, PolarizedModel):
        return model
    if isinstance(model, dict):
        model = model.get("factors", model)
    return build_model(model)


def check_group(group):
    try:
        return normalize_group(group)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_splitting(model, torus):
    try:
        return splitting_from_weights(model.basis, torus)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def check_points(X, model):
    """Complex ``(P, n)`` array of torus-chart points."""
    X = np.asarray(X, dtype=complex)
    if X.ndim == 1:
        X = X.reshape(-1, model.dim_complex) if model.dim_complex > 1 else X[:, None]
    if X.ndim != 2 or X.shape[1] != model.dim_complex:
        raise DomainError(f"expected points of shape (P, {model.dim_complex}), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DomainError("points must be finite")
    return X


def check_inner_product(m, splitting):
    """Accept an :class:`InnerProduct` or a matrix on ``splitting``."""
    if isinstance(m, InnerProduct):
        if not m.splitting.same_as(splitting):
            raise ConfigError("inner product lives on a different splitting")
        return m
    try:
        return InnerProduct.from_matrix(m, splitting)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
