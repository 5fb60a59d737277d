"""Fubini--Study data induced by an inner product.

For an inner product with matrix ``M`` the flat kernel in the torus chart is
``K(z) = sum_ij f_i(z) (M^-1)_ij conj(f_j(z))`` where ``f`` are the monomial
chart representatives.  Its complex Hessian ``d dbar log K`` is the pull-back
Fubini--Study form, and ``h_m = h_ref / (K h_ref)`` is the induced bundle
metric.  All derivatives are taken analytically from the monomials.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .exceptions import DegeneracyError, DomainError, EvaluationError, PreconditionError
from .geometry import monomial_tables, make_grid
from .hermitian_space import InnerProduct, admissible_normal_basis

DET_FLOOR = 0.0


def _as_inverse(m):
    return m.inverse if isinstance(m, InnerProduct) else np.asarray(m, dtype=complex)


def _normalize_rows(F, dF):
    scale = np.max(np.abs(F), axis=1)
    if np.any(scale == 0) or not np.all(np.isfinite(scale)):
        raise EvaluationError("all sections vanish (or overflow) at a grid point")
    F = F / scale[:, None]
    dF = dF / scale[None, :, None]
    return F, dF, scale


def _log_kernel_derivatives(F, dF, A):
    """Kernel, gradient and Hessian of ``log K`` for row-normalized tables.

    Returns ``K (P,)``, ``grad (P, n)`` = d log K / dz_a and ``H (P, n, n)``
    with ``H[a, b] = d_a dbar_b log K``.
    """
    B = F.conj() @ A.T
    K = np.einsum("ps,ps->p", F, B).real
    if np.any(K <= 0):
        raise EvaluationError("kernel is not positive at a grid point")
    n = dF.shape[0]
    dK = np.stack([np.einsum("ps,ps->p", dF[a], B) for a in range(n)], axis=1)
    H = np.empty((F.shape[0], n, n), dtype=complex)
    for b in range(n):
        Cb = dF[b].conj() @ A.T
        for a in range(n):
            H[:, a, b] = np.einsum("ps,ps->p", dF[a], Cb)
    grad = dK / K[:, None]
    H = H / K[:, None, None] - grad[:, :, None] * grad.conj()[:, None, :]
    return K, grad, H


def _volume_density(H):
    n = H.shape[1]
    if n == 1:
        det = H[:, 0, 0].real
    elif n == 2:
        det = (H[:, 0, 0] * H[:, 1, 1] - H[:, 0, 1] * H[:, 1, 0]).real
    elif n == 3:
        det = (H[:, 0, 0] * (H[:, 1, 1] * H[:, 2, 2] - H[:, 1, 2] * H[:, 2, 1])
               - H[:, 0, 1] * (H[:, 1, 0] * H[:, 2, 2] - H[:, 1, 2] * H[:, 2, 0])
               + H[:, 0, 2] * (H[:, 1, 0] * H[:, 2, 1] - H[:, 1, 1] * H[:, 2, 0])).real
    else:
        det = np.linalg.det(H).real
    return det


def _check_density(det):
    if np.any(det <= DET_FLOOR) or not np.all(np.isfinite(det)):
        raise DegeneracyError("induced Fubini-Study form is not positive at a grid node")


def iter_fields(A, grid):
    """Yield ``(sl, F, K, grad, H, det)`` per chunk with row-normalized ``F``."""
    for sl, F, dF in grid.chunks():
        F, dF, _ = _normalize_rows(F, dF)
        K, grad, H = _log_kernel_derivatives(F, dF, A)
        det = _volume_density(H)
        _check_density(det)
        yield sl, F, K, grad, H, det


@dataclass(frozen=True)
class KernelField:
    """Per-node kernel data: ``log K``, ``d log K`` and ``d dbar log K``."""

    log_kernel: np.ndarray
    grad_log: np.ndarray
    hessian: np.ndarray

    @property
    def volume_density(self):
        return _volume_density(self.hessian)

    def mixed_block(self, rows, cols):
        return self.hessian[:, rows, :][:, :, cols]


def kernel_field(m, grid):
    """Evaluate :class:`KernelField` on every node of ``grid``."""
    A = _as_inverse(m)
    logs, grads, hess = [], [], []
    for sl, F, dF in grid.chunks():
        F, dF, scale = _normalize_rows(F, dF)
        K, grad, H = _log_kernel_derivatives(F, dF, A)
        logs.append(np.log(K) + 2.0 * np.log(scale))
        grads.append(grad)
        hess.append(H)
    return KernelField(np.concatenate(logs), np.concatenate(grads), np.concatenate(hess))


@dataclass(frozen=True)
class InducedMetric:
    """Volume form of ``FS(m)`` on a grid; ``density`` is w.r.t. Lebesgue measure."""

    source: InnerProduct
    density: np.ndarray
    total_volume: float


def fs_volume(m, grid):
    """Induced volume density ``det(d dbar log K)`` and its total."""
    A = _as_inverse(m)
    parts = [det for _, _, _, _, _, det in iter_fields(A, grid)]
    density = np.concatenate(parts)
    return InducedMetric(source=m, density=density,
                         total_volume=grid.integrate(density))


def fs_gram_reference(m, grid, log_weight=None):
    """``<s_i, s_j>_{h_m}`` against ``FS(m)^n`` in the reference section basis.

    ``log_weight`` (values of ``phi`` on the grid) replaces ``h_m`` by ``h_m e^{-phi}``.
    """
    A = _as_inverse(m)
    G = np.zeros(A.shape, dtype=complex)
    for sl, F, K, _, _, det in iter_fields(A, grid):
        wts = grid.weights[sl] * det / K
        if log_weight is not None:
            wts = wts * np.exp(-log_weight[sl])
        G += F.conj().T @ (wts[:, None] * F)
    G = 0.5 * (G + G.conj().T)
    if isinstance(m, InnerProduct):
        G = np.where(m.splitting.mask, G, 0.0)
    return G


def l2_gram(m, grid, basis=None):
    """L2 Gram of an admissible orthonormal basis of ``m`` under ``h_m`` and ``FS(m)^n``.

    The trace equals the total induced volume.
    """
    S = admissible_normal_basis(m) if basis is None else basis
    Gref = fs_gram_reference(m, grid)
    G = S.conj().T @ Gref @ S
    G = 0.5 * (G + G.conj().T)
    return np.where(m.splitting.mask, G, 0.0)


def h_s_density(m, point, model):
    """Rescaling factor ``h_s / h_ref = 1 / sum_i |s_i|^2_{h_ref}`` at a torus-chart point.

    ``s`` is any admissible orthonormal basis of ``m``; the value does not
    depend on the choice.
    """
    z = np.asarray(point, dtype=complex)
    if z.shape != (model.dim_complex,) or not np.all(np.isfinite(z)):
        raise DomainError("point is not in the torus chart")
    with np.errstate(over="ignore", invalid="ignore"):
        F, dF = monomial_tables(model.basis.exponents, z[None, :])
    F, _, scale = _normalize_rows(F, dF)
    A = _as_inverse(m)
    K = np.einsum("ps,ps->p", F, F.conj() @ A.T).real[0]
    # log(K h_ref) with the largest monomial factored out
    log_href = -sum(f.k * np.log1p(np.sum(np.abs(z[sl]) ** 2))
                    for f, sl in zip(model.factors, model.coord_slices))
    log_hk = np.log(K) + 2.0 * np.log(scale[0]) + log_href
    if not np.isfinite(log_hk) or log_hk >= -np.log(np.finfo(float).tiny):
        raise EvaluationError("kernel underflow at point")
    return float(np.exp(-log_hk))


def partition_sum(m, grid, basis=None):
    """``sum_i h_m(s_i, s_i)`` at every node for an orthonormal basis (identically one)."""
    S = admissible_normal_basis(m) if basis is None else basis
    A = _as_inverse(m)
    out = []
    for sl, F, dF in grid.chunks():
        F, dF, _ = _normalize_rows(F, dF)
        K, _, _ = _log_kernel_derivatives(F, dF, A)
        vals = np.sum(np.abs(F @ S) ** 2, axis=1)
        out.append(vals / K)
    return np.concatenate(out)


def bergman(m, grid, basis=None, atol=1e-6, log_weight=None):
    """Bergman density ``rho = sum_i h(t_i, t_i)`` on the grid.

    ``h`` is the bundle metric ``h_m`` induced by ``m``, optionally perturbed
    to ``h_m e^{-phi}`` by ``log_weight`` (values of ``phi`` on the grid); ``t``
    is an L2-orthonormal basis for ``h`` and ``FS(m)^n``.  When ``basis`` is
    given it is checked for orthonormality to ``atol``.
    """
    if log_weight is not None:
        log_weight = np.asarray(log_weight, dtype=float)
        if log_weight.shape != (grid.size,):
            raise PreconditionError("log_weight must have one value per grid node")
    Gref = fs_gram_reference(m, grid, log_weight)
    if basis is None:
        lam, U = np.linalg.eigh(Gref)
        T = U / np.sqrt(lam)[None, :]
    else:
        T = np.asarray(basis, dtype=complex)
        err = np.max(np.abs(T.conj().T @ Gref @ T - np.eye(T.shape[1])))
        if err > atol:
            raise PreconditionError(f"basis is not L2-orthonormal (error {err:.2e})")
    A = _as_inverse(m)
    out = []
    for sl, F, dF in grid.chunks():
        F, dF, _ = _normalize_rows(F, dF)
        K, _, _ = _log_kernel_derivatives(F, dF, A)
        vals = np.sum(np.abs(F @ T) ** 2, axis=1) / K
        if log_weight is not None:
            vals = vals * np.exp(-log_weight[sl])
        out.append(vals)
    return np.concatenate(out)


def default_grid(model, splitting, level=1):
    """Invariant grid when every block is one dimensional, full grid otherwise."""
    return make_grid(model, level, invariant=splitting.all_singletons)


def write_field_csv(path, grid, values, name="value"):
    """Write ``(coords..., value)`` rows for plotting."""
    n = grid.model.dim_complex
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = []
        for c in range(n):
            header += [f"re_z{c}", f"im_z{c}"]
        w.writerow(header + [name])
        for z, v in zip(grid.points, values):
            row = []
            for c in range(n):
                row += [repr(float(z[c].real)), repr(float(z[c].imag))]
            w.writerow(row + [repr(float(np.real(v)))])
