"""The Kempf--Ness functional ``D`` on orbits of inner products.

``D`` is only ever represented through differences along geodesics,
``D(m2) - D(m1) = int_0^1 D'(t) dt``, where along the geodesic with
orthonormal basis ``s_j(t) = exp(t gamma_j) s_j``

    D'(t) = int_X Q(t) FS(m(t))^n,
    Q(t)  = sum_j 2 gamma_j e^{2 t gamma_j} |s_j|_h^2 / sum_j e^{2 t gamma_j} |s_j|_h^2.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import AccuracyError, NotBalancedError
from .fubini_study import _log_kernel_derivatives, _normalize_rows, _volume_density, \
    _check_density, l2_gram
from .hermitian_space import (IndexVector, admissible_normal_basis, geodesic,
                              normalize_group, project_scalars, random_hermitian_direction,
                              segment_from_direction)

DELTA_D_NODES = 24
DELTA_D_TOL = 1e-7
CONVEXITY_SLACK = 1e-9


def d_prime(segment, t, grid, aux_weight=None):
    """Derivative of ``D`` at parameter ``t`` along ``segment``.

    ``aux_weight`` optionally multiplies the reference bundle metric by a
    positive function of the grid points; the result does not depend on it.
    """
    S = segment.basis
    eg = np.exp(2.0 * t * segment.gamma)
    A = (S * eg[None, :]) @ S.conj().T
    total = 0.0
    for sl, F, dF in grid.chunks():
        F, dF, _ = _normalize_rows(F, dF)
        _, _, H = _log_kernel_derivatives(F, dF, A)
        det = _volume_density(H)
        _check_density(det)
        h = grid.h_weight[sl]
        if aux_weight is not None:
            h = h * aux_weight(grid.points[sl])
        norms = np.abs(F @ S) ** 2 * h[:, None]
        num = norms @ (2.0 * segment.gamma * eg)
        den = norms @ eg
        total += float(np.dot(grid.weights[sl], num / den * det))
    return total


def _gl(a, b, nodes):
    x, w = np.polynomial.legendre.leggauss(nodes)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


def integrate_d_prime(segment, grid, t0=0.0, t1=1.0, nodes=DELTA_D_NODES):
    ts, ws = _gl(t0, t1, nodes)
    return float(sum(w * d_prime(segment, t, grid) for t, w in zip(ts, ws)))


def delta_D(m1, m2, grid, group="sl", nodes=DELTA_D_NODES, check=True, tol=DELTA_D_TOL):
    """``D(m2) - D(m1)`` by Gauss--Legendre quadrature of ``D'`` along the geodesic.

    With ``check`` the value is compared with a rule of half as many nodes
    (at least one) and an :class:`AccuracyError` is raised when the two differ
    by more than ``tol``; that difference bounds the error of the coarser rule,
    so it overestimates the error of the returned value.
    """
    if nodes < 2 and check:
        raise ValueError("the accuracy check needs at least 2 nodes")
    seg = geodesic(m1, m2, group)
    if seg.length == 0.0:
        return 0.0
    val = integrate_d_prime(seg, grid, nodes=nodes)
    if check:
        coarse = integrate_d_prime(seg, grid, nodes=nodes // 2)
        if abs(val - coarse) > tol:
            raise AccuracyError(f"delta_D not converged in t ({abs(val - coarse):.2e})")
    return val


def d_prime_from_gram(m, grid, direction):
    """``D'(0) = 2 Tr(Gamma G)`` from the L2 Gram of an orthonormal basis of ``m``."""
    G = l2_gram(m, grid)
    return 2.0 * float(np.real(np.trace(direction @ G)))


# ---------------------------------------------------------------------------
# Momentum map and balanced residuals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentValue:
    blocks: list
    norm: float


def _block_means(G, splitting):
    return np.array([np.trace(G[np.ix_(idx, idx)]).real / len(idx)
                     for idx in splitting.blocks])


def moment_map(m, grid, gram=None):
    """Traceless parts of the per-block L2 Grams of an orthonormal basis of ``m``."""
    G = l2_gram(m, grid) if gram is None else gram
    blocks = []
    for idx in m.splitting.blocks:
        Gk = G[np.ix_(idx, idx)]
        blocks.append(Gk - np.trace(Gk).real / len(idx) * np.eye(len(idx)))
    norm = float(np.sqrt(sum(np.sum(np.abs(b) ** 2) for b in blocks)))
    return MomentValue(blocks=blocks, norm=norm)


def balanced_residual(m, grid, b="free", gram=None):
    """Distance of the L2 Gram blocks from ``(vol / (N+1)) b_k I``.

    ``b="free"`` picks ``b_k`` from the block-mean diagonals, which is the
    smallest residual over all indices.
    """
    G = l2_gram(m, grid) if gram is None else gram
    sp = m.splitting
    if isinstance(b, str):
        if b != "free":
            raise ValueError("b must be an index vector or 'free'")
        target = _block_means(G, sp)
    else:
        if not isinstance(b, IndexVector):
            b = IndexVector.create(b, sp)
        target = grid.model.vol_reference / sp.size * b.values
    D = G - np.diag(target[sp.block_of])
    return float(np.linalg.norm(D))


def group_residual(m, grid, group, gram=None):
    """Norm of the orbit-projected moment: zero exactly at critical points of ``D``.

    Block means must lie in the span allowed by the group: all equal for
    ``sl``, arbitrary for ``gc`` and affine in the characters for ``gct``.
    """
    G = l2_gram(m, grid) if gram is None else gram
    sp = m.splitting
    means = _block_means(G, sp)
    off = project_scalars(means, sp, group)
    shape = moment_map(m, grid, gram=G).norm
    return float(np.sqrt(shape ** 2 + np.sum(sp.multiplicities * off ** 2)))


def recover_index(m, grid, gram=None, tol=1e-6):
    """Index ``b_k = (N+1)/vol * mean diag`` of the L2 Gram block ``k``."""
    G = l2_gram(m, grid) if gram is None else gram
    if balanced_residual(m, grid, "free", gram=G) >= tol:
        raise NotBalancedError("inner product is not balanced to the requested tolerance")
    sp = m.splitting
    means = _block_means(G, sp)
    b = sp.size * means / float(np.dot(sp.multiplicities, means))
    return IndexVector.create(b, sp, atol=1e-8)


# ---------------------------------------------------------------------------
# Criticality directions
# ---------------------------------------------------------------------------

def diagonal_directions(splitting, group="gc"):
    """Unit diagonal directions spanning the block-sum-admissible diagonal tangent space."""
    out = []
    for idx in splitting.blocks:
        for a, b in zip(idx[:-1], idx[1:]):
            g = np.zeros(splitting.size)
            g[a], g[b] = 1.0, -1.0
            out.append(g / np.sqrt(2.0))
    group = normalize_group(group)
    if group != "gc":
        n = splitting.multiplicities.astype(float)
        # admissible block scalars: null space of C diag(n)
        C = splitting.constraint_matrix(group) * n[None, :]
        _, s, Vt = np.linalg.svd(C)
        rank = int(np.sum(s > 1e-10 * max(s.max(initial=0.0), 1.0)))
        for v in Vt[rank:]:
            g = v[splitting.block_of]
            out.append(g / np.linalg.norm(g))
    return out


def criticality_segments(m, rng, group="gc", n_random=8):
    """Diagonal coordinate directions plus random unitary-rotated ones."""
    S = admissible_normal_basis(m)
    from .hermitian_space import GeodesicSegment
    segs = [GeodesicSegment(basis=S, gamma=g, splitting=m.splitting)
            for g in diagonal_directions(m.splitting, group)]
    for _ in range(n_random):
        direction = random_hermitian_direction(m.splitting, rng, group)
        segs.append(segment_from_direction(m, direction))
    return segs


def max_directional_derivative(m, grid, rng, group="gc", n_random=8):
    segs = criticality_segments(m, rng, group, n_random)
    if not segs:
        return 0.0
    return max(abs(d_prime(seg, 0.0, grid)) for seg in segs)


# ---------------------------------------------------------------------------
# Convexity and properness diagnostics
# ---------------------------------------------------------------------------

@dataclass
class EnergyReport:
    t: np.ndarray
    d_prime: np.ndarray
    energy: np.ndarray
    delta_D: float
    min_second_difference: float
    min_d_prime_increment: float
    convex: bool
    grid_level: int
    refined: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def samples(self):
        return len(self.t)

    def to_dict(self):
        return {
            "samples": self.samples,
            "t": [float(x) for x in self.t],
            "d_prime": [float(x) for x in self.d_prime],
            "energy": [float(x) for x in self.energy],
            "delta_D": float(self.delta_D),
            "min_second_difference": float(self.min_second_difference),
            "min_d_prime_increment": float(self.min_d_prime_increment),
            "convex": bool(self.convex),
            "grid_level": int(self.grid_level),
            "refined": bool(self.refined),
            **self.extra,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "Dprime"])
            for t, d in zip(self.t, self.d_prime):
                w.writerow([repr(float(t)), repr(float(d))])


def _scan(segment, grid, samples, sub_nodes):
    ts = np.linspace(0.0, 1.0, samples)
    dp = np.array([d_prime(segment, t, grid) for t in ts])
    energy = np.zeros(samples)
    for i in range(1, samples):
        energy[i] = energy[i - 1] + integrate_d_prime(segment, grid, ts[i - 1], ts[i], sub_nodes)
    second = energy[2:] - 2 * energy[1:-1] + energy[:-2]
    return ts, dp, energy, second


def convexity_scan(segment, grid, samples=9, sub_nodes=8, slack=CONVEXITY_SLACK, refine=True):
    """Sample ``D'`` and ``D`` along a geodesic and test monotonicity of ``D'``.

    A violation triggers one rerun on the refined grid before it is reported.
    """
    if samples < 5:
        raise ValueError("convexity scan needs at least 5 samples")
    ts, dp, energy, second = _scan(segment, grid, samples, sub_nodes)
    used, refined = grid, False
    ok = np.min(np.diff(dp)) >= -slack and np.min(second) >= -slack
    if not ok and refine:
        used, refined = grid.refined(), True
        ts, dp, energy, second = _scan(segment, used, samples, sub_nodes)
        ok = np.min(np.diff(dp)) >= -slack and np.min(second) >= -slack
    return EnergyReport(t=ts, d_prime=dp, energy=energy, delta_D=float(energy[-1]),
                        min_second_difference=float(np.min(second)),
                        min_d_prime_increment=float(np.min(np.diff(dp))),
                        convex=bool(ok), grid_level=used.level, refined=refined)


def properness_probe(m_min, grid, radii, rng, group="gc", n_directions=8,
                     nodes=12, tol=1e-6):
    """Growth of ``D`` along unit-speed geodesic rays leaving a minimizer.

    Returns rows ``(radius, min over directions of D(ray(radius)) - D(m_min))``.
    """
    if group_residual(m_min, grid, group) >= tol:
        raise NotBalancedError("properness probe needs an approximate minimizer")
    radii = np.asarray(sorted(float(r) for r in radii))
    rows = np.zeros((len(radii), n_directions))
    for j in range(n_directions):
        seg = segment_from_direction(
            m_min, random_hermitian_direction(m_min.splitting, rng, group))
        acc, prev = 0.0, 0.0
        for i, r in enumerate(radii):
            if r > prev:
                acc += integrate_d_prime(seg, grid, prev, r, nodes)
            rows[i, j] = acc
            prev = r
    return [(float(r), float(v)) for r, v in zip(radii, rows.min(axis=1))]
