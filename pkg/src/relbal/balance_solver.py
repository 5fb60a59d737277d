"""Solvers for balanced inner products on a fixed orbit.

Two methods are provided: the fixed-point map ``m -> L2 Gram`` (with block
rescaling so that fixed points are exactly the critical points for the
chosen group) and geodesic gradient descent on ``D`` with backtracking.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import ConfigError, NonConvergenceError, PreconditionError, RelbalError
from .fubini_study import fs_gram_reference
from .hermitian_space import (IndexVector, InnerProduct, admissible_normal_basis, distance,
                              normalize_group, orbit_project, project_scalars,
                              project_tangent, segment_from_direction)
from .kempf_ness import (_block_means, d_prime, delta_D, group_residual, integrate_d_prime,
                         recover_index)

log = logging.getLogger(__name__)

DIVERGENCE_WINDOW = 5
DESCENT_SLACK = 1e-9


@dataclass
class SolveConfig:
    group: str = "gct"
    max_iters: int = 200
    tol: float = 1e-9
    damping: float = 1.0
    grid_level: int = 2
    track_energy: bool = False
    acceleration: str = "anderson"
    window: int = 5

    def __post_init__(self):
        self.group = normalize_group(self.group)
        if isinstance(self.max_iters, bool) or int(self.max_iters) != self.max_iters \
                or self.max_iters < 1:
            raise ConfigError("max_iters must be an integer >= 1")
        self.max_iters = int(self.max_iters)
        if not (self.tol > 0):
            raise ConfigError("tol must be positive")
        if not (0 < self.damping <= 1):
            raise ConfigError("damping must lie in (0, 1]")
        if isinstance(self.grid_level, bool) or int(self.grid_level) != self.grid_level \
                or self.grid_level < 1:
            raise ConfigError("grid_level must be an integer >= 1")
        self.grid_level = int(self.grid_level)
        if self.acceleration not in ("anderson", "none", None):
            raise ConfigError("acceleration must be 'anderson' or 'none'")
        if self.acceleration is None:
            self.acceleration = "none"
        if int(self.window) < 1:
            raise ConfigError("window must be >= 1")

    @classmethod
    def from_dict(cls, data):
        known = {k: data[k] for k in ("group", "max_iters", "tol", "damping",
                                      "grid_level", "track_energy", "acceleration", "window")
                 if k in data}
        return cls(**known)

    def to_dict(self):
        return asdict(self)


@dataclass
class SolveTrace:
    method: str
    group: str
    residuals: list = field(default_factory=list)
    decrements: list = field(default_factory=list)
    moves: list = field(default_factory=list)
    final: InnerProduct | None = None
    index: IndexVector | None = None
    converged: bool = False
    message: str = ""

    @property
    def iterations(self):
        return len(self.moves)

    @property
    def residual(self):
        return self.residuals[-1] if self.residuals else float("nan")

    def to_dict(self):
        return {
            "method": self.method,
            "group": self.group,
            "converged": self.converged,
            "iterations": self.iterations,
            "residual": self.residual,
            "residuals": list(self.residuals),
            "delta_D_decrements": list(self.decrements),
            "distance_moved": list(self.moves),
            "index": None if self.index is None else [float(x) for x in self.index.values],
            "message": self.message,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def _state(m, grid):
    Gref = fs_gram_reference(m, grid)
    S = admissible_normal_basis(m)
    G = S.conj().T @ Gref @ S
    G = np.where(m.splitting.mask, 0.5 * (G + G.conj().T), 0.0)
    return Gref, G


def _finish(trace, m, grid, G):
    trace.final = m
    try:
        trace.index = recover_index(m, grid, gram=G, tol=max(1e-6, trace.residual))
    except PreconditionError:
        trace.index = None
    return trace


def _t_map(m, Gref, G, group, vol):
    sp = m.splitting
    g = _block_means(G, sp)
    gbar = vol / sp.size
    sigma = project_scalars(g / gbar - 1.0, sp, group)
    scale = (np.exp(sigma) / g)[sp.block_of]
    M = np.where(sp.mask, Gref, 0.0) * np.sqrt(scale)[:, None] * np.sqrt(scale)[None, :]
    return 0.5 * (M + M.conj().T)


def _pack(M, mask):
    v = M[mask]
    return np.concatenate([v.real, v.imag])


def _unpack(x, mask):
    M = np.zeros(mask.shape, dtype=complex)
    h = len(x) // 2
    M[mask] = x[:h] + 1j * x[h:]
    return 0.5 * (M + M.conj().T)


def _try_inner_product(M, splitting, group):
    try:
        return orbit_project(InnerProduct.from_matrix(M, splitting), group)
    except (RelbalError, np.linalg.LinAlgError):
        return None


def t_iterate(m0, grid, cfg=None):
    """Damped fixed-point iteration ``m -> orbit_project((1-d) m + d T(m))``.

    ``T`` replaces each block by the reference-basis Gram of that block under
    ``h_m`` and ``FS(m)^n``, rescaled by ``exp(sigma_k) / g_k`` where ``g_k`` is
    the block-mean L2 Gram and ``sigma`` is the part of the relative block
    means that the group cannot absorb.  Fixed points are the critical points.

    With ``cfg.acceleration == "anderson"`` the damped map is extrapolated by
    Anderson mixing over the last ``cfg.window`` iterates; a candidate that is
    not positive definite or raises the residual is replaced by the plain
    damped step and the history is cleared.
    """
    cfg = cfg or SolveConfig()
    group = cfg.group
    vol = grid.model.vol_reference
    sp = m0.splitting
    mask = sp.mask
    m = orbit_project(m0, group)
    trace = SolveTrace(method="t_iterate", group=group)
    delta = cfg.damping
    Gref, G = _state(m, grid)
    res = group_residual(m, grid, group, gram=G)
    trace.residuals.append(res)
    rises = 0
    xs, fs = [], []
    for it in range(cfg.max_iters):
        if res < cfg.tol:
            trace.converged = True
            break
        T = _t_map(m, Gref, G, group, vol)
        plain = orbit_project(InnerProduct.from_matrix(
            (1.0 - delta) * m.matrix + delta * T, sp), group)
        m_new = plain
        if cfg.acceleration == "anderson":
            x = _pack(m.matrix, mask)
            f = _pack(plain.matrix, mask) - x
            xs.append(x)
            fs.append(f)
            del xs[:-(cfg.window + 1)], fs[:-(cfg.window + 1)]
            if len(xs) > 1:
                dX = np.diff(np.array(xs), axis=0).T
                dF = np.diff(np.array(fs), axis=0).T
                coef = np.linalg.lstsq(dF, f, rcond=1e-12)[0]
                cand = _try_inner_product(_unpack(x + f - (dX + dF) @ coef, mask), sp, group)
                if cand is not None:
                    m_new = cand
        Gref_n, G_n = _state(m_new, grid)
        new_res = group_residual(m_new, grid, group, gram=G_n)
        if m_new is not plain and new_res > res:
            xs, fs = [], []
            m_new = plain
            Gref_n, G_n = _state(m_new, grid)
            new_res = group_residual(m_new, grid, group, gram=G_n)
        trace.moves.append(distance(m, m_new, group))
        if cfg.track_energy:
            trace.decrements.append(delta_D(m, m_new, grid, group, check=False))
        m, Gref, G = m_new, Gref_n, G_n
        trace.residuals.append(new_res)
        log.debug("t_iterate %d residual %.3e damping %.3g", it, new_res, delta)
        if new_res > res:
            rises += 1
            delta *= 0.5
            xs, fs = [], []
            if rises >= DIVERGENCE_WINDOW:
                trace.message = "residual increased on consecutive iterations"
                _finish(trace, m, grid, G)
                raise NonConvergenceError(trace.message, trace)
        else:
            rises = 0
        res = new_res
    else:
        trace.converged = res < cfg.tol
    if not trace.converged:
        trace.message = f"max_iters reached with residual {res:.3e}"
    return _finish(trace, m, grid, G)


def _gradient(m, G, group):
    # the first projection cancels O(|G|) scalars and leaves rounding of that
    # size in the block traces; projecting the small result again removes it
    P = project_tangent(G, m.splitting, group)
    return -project_tangent(P, m.splitting, group)


def _ray_search(seg, grid, slope, t0, max_evals=30, shrink=0.1):
    """Step length along a descent ray from the sign of ``D'``.

    ``D'`` is nondecreasing along geodesics, so any ``t`` with ``D'(t) <= 0``
    lowers ``D``.  Secant steps on ``D'`` aim at the minimum on the ray; the
    search stops once ``|D'(t)|`` has dropped by ``shrink``.
    """
    lo, dlo = 0.0, slope
    hi = dhi = None
    best = None
    t = t0
    for _ in range(max_evals):
        d = d_prime(seg, t, grid)
        if d <= 0:
            best, lo, dlo = t, t, d
            if d >= shrink * slope:
                break
            if hi is None:
                t = min(4.0 * t, t - d * t / (d - slope)) if d > slope else 4.0 * t
                continue
        else:
            hi, dhi = t, d
        t = lo - dlo * (hi - lo) / (dhi - dlo)
        if not (lo < t < hi):
            t = 0.5 * (lo + hi)
        if best is not None and hi - lo <= 1e-14 * hi:
            break
    return best


def gradient_descent_D(m0, grid, cfg=None, step0=None):
    """Geodesic descent on ``D`` along ``-P(G)``.

    ``G`` is the L2 Gram of an orthonormal basis and ``P`` the projection to
    the orbit tangent, so ``D'(0) = -2 |P(G)|^2`` along the chosen ray.  Steps
    are chosen by a secant search on ``D'`` along the ray and accepted only
    where ``D'`` is still nonpositive, which guarantees descent by convexity.
    """
    cfg = cfg or SolveConfig()
    group = cfg.group
    m = orbit_project(m0, group)
    trace = SolveTrace(method="gradient_descent_D", group=group)
    vol = grid.model.vol_reference
    alpha = step0 if step0 is not None else 0.5 * m.splitting.size / vol
    _, G = _state(m, grid)
    res = group_residual(m, grid, group, gram=G)
    trace.residuals.append(res)
    for it in range(cfg.max_iters):
        if res < cfg.tol:
            trace.converged = True
            break
        direction = _gradient(m, G, group)
        seg = segment_from_direction(m, direction)
        slope = -2.0 * float(np.sum(np.abs(direction) ** 2))
        step = _ray_search(seg, grid, slope, alpha)
        if step is None or step == 0.0:
            trace.message = "line search stalled at machine precision"
            break
        trace.decrements.append(integrate_d_prime(seg, grid, 0.0, step, nodes=6))
        trace.moves.append(step * seg.length)
        m = orbit_project(seg.eval(step), group)
        alpha = step
        _, G = _state(m, grid)
        res = group_residual(m, grid, group, gram=G)
        trace.residuals.append(res)
        log.debug("descent %d residual %.3e step %.3g", it, res, step)
    else:
        trace.converged = res < cfg.tol
    if not trace.converged and not trace.message:
        trace.message = f"max_iters reached with residual {res:.3e}"
    return _finish(trace, m, grid, G)


def index_from_gram(m, G):
    sp = m.splitting
    means = _block_means(G, sp)
    return sp.size * means / float(np.dot(sp.multiplicities, means))


def fit_constraint_t(b, splitting):
    """Least-squares torus parameter ``xi`` with ``b_k = 1 + <w_k, xi>``.

    The affine index law ``b_k = (1 + x_k) / (1 + sum n_l x_l / (N+1))`` with
    ``x_k = <w_k, xi>`` has unit denominator because the weights are centred,
    so the fit is linear.  Returns ``(xi, residual)``.
    """
    if not isinstance(b, IndexVector):
        b = IndexVector.create(b, splitting)
    W = np.asarray(splitting.characters, dtype=float)
    rhs = b.values - 1.0
    if W.size == 0 or W.shape[1] == 0:
        return np.zeros(0), float(np.linalg.norm(rhs))
    xi = np.linalg.lstsq(W, rhs, rcond=1e-10)[0]
    resid = float(np.linalg.norm(W @ xi - rhs))
    return xi, resid
