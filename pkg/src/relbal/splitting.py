"""Tensor products of inner products and the product splitting check.

Sections of a product model are ordered row-major, so the inner product
``m1 (x) m2`` is the Kronecker product of the factor matrices.  Models with
more than two factors are folded as ``first x rest``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .balance_solver import SolveConfig, t_iterate
from .exceptions import ConfigError, RelbalError, SizeError
from .fubini_study import default_grid, fs_volume, kernel_field, write_field_csv
from .geometry import build_model
from .hermitian_space import (IndexVector, InnerProduct, distance, geodesic,
                              orbit_project, random_hermitian_direction,
                              random_inner_product, segment_from_direction,
                              splitting_from_weights)
from .kempf_ness import balanced_residual, d_prime, delta_D, group_residual

DEFAULT_TOLERANCES = {
    "kronecker": 1e-6,
    "mixed_hessian": 1e-6,
    "factor_balanced": 1e-9,
    "delta_D_gap": 1e-7,
}
ZERO_DISTANCE_SQ = 1e-20


def fold_model(model):
    """Split a product model into ``(first factor, remaining factors)``."""
    desc = model.factor_descriptors
    if len(desc) < 2:
        raise ConfigError("model is not a product of at least two factors")
    return build_model([desc[0]]), build_model(list(desc[1:]))


def product_splitting(sp1, sp2):
    """Splitting of ``V1 (x) V2`` by concatenated characters, row-major order."""
    c1 = sp1.characters[sp1.block_of]
    c2 = sp2.characters[sp2.block_of]
    W = np.concatenate([np.repeat(c1, sp2.size, axis=0),
                        np.tile(c2, (sp1.size, 1))], axis=1)
    return splitting_from_weights(W, torus=None)


def tensor(m1, m2, splitting=None):
    """Kronecker product inner product on ``V1 (x) V2``."""
    sp = product_splitting(m1.splitting, m2.splitting) if splitting is None else splitting
    if sp.size != m1.size * m2.size:
        raise SizeError(f"product space has {m1.size * m2.size} sections, "
                        f"splitting has {sp.size}")
    return InnerProduct.from_matrix(np.kron(m1.matrix, m2.matrix), sp)


@dataclass
class ProductWitness:
    factors: tuple | None
    kronecker_residual: float
    mixed_hessian: float | None = None
    factor_residuals: tuple | None = None
    raw_factors: tuple = field(default=None, repr=False)

    def to_dict(self):
        return {
            "kronecker_residual": self.kronecker_residual,
            "mixed_hessian": self.mixed_hessian,
            "factor_residuals": None if self.factor_residuals is None
            else list(self.factor_residuals),
            "factors": None if self.factors is None
            else [f.to_dict() for f in self.factors],
        }


def _rearrange(M, n1, n2):
    return M.reshape(n1, n2, n1, n2).transpose(0, 2, 1, 3).reshape(n1 * n1, n2 * n2)


def nearest_kronecker(m, sp1, sp2, group=None):
    """Best ``A (x) B`` approximation of ``m`` from the dominant singular pair.

    The factors are made hermitian with positive trace.  The reciprocal scale
    ``(cA, B/c)`` is fixed by the ``group`` constraint on the first factor
    (``det A = 1`` per block sum when ``group`` is ``None`` or ``"sl"``).
    """
    M = m.matrix if isinstance(m, InnerProduct) else np.asarray(m, dtype=complex)
    n1, n2 = sp1.size, sp2.size
    if M.shape != (n1 * n2, n1 * n2):
        raise SizeError("matrix size does not match the factor splittings")
    U, s, Vh = np.linalg.svd(_rearrange(M, n1, n2))
    A = np.sqrt(s[0]) * U[:, 0].reshape(n1, n1)
    B = np.sqrt(s[0]) * Vh[0].reshape(n2, n2)
    phase = np.trace(A) / abs(np.trace(A))
    A, B = A / phase, B * phase
    A, B = 0.5 * (A + A.conj().T), 0.5 * (B + B.conj().T)
    nrm = np.linalg.norm(M)
    resid = float(np.linalg.norm(M - np.kron(A, B)) / nrm) if nrm > 0 else 0.0
    factors = None
    try:
        f1 = InnerProduct.from_matrix(np.where(sp1.mask, A, 0.0), sp1, atol=1e-6)
        f2 = InnerProduct.from_matrix(np.where(sp2.mask, B, 0.0), sp2, atol=1e-6)
        # one scalar c for (cA, B/c): least-squares fit of the block log-dets
        Q = sp1.constraint_range("sl" if group is None else group)
        qn = Q.T @ sp1.multiplicities
        log_c = -float(qn @ (Q.T @ f1.block_logdets)) / float(qn @ qn)
        c = np.exp(log_c)
        factors = (InnerProduct.from_matrix(f1.matrix * c, sp1),
                   InnerProduct.from_matrix(f2.matrix / c, sp2))
    except RelbalError:
        factors = None
    return ProductWitness(factors=factors, kronecker_residual=resid, raw_factors=(A, B))


def tensor_index(b1, sp1, b2, sp2, splitting):
    """Index of ``m1 (x) m2`` when ``m1, m2`` are balanced of index ``b1, b2``."""
    per_section = np.kron(b1.expanded(sp1), b2.expanded(sp2))
    return IndexVector.create([per_section[idx[0]] for idx in splitting.blocks], splitting,
                              atol=1e-8)


def mixed_hessian_field(m, grid, n_first):
    """Per-node max of ``|d^2 log K / dz_a dbar z_b|`` for ``a`` in the first factor, ``b`` in the rest."""
    H = kernel_field(m, grid).hessian
    block = H[:, :n_first, n_first:]
    return np.max(np.abs(block).reshape(len(H), -1), axis=1)


def _config_hash(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class SplittingReport:
    model: str
    stages: dict
    passed: bool
    extra: dict = field(default_factory=dict)

    def failing_stage(self):
        for name, st in self.stages.items():
            if not st.get("passed", False):
                return name
        return None

    def to_dict(self):
        return {"model": self.model, "passed": self.passed, "stages": self.stages, **self.extra}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def _tagged(exc, stage):
    exc.stage = f"{exc.stage}:{stage}"
    return exc


def _non_product_start(sp, sp1, sp2, rng, group, scale, tries=20):
    best = None
    for _ in range(tries):
        m0 = random_inner_product(sp, rng, scale, group)
        r = nearest_kronecker(m0, sp1, sp2).kronecker_residual
        if best is None or r > best[1]:
            best = (m0, r)
        if r > 1e-3:
            break
    return best


def factor_derivative_check(model, sp1, sp2, grid, rng, group="sl"):
    """Compare ``D'`` along a first-factor direction at a product point with ``C D1'``.

    ``C`` is the total ``FS(m2)`` volume of the second factor.  Returns
    ``(product value, C * factor value, C)``.
    """
    fm1, fm2 = fold_model(model)
    m1 = random_inner_product(sp1, rng, 0.5, group)
    m2 = random_inner_product(sp2, rng, 0.5, group)
    m = tensor(m1, m2, product_splitting(sp1, sp2))
    g1 = default_grid(fm1, sp1, grid.level)
    g2 = default_grid(fm2, sp2, grid.level)
    d1 = random_hermitian_direction(sp1, rng, group)
    seg1 = segment_from_direction(m1, d1)
    seg = segment_from_direction(m, np.kron(d1, np.eye(sp2.size)))
    C = fs_volume(m2, g2).total_volume
    pgrid = default_grid(model, m.splitting, grid.level)
    return d_prime(seg, 0.0, pgrid), C * d_prime(seg1, 0.0, g1), C


def verify_splitting(model, torus="maximal", group="gct", level=2, seed=0,
                     tolerances=None, start_scale=1.0, max_iters=200, csv_path=None):
    """Four-stage numerical check that balanced points of a product split.

    (a) solve on the product orbit from a non-product start; (b) nearest
    Kronecker residual and mixed log-kernel Hessian of the limit; (c) solve
    each factor on its own; (d) ``delta_D`` between the tensor of the factor
    solutions and the product solution.
    """
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(tolerances or {})
    fm1, fm2 = fold_model(model)
    sp1 = splitting_from_weights(fm1.basis, torus)
    sp2 = splitting_from_weights(fm2.basis, torus)
    sp = product_splitting(sp1, sp2)
    rng = np.random.default_rng(seed)
    grid = default_grid(model, sp, level)
    cfg = SolveConfig(group=group, max_iters=max_iters, grid_level=level)
    stages = {}

    m0, start_resid = _non_product_start(sp, sp1, sp2, rng, group, start_scale)
    try:
        prod = t_iterate(m0, grid, cfg)
    except RelbalError as exc:
        raise _tagged(exc, "product_solve") from None
    if not prod.converged:
        stages["a_product_solve"] = {"passed": False, "residual": prod.residual,
                                     "message": prod.message}
    else:
        stages["a_product_solve"] = {"passed": True, "residual": prod.residual,
                                     "iterations": prod.iterations,
                                     "start_kronecker_residual": start_resid}
    m_star = prod.final

    witness = nearest_kronecker(m_star, sp1, sp2, group)
    n_first = fm1.dim_complex
    mixed = mixed_hessian_field(m_star, grid, n_first)
    witness.mixed_hessian = float(mixed.max())
    if csv_path is not None:
        write_field_csv(csv_path, grid, mixed, name="mixed_hessian_max")
    stages["b_product_structure"] = {
        "passed": bool(witness.kronecker_residual < tol["kronecker"]
                       and witness.mixed_hessian < tol["mixed_hessian"]),
        "kronecker_residual": witness.kronecker_residual,
        "mixed_hessian": witness.mixed_hessian,
    }

    factor_solutions = []
    factor_res = []
    factor_index = []
    for i, (fm, fsp) in enumerate(((fm1, sp1), (fm2, sp2))):
        fgrid = default_grid(fm, fsp, level)
        try:
            tr = t_iterate(random_inner_product(fsp, rng, start_scale, group), fgrid, cfg)
        except RelbalError as exc:
            raise _tagged(exc, f"factor_solve_{i + 1}") from None
        factor_solutions.append(tr.final)
        factor_res.append(group_residual(tr.final, fgrid, group))
        factor_index.append(tr.index)
    witness.factor_residuals = tuple(factor_res)
    stages["c_factor_solves"] = {
        "passed": bool(max(factor_res) < tol["factor_balanced"]),
        "residuals": factor_res,
    }

    m_tensor = orbit_project(tensor(*factor_solutions, splitting=sp), group)
    try:
        gap = delta_D(m_tensor, m_star, grid, group)
    except RelbalError as exc:
        raise _tagged(exc, "delta_D_gap") from None
    tensor_resid = balanced_residual(m_tensor, grid, tensor_index(factor_index[0], sp1, factor_index[1], sp2, sp))
    stages["d_energy_gap"] = {
        "passed": bool(abs(gap) < tol["delta_D_gap"]),
        "delta_D": gap,
        "tensor_balanced_residual": tensor_resid,
        "tensor_group_residual": group_residual(m_tensor, grid, group),
        "distance": distance(m_tensor, m_star, group),
    }
    passed = all(st["passed"] for st in stages.values())
    settings = {"factors": [list(d) for d in model.factor_descriptors], "torus": torus,
                "group": group, "level": level, "seed": seed, "tolerances": tol,
                "start_scale": start_scale, "max_iters": max_iters}
    extra = {
        "config_hash": _config_hash(settings),
        "settings": settings,
        "grid": grid.exactness_note,
    }
    report = SplittingReport(model=repr(model), stages=stages, passed=passed, extra=extra)
    report.witness = witness
    report.solution = m_star
    report.factor_solutions = tuple(factor_solutions)
    report.tensor_solution = m_tensor
    return report


def product_distance_check(m1, m1p, m2, m2p):
    """Squared distance between tensor products against factor distances.

    Returns ``(lhs, rhs, coefficients, brute)`` where ``lhs`` is the squared
    product distance, ``brute`` the double sum over factor spectra and
    ``rhs = c1 d1^2 + c2 d2^2`` with integer coefficients found by probing
    with one factor pair held fixed.
    """
    sp = product_splitting(m1.splitting, m2.splitting)
    lhs = distance(tensor(m1, m2, sp), tensor(m1p, m2p, sp), None) ** 2
    g1 = geodesic(m1, m1p, None).gamma
    g2 = geodesic(m2, m2p, None).gamma
    brute = float(np.sum((g1[:, None] + g2[None, :]) ** 2))
    d1sq, d2sq = float(np.sum(g1 ** 2)), float(np.sum(g2 ** 2))
    c1 = c2 = None
    # a factor pair closer than this is treated as equal: its coefficient is undetermined
    floor = ZERO_DISTANCE_SQ * max(1.0, d1sq, d2sq)
    if d1sq > floor:
        c1 = int(round(distance(tensor(m1, m2, sp), tensor(m1p, m2, sp), None) ** 2 / d1sq))
    if d2sq > floor:
        c2 = int(round(distance(tensor(m1, m2, sp), tensor(m1, m2p, sp), None) ** 2 / d2sq))
    rhs = (c1 or 0) * d1sq + (c2 or 0) * d2sq
    return lhs, rhs, (c1, c2), brute
