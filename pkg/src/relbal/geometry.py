"""Polarized products of projective spaces: sections, charts, reference data, quadrature.

Supported factors are ``P^1`` and ``P^2`` with ``O(k)``.  Sections of ``O(k)``
are the monomials of degree ``<= k`` in the affine torus chart; on a product
the basis is the tensor product of the factor bases in row-major order, so
that an inner product of the form ``np.kron(m1, m2)`` is a product inner
product.

The reference hermitian metric on ``O(k)`` is the ``k``-th power of the
Fubini--Study metric, ``|s|_h^2 = |f(z)|^2 / (1 + |z|^2)^k``, and the reference
volume density is ``det(d dbar log (1 + |z|^2)^k)`` with respect to Lebesgue
measure ``dx dy`` on each chart coordinate.  With this convention one has
``vol(P^d, O(k)) = k^d pi^d / d!`` and volumes of products multiply.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from itertools import product as iproduct

import numpy as np

from .exceptions import (AccuracyError, DefinitenessError, DomainError,
                         SizeError, UnsupportedError)

DEFAULT_SECTION_CAP = 4096
MAX_GRID_POINTS = 20_000_000
SUPPORTED_DIMS = (1, 2)
# Points per evaluation chunk; bounds peak memory of section tables.
CHUNK_POINTS = 1 << 15


@dataclass(frozen=True)
class Factor:
    """One projective factor ``(P^dim, O(k))``."""

    dim: int
    k: int

    @cached_property
    def labels(self):
        if self.dim == 1:
            return [(j,) for j in range(self.k + 1)]
        return [(a1, deg - a1) for deg in range(self.k + 1)
                for a1 in range(deg, -1, -1)]

    @property
    def n_sections(self):
        return math.comb(self.k + self.dim, self.dim)

    @cached_property
    def weight_scale(self):
        mean = Fraction(sum(lab[0] for lab in self.labels), len(self.labels))
        return mean.denominator

    @cached_property
    def weights(self):
        """Integer torus weights, centered and scaled to stay integral."""
        labels = np.array(self.labels, dtype=np.int64)
        total = labels.sum(axis=0)
        count = len(self.labels)
        # scale * (label - total / count), exact because count divides scale * total
        w = (self.weight_scale * (count * labels - total)) // count
        return w

    @property
    def volume(self):
        return self.k ** self.dim * math.pi ** self.dim / math.factorial(self.dim)


@dataclass(frozen=True)
class SectionBasis:
    """Monomial basis of ``H^0(X, L)`` with labels and torus weights.

    ``exponents[i]`` is the chart-0 exponent vector of section ``i`` over all
    ``dim_complex`` coordinates; ``weights[i]`` is its integer torus weight.
    """

    labels: tuple
    exponents: np.ndarray
    weights: np.ndarray

    @property
    def count(self):
        return len(self.labels)


@dataclass(frozen=True)
class PolarizedModel:
    factors: tuple
    basis: SectionBasis

    @property
    def factor_descriptors(self):
        return [(f.dim, f.k) for f in self.factors]

    @property
    def dim_complex(self):
        return sum(f.dim for f in self.factors)

    @property
    def torus_rank(self):
        return sum(f.dim for f in self.factors)

    @property
    def n_sections(self):
        return self.basis.count

    @property
    def vol_reference(self):
        return math.prod(f.volume for f in self.factors)

    @cached_property
    def coord_slices(self):
        out, start = [], 0
        for f in self.factors:
            out.append(slice(start, start + f.dim))
            start += f.dim
        return out

    def factor_model(self, i):
        return build_model([self.factor_descriptors[i]])

    def __repr__(self):
        desc = ", ".join(f"P^{d}(O({k}))" for d, k in self.factor_descriptors)
        return f"PolarizedModel({desc}; N+1={self.n_sections})"


def _parse_descriptor(descriptor):
    out = []
    for item in descriptor:
        if isinstance(item, Factor):
            out.append(item)
            continue
        if isinstance(item, dict):
            dim, k = item.get("dim"), item.get("k")
        else:
            dim, k = item
        if isinstance(dim, bool) or isinstance(k, bool):
            raise UnsupportedError(f"invalid factor descriptor {item!r}")
        if dim not in SUPPORTED_DIMS:
            raise UnsupportedError(f"unsupported projective dimension {dim!r}; expected 1 or 2")
        if not isinstance(k, (int, np.integer)) or k < 1:
            raise UnsupportedError(f"line bundle power must be an integer >= 1, got {k!r}")
        out.append(Factor(int(dim), int(k)))
    if not out:
        raise UnsupportedError("model descriptor has no factors")
    return out


def build_model(descriptor, cap=DEFAULT_SECTION_CAP):
    """Build the polarized product model described by ``[(dim, k), ...]``.

    Factors may also be given as ``{"dim": d, "k": k}`` mappings.
    """
    factors = _parse_descriptor(descriptor)
    count = math.prod(f.n_sections for f in factors)
    if count > cap:
        raise SizeError(f"model has {count} sections, above the cap of {cap}")
    labels, exps, weights = [], [], []
    for combo in iproduct(*[range(f.n_sections) for f in factors]):
        lab, exp, wt = [], [], []
        for f, i in zip(factors, combo):
            lab.extend(f.labels[i])
            exp.extend(f.labels[i])
            wt.extend(f.weights[i].tolist())
        labels.append(tuple(lab))
        exps.append(exp)
        weights.append(wt)
    basis = SectionBasis(labels=tuple(labels),
                         exponents=np.array(exps, dtype=np.int64),
                         weights=np.array(weights, dtype=np.int64))
    return PolarizedModel(factors=tuple(factors), basis=basis)


def model_from_config(config, cap=DEFAULT_SECTION_CAP):
    """Build a model from a config mapping ``{"factors": [{"dim":1,"k":3}, ...]}``."""
    try:
        factors = config["factors"]
    except (KeyError, TypeError):
        raise UnsupportedError("config has no 'factors' list") from None
    if not isinstance(factors, list):
        raise UnsupportedError("'factors' must be a list")
    return build_model(factors, cap=cap)


# ---------------------------------------------------------------------------
# Section evaluation
# ---------------------------------------------------------------------------

def monomial_tables(exponents, z):
    """Values and first derivatives of monomials ``z**exponents``.

    Returns ``F`` of shape ``(P, S)`` and ``dF`` of shape ``(n, P, S)`` with
    ``dF[c] = d/dz_c F``.
    """
    z = np.atleast_2d(np.asarray(z, dtype=complex))
    P, n = z.shape
    kmax = int(exponents.max()) if exponents.size else 0
    pw = z[:, :, None] ** np.arange(kmax + 1)            # (P, n, kmax+1)
    cols = [pw[:, c, exponents[:, c]] for c in range(n)]  # each (P, S)
    F = np.ones((P, exponents.shape[0]), dtype=complex)
    for col in cols:
        F = F * col
    dF = np.empty((n, P, exponents.shape[0]), dtype=complex)
    for c in range(n):
        e = exponents[:, c]
        part = e * pw[:, c, np.maximum(e - 1, 0)]
        for c2 in range(n):
            if c2 != c:
                part = part * cols[c2]
        dF[c] = part
    return F, dF


def _check_chart_point(model, point, chart):
    z = np.asarray(point, dtype=complex)
    if z.ndim != 1 or z.shape[0] != model.dim_complex:
        raise DomainError(f"point must have {model.dim_complex} complex coordinates")
    if not np.all(np.isfinite(z)):
        raise DomainError("point lies outside the declared chart (non-finite coordinate)")
    if chart is None:
        chart = (0,) * len(model.factors)
    chart = tuple(int(c) for c in chart)
    if len(chart) != len(model.factors) or any(
            c < 0 or c > f.dim for c, f in zip(chart, model.factors)):
        raise DomainError(f"invalid chart id {chart!r}")
    return z, chart


def _homogeneous(model, z, chart):
    """Homogeneous coordinates per factor with ``X_chart = 1``."""
    out = []
    for f, sl, c in zip(model.factors, model.coord_slices, chart):
        y = list(z[sl])
        out.append(np.array(y[:c] + [1.0] + y[c:], dtype=complex))
    return out


def sections_eval(model, point, chart=None):
    """Chart-trivialized values of all sections at one point.

    ``point`` holds affine coordinates in ``chart`` (one standard affine chart
    index per factor, default the torus chart ``X_0 != 0``).
    """
    z, chart = _check_chart_point(model, point, chart)
    if all(c == 0 for c in chart):
        F, _ = monomial_tables(model.basis.exponents, z[None, :])
        return F[0]
    X = _homogeneous(model, z, chart)
    vals = np.ones(model.n_sections, dtype=complex)
    for i, lab in enumerate(model.basis.labels):
        start = 0
        for f, Xf in zip(model.factors, X):
            alpha = lab[start:start + f.dim]
            beta = (f.k - sum(alpha),) + tuple(alpha)
            vals[i] *= np.prod(Xf ** np.array(beta))
            start += f.dim
    return vals


def reference_h_weight(model, z):
    """``h_ref`` in the torus chart: ``prod_f (1 + |z_f|^2)^(-k_f)`` at points ``z``."""
    z = np.atleast_2d(z)
    out = np.ones(z.shape[0])
    for f, sl in zip(model.factors, model.coord_slices):
        out = out * (1.0 + np.sum(np.abs(z[:, sl]) ** 2, axis=1)) ** (-f.k)
    return out


def reference_density(model, z):
    """Reference volume density ``det(omega_ref)`` w.r.t. Lebesgue measure."""
    z = np.atleast_2d(z)
    out = np.ones(z.shape[0])
    for f, sl in zip(model.factors, model.coord_slices):
        q = 1.0 + np.sum(np.abs(z[:, sl]) ** 2, axis=1)
        out = out * f.k ** f.dim * q ** (-(f.dim + 1))
    return out


def reference_norms(model, point, chart=None):
    """``|s_j|_h^2`` for the reference metric at one chart point."""
    z, chart = _check_chart_point(model, point, chart)
    vals = sections_eval(model, z, chart)
    X = _homogeneous(model, z, chart)
    denom = 1.0
    for f, Xf in zip(model.factors, X):
        denom *= np.sum(np.abs(Xf) ** 2) ** f.k
    return np.abs(vals) ** 2 / denom


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

def _gauss_legendre_01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _factor_rule(f, level, invariant):
    """Points (Q, dim) and Lebesgue weights for one factor."""
    mult = 2 ** (level - 1)
    n_rad = max(16, 4 * f.k + 8) * mult
    # general (non-invariant) integrands are rational in the angles with
    # bandwidth growing in k, so the angular count is well above 2k + 1
    base_ang = 8 * f.k + 16 if f.dim == 1 else 4 * f.k + 12
    n_ang = 1 if invariant else base_ang * mult
    phis = 2 * np.pi * np.arange(n_ang) / n_ang
    dphi = 2 * np.pi / n_ang
    if f.dim == 1:
        x, wx = _gauss_legendre_01(n_rad)
        u = x / (1.0 - x)
        wr = 0.5 * wx / (1.0 - x) ** 2
        r = np.sqrt(u)
        pts = (r[:, None] * np.exp(1j * phis)[None, :]).reshape(-1, 1)
        wts = np.repeat(wr * dphi, n_ang)
        note = {"dim": 1, "k": f.k, "radial_nodes": n_rad, "angular_nodes": n_ang,
                "radial_exact_degree": 2 * n_rad - 1,
                "angular_exact_trig_degree": n_ang - 1}
        return pts, wts, note
    s, ws = _gauss_legendre_01(n_rad)
    t, wt = _gauss_legendre_01(n_rad)
    S, T = np.meshgrid(s, t, indexing="ij")
    x1 = S.ravel()
    x2 = ((1.0 - S) * T).ravel()
    jac = ((1.0 - S) * (ws[:, None] * wt[None, :])).ravel()
    x0 = 1.0 - x1 - x2
    u1, u2 = x1 / x0, x2 / x0
    wr = 0.25 * jac / x0 ** 3
    r1, r2 = np.sqrt(u1), np.sqrt(u2)
    P1, P2 = np.meshgrid(phis, phis, indexing="ij")
    e1 = np.exp(1j * P1.ravel())
    e2 = np.exp(1j * P2.ravel())
    z1 = (r1[:, None] * e1[None, :]).ravel()
    z2 = (r2[:, None] * e2[None, :]).ravel()
    pts = np.stack([z1, z2], axis=1)
    wts = np.repeat(wr * dphi ** 2, n_ang * n_ang)
    note = {"dim": 2, "k": f.k, "radial_nodes": n_rad * n_rad, "angular_nodes": n_ang * n_ang,
            "radial_exact_degree": 2 * n_rad - 2,
            "angular_exact_trig_degree": n_ang - 1}
    return pts, wts, note


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Tensor quadrature over the torus chart of a model.

    ``weights`` are Lebesgue weights: ``sum(w * F(points))`` approximates
    ``integral F dV`` for a density ``F`` with respect to ``dx dy``.  An
    ``invariant`` grid keeps a single angular node per coordinate and is exact
    only for torus-invariant integrands.
    """

    model: PolarizedModel
    level: int
    points: np.ndarray
    weights: np.ndarray
    invariant: bool
    exactness_note: dict = field(default_factory=dict)

    @property
    def size(self):
        return self.points.shape[0]

    @property
    def chart_ids(self):
        return np.zeros((self.size, len(self.model.factors)), dtype=np.int64)

    @cached_property
    def h_weight(self):
        return reference_h_weight(self.model, self.points)

    @cached_property
    def ref_density(self):
        return reference_density(self.model, self.points)

    @cached_property
    def _cached_tables(self):
        if self.size * self.model.n_sections > 4_000_000:
            return None
        return monomial_tables(self.model.basis.exponents, self.points)

    def chunks(self):
        """Yield ``(sl, F, dF)`` over fixed-order point chunks."""
        cached = self._cached_tables
        if cached is not None:
            yield slice(0, self.size), cached[0], cached[1]
            return
        for start in range(0, self.size, CHUNK_POINTS):
            sl = slice(start, min(start + CHUNK_POINTS, self.size))
            F, dF = monomial_tables(self.model.basis.exponents, self.points[sl])
            yield sl, F, dF

    def refined(self):
        return make_grid(self.model, self.level + 1, invariant=self.invariant)

    def integrate(self, values):
        return float(np.dot(self.weights, values))


def make_grid(model, level=1, invariant=False):
    """Cartesian product of per-factor radial x angular rules.

    Level ``L`` multiplies the default node counts by ``2**(L-1)``.
    """
    if not isinstance(level, (int, np.integer)) or level < 1:
        raise ValueError("grid level must be an integer >= 1")
    rules = [_factor_rule(f, int(level), invariant) for f in model.factors]
    total = math.prod(len(r[1]) for r in rules)
    if total > MAX_GRID_POINTS:
        raise SizeError(f"grid would have {total} points, above the cap of {MAX_GRID_POINTS}; "
                        "use a lower level or an invariant grid")
    pts, wts = rules[0][0], rules[0][1]
    for p2, w2, _ in rules[1:]:
        pts = np.concatenate([np.repeat(pts, len(w2), axis=0),
                              np.tile(p2, (len(wts), 1))], axis=1)
        wts = np.outer(wts, w2).ravel()
    note = {"level": int(level), "invariant": bool(invariant),
            "factors": [r[2] for r in rules], "points": int(len(wts))}
    return QuadratureGrid(model=model, level=int(level), points=pts, weights=wts,
                          invariant=bool(invariant), exactness_note=note)


def _reference_gram_on(grid):
    G = np.zeros((grid.model.n_sections,) * 2, dtype=complex)
    dens = grid.weights * grid.h_weight * grid.ref_density
    for sl, F, _ in grid.chunks():
        G += F.conj().T @ (dens[sl, None] * F)
    return 0.5 * (G + G.conj().T)


def reference_gram(model, level=1, check=True, rtol=1e-8):
    """L2 Gram matrix ``<s_i, s_j>`` of the section basis for the reference metric.

    With ``check`` the grid is refined once and an :class:`AccuracyError` is
    raised when any entry moves by more than ``rtol`` relative to the largest
    entry.
    """
    grid = make_grid(model, level)
    G = _reference_gram_on(grid)
    if check:
        # The reference metric is torus invariant: off-diagonal entries are
        # pure angular modes integrated exactly, so only the diagonal needs a
        # refinement check and invariant grids suffice for it.
        d1 = np.diag(_reference_gram_on(make_grid(model, level, invariant=True))).real
        d2 = np.diag(_reference_gram_on(make_grid(model, level + 1, invariant=True))).real
        if np.max(np.abs(d2 - d1)) > rtol * np.max(np.abs(d2)):
            raise AccuracyError("reference Gram did not converge under grid refinement")
        if np.max(np.abs(np.diag(G).real - d1)) > rtol * np.max(np.abs(d1)):
            raise AccuracyError("angular rule disagrees with the invariant rule")
    return G


def reference_gram_diagonal(model, level=1):
    """Reference Gram from the invariant grid; off-diagonal entries vanish by torus invariance."""
    d = np.diag(_reference_gram_on(make_grid(model, level, invariant=True))).real
    return np.diag(d).astype(complex)


def beta_gram_p1(k):
    """Closed-form reference Gram on ``(P^1, O(k))``: ``k pi j!(k-j)!/(k+1)!`` on the diagonal."""
    return np.diag([k * math.pi * math.factorial(j) * math.factorial(k - j)
                    / math.factorial(k + 1) for j in range(k + 1)]).astype(complex)


# ---------------------------------------------------------------------------
# P^1 automorphism gauge
# ---------------------------------------------------------------------------

def _sym_power_matrix(g, k):
    """Matrix ``R`` with ``v(g a) = R v(a)`` where ``v(a)_j = C(k,j) a0^(k-j) a1^j``."""
    roots = np.exp(2j * np.pi * np.arange(k + 1) / (k + 1))
    A = np.stack([np.ones(k + 1, dtype=complex), roots])   # columns are vectors a

    def v(a):
        j = np.arange(k + 1)
        binom = np.array([math.comb(k, int(i)) for i in j], dtype=float)
        return binom[:, None] * a[0][None, :] ** (k - j)[:, None] * a[1][None, :] ** j[:, None]

    V = v(A)
    W = v(g @ A)
    return W @ np.linalg.inv(V)


def mobius_gauge_p1(M, k):
    """Fit ``M ~ R(g)^H M_fs R(g)`` for a hermitian form ``M`` on ``H^0(P^1, O(k))``.

    ``M_fs = diag(1 / C(k, j))`` is the round balanced form.  Returns the
    fitted ``2 x 2`` form ``H = g^H g``, the relative fit residual, and the
    un-gauged matrix ``R^{-H} M R^{-1}`` which is diagonal and proportional to
    ``M_fs`` exactly when ``M`` is a Mobius pull-back of the round form.
    """
    M = np.asarray(M, dtype=complex)
    h00 = M[0, 0].real ** (1.0 / k)
    h11 = M[k, k].real ** (1.0 / k)
    h01 = M[0, 1] / h00 ** (k - 1) if k > 1 else M[0, 1]
    H = np.array([[h00, h01], [np.conj(h01), h11]])
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise DefinitenessError("fitted 2x2 form is not positive definite") from None
    g = L.conj().T
    R = _sym_power_matrix(g, k)
    m_fs = np.diag([1.0 / math.comb(k, j) for j in range(k + 1)]).astype(complex)
    pred = R.conj().T @ m_fs @ R
    resid = np.linalg.norm(M - pred) / np.linalg.norm(M)
    Rinv = np.linalg.inv(R)
    ungauged = Rinv.conj().T @ M @ Rinv
    return H, float(resid), ungauged
