"""Torus-compatible hermitian inner products, their orbits and geodesics.

An inner product ``m`` on ``V`` is stored by its matrix ``M[i, j] = m(s_i, s_j)``
in the reference section basis (conjugate linear in the first slot).  It is
block diagonal with respect to the character splitting of ``V``.

Three orbit types are supported, identified by the linear constraints they
impose on the vector ``l`` of block log-determinants ``l_k = log det M_k``:

``"sl"``
    ``S(prod GL(n_k))``: ``sum_k l_k = 0``.
``"gc"``
    ``prod SL(n_k)``: ``l_k = 0`` for every block.
``"gct"``
    the subgroup of ``prod GL(n_k)`` compatible with the torus: ``sum_k l_k = 0``
    and ``sum_k w_k l_k = 0`` where ``w_k`` are the block characters.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .exceptions import DefinitenessError, OrbitError, PreconditionError

GROUP_ALIASES = {
    "sl": "sl", "full_sl": "sl", "g_t": "sl", "gt": "sl",
    "gc": "gc", "g_c": "gc",
    "gct": "gct", "g_c_tperp": "gct", "tperp": "gct",
}
ORBIT_TOL = 1e-8
RANK_TOL = 1e-10


def normalize_group(group):
    try:
        return GROUP_ALIASES[str(group).lower()]
    except KeyError:
        raise ValueError(f"unknown group {group!r}; expected one of sl, gc, gct") from None


@dataclass(frozen=True, eq=False)
class CharacterSplitting:
    """Partition of the section indices into weight spaces.

    ``characters[k]`` is the weight vector of block ``k`` restricted to the
    chosen torus coordinates; ``blocks[k]`` are the member indices.
    """

    characters: np.ndarray
    blocks: tuple
    size: int

    @property
    def nu(self):
        return len(self.blocks)

    @cached_property
    def multiplicities(self):
        return np.array([len(b) for b in self.blocks], dtype=np.int64)

    @cached_property
    def block_of(self):
        out = np.empty(self.size, dtype=np.int64)
        for k, idx in enumerate(self.blocks):
            out[idx] = k
        return out

    @cached_property
    def mask(self):
        """Boolean matrix of allowed (same-block) entries."""
        b = self.block_of
        return b[:, None] == b[None, :]

    @property
    def all_singletons(self):
        return bool(np.all(self.multiplicities == 1))

    def constraint_matrix(self, group):
        group = normalize_group(group)
        nu = self.nu
        if group == "sl":
            return np.ones((1, nu))
        if group == "gc":
            return np.eye(nu)
        return np.vstack([np.ones((1, nu)), self.characters.T.astype(float)])

    def constraint_range(self, group):
        """Orthonormal basis of the row space of the constraint matrix (rank revealed)."""
        C = self.constraint_matrix(group)
        Q, R, _ = sla.qr(C.T, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > RANK_TOL * max(diag.max(initial=0.0), 1.0)))
        return Q[:, :rank]

    def same_as(self, other):
        return (self.size == other.size and self.nu == other.nu
                and np.array_equal(self.characters, other.characters)
                and all(np.array_equal(a, b) for a, b in zip(self.blocks, other.blocks)))


def splitting_from_weights(basis, torus=None):
    """Group section indices by equal torus weight.

    ``torus`` selects weight coordinates: ``None`` or ``"maximal"`` uses all of
    them, ``"trivial"`` or ``()`` none, and a sequence of integers a subset.
    Blocks are ordered lexicographically by character.
    """
    W = np.asarray(basis.weights if hasattr(basis, "weights") else basis, dtype=np.int64)
    if torus is None or (isinstance(torus, str) and torus == "maximal"):
        cols = list(range(W.shape[1]))
    elif isinstance(torus, str) and torus == "trivial":
        cols = []
    else:
        cols = [int(c) for c in torus]
        if any(c < 0 or c >= W.shape[1] for c in cols):
            raise ValueError(f"torus coordinates {cols} out of range")
    Wt = W[:, cols]
    groups = {}
    for i, row in enumerate(map(tuple, Wt.tolist())):
        groups.setdefault(row, []).append(i)
    keys = sorted(groups)
    chars = np.array(keys, dtype=np.int64).reshape(len(keys), len(cols))
    blocks = tuple(np.array(groups[key], dtype=np.int64) for key in keys)
    return CharacterSplitting(characters=chars, blocks=blocks, size=W.shape[0])


def factor_torus(model, factor):
    """Torus coordinates belonging to one factor of a product model."""
    sl = model.coord_slices[factor]
    return list(range(sl.start, sl.stop))


# ---------------------------------------------------------------------------
# Inner products
# ---------------------------------------------------------------------------

def _block_cholesky(M, splitting):
    L = np.zeros_like(M)
    for idx in splitting.blocks:
        try:
            L[np.ix_(idx, idx)] = np.linalg.cholesky(M[np.ix_(idx, idx)])
        except np.linalg.LinAlgError:
            raise DefinitenessError("inner product is not positive definite") from None
    return L


@dataclass(frozen=True, eq=False)
class InnerProduct:
    """Block-diagonal positive-definite hermitian form on ``V``."""

    matrix: np.ndarray
    splitting: CharacterSplitting

    @classmethod
    def from_matrix(cls, M, splitting, atol=1e-10):
        M = np.array(M, dtype=complex)
        n = splitting.size
        if M.shape != (n, n):
            raise ValueError(f"expected a {n}x{n} matrix, got {M.shape}")
        if not np.all(np.isfinite(M)):
            raise DefinitenessError("matrix has non-finite entries")
        scale = max(np.max(np.abs(M)), 1e-300)
        if np.max(np.abs(M - M.conj().T)) > atol * scale:
            raise ValueError("matrix is not hermitian")
        off = np.where(splitting.mask, 0.0, M)
        if np.max(np.abs(off), initial=0.0) > atol * scale:
            raise ValueError("matrix is not block diagonal for the splitting")
        M = np.where(splitting.mask, 0.5 * (M + M.conj().T), 0.0)
        _block_cholesky(M, splitting)
        M.setflags(write=False)
        return cls(matrix=M, splitting=splitting)

    @classmethod
    def identity(cls, splitting):
        return cls.from_matrix(np.eye(splitting.size), splitting)

    @property
    def size(self):
        return self.splitting.size

    def block(self, k):
        idx = self.splitting.blocks[k]
        return self.matrix[np.ix_(idx, idx)]

    @cached_property
    def cholesky(self):
        return _block_cholesky(self.matrix, self.splitting)

    @cached_property
    def inverse(self):
        Minv = np.zeros_like(self.matrix)
        for idx in self.splitting.blocks:
            Minv[np.ix_(idx, idx)] = np.linalg.inv(self.matrix[np.ix_(idx, idx)])
        return 0.5 * (Minv + Minv.conj().T)

    @cached_property
    def block_logdets(self):
        L = self.cholesky
        return np.array([2.0 * np.sum(np.log(np.abs(np.diag(L)[idx])))
                         for idx in self.splitting.blocks])

    def scaled(self, c):
        return InnerProduct.from_matrix(c * self.matrix, self.splitting)

    def orthonormal_basis(self):
        """Block-diagonal ``S`` with ``S^H M S = I``."""
        return admissible_normal_basis(self)

    def to_dict(self):
        blocks = []
        for chi, idx in zip(self.splitting.characters, self.splitting.blocks):
            sub = self.matrix[np.ix_(idx, idx)]
            blocks.append({
                "weight": [int(x) for x in chi],
                "indices": [int(i) for i in idx],
                "matrix": [[float(z.real), float(z.imag)] for z in sub.ravel()],
            })
        return {"size": int(self.size), "blocks": blocks}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, data):
        size = int(data["size"]) if "size" in data else sum(
            len(b["indices"]) for b in data["blocks"])
        chars, blocks = [], []
        M = np.zeros((size, size), dtype=complex)
        for b in data["blocks"]:
            idx = np.array(b.get("indices", []), dtype=np.int64)
            vals = np.array(b["matrix"], dtype=float)
            sub = (vals[:, 0] + 1j * vals[:, 1]).reshape(len(idx), len(idx))
            M[np.ix_(idx, idx)] = sub
            chars.append([int(x) for x in b["weight"]])
            blocks.append(idx)
        r = len(chars[0]) if chars else 0
        splitting = CharacterSplitting(
            characters=np.array(chars, dtype=np.int64).reshape(len(chars), r),
            blocks=tuple(blocks), size=size)
        # bit-faithful: no symmetrization on load
        _block_cholesky(M, splitting)
        M.setflags(write=False)
        return cls(matrix=M, splitting=splitting)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class IndexVector:
    """Index ``b`` of an admissible normal basis; ``sum_k n_k b_k = N + 1``."""

    values: np.ndarray
    multiplicities: np.ndarray

    @classmethod
    def create(cls, b, splitting, atol=1e-10):
        b = np.asarray(b, dtype=float).ravel()
        n = splitting.multiplicities
        if b.shape != (splitting.nu,):
            raise PreconditionError(f"index must have {splitting.nu} entries")
        if np.any(b <= 0):
            raise PreconditionError("index entries must be positive")
        if abs(np.dot(n, b) - splitting.size) > atol * splitting.size:
            raise PreconditionError(
                f"index violates sum n_k b_k = N+1 ({np.dot(n, b)} != {splitting.size})")
        return cls(values=b, multiplicities=n.copy())

    @classmethod
    def ones(cls, splitting):
        return cls.create(np.ones(splitting.nu), splitting)

    def expanded(self, splitting):
        return self.values[splitting.block_of]


def admissible_normal_basis(m, b=None):
    """Block-diagonal basis matrix ``S`` with ``S^H M S = diag(b_k)`` blockwise.

    Columns of ``S`` are coefficient vectors of the new sections in the
    reference basis.  ``b=None`` gives an admissible orthonormal basis.
    """
    L = m.cholesky
    S = np.zeros_like(L)
    for idx in m.splitting.blocks:
        Lk = L[np.ix_(idx, idx)]
        S[np.ix_(idx, idx)] = sla.solve_triangular(
            Lk, np.eye(len(idx)), lower=True).conj().T
    if b is not None:
        if not isinstance(b, IndexVector):
            b = IndexVector.create(b, m.splitting)
        S = S * np.sqrt(b.expanded(m.splitting))[None, :]
    return S


# ---------------------------------------------------------------------------
# Orbits
# ---------------------------------------------------------------------------

def orbit_residual(m, group):
    """Norm of the block log-det constraint violation of ``m``."""
    Q = m.splitting.constraint_range(group)
    return float(np.linalg.norm(Q.T @ m.block_logdets))


def orbit_project(m, group):
    """Rescale blocks so the block log-dets satisfy the group's constraints.

    The log-det vector is projected orthogonally onto the constraint kernel;
    only block scales change.
    """
    l = m.block_logdets
    Q = m.splitting.constraint_range(group)
    target = l - Q @ (Q.T @ l)
    shift = (target - l) / m.splitting.multiplicities
    scale = np.exp(shift)[m.splitting.block_of]
    M = m.matrix * np.sqrt(scale)[:, None] * np.sqrt(scale)[None, :]
    return InnerProduct.from_matrix(M, m.splitting)


def check_same_orbit(m1, m2, group, tol=ORBIT_TOL):
    if not m1.splitting.same_as(m2.splitting):
        raise OrbitError("inner products live on different splittings")
    if group is None:
        return
    Q = m1.splitting.constraint_range(group)
    resid = np.linalg.norm(Q.T @ (m2.block_logdets - m1.block_logdets))
    if resid > tol:
        raise OrbitError(f"inner products are not in the same {normalize_group(group)} orbit "
                         f"(constraint residual {resid:.3e})")


# ---------------------------------------------------------------------------
# Geodesics
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GeodesicSegment:
    """``m(t)`` has admissible orthonormal basis ``basis @ diag(exp(t gamma))``.

    ``basis`` is ``m(0)``-orthonormal; ``m(1)(s_i, s_i) = exp(-2 gamma_i)``.
    """

    basis: np.ndarray
    gamma: np.ndarray
    splitting: CharacterSplitting

    @cached_property
    def basis_inv_h(self):
        return np.linalg.inv(self.basis).conj().T

    @property
    def length(self):
        return float(np.sqrt(np.sum(self.gamma ** 2)))

    def block_sums(self):
        return np.array([self.gamma[idx].sum() for idx in self.splitting.blocks])

    def matrix_at(self, t):
        B = self.basis_inv_h
        return (B * np.exp(-2.0 * t * self.gamma)[None, :]) @ B.conj().T

    def eval(self, t):
        return InnerProduct.from_matrix(self.matrix_at(t), self.splitting)

    def velocity(self, t):
        B = self.basis_inv_h
        return (B * (-2.0 * self.gamma * np.exp(-2.0 * t * self.gamma))[None, :]) @ B.conj().T

    def inverse_matrix_at(self, t):
        S = self.basis
        return (S * np.exp(2.0 * t * self.gamma)[None, :]) @ S.conj().T


def geodesic(m1, m2, group="sl"):
    """Geodesic from ``m1`` to ``m2`` by simultaneous diagonalization.

    ``group=None`` skips the orbit membership test.
    """
    check_same_orbit(m1, m2, group)
    sp = m1.splitting
    L = m1.cholesky
    S = np.zeros_like(L)
    gamma = np.zeros(sp.size)
    for idx in sp.blocks:
        Lk = L[np.ix_(idx, idx)]
        Linv = sla.solve_triangular(Lk, np.eye(len(idx)), lower=True)
        W = Linv @ m2.matrix[np.ix_(idx, idx)] @ Linv.conj().T
        lam, V = np.linalg.eigh(0.5 * (W + W.conj().T))
        if lam.min() <= 0:
            raise DefinitenessError("second inner product is not positive definite")
        S[np.ix_(idx, idx)] = Linv.conj().T @ V
        gamma[idx] = -0.5 * np.log(lam)
    return GeodesicSegment(basis=S, gamma=gamma, splitting=sp)


def segment_from_direction(m, direction):
    """Geodesic ``t -> exp`` of a hermitian block direction at ``m``.

    ``direction`` is a hermitian block matrix ``Gamma`` expressed in an
    admissible orthonormal basis of ``m``; the returned segment has basis
    vectors ``s U`` with ``Gamma = U diag(gamma) U^H``.
    """
    sp = m.splitting
    S0 = admissible_normal_basis(m)
    S = np.zeros_like(S0)
    gamma = np.zeros(sp.size)
    for idx in sp.blocks:
        G = direction[np.ix_(idx, idx)]
        lam, U = np.linalg.eigh(0.5 * (G + G.conj().T))
        S[np.ix_(idx, idx)] = S0[np.ix_(idx, idx)] @ U
        gamma[idx] = lam
    return GeodesicSegment(basis=S, gamma=gamma, splitting=sp)


def distance(m1, m2, group="sl"):
    """Geodesic distance ``sqrt(sum gamma_i^2)``."""
    return geodesic(m1, m2, group).length


def riemannian_inner(M1, M2, m):
    """``Tr(M1 m^-1 M2 m^-1)`` for hermitian tangent vectors at ``m``."""
    Minv = m.inverse if isinstance(m, InnerProduct) else _checked_inverse(m)
    return float(np.real(np.trace(M1 @ Minv @ M2 @ Minv)))


def _checked_inverse(M):
    M = np.asarray(M, dtype=complex)
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise DefinitenessError("base point is not positive definite") from None
    return np.linalg.inv(M)


# ---------------------------------------------------------------------------
# Sampling helpers
# ---------------------------------------------------------------------------

def random_hermitian_direction(splitting, rng, group="gc", scale=1.0):
    """Random block hermitian matrix tangent to the ``group`` orbit, unit Frobenius norm."""
    n = splitting.size
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    A = np.where(splitting.mask, 0.5 * (A + A.conj().T), 0.0)
    A = project_tangent(A, splitting, group)
    return scale * A / np.linalg.norm(A)


def project_tangent(A, splitting, group):
    """Orthogonal projection of a block hermitian matrix onto the orbit tangent.

    Allowed directions have block traces ``t_k`` with ``C t = 0``; the block
    scalar part is projected in the metric ``sum_k t_k^2 / n_k``.
    """
    A = np.where(splitting.mask, A, 0.0)
    n = splitting.multiplicities
    traces = np.array([np.trace(A[np.ix_(idx, idx)]).real for idx in splitting.blocks])
    tau = traces / n                    # block-scalar coefficients
    tau_proj = project_scalars(tau, splitting, group)
    out = A.copy()
    for k, idx in enumerate(splitting.blocks):
        out[np.ix_(idx, idx)] += (tau_proj[k] - tau[k]) * np.eye(len(idx))
    return out


def project_scalars(tau, splitting, group):
    """Project block scalars ``tau`` onto ``{tau : C (n * tau) = 0}`` in the ``n``-weighted metric."""
    C = splitting.constraint_matrix(group)
    n = splitting.multiplicities.astype(float)
    A = np.sqrt(n)[:, None] * C.T
    y = np.linalg.lstsq(A, np.sqrt(n) * tau, rcond=RANK_TOL)[0]
    return tau - C.T @ y


def random_inner_product(splitting, rng, scale=1.0, group="gc"):
    """``exp`` of a random block hermitian matrix with ``||log M||_2 <= scale``, in ``group``'s canonical orbit."""
    n = splitting.size
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    A = np.where(splitting.mask, 0.5 * (A + A.conj().T), 0.0)
    A = scale * A / max(np.linalg.norm(A, 2), 1e-300)
    lam, U = np.linalg.eigh(A)
    M = (U * np.exp(lam)) @ U.conj().T
    m = InnerProduct.from_matrix(0.5 * (M + M.conj().T), splitting)
    return orbit_project(m, group) if group is not None else m
