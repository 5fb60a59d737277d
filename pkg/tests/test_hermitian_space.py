import numpy as np
import pytest

from _oracles import geometric_mean, random_unitary
from relbal.exceptions import DefinitenessError, OrbitError, PreconditionError
from relbal.geometry import build_model
from relbal.hermitian_space import (IndexVector, InnerProduct, admissible_normal_basis,
                                    check_same_orbit, distance, factor_torus, geodesic,
                                    normalize_group, orbit_project, orbit_residual,
                                    project_tangent, random_hermitian_direction,
                                    random_inner_product, riemannian_inner,
                                    segment_from_direction, splitting_from_weights)


def split(desc, torus="maximal"):
    return splitting_from_weights(build_model(desc).basis, torus)


def one_block(n):
    return splitting_from_weights(np.zeros((n, 1), dtype=np.int64), "trivial")


class TestSplitting:
    def test_p1_k2_maximal(self):
        sp = split([(1, 2)])
        assert sp.nu == 3 and sp.multiplicities.tolist() == [1, 1, 1]

    def test_p1_k2_trivial(self):
        sp = split([(1, 2)], "trivial")
        assert sp.nu == 1 and sp.multiplicities.tolist() == [3]

    def test_p1xp1_first_factor_torus(self):
        model = build_model([(1, 1), (1, 1)])
        sp = splitting_from_weights(model.basis, factor_torus(model, 0))
        assert sp.nu == 2 and sp.multiplicities.tolist() == [2, 2]

    @pytest.mark.parametrize("desc", [[(1, 3)], [(2, 2)], [(1, 2), (2, 1)]])
    def test_partition_and_distinct_characters(self, desc):
        sp = split(desc)
        idx = np.sort(np.concatenate(sp.blocks))
        assert idx.tolist() == list(range(sp.size))
        assert len({tuple(c) for c in sp.characters.tolist()}) == sp.nu
        assert sp.multiplicities.sum() == sp.size

    def test_lexicographic_order(self):
        chars = [tuple(c) for c in split([(1, 2), (1, 1)]).characters.tolist()]
        assert chars == sorted(chars)

    def test_bad_torus(self):
        with pytest.raises(ValueError):
            split([(1, 2)], [3])

    def test_group_aliases(self):
        assert normalize_group("full_SL") == "sl"
        assert normalize_group("G_c") == "gc"
        assert normalize_group("G_c_Tperp") == "gct"
        with pytest.raises(ValueError):
            normalize_group("so")


class TestInnerProduct:
    def test_rejects_off_block(self):
        sp = split([(1, 2)])
        with pytest.raises(ValueError):
            InnerProduct.from_matrix(np.ones((3, 3)) + 3 * np.eye(3), sp)

    def test_rejects_indefinite(self):
        with pytest.raises(DefinitenessError):
            InnerProduct.from_matrix(np.diag([1.0, -1.0, 1.0]), split([(1, 2)]))

    def test_rejects_non_hermitian(self):
        sp = one_block(2)
        with pytest.raises(ValueError):
            InnerProduct.from_matrix([[2, 1j], [1j, 2]], sp)

    def test_json_round_trip_bit_faithful(self, rng):
        sp = split([(1, 1), (1, 1)], [0])
        m = random_inner_product(sp, rng, 1.0, "sl")
        back = InnerProduct.from_json(m.to_json())
        assert np.array_equal(back.matrix, m.matrix)
        assert back.splitting.same_as(sp)

    def test_matrix_is_read_only(self):
        m = InnerProduct.identity(split([(1, 2)]))
        with pytest.raises(ValueError):
            m.matrix[0, 0] = 2.0


class TestIndexVector:
    def test_sum_rule(self):
        sp = split([(1, 1)])
        IndexVector.create([1.5, 0.5], sp)
        with pytest.raises(PreconditionError):
            IndexVector.create([1.5, 1.5], sp)
        with pytest.raises(PreconditionError):
            IndexVector.create([2.5, -0.5], sp)
        with pytest.raises(PreconditionError):
            IndexVector.create([1.0], sp)


class TestAdmissibleBasis:
    def test_identity(self):
        sp = split([(1, 2)])
        S = admissible_normal_basis(InnerProduct.identity(sp))
        np.testing.assert_allclose(np.abs(S), np.eye(3))

    def test_diag_4_1(self):
        sp = one_block(2)
        m = InnerProduct.from_matrix(np.diag([4.0, 1.0]), sp)
        S = admissible_normal_basis(m)
        np.testing.assert_allclose(S.conj().T @ m.matrix @ S, np.eye(2), atol=1e-15)
        np.testing.assert_allclose(np.abs(S), np.diag([0.5, 1.0]), atol=1e-15)

    def test_random_with_index(self, rng):
        model = build_model([(1, 1), (1, 1)])
        sp = splitting_from_weights(model.basis, [0])
        m = random_inner_product(sp, rng, 1.0, "sl")
        b = IndexVector.create([1.1, 0.9], sp)
        S = admissible_normal_basis(m, b)
        target = np.diag(b.expanded(sp))
        assert np.max(np.abs(S.conj().T @ m.matrix @ S - target)) < 1e-12
        assert np.all(S[~sp.mask] == 0)


class TestGeodesic:
    def test_constant(self, rng):
        sp = one_block(3)
        m = random_inner_product(sp, rng, 1.0, "sl")
        seg = geodesic(m, m)
        assert np.max(np.abs(seg.gamma)) < 1e-12
        np.testing.assert_allclose(seg.matrix_at(0.4), m.matrix, atol=1e-12)

    def test_one_parameter_subgroup(self):
        a = 0.3
        sp = one_block(2)
        m1 = InnerProduct.identity(sp)
        m2 = InnerProduct.from_matrix(np.diag([np.exp(-2 * a), np.exp(2 * a)]), sp)
        seg = geodesic(m1, m2)
        np.testing.assert_allclose(sorted(seg.gamma), [-a, a], atol=1e-14)
        assert abs(seg.length - a * np.sqrt(2)) < 1e-14
        assert abs(distance(m1, m2) - a * np.sqrt(2)) < 1e-14

    def test_midpoint_is_geometric_mean(self, rng):
        sp = one_block(4)
        for _ in range(5):
            m1 = random_inner_product(sp, rng, 1.0, "sl")
            m2 = random_inner_product(sp, rng, 1.0, "sl")
            mid = geodesic(m1, m2).eval(0.5).matrix
            assert np.max(np.abs(mid - geometric_mean(m1.matrix, m2.matrix))) < 1e-9

    def test_endpoints_and_blocks(self, rng):
        sp = split([(1, 1), (1, 2)], [0])
        m1 = random_inner_product(sp, rng, 1.0, "gc")
        m2 = random_inner_product(sp, rng, 1.0, "gc")
        seg = geodesic(m1, m2, "gc")
        np.testing.assert_allclose(seg.matrix_at(0.0), m1.matrix, atol=1e-12)
        np.testing.assert_allclose(seg.matrix_at(1.0), m2.matrix, atol=1e-12)
        assert np.max(np.abs(seg.block_sums())) < 1e-12
        for t in np.linspace(0, 1, 7):
            seg.eval(t)   # validates block structure and definiteness

    def test_velocity_is_derivative(self, rng):
        sp = one_block(3)
        seg = geodesic(random_inner_product(sp, rng), random_inner_product(sp, rng), None)
        h = 1e-6
        fd = (seg.matrix_at(0.3 + h) - seg.matrix_at(0.3 - h)) / (2 * h)
        assert np.max(np.abs(fd - seg.velocity(0.3))) < 1e-7

    def test_orbit_mismatch(self, rng):
        sp = one_block(3)
        m = random_inner_product(sp, rng, 1.0, "sl")
        with pytest.raises(OrbitError):
            geodesic(m, m.scaled(2.0), "sl")
        with pytest.raises(OrbitError):
            check_same_orbit(m, InnerProduct.identity(one_block(4)), "sl")

    def test_segment_from_direction(self, rng):
        sp = split([(1, 1), (1, 1)], [0])
        m = random_inner_product(sp, rng, 0.5, "gc")
        A = random_hermitian_direction(sp, rng, "gc")
        seg = segment_from_direction(m, A)
        S = admissible_normal_basis(m)
        # m(t) has orthonormal basis S exp(t A): M(t) = S^-H exp(-2tA) S^-1
        lam, U = np.linalg.eigh(A)
        E = (U * np.exp(-2 * 0.7 * lam)) @ U.conj().T
        Sinv = np.linalg.inv(S)
        assert np.max(np.abs(seg.matrix_at(0.7) - Sinv.conj().T @ E @ Sinv)) < 1e-11


class TestDistance:
    def test_zero_and_symmetric(self, rng):
        sp = one_block(3)
        m1, m2 = random_inner_product(sp, rng, 1.0, "sl"), random_inner_product(sp, rng, 1.0, "sl")
        assert distance(m1, m1) < 1e-12
        assert abs(distance(m1, m2) - distance(m2, m1)) < 1e-12

    def test_matches_log_eigenvalues(self, rng):
        sp = one_block(3)
        m1, m2 = random_inner_product(sp, rng, 1.0, "sl"), random_inner_product(sp, rng, 1.0, "sl")
        lam = np.linalg.eigvals(np.linalg.solve(m1.matrix, m2.matrix)).real
        assert abs(distance(m1, m2) - 0.5 * np.sqrt(np.sum(np.log(lam) ** 2))) < 1e-12


class TestRiemannianInner:
    def test_trace_identity(self, rng):
        sp = one_block(4)
        m = random_inner_product(sp, rng)
        assert abs(riemannian_inner(m.matrix, m.matrix, m) - 4) < 1e-12

    def test_diag(self):
        D = np.diag([1.0, -1.0])
        assert abs(riemannian_inner(D, D, np.eye(2)) - 2) < 1e-15

    def test_singular(self):
        with pytest.raises(DefinitenessError):
            riemannian_inner(np.eye(2), np.eye(2), np.diag([1.0, 0.0]))


class TestOrbitProject:
    def test_unchanged_when_satisfied(self, rng):
        sp = one_block(3)
        m = random_inner_product(sp, rng, 1.0, "sl")
        np.testing.assert_allclose(orbit_project(m, "sl").matrix, m.matrix, atol=1e-13)

    def test_scalar_to_identity(self):
        sp = one_block(3)
        m = InnerProduct.from_matrix(5.0 * np.eye(3), sp)
        np.testing.assert_allclose(orbit_project(m, "sl").matrix, np.eye(3), atol=1e-14)

    def test_two_block_hand_example(self):
        # w = (-1, +1) after lexicographic ordering; dets (e^2, e^2)
        sp = splitting_from_weights(np.array([[1], [-1]]))
        m = InnerProduct.from_matrix(np.diag([np.e ** 2, np.e ** 2]), sp)
        p = orbit_project(m, "gct")
        np.testing.assert_allclose(np.diag(p.matrix).real, [1.0, 1.0], atol=1e-14)

    def test_gc_makes_every_block_unimodular(self, rng):
        sp = split([(1, 1), (1, 2)], [0])
        m = random_inner_product(sp, rng, 1.0, None)
        p = orbit_project(m, "gc")
        assert np.max(np.abs(p.block_logdets)) < 1e-12
        assert orbit_residual(p, "gc") < 1e-12


class TestTangent:
    @pytest.mark.parametrize("group", ["sl", "gc", "gct"])
    def test_projection_satisfies_constraints(self, group, rng):
        sp = split([(1, 2), (1, 1)], [0])
        A = random_hermitian_direction(sp, rng, group)
        traces = np.array([np.trace(A[np.ix_(i, i)]).real for i in sp.blocks])
        assert np.max(np.abs(sp.constraint_matrix(group) @ traces)) < 1e-12
        np.testing.assert_allclose(project_tangent(A, sp, group), A, atol=1e-13)

    def test_block_unitary_isometry(self, rng):
        sp = split([(1, 1), (1, 1)], [0])
        U = np.zeros((4, 4), dtype=complex)
        for idx in sp.blocks:
            U[np.ix_(idx, idx)] = random_unitary(len(idx), rng)
        m1 = random_inner_product(sp, rng, 1.0, "gc")
        m2 = random_inner_product(sp, rng, 1.0, "gc")
        g = lambda m: InnerProduct.from_matrix(U.conj().T @ m.matrix @ U, sp)
        assert abs(distance(g(m1), g(m2), "gc") - distance(m1, m2, "gc")) < 1e-12
