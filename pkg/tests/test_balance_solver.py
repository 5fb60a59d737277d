import itertools
import json
import math

import numpy as np
import pytest

from _oracles import gram_p1
from relbal import balance_solver as bs
from relbal.balance_solver import (SolveConfig, fit_constraint_t, gradient_descent_D,
                                   index_from_gram, t_iterate)
from relbal.exceptions import ConfigError, NonConvergenceError, PreconditionError
from relbal.fubini_study import fs_volume, l2_gram
from relbal.geometry import _sym_power_matrix, build_model, mobius_gauge_p1
from relbal.hermitian_space import (IndexVector, InnerProduct, random_inner_product,
                                    splitting_from_weights)
from relbal.kempf_ness import balanced_residual, delta_D
from relbal.splitting import mixed_hessian_field


def fs_balanced(k, sp):
    return InnerProduct.from_matrix(np.diag([1.0 / math.comb(k, j) for j in range(k + 1)]), sp)


@pytest.fixture
def p1k3(make_setup):
    return make_setup([(1, 3)], "trivial", level=2)


class TestConfig:
    @pytest.mark.parametrize("kw", [{"max_iters": 0}, {"tol": 0.0}, {"damping": 0.0},
                                    {"damping": 1.5}, {"grid_level": 0},
                                    {"acceleration": "newton"}, {"window": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            SolveConfig(**kw)

    def test_round_trip(self):
        cfg = SolveConfig(group="G_c", max_iters=12, tol=1e-8, damping=0.5)
        again = SolveConfig.from_dict(cfg.to_dict())
        assert again == cfg and again.group == "gc"

    def test_unknown_group(self):
        with pytest.raises(ValueError):
            SolveConfig(group="u1")


class TestTIterate:
    def test_fixed_point_at_balanced_start(self, p1k3):
        _, sp, grid = p1k3
        tr = t_iterate(fs_balanced(3, sp), grid, SolveConfig(group="sl"))
        assert tr.converged and tr.iterations <= 1 and tr.residual < 1e-9

    def test_fixed_points_are_balanced_points(self, p1k3, rng):
        _, sp, grid = p1k3
        cfg = SolveConfig(group="sl", max_iters=1, tol=1e-30, acceleration="none")
        still = t_iterate(fs_balanced(3, sp), grid, cfg)
        assert still.moves[0] < 1e-9
        m = random_inner_product(sp, rng, 0.5, "sl")
        assert balanced_residual(m, grid, "free") > 1e-3
        assert t_iterate(m, grid, cfg).moves[0] > 1e-4

    def test_diagonal_start_reaches_round_metric(self, p1k3, rng):
        model, sp, grid = p1k3
        m0 = InnerProduct.from_matrix(np.diag(np.exp(rng.uniform(-1, 1, 4))), sp)
        tr = t_iterate(m0, grid, SolveConfig(group="sl"))
        assert tr.converged and tr.residual < 1e-9
        H, resid, _ = mobius_gauge_p1(tr.final.matrix, 3)
        assert resid < 1e-6
        g = np.linalg.cholesky(H).conj().T
        R = _sym_power_matrix(g, 3)
        pred = R.conj().T @ np.diag([1.0 / math.comb(3, j) for j in range(4)]) @ R
        target = fs_volume(InnerProduct.from_matrix(0.5 * (pred + pred.conj().T), sp), grid)
        got = fs_volume(tr.final, grid)
        assert np.max(np.abs(got.density - target.density)) < 1e-6 * np.max(target.density)

    def test_gauge_fixed_limit_matches_beta_oracle(self, p1k3, rng):
        _, sp, grid = p1k3
        tr = t_iterate(random_inner_product(sp, rng, 1.0, "sl"), grid, SolveConfig(group="sl"))
        _, _, ungauged = mobius_gauge_p1(tr.final.matrix, 3)
        oracle = np.diag(gram_p1(3))
        d = np.diag(ungauged).real
        np.testing.assert_allclose(d / d.sum(), oracle / oracle.sum(), atol=1e-6)

    @pytest.mark.parametrize("accel", ["anderson", "none"])
    def test_index_matches_affine_law(self, accel, make_setup, rng):
        _, sp, grid = make_setup([(1, 3)], "maximal", level=2)
        tr = t_iterate(random_inner_product(sp, rng, 1.0, "gct"), grid,
                       SolveConfig(group="gct", acceleration=accel, max_iters=400))
        assert tr.converged
        _, resid = fit_constraint_t(tr.index, sp)
        assert resid < 1e-7

    def test_product_limit_has_product_structure(self, make_setup, rng):
        model, sp, grid = make_setup([(1, 1), (1, 1)], "maximal", level=2)
        tr = t_iterate(random_inner_product(sp, rng, 1.0, "gct"), grid, SolveConfig(group="gct"))
        assert tr.converged
        assert mixed_hessian_field(tr.final, grid, 1).max() < 1e-6

    def test_max_iters(self, p1k3, rng):
        _, sp, grid = p1k3
        tr = t_iterate(random_inner_product(sp, rng, 1.0, "sl"), grid,
                       SolveConfig(group="sl", max_iters=1))
        assert not tr.converged and "max_iters" in tr.message and tr.iterations == 1

    def test_divergence_report(self, p1k3, rng, monkeypatch):
        _, sp, grid = p1k3
        counter = itertools.count(1)
        monkeypatch.setattr(bs, "group_residual", lambda *a, **k: float(next(counter)))
        with pytest.raises(NonConvergenceError) as info:
            t_iterate(random_inner_product(sp, rng, 1.0, "sl"), grid, SolveConfig(group="sl"))
        trace = info.value.trace
        assert trace is not None and len(trace.residuals) == bs.DIVERGENCE_WINDOW + 1

    def test_trace_json(self, p1k3, rng):
        _, sp, grid = p1k3
        tr = t_iterate(random_inner_product(sp, rng, 1.0, "sl"), grid,
                       SolveConfig(group="sl", track_energy=True))
        data = json.loads(tr.to_json())
        assert data["converged"] and data["iterations"] == len(data["distance_moved"])
        assert data["index"] == [1.0]
        assert max(data["delta_D_decrements"]) <= 1e-9


class TestGradientDescent:
    def test_balanced_start_no_step(self, p1k3):
        _, sp, grid = p1k3
        tr = gradient_descent_D(fs_balanced(3, sp), grid, SolveConfig(group="sl"))
        assert tr.converged and tr.iterations == 0

    def test_agrees_with_t_iterate(self, p1k3, rng):
        _, sp, grid = p1k3
        m0 = random_inner_product(sp, rng, 1.0, "sl")
        cfg = SolveConfig(group="sl")
        a = t_iterate(m0, grid, cfg)
        b = gradient_descent_D(m0, grid, cfg)
        assert a.converged and b.converged
        assert abs(delta_D(a.final, b.final, grid, "sl")) < 1e-7

    def test_monotone_descent(self, make_setup, rng):
        _, sp, grid = make_setup([(1, 2), (1, 3)], "maximal", level=2)
        tr = gradient_descent_D(random_inner_product(sp, rng, 1.0, "gct"), grid,
                                SolveConfig(group="gct"))
        assert tr.converged and tr.residual < 1e-9
        assert max(tr.decrements) <= 1e-9
        assert len(tr.decrements) == tr.iterations


class TestIndex:
    def test_index_from_gram(self, make_setup):
        _, sp, grid = make_setup([(1, 2)], "maximal", level=2)
        m = InnerProduct.identity(sp)
        b = index_from_gram(m, l2_gram(m, grid))
        assert abs(np.dot(sp.multiplicities, b) - sp.size) < 1e-12

    @pytest.mark.parametrize("desc", [[(1, 1)], [(1, 4)], [(2, 2)], [(1, 2), (1, 3)],
                                      [(1, 2), (2, 1)]])
    @pytest.mark.parametrize("torus", ["maximal", "trivial"])
    def test_ones_fit_exactly(self, desc, torus):
        sp = splitting_from_weights(build_model(desc).basis, torus)
        xi, resid = fit_constraint_t(IndexVector.ones(sp), sp)
        assert resid <= 1e-10 and np.all(np.abs(xi) <= 1e-12)

    @pytest.mark.parametrize("a", [0.1, 0.5])
    def test_two_block_example(self, a):
        sp = splitting_from_weights(np.array([[1], [-1]]))   # blocks ordered (-1, +1)
        xi, resid = fit_constraint_t(IndexVector.create([1 + a, 1 - a], sp), sp)
        x = sp.characters @ xi
        assert resid <= 1e-15
        np.testing.assert_allclose(x, [a, -a], atol=1e-15)

    def test_infeasible_reported(self):
        sp = splitting_from_weights(build_model([(1, 2)]).basis)
        _, resid = fit_constraint_t([1.2, 0.6, 1.2], sp)
        assert resid > 0.1

    def test_sum_rule_precondition(self):
        sp = splitting_from_weights(build_model([(1, 1)]).basis)
        with pytest.raises(PreconditionError):
            fit_constraint_t([1.2, 1.2], sp)
