import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from relbal.estimator import RelativeBalancedMetric
from relbal.exceptions import ConfigError, DomainError


def test_params_round_trip():
    est = RelativeBalancedMetric(model=[(1, 2)], group="sl", torus="trivial")
    params = est.get_params()
    assert params["model"] == [(1, 2)] and params["group"] == "sl"
    assert clone(est).get_params() == params
    est.set_params(tol=1e-8)
    assert est.tol == 1e-8


def test_fit_reference_start():
    est = RelativeBalancedMetric(model=[(1, 3)]).fit()
    assert est.trace_.converged
    assert est.score() > -1e-9
    assert est.n_iter_ == est.trace_.iterations
    np.testing.assert_allclose(est.index_.values, 1.0, atol=1e-8)


@pytest.mark.parametrize("method", ["t_iterate", "gradient"])
def test_fit_random_start_trivial_torus(method):
    est = RelativeBalancedMetric(model=[(1, 2)], torus="trivial", group="sl", method=method,
                                 random_state=4).fit()
    assert est.trace_.converged
    rho = est.bergman_density()
    assert rho.max() / rho.min() < 1 + 1e-8


def test_transform_shape_and_positivity():
    est = RelativeBalancedMetric(model=[(1, 1), (1, 1)]).fit()
    out = est.transform(np.array([[0.1, 0.2j], [1.0, -3.0]]))
    assert out.shape == (2,) and np.all(out > 0)
    with pytest.raises(DomainError):
        est.transform(np.ones((2, 3)))


def test_explicit_start_matrix():
    est = RelativeBalancedMetric(model=[(1, 2)], group="gct")
    est.fit(np.diag([2.0, 1.0, 0.5]))
    assert est.trace_.converged


def test_not_fitted():
    with pytest.raises(NotFittedError):
        RelativeBalancedMetric().transform([[0.0]])


@pytest.mark.parametrize("kw", [{"group": "u1"}, {"grid_level": 0}, {"method": "bfgs"},
                                {"torus": [5]}])
def test_bad_params(kw):
    with pytest.raises(ConfigError):
        RelativeBalancedMetric(model=[(1, 2)], **kw).fit()
