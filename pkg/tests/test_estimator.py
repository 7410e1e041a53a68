import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from navem.estimator import BasisNetworkRegressor, check_dataset, check_encoded_inputs
from navem.network import load_model
from navem.training import build_dataset


@pytest.fixture(scope="module")
def data():
    return build_dataset("ht2", 10, seed=0)


def test_params_round_trip():
    est = BasisNetworkRegressor(hidden=(5,), adam_epochs=3, regularization=1e-6)
    assert est.get_params()["hidden"] == (5,)
    c = clone(est)
    assert c.get_params() == est.get_params()
    c.set_params(lbfgs_iter=7)
    assert c.lbfgs_iter == 7


def test_not_fitted():
    with pytest.raises(NotFittedError):
        BasisNetworkRegressor().predict(np.zeros((1, 1)))


def test_fit_predict_score(data, tmp_path):
    est = BasisNetworkRegressor(hidden=(6,), adam_epochs=5, lbfgs_iter=10, q_lbfgs_iter=5).fit(data)
    assert est.class_tag_ == "ht2" and est.n_features_in_ == 1 and est.n_outputs_ == data.output_dim
    pred = est.predict(data.X)
    assert pred.shape == (10, data.output_dim)
    assert est.predict_gradient_coefficients(data.X).shape == pred.shape
    assert est.score(data) == pytest.approx(-est.loss(data))
    with pytest.raises(ValueError, match="features"):
        est.predict(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        est.loss(build_dataset("ht1", 3))
    est.save(tmp_path / "m.txt")
    np.testing.assert_array_equal(load_model(tmp_path / "m.txt").phi_net.flat(), est.pair_.phi_net.flat())


def test_validation_helpers(unit_square):
    d = check_dataset([unit_square])
    assert d.cls.tag == "nv4" and len(d) == 4
    with pytest.raises(TypeError):
        check_dataset(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        check_encoded_inputs([[np.nan]], 1)
    np.testing.assert_array_equal(check_encoded_inputs([[0.5]], 1), [[0.5]])
