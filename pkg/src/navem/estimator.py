"""Scikit-learn style wrapper around the coefficient-network training pipeline.

``fit`` takes a :class:`~navem.training.Dataset` (or a list of polygons, which
is converted to one) for a single polygon class; ``predict`` maps encoded
inputs to value-network coefficients.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .geometry import Polygon
from .network import PredictorPair, mlp_forward, save_model
from .training import AdamConfig, Dataset, QuasiNewtonConfig, TrainConfig, dataset_from_polygons, sqrt_avg_loss, train_phi_net, train_q_net


def check_dataset(X, cls=None) -> Dataset:
    """Return ``X`` as a dataset, converting a list of polygons if needed."""
    if isinstance(X, Dataset):
        data = X
    elif isinstance(X, (list, tuple)) and X and all(isinstance(P, Polygon) for P in X):
        data = dataset_from_polygons(list(X), cls)
    else:
        raise TypeError(f"expected a Dataset or a non-empty list of Polygon, got {type(X).__name__}")
    if cls is not None:
        tag = cls if isinstance(cls, str) else cls.tag
        if data.cls.tag != tag:
            raise ValueError(f"dataset class {data.cls.tag} does not match estimator class {tag}")
    return data


def check_encoded_inputs(X, n_features: int) -> np.ndarray:
    """Validate a ``(n_samples, n_features)`` array of encoded inputs."""
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} features, the model expects {n_features}")
    return X


class BasisNetworkRegressor(RegressorMixin, BaseEstimator):
    """Value and gradient coefficient networks for one polygon class.

    Parameters
    ----------
    hidden : tuple of int or None
        Hidden layer widths; ``None`` picks the class default.
    adam_epochs, learning_rate, batch_size : Adam phase settings.
    lbfgs_iter : int
        Iterations of the limited-memory BFGS phase.
    q_adam_epochs, q_lbfgs_iter : int
        Fine-tuning budget of the gradient network (zero copies the value net).
    regularization : float
        Weight on the squared network weights.
    random_state : int
        Seed for initialisation and batching.
    """

    def __init__(
        self,
        hidden=None,
        adam_epochs: int = 2000,
        learning_rate: float = 1e-3,
        batch_size: int = 0,
        lbfgs_iter: int = 2000,
        q_adam_epochs: int = 0,
        q_lbfgs_iter: int = 500,
        regularization: float = 1e-8,
        random_state: int = 0,
    ):
        self.hidden = hidden
        self.adam_epochs = adam_epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.lbfgs_iter = lbfgs_iter
        self.q_adam_epochs = q_adam_epochs
        self.q_lbfgs_iter = q_lbfgs_iter
        self.regularization = regularization
        self.random_state = random_state

    def _config(self, epochs, iters) -> TrainConfig:
        return TrainConfig(
            adam=AdamConfig(lr=self.learning_rate, epochs=epochs, batch_size=self.batch_size),
            quasi_newton=QuasiNewtonConfig(max_iter=iters),
            regularization=self.regularization,
            seed=self.random_state,
            hidden=tuple(self.hidden) if self.hidden is not None else None,
        )

    def fit(self, X, y=None):
        """Train on a dataset; ``y`` is unused since targets live in the samples."""
        data = check_dataset(X)
        phi, h0 = train_phi_net(data, self._config(self.adam_epochs, self.lbfgs_iter))
        q, h1 = train_q_net(phi, data, self._config(self.q_adam_epochs, self.q_lbfgs_iter))
        self.pair_ = PredictorPair(phi, q, data.cls.tag)
        self.class_tag_ = data.cls.tag
        self.n_features_in_ = data.input_dim
        self.n_outputs_ = data.output_dim
        self.history_ = {"phi": h0, "q": h1}
        return self

    def predict(self, X) -> np.ndarray:
        """Value-network coefficients for each row of encoded inputs."""
        check_is_fitted(self, "pair_")
        X = check_encoded_inputs(X, self.n_features_in_)
        return mlp_forward(self.pair_.phi_net, X)[0]

    def predict_gradient_coefficients(self, X) -> np.ndarray:
        check_is_fitted(self, "pair_")
        X = check_encoded_inputs(X, self.n_features_in_)
        return mlp_forward(self.pair_.q_net, X)[0]

    def loss(self, X, which: str = "L0") -> float:
        """Square root of the average boundary loss on a dataset."""
        check_is_fitted(self, "pair_")
        data = check_dataset(X, self.class_tag_)
        net = self.pair_.phi_net if which == "L0" else self.pair_.q_net
        return sqrt_avg_loss(net, data, which)

    def score(self, X, y=None) -> float:
        """Negative root-mean trace loss, so that larger is better."""
        return -self.loss(X, "L0")

    def save(self, path) -> None:
        check_is_fitted(self, "pair_")
        save_model(path, self.pair_)
