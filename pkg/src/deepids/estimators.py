"""scikit-learn style estimators wrapping the toolkit's models and transforms.

These follow the usual conventions (``fit``/``predict``/``transform``,
``get_params``/``set_params``, trailing-underscore fitted attributes) so the
models compose with pipelines, grid search, and cross-validation from the
wider ecosystem.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from .domain import Domain, stratified_split_indices
from .errors import ConfigError, ConstantFeatureError, ShapeError
from .network import build_baseline, build_multi_channel_dnn, build_presnet, count_params
from .training import TrainConfig, predict_proba, train
from .transfer import SegmentationConfig, segment
from .validation import as_labels, as_tensor

ARCHITECTURES = ("presnet", "mlp", "fcn", "multi")


class NetworkClassifier(BaseEstimator, ClassifierMixin):
    """Residual conv net (or a baseline) behind the fit/predict interface.

    ``X`` is a ``[n_samples, channels, window]`` tensor; 2-d input is treated
    as ``[n_samples, features]`` rows and broadcast to constant channels of
    length ``window``. A stratified slice of the training data is held out
    for early stopping.
    """

    def __init__(self, architecture: str = "presnet", epochs: int = 200,
                 batch_size: int = 64, optimizer: str = "adam",
                 learning_rate: float | None = None, patience: int | None = 20,
                 validation_fraction: float = 0.2, window: int = 10,
                 class_weight=None, random_state: int = 0):
        self.architecture = architecture
        self.epochs = epochs
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.window = window
        self.class_weight = class_weight
        self.random_state = random_state

    def fit(self, X, y):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"architecture must be one of {ARCHITECTURES}, "
                              f"got {self.architecture!r}")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in (0, 1)")
        X = self._as_batch(X)
        y = as_labels(y)
        if y.shape[0] != X.shape[0]:
            raise ShapeError(f"{X.shape[0]} samples but {y.shape[0]} labels")
        self.classes_ = np.unique(y)
        if self.classes_.size < 2:
            raise ConfigError("need at least 2 classes to fit")
        encoded = np.searchsorted(self.classes_, y)

        channels, window = X.shape[1], X.shape[2]
        builders = {
            "presnet": lambda: build_presnet(channels, window, self.classes_.size,
                                             self.random_state),
            "mlp": lambda: build_baseline("mlp", channels, window, self.classes_.size,
                                          self.random_state),
            "fcn": lambda: build_baseline("fcn", channels, window, self.classes_.size,
                                          self.random_state),
            "multi": lambda: build_multi_channel_dnn(channels, window, self.classes_.size,
                                                     self.random_state),
        }
        net = builders[self.architecture]()

        train_idx, val_idx = stratified_split_indices(
            encoded, (1.0 - self.validation_fraction, self.validation_fraction),
            self.random_state)
        make = lambda idx: Domain("source", X[idx], encoded[idx], channels,
                                  self.classes_.size)
        cfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                          optimizer=self.optimizer, learning_rate=self.learning_rate,
                          patience=self.patience, seed=self.random_state,
                          class_weights=self.class_weight)
        _, history = train(net, make(train_idx), make(val_idx), cfg)
        self.network_ = net
        self.history_ = history
        self.n_params_ = count_params(net)
        self.n_features_in_ = channels
        return self

    def predict_proba(self, X):
        self._check_fitted()
        return predict_proba(self.network_, self._as_batch(X))

    def predict(self, X):
        probs = self.predict_proba(X)
        return self.classes_[probs.argmax(axis=1)]

    def _as_batch(self, X) -> np.ndarray:
        X = as_tensor(X, "X")
        if X.ndim == 2:
            X = np.repeat(X[:, :, np.newaxis], self.window, axis=2)
        if X.ndim != 3:
            raise ShapeError(f"X must be 2-d or 3-d, got shape {X.shape}")
        return np.ascontiguousarray(X)

    def _check_fitted(self):
        if not hasattr(self, "network_"):
            raise NotFittedError("this NetworkClassifier is not fitted yet; call fit first")


class FeatureScaler(BaseEstimator, TransformerMixin):
    """Min-max scaling onto [0, 1] with statistics from fit-time data only.

    Values outside the fitted range (evaluation rows) clamp to the interval.
    Constant features raise, mirroring the preparation pipeline's contract.
    """

    def fit(self, X, y=None):
        X = as_tensor(X, "X", ndim=2)
        self.data_min_ = X.min(axis=0)
        self.data_max_ = X.max(axis=0)
        constant = np.flatnonzero(self.data_max_ == self.data_min_)
        if constant.size:
            raise ConstantFeatureError(f"features {constant.tolist()} are constant; "
                                       f"drop them before scaling")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        if not hasattr(self, "data_min_"):
            raise NotFittedError("this FeatureScaler is not fitted yet; call fit first")
        X = as_tensor(X, "X", ndim=2)
        if X.shape[1] != self.n_features_in_:
            raise ShapeError(f"X has {X.shape[1]} features, scaler was fitted on "
                             f"{self.n_features_in_}")
        scaled = (X - self.data_min_) / (self.data_max_ - self.data_min_)
        return np.clip(scaled, 0.0, 1.0)


class WindowSegmenter(BaseEstimator, TransformerMixin):
    """Stateless sliding-window transform.

    ``transform`` maps a 1-d series to ``[n_windows, window]`` and a
    ``[channels, length]`` array to ``[n_windows, channels, window]``.
    """

    def __init__(self, window: int = 10, stride: int = 1):
        self.window = window
        self.stride = stride

    def fit(self, X, y=None):
        SegmentationConfig(self.window, self.stride)  # validates
        return self

    def transform(self, X):
        cfg = SegmentationConfig(self.window, self.stride)
        X = as_tensor(X, "X")
        if X.ndim == 1:
            return segment(X, cfg)
        if X.ndim == 2:
            return np.stack([segment(ch, cfg) for ch in X], axis=1)
        raise ShapeError(f"X must be 1-d or 2-d, got shape {X.shape}")
