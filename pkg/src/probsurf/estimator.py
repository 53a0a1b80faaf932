"""scikit-learn style estimators wrapping the PSO training loop."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import distributions as dist
from .instances import AuxInfo, make_named
from .network import NetworkSpec, Preconditioner, SurfaceModel
from .trainer import ConditionalDown, TrainConfig, train


class _SurfaceMixin:
    def _spec(self, dim):
        return NetworkSpec(
            input_dim=dim,
            topology=self.topology,
            num_layers=self.num_layers,
            width=self.width,
            num_blocks=self.num_blocks,
            block_size=self.block_size,
            activation=self.activation,
        )

    def _train_config(self):
        warm = self.warm_iters if self.warm_iters is not None else self.iterations // 2
        return TrainConfig(
            iterations=self.iterations,
            batch_up=self.batch_size,
            batch_down=self.batch_size,
            lr0=self.lr,
            warm_iters=warm,
            seed=self.seed,
            augment_sigma=getattr(self, "augment_sigma", 0.0),
        )

    def _instance(self):
        params = {"alpha": self.alpha} if self.alpha is not None else {}
        return make_named(self.instance, **params)

    def _fit_down(self, X):
        if self.down == "uniform_fit":
            return dist.uniform_box_fit(X, self.down_margin)
        if self.down == "gaussian_fit":
            return dist.diag_gaussian_fit(X)
        raise ValueError(f"down must be 'uniform_fit' or 'gaussian_fit', got {self.down!r}")

    def decision_function(self, X):
        """Raw surface heights ``f(X)``."""
        check_is_fitted(self, "theta_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self.model_(X)


class PSODensityEstimator(_SurfaceMixin, BaseEstimator):
    """Log-density estimator trained with a PSO instance against a fitted down density.

    After ``fit``, ``score_samples`` returns the learned log-density.
    """

    def __init__(
        self,
        instance="pso_lde",
        alpha=0.25,
        down="uniform_fit",
        down_margin=0.01,
        topology="block_diagonal",
        num_layers=4,
        num_blocks=8,
        block_size=16,
        width=64,
        activation="leaky_relu",
        iterations=20000,
        batch_size=256,
        lr=0.0035,
        warm_iters=None,
        seed=0,
        augment_sigma=0.0,
    ):
        self.instance = instance
        self.alpha = alpha
        self.down = down
        self.down_margin = down_margin
        self.topology = topology
        self.num_layers = num_layers
        self.num_blocks = num_blocks
        self.block_size = block_size
        self.width = width
        self.activation = activation
        self.iterations = iterations
        self.batch_size = batch_size
        self.lr = lr
        self.warm_iters = warm_iters
        self.seed = seed
        self.augment_sigma = augment_sigma

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        self.down_ = self._fit_down(X)
        self.spec_ = self._spec(X.shape[1])
        self.precond_ = Preconditioner.fit(X, self.down_)
        self.instance_ = self._instance()
        self.theta_, self.trace_ = train(self.spec_, self.precond_, self.instance_, X, self.down_, self._train_config())
        self.model_ = SurfaceModel(self.spec_, self.precond_, self.theta_)
        return self

    def score_samples(self, X):
        return self.decision_function(X)

    def score(self, X, y=None):
        return float(np.mean(self.score_samples(X)))


class PSODensityRatio(_SurfaceMixin, BaseEstimator):
    """Density-ratio estimator from two samples (``X`` from the numerator, ``X_down`` from the denominator)."""

    def __init__(
        self,
        instance="logistic",
        alpha=None,
        topology="block_diagonal",
        num_layers=4,
        num_blocks=8,
        block_size=16,
        width=64,
        activation="leaky_relu",
        iterations=10000,
        batch_size=256,
        lr=0.0035,
        warm_iters=None,
        seed=0,
    ):
        self.instance = instance
        self.alpha = alpha
        self.topology = topology
        self.num_layers = num_layers
        self.num_blocks = num_blocks
        self.block_size = block_size
        self.width = width
        self.activation = activation
        self.iterations = iterations
        self.batch_size = batch_size
        self.lr = lr
        self.warm_iters = warm_iters
        self.seed = seed

    def fit(self, X, X_down):
        X = check_array(X, dtype=np.float64)
        X_down = check_array(X_down, dtype=np.float64)
        if X.shape[1] != X_down.shape[1]:
            raise ValueError("X and X_down must have the same number of features")
        self.n_features_in_ = X.shape[1]
        self.spec_ = self._spec(X.shape[1])
        self.precond_ = Preconditioner.fit(np.concatenate([X, X_down]))
        self.instance_ = self._instance()
        down = _EmpiricalSource(X_down)
        self.theta_, self.trace_ = train(
            self.spec_, self.precond_, self.instance_, X, down, self._train_config(), aux_fn=AuxInfo()
        )
        self.model_ = SurfaceModel(self.spec_, self.precond_, self.theta_)
        return self

    def predict(self, X):
        """Surface heights (the instance's transform of the ratio)."""
        return self.decision_function(X)

    def predict_ratio(self, X):
        """Density ratio recovered through the instance's inverse map."""
        if self.instance_.ratio is None:
            raise ValueError(f"instance {self.instance_.name!r} has no ratio map")
        return self.instance_.ratio(self.predict(X), AuxInfo())


class PSOConditionalDensity(_SurfaceMixin, BaseEstimator):
    """Conditional log-density ``log p(x | y)`` from joint samples."""

    def __init__(
        self,
        instance="cond_log_density",
        alpha=None,
        down="gaussian_fit",
        down_margin=0.01,
        topology="block_diagonal",
        num_layers=4,
        num_blocks=8,
        block_size=16,
        width=64,
        activation="leaky_relu",
        iterations=20000,
        batch_size=256,
        lr=0.0035,
        warm_iters=None,
        seed=0,
    ):
        self.instance = instance
        self.alpha = alpha
        self.down = down
        self.down_margin = down_margin
        self.topology = topology
        self.num_layers = num_layers
        self.num_blocks = num_blocks
        self.block_size = block_size
        self.width = width
        self.activation = activation
        self.iterations = iterations
        self.batch_size = batch_size
        self.lr = lr
        self.warm_iters = warm_iters
        self.seed = seed

    def fit(self, X, Y):
        X = check_array(X, dtype=np.float64)
        Y = check_array(Y, dtype=np.float64)
        if X.shape[0] != Y.shape[0]:
            raise ValueError("X and Y must have the same number of rows")
        pairs = np.concatenate([X, Y], axis=1)
        self.n_features_in_ = pairs.shape[1]
        self.x_dim_ = X.shape[1]
        self.down_ = ConditionalDown(pairs, self._fit_down(X))
        self.spec_ = self._spec(pairs.shape[1])
        self.precond_ = Preconditioner.fit(pairs, self.down_)
        self.instance_ = self._instance()
        self.theta_, self.trace_ = train(self.spec_, self.precond_, self.instance_, pairs, self.down_, self._train_config())
        self.model_ = SurfaceModel(self.spec_, self.precond_, self.theta_)
        return self

    def score_samples(self, X, Y):
        X = check_array(X, dtype=np.float64)
        Y = check_array(Y, dtype=np.float64)
        return self.decision_function(np.concatenate([X, Y], axis=1))


class _EmpiricalSource:
    """Down 'distribution' that resamples rows of a fixed dataset."""

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.dim = self.data.shape[1]

    def sample(self, rng, count):
        return self.data[rng.integers(0, self.data.shape[0], size=int(count))]
