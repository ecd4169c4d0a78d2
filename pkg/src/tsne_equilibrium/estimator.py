"""Scikit-learn style front end for the proportional-perplexity embedder."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .affinities import calibrate_all
from .core_types import validate_dataset
from .optimizer import OptimizerConfig, multistart_minimize


class ProportionalPerplexityTSNE(BaseEstimator):
    """t-SNE whose perplexity scales with the sample size: Perp = rho * n.

    Parameters mirror the optimizer defaults; `fit_transform` returns the
    (n, n_components) embedding. After fitting, diagnostics live on
    `embedding_`, `affinities_`, and `result_`.
    """

    def __init__(self, rho=0.3, n_components=2, max_iters=3000,
                 learning_rate=None, grad_tol=1e-7, init_scale=1e-4,
                 use_exaggeration=False, early_exaggeration=12.0,
                 restarts=1, sigma_tol=1e-10, random_state=0):
        self.rho = rho
        self.n_components = n_components
        self.max_iters = max_iters
        self.learning_rate = learning_rate
        self.grad_tol = grad_tol
        self.init_scale = init_scale
        self.use_exaggeration = use_exaggeration
        self.early_exaggeration = early_exaggeration
        self.restarts = restarts
        self.sigma_tol = sigma_tol
        self.random_state = random_state

    def fit(self, X, y=None):
        ds = validate_dataset(np.asarray(X, dtype=np.float64))
        self.affinities_ = calibrate_all(ds, self.rho, tol=self.sigma_tol)
        cfg = OptimizerConfig(
            max_iters=self.max_iters,
            learning_rate=self.learning_rate,
            grad_tol=self.grad_tol,
            init_scale=self.init_scale,
            use_exaggeration=self.use_exaggeration,
            early_exaggeration=self.early_exaggeration,
            seed=self.random_state,
        )
        self.result_ = multistart_minimize(self.affinities_, cfg,
                                           restarts=self.restarts,
                                           s=self.n_components)
        self.embedding_ = self.result_.embedding.points
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).embedding_
