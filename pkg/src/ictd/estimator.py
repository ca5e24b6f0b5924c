"""Scikit-learn style facade over the pretraining loop.

The estimator is unusual in that ``fit`` ignores X and y: pretraining
generates its own task stream from the configured MRP family. ``predict``
then scores prompt matrices with the frozen weights, so the fitted object
slots into sklearn tooling (cloning, grid search over hyperparameters,
pipelines that only consume predictions).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .pretrain import TrainConfig, train, trial_rng
from .transformer import Prompt, forward_batch


class LoopedTdRegressor(RegressorMixin, BaseEstimator):
    """Looped linear transformer value predictor, pretrained on random MRPs.

    Parameters mirror TrainConfig; see there for semantics. ``trial``
    selects an independent child stream of ``seed`` so repeated trials of
    one configuration differ only in their stream.
    """

    def __init__(
        self,
        algorithm: str = "td",
        parameterization: str = "structured",
        n_states: int = 5,
        depth: int = 30,
        gamma: float = 0.9,
        batch: int = 64,
        n_tasks: int = 20000,
        learning_rate: float = 1e-3,
        mc_horizon: int = 200,
        mrp_family: str = "boyan",
        loop_threshold: float = 0.5,
        init_scale: float = 1e-2,
        seed: int = 0,
        trial: int = 0,
    ):
        self.algorithm = algorithm
        self.parameterization = parameterization
        self.n_states = n_states
        self.depth = depth
        self.gamma = gamma
        self.batch = batch
        self.n_tasks = n_tasks
        self.learning_rate = learning_rate
        self.mc_horizon = mc_horizon
        self.mrp_family = mrp_family
        self.loop_threshold = loop_threshold
        self.init_scale = init_scale
        self.seed = seed
        self.trial = trial

    def _config(self) -> TrainConfig:
        return TrainConfig(
            algorithm=self.algorithm,
            parameterization=self.parameterization,
            n_states=self.n_states,
            depth=self.depth,
            gamma=self.gamma,
            batch=self.batch,
            n_tasks=self.n_tasks,
            learning_rate=self.learning_rate,
            mc_horizon=self.mc_horizon,
            mrp_family=self.mrp_family,
            loop_threshold=self.loop_threshold,
            init_scale=self.init_scale,
            seed=self.seed,
        )

    def fit(self, X=None, y=None):
        """Pretrain from scratch; X and y are accepted and ignored."""
        checkpoints = train(self._config(), trial_rng(self.seed, self.trial))
        self.checkpoints_ = checkpoints
        self.params_ = checkpoints[-1].params
        return self

    def predict(self, X) -> np.ndarray:
        """Value predictions for a stack of prompts.

        ``X`` is a (B, 2n+1, m+1) array or a sequence of Prompt objects
        sharing one context length. Uses the 1/m-normalized forward pass.
        """
        check_is_fitted(self, "params_")
        if len(X) and isinstance(X[0], Prompt):
            X = np.stack([p.z for p in X])
        X = np.asarray(X, dtype=float)
        if X.ndim != 3 or X.shape[1] != 2 * self.n_states + 1:
            raise ValueError("expected a (B, 2n+1, m+1) prompt stack")
        values, _ = forward_batch(X, self.params_, normalize=True)
        return values
