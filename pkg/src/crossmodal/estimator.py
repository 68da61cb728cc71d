"""Scikit-learn style front end for the full training pipeline.

``CrossModalCycleGan`` is a fit/transform/predict estimator over plain
arrays: fit on seen image embeddings with class targets (plus optional
unlabeled unseen pools), transform image embeddings through the learned
image-side stack, and predict the nearest unseen class. It follows the
get_params/set_params contract, so it composes with model selection and
cloning utilities.
"""
from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .data import TrainerData
from .errors import DimMismatch
from .nets import apply_stack
from .numerics import cosine_matrix
from .trainer import TrainConfig, train_full


def check_matrix(name: str, x, d: int | None = None) -> np.ndarray:
    """Validate a 2-D finite float matrix, optionally with a fixed width."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimMismatch(f"{name}: expected a 2-D array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name}: contains NaN or Inf")
    if d is not None and x.shape[1] != d:
        raise DimMismatch(f"{name}: {x.shape[1]} columns, expected {d}")
    return x


def check_targets(name: str, y, n: int, n_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise DimMismatch(f"{name}: expected shape ({n},), got {y.shape}")
    y = y.astype(np.intp)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"{name}: targets must index into {n_classes} classes")
    return y


class CrossModalCycleGan(BaseEstimator, TransformerMixin):
    """Cross-modal mapping stacks trained by alternating supervised and
    transductive steps.

    Parameters mirror the training configuration; see ``TrainConfig``.
    ``fit`` expects base image embeddings that already live in the same
    space as the label vectors (for example convex combinations of seen
    label vectors).
    """

    def __init__(
        self,
        margin=0.5,
        lambda_grid=(1.0, 5.0, 10.0),
        epochs_supervised=20,
        epochs_transductive=50,
        batch_size=128,
        lr_mapper=1e-4,
        lr_disc=1e-4,
        hidden_multiplier=2,
        max_steps=6,
        improvement_threshold=1e-4,
        cycle_norm="l2",
        val_fraction=0.1,
        transductive_objective="cgan",
        transductive_enabled=True,
        seed=0,
    ):
        self.margin = margin
        self.lambda_grid = lambda_grid
        self.epochs_supervised = epochs_supervised
        self.epochs_transductive = epochs_transductive
        self.batch_size = batch_size
        self.lr_mapper = lr_mapper
        self.lr_disc = lr_disc
        self.hidden_multiplier = hidden_multiplier
        self.max_steps = max_steps
        self.improvement_threshold = improvement_threshold
        self.cycle_norm = cycle_norm
        self.val_fraction = val_fraction
        self.transductive_objective = transductive_objective
        self.transductive_enabled = transductive_enabled
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(
            seed=self.seed,
            margin=self.margin,
            lambda_grid=tuple(self.lambda_grid),
            epochs_supervised=self.epochs_supervised,
            epochs_transductive=self.epochs_transductive,
            batch_size=self.batch_size,
            lr_mapper=self.lr_mapper,
            lr_disc=self.lr_disc,
            hidden_multiplier=self.hidden_multiplier,
            max_steps=self.max_steps,
            improvement_threshold=self.improvement_threshold,
            cycle_norm=self.cycle_norm,
            val_fraction=self.val_fraction,
            transductive_objective=self.transductive_objective,
            transductive_enabled=self.transductive_enabled,
        )

    def fit(self, X, y, *, seen_label_vectors, unseen_label_vectors=None, unseen_X=None):
        """Train the stacks.

        ``X``: (n, d) base embeddings of seen-class images; ``y``: index of
        each image's class into ``seen_label_vectors``. The transductive
        phase needs both unlabeled pools (``unseen_X`` and
        ``unseen_label_vectors``) and is skipped otherwise.
        """
        X = check_matrix("X", X)
        d = X.shape[1]
        seen_label_vectors = check_matrix("seen_label_vectors", seen_label_vectors, d)
        y = check_targets("y", y, X.shape[0], seen_label_vectors.shape[0])
        transductive = unseen_X is not None and unseen_label_vectors is not None
        if transductive:
            unseen_X = check_matrix("unseen_X", unseen_X, d)
            unseen_label_vectors = check_matrix("unseen_label_vectors", unseen_label_vectors, d)
        else:
            unseen_X = np.zeros((0, d))
            unseen_label_vectors = np.zeros((0, d))

        data = TrainerData(
            seen_image_reps=X,
            seen_image_class=y,
            seen_label_reps=seen_label_vectors,
            unseen_image_reps=unseen_X,
            unseen_text_reps=unseen_label_vectors,
        )
        config = self._config()
        if not transductive:
            config = replace(config, transductive_enabled=False)
        result = train_full(config, data)
        self.image_stack_ = result.image_stack
        self.label_stack_ = result.label_stack
        self.history_ = result.history
        self.validation_history_ = result.validation_history
        self.stop_reason_ = result.stop_reason
        self.unseen_label_vectors_ = unseen_label_vectors
        self.n_features_in_ = d
        return self

    def _require_fitted(self):
        if not hasattr(self, "image_stack_"):
            raise NotFittedError("call fit before using this estimator")

    def transform(self, X) -> np.ndarray:
        """Project base image embeddings through the learned image stack."""
        self._require_fitted()
        X = check_matrix("X", X, self.n_features_in_)
        return apply_stack(self.image_stack_, X)

    def decision_function(self, X, candidate_vectors=None) -> np.ndarray:
        """Cosine similarity of each projected image to each candidate
        label (unseen labels from fit unless given explicitly)."""
        self._require_fitted()
        if candidate_vectors is None:
            candidate_vectors = self.unseen_label_vectors_
        candidate_vectors = check_matrix("candidate_vectors", candidate_vectors)
        if candidate_vectors.shape[0] == 0:
            raise DimMismatch("no candidate label vectors available")
        mapped_labels = apply_stack(self.label_stack_, candidate_vectors)
        return cosine_matrix(self.transform(X), mapped_labels)

    def predict(self, X, candidate_vectors=None) -> np.ndarray:
        """Index of the nearest candidate label for each image."""
        return np.argmax(self.decision_function(X, candidate_vectors), axis=1)

    def score(self, X, y, candidate_vectors=None) -> float:
        """Top-1 retrieval accuracy."""
        y = np.asarray(y)
        return float(np.mean(self.predict(X, candidate_vectors) == y))
