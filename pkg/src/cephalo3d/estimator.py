"""scikit-learn style front end: a preprocessing transformer and a landmark estimator."""

from __future__ import annotations

from typing import Iterable, List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import pipeline
from .errors import InvalidArgumentError
from .evaluate import set_errors
from .landmarks import LandmarkSet
from .volgrid import PAD_HU, GridSpec, Volume, preprocess


def check_volumes(X) -> List[Volume]:
    """Accept a Volume or an iterable of Volumes; always return a list."""
    if isinstance(X, Volume):
        return [X]
    try:
        vols = list(X)
    except TypeError:
        raise InvalidArgumentError(f"expected Volume or iterable of Volume, got {type(X).__name__}") from None
    if not vols:
        raise InvalidArgumentError("no volumes given")
    for i, v in enumerate(vols):
        if not isinstance(v, Volume):
            raise InvalidArgumentError(f"item {i} is {type(v).__name__}, not Volume")
    return vols


def check_landmark_sets(y, n_samples: int, complete: bool = True) -> List[LandmarkSet]:
    if isinstance(y, LandmarkSet):
        y = [y]
    sets = list(y)
    if len(sets) != n_samples:
        raise InvalidArgumentError(f"got {len(sets)} landmark sets for {n_samples} volumes")
    for i, lm in enumerate(sets):
        if not isinstance(lm, LandmarkSet):
            raise InvalidArgumentError(f"item {i} is {type(lm).__name__}, not LandmarkSet")
        if complete and not lm.complete:
            raise InvalidArgumentError(f"landmark set {i} lacks {lm.missing()}")
    return sets


class VolumePreprocessor(TransformerMixin, BaseEstimator):
    """Resample to isotropic spacing, pad to the network grid, normalize HU."""

    def __init__(self, target_spacing=2.0, target_dims=(128, 128, 152), pad_value_hu=PAD_HU):
        self.target_spacing = target_spacing
        self.target_dims = target_dims
        self.pad_value_hu = pad_value_hu

    def fit(self, X, y=None):
        check_volumes(X)
        self.grid_ = GridSpec(self.target_spacing, tuple(self.target_dims), self.pad_value_hu)
        return self

    def transform(self, X) -> List[Volume]:
        check_is_fitted(self, "grid_")
        return [preprocess(v, self.grid_) for v in check_volumes(X)]


class LandmarkLocator(BaseEstimator):
    """Volumetric CNN that predicts the 12 cephalometric landmarks.

    ``fit`` takes raw volumes and world-frame landmark sets; ``predict``
    returns world-frame landmark sets on the caller's coordinate frame.
    """

    def __init__(self, input_dims=(128, 128, 152), block_channels=(8, 16, 32, 64), maxout_k=2,
                 dense_hidden=512, dropout_rate=0.5, sigma=3.0, epochs=100, batch_size=1,
                 learning_rate=1.0, clip_norm=0.0,
                 augment_per_sample=1, augment=False, translate_frac=0.15, rotate_deg=15.0,
                 target_spacing=2.0, pad_value_hu=PAD_HU, decode="argmax", checkpoint=None,
                 log_path=None, random_state=0):
        self.input_dims = input_dims
        self.block_channels = block_channels
        self.maxout_k = maxout_k
        self.dense_hidden = dense_hidden
        self.dropout_rate = dropout_rate
        self.sigma = sigma
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.clip_norm = clip_norm
        self.augment_per_sample = augment_per_sample
        self.augment = augment
        self.translate_frac = translate_frac
        self.rotate_deg = rotate_deg
        self.target_spacing = target_spacing
        self.pad_value_hu = pad_value_hu
        self.decode = decode
        self.checkpoint = checkpoint
        self.log_path = log_path
        self.random_state = random_state

    @classmethod
    def toy(cls, **params) -> "LandmarkLocator":
        return cls(**{**pipeline.PROFILES["toy"], **params})

    def _configs(self):
        mc = pipeline.ModelConfig(
            input_dims=tuple(self.input_dims), block_channels=tuple(self.block_channels),
            maxout_k=self.maxout_k, dense_hidden=self.dense_hidden, dropout_rate=self.dropout_rate,
            sigma=self.sigma, seed=self.random_state,
        )
        tc = pipeline.TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
            clip_norm=self.clip_norm, augment_per_sample=self.augment_per_sample,
            shuffle_seed=self.random_state, checkpoint=self.checkpoint, log_path=self.log_path,
        )
        ac = pipeline.AugmentConfig(self.augment, self.translate_frac, self.rotate_deg)
        gs = GridSpec(self.target_spacing, tuple(self.input_dims), self.pad_value_hu)
        return mc, tc, ac, gs

    def fit(self, X, y):
        vols = check_volumes(X)
        sets = check_landmark_sets(y, len(vols))
        mc, tc, ac, gs = self._configs()
        self.model_ = pipeline.build(mc)
        self.grid_ = gs
        self.training_log_ = pipeline.train(self.model_, list(zip(vols, sets)), tc, ac, gs)
        return self

    def load(self, path) -> "LandmarkLocator":
        """Restore weights from a checkpoint instead of fitting."""
        mc, _, _, gs = self._configs()
        self.model_ = pipeline.build(mc).load(path)
        self.grid_ = gs
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return [pipeline.forward(self.model_, preprocess(v, self.grid_) if not v.normalized else v)
                for v in check_volumes(X)]

    def predict(self, X) -> List[LandmarkSet]:
        check_is_fitted(self, "model_")
        return [pipeline.predict(self.model_, v, self.grid_, self.decode) for v in check_volumes(X)]

    def score(self, X, y) -> float:
        """Negative mean 3D error in mm (higher is better)."""
        preds = self.predict(X)
        sets = check_landmark_sets(y, len(preds))
        return -float(np.mean([e.d3 for ref, p in zip(sets, preds) for e in set_errors(ref, p)]))
