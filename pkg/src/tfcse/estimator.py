"""Scikit-learn style estimator around the detection network.

``SedCrnn`` follows the estimator protocol: every knob is a constructor
argument mirrored verbatim on the instance (so ``get_params`` /
``set_params`` / ``clone`` work), ``fit`` learns from arrays and stores its
results in trailing-underscore attributes, and ``predict`` refuses to run
before ``fit``.

X is a feature array [sequences, frames, freq_bins, channels]; y is a
binary event roll [sequences, frames, classes].
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .attention import SeConfig
from .model import CrnnConfig, build_model, count_parameters, predict_events
from .training import DataSplit, TrainConfig, evaluate_split, predictions_counts, train
from .validation import check_feature_array, check_roll_array, check_same_leading

SE_VARIANT_FLAGS = ("none", "c", "tf", "tfc-concurrent", "tfc-sequential")


def se_config_from_flags(se_variant: str, aggregation: str = "max",
                         reduction_ratio: int = 8, squeeze_op: str = "avg",
                         excite_op: str = "sigmoid") -> SeConfig | None:
    """Translate flag-style options into a block config (None for 'none')."""
    if se_variant == "none":
        return None
    return SeConfig(variant=se_variant, aggregation=aggregation, r=reduction_ratio,
                    squeeze_op=squeeze_op, excite_op=excite_op)


class SedCrnn(BaseEstimator):
    """Frame-level polyphonic sound event detector.

    Parameters mirror the architecture and training knobs; ``se_variant``
    selects the attention scheme ('none', 'c', 'tf', 'tfc-concurrent',
    'tfc-sequential'), with ``aggregation``, ``reduction_ratio``,
    ``squeeze_op`` and ``excite_op`` refining it.

    Fitted attributes: ``model_``, ``config_``, ``history_``,
    ``best_epoch_``, ``best_score_``, ``n_parameters_``.
    """

    def __init__(self, se_variant: str = "none", aggregation: str = "max",
                 reduction_ratio: int = 8, squeeze_op: str = "avg",
                 excite_op: str = "sigmoid", conv_filters: int = 64,
                 gru_units: int = 128, fc_units: int = 128,
                 pool_widths: tuple[int, ...] = (8, 8, 2),
                 epochs: int = 1000, batch_size: int = 64,
                 learning_rate: float = 1e-3, patience: int = 100,
                 threshold: float = 0.5, val_fraction: float = 0.1,
                 frame_hop_seconds: float = 256 / 44100,
                 segment_seconds: float = 1.0, precision: str = "f32",
                 seed: int = 0):
        self.se_variant = se_variant
        self.aggregation = aggregation
        self.reduction_ratio = reduction_ratio
        self.squeeze_op = squeeze_op
        self.excite_op = excite_op
        self.conv_filters = conv_filters
        self.gru_units = gru_units
        self.fc_units = fc_units
        self.pool_widths = pool_widths
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.patience = patience
        self.threshold = threshold
        self.val_fraction = val_fraction
        self.frame_hop_seconds = frame_hop_seconds
        self.segment_seconds = segment_seconds
        self.precision = precision
        self.seed = seed

    # -- construction ------------------------------------------------------

    def build_config(self, frames: int, freq_bins: int, in_channels: int,
                     num_classes: int) -> CrnnConfig:
        if self.se_variant not in SE_VARIANT_FLAGS:
            raise ValueError(f"se_variant must be one of {SE_VARIANT_FLAGS}, "
                             f"got {self.se_variant!r}")
        return CrnnConfig(
            frames=frames, freq_bins=freq_bins, in_channels=in_channels,
            conv_filters=self.conv_filters, pool_widths=tuple(self.pool_widths),
            gru_units=self.gru_units, fc_units=self.fc_units,
            num_classes=num_classes,
            se=se_config_from_flags(self.se_variant, self.aggregation,
                                    self.reduction_ratio, self.squeeze_op,
                                    self.excite_op),
            precision=self.precision, seed=self.seed)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, patience=self.patience,
                           threshold=self.threshold, seed=self.seed,
                           segment_seconds=self.segment_seconds)

    # -- estimator protocol --------------------------------------------------

    def fit(self, X, y, mask=None, X_val=None, y_val=None, mask_val=None,
            epoch_callback=None):
        """Train on (X, y); validation defaults to a held-out fraction of
        the training sequences (seeded split)."""
        X = check_feature_array(X)
        y = check_roll_array(y)
        check_same_leading(X, y)
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            check_same_leading(X, mask)

        if X_val is None:
            n_val = max(1, int(round(self.val_fraction * len(X))))
            if len(X) - n_val < 1:
                raise ValueError(f"{len(X)} sequences are too few to hold out "
                                 f"{n_val} for validation")
            order = np.random.default_rng(self.seed).permutation(len(X))
            val_idx, train_idx = order[:n_val], order[n_val:]
            X_val, y_val = X[val_idx], y[val_idx]
            mask_val = mask[val_idx] if mask is not None else None
            X, y = X[train_idx], y[train_idx]
            mask = mask[train_idx] if mask is not None else None
        else:
            X_val = check_feature_array(X_val)
            y_val = check_roll_array(y_val)

        self.config_ = self.build_config(frames=X.shape[1], freq_bins=X.shape[2],
                                         in_channels=X.shape[3], num_classes=y.shape[2])
        self.model_ = build_model(self.config_)
        self.n_parameters_ = count_parameters(self.model_)

        train_split = DataSplit(X, y, mask, self.frame_hop_seconds)
        val_split = DataSplit(X_val, y_val, mask_val, self.frame_hop_seconds)
        result = train(self.model_, train_split, val_split, self._train_config(),
                       epoch_callback=epoch_callback)
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.best_score_ = result.best_score
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this SedCrnn instance is not fitted yet; call fit first")

    def predict_proba(self, X, batch_size: int = 16) -> np.ndarray:
        """Per-frame class probabilities [sequences, frames, classes]."""
        self._check_fitted()
        X = check_feature_array(X, channels=self.config_.in_channels)
        parts = [self.model_.forward(X[i:i + batch_size], train=False, cache=False)
                 for i in range(0, len(X), batch_size)]
        return np.concatenate(parts, axis=0)

    def predict(self, X) -> np.ndarray:
        """Binary event rolls from thresholded probabilities."""
        return predict_events(self.predict_proba(X), self.threshold)

    def score(self, X, y, mask=None) -> float:
        """Segment-based F1 (higher is better, sklearn convention)."""
        return self.metrics(X, y, mask)["F1"]

    def metrics(self, X, y, mask=None) -> dict[str, float]:
        """Segment-based F1 / ER / joint score on (X, y)."""
        self._check_fitted()
        split = DataSplit(check_feature_array(X), check_roll_array(y),
                          None if mask is None else np.asarray(mask, dtype=bool),
                          self.frame_hop_seconds)
        return evaluate_split(self.model_, split, self.threshold, self.segment_seconds)

    def segment_count_matrix(self, X, y, mask=None):
        """Accumulated per-segment counts (for per-class reporting)."""
        self._check_fitted()
        split = DataSplit(check_feature_array(X), check_roll_array(y),
                          None if mask is None else np.asarray(mask, dtype=bool),
                          self.frame_hop_seconds)
        return predictions_counts(self.model_, split, self.threshold,
                                  self.segment_seconds)

    def sequence_detections(self, X) -> np.ndarray:
        """Sequence-level any-frame detection: [sequences, classes] binary.

        A class counts as detected in a sequence when any frame probability
        exceeds the threshold.
        """
        return self.predict(X).max(axis=1)
