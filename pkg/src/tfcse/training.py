"""Loss, optimiser and the training loop.

The loss is per-frame binary cross entropy, averaged over valid (unmasked)
frames and classes.  During training its gradient is taken at the final
layer's pre-activations, where the output sigmoid cancels to ``(p - y) / n``
and no logarithm of a saturated probability is ever formed; the model's
public ``forward`` still returns probabilities.

Model selection: after every epoch the joint segment score is computed on
the validation set and the lowest-scoring state is kept.  An epoch counts
as an improvement only if it beats the best score by at least
``min_improvement``; training stops once ``patience`` epochs pass without
one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .metrics import EventRoll, SegmentCounts, metrics_from_counts, segment_counts
from .model import SedModel, predict_events
from .tensor import DiffNode

PROB_EPS = 1e-7


def bce_loss(probs: np.ndarray, targets: np.ndarray,
             mask: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Mean binary cross entropy and its gradient with respect to ``probs``.

    ``mask`` (broadcastable over the class axis) selects the frames that
    count; probabilities are clamped to [PROB_EPS, 1 - PROB_EPS] for the
    logarithms.
    """
    probs = np.asarray(probs)
    targets = np.asarray(targets, dtype=probs.dtype)
    if probs.shape != targets.shape:
        raise ValueError(f"probs {probs.shape} and targets {targets.shape} disagree")
    weights = _frame_weights(probs.shape, mask, probs.dtype)
    count = weights.sum() * probs.shape[-1]
    p = np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    loss = -(targets * np.log(p) + (1.0 - targets) * np.log1p(-p))
    loss = float((loss * weights[..., None]).sum() / count)
    grad = (p - targets) / (p * (1.0 - p)) * weights[..., None] / count
    return loss, grad


def bce_grad_logits(probs: np.ndarray, targets: np.ndarray,
                    mask: np.ndarray | None = None) -> np.ndarray:
    """Loss gradient at the pre-activations of the output sigmoid:
    ``(p - y) / n`` on valid frames, zero elsewhere."""
    probs = np.asarray(probs)
    targets = np.asarray(targets, dtype=probs.dtype)
    weights = _frame_weights(probs.shape, mask, probs.dtype)
    count = weights.sum() * probs.shape[-1]
    return (probs - targets) * weights[..., None] / count


def _frame_weights(shape, mask, dtype) -> np.ndarray:
    if mask is None:
        return np.ones(shape[:-1], dtype=dtype)
    mask = np.asarray(mask)
    if mask.shape != shape[:-1]:
        raise ValueError(f"mask {mask.shape} does not match frames {shape[:-1]}")
    return mask.astype(dtype)


class Adam:
    """Bias-corrected adaptive moment optimiser over named parameters."""

    def __init__(self, params: list[tuple[str, DiffNode]], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(node.value) for _, node in params]
        self.v = [np.zeros_like(node.value) for _, node in params]

    def step(self) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for i, (_, node) in enumerate(self.params):
            g = node.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / correction1
            v_hat = self.v[i] / correction2
            node.value -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(
                node.value.dtype)

    def zero_grad(self) -> None:
        for _, node in self.params:
            node.zero_grad()


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 64
    learning_rate: float = 1e-3
    patience: int = 100
    threshold: float = 0.5
    seed: int = 0
    min_improvement: float = 1e-6
    segment_seconds: float = 1.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError("learning rate must be positive")
        if not 0 < self.patience < self.epochs:
            raise ConfigurationError(
                f"patience must lie in (0, epochs), got patience={self.patience} "
                f"epochs={self.epochs}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigurationError("threshold must lie in (0, 1)")


@dataclass
class DataSplit:
    """A batchable set of feature chunks with frame targets."""

    x: np.ndarray          # [n, frames, freq, channels]
    y: np.ndarray          # [n, frames, classes]
    mask: np.ndarray | None = None  # [n, frames] validity
    hop_seconds: float = 256 / 44100

    def __len__(self) -> int:
        return self.x.shape[0]


@dataclass
class TrainResult:
    history: list[dict]
    best_epoch: int
    best_score: float
    best_state: dict[str, np.ndarray]
    stopped_early: bool


def evaluate_split(model: SedModel, split: DataSplit, threshold: float,
                   segment_seconds: float = 1.0, batch_size: int = 16) -> dict[str, float]:
    """Segment metrics of the model's thresholded predictions on a split."""
    counts = predictions_counts(model, split, threshold, segment_seconds, batch_size)
    return metrics_from_counts(counts)


def predictions_counts(model: SedModel, split: DataSplit, threshold: float,
                       segment_seconds: float = 1.0,
                       batch_size: int = 16) -> SegmentCounts:
    total = SegmentCounts()
    for start in range(0, len(split), batch_size):
        xb = split.x[start:start + batch_size]
        yb = split.y[start:start + batch_size]
        mb = split.mask[start:start + batch_size] if split.mask is not None else None
        probs = model.forward(xb, train=False, cache=False)
        rolls = predict_events(probs, threshold)
        for i in range(len(xb)):
            valid = mb[i] if mb is not None else np.ones(xb.shape[1], dtype=bool)
            if not valid.any():
                continue
            ref = EventRoll(yb[i][valid], split.hop_seconds)
            est = EventRoll(rolls[i][valid], split.hop_seconds)
            total = total.merge(segment_counts(ref, est, segment_seconds))
    return total


def train(model: SedModel, train_split: DataSplit, val_split: DataSplit,
          cfg: TrainConfig, epoch_callback=None) -> TrainResult:
    """Minibatch training with early stopping on the validation joint score.

    ``epoch_callback(epoch, model, record)`` runs after each epoch's
    validation; a truthy return stops training (the record notes the
    reason).  Identical seeds and configuration reproduce the history
    bit for bit.
    """
    if len(train_split) == 0 or len(val_split) == 0:
        raise ValueError("training and validation splits must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(model.parameters(), lr=cfg.learning_rate)
    history: list[dict] = []
    best_score = np.inf
    best_epoch = -1
    best_state = model.get_state()
    stopped_early = False

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_split))
        epoch_loss = 0.0
        batches = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = train_split.x[idx]
            yb = train_split.y[idx]
            mb = train_split.mask[idx] if train_split.mask is not None else None
            probs = model.forward(xb, train=True, cache=True)
            loss, _ = bce_loss(probs, yb, mb)
            if not np.isfinite(loss):
                norms = {name: float(np.linalg.norm(node.value))
                         for name, node in model.parameters()}
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {batches}; "
                    f"parameter norms: {norms}")
            optimizer.zero_grad()
            model.backward(bce_grad_logits(probs, yb, mb), wrt="logits")
            optimizer.step()
            epoch_loss += loss
            batches += 1

        val = evaluate_split(model, val_split, cfg.threshold, cfg.segment_seconds)
        improved = best_score - val["S_SED"] >= cfg.min_improvement
        if improved:
            best_score = val["S_SED"]
            best_epoch = epoch
            best_state = model.get_state()
        record = {
            "epoch": epoch,
            "train_loss": epoch_loss / max(batches, 1),
            "val_f1": val["F1"],
            "val_er": val["ER"],
            "val_s_sed": val["S_SED"],
            "improved": improved,
        }
        history.append(record)
        if epoch_callback is not None and epoch_callback(epoch, model, record):
            record["stopped"] = "callback"
            stopped_early = True
            break
        if epoch - best_epoch >= cfg.patience:
            record["stopped"] = "patience"
            stopped_early = True
            break

    model.set_state(best_state)
    return TrainResult(history=history, best_epoch=best_epoch, best_score=best_score,
                       best_state=best_state, stopped_early=stopped_early)
