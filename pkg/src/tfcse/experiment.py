"""End-to-end experiment driver: data, features, training, evaluation.

Data comes either from a manifest of audio + label files or from the
synthetic scene generator; features are extracted in a thread pool whose
size is capped by the ``TFCSE_THREADS`` environment variable.  Training
monitors a held-out fraction of the training sequences by default; set
``monitor='test'`` to reproduce protocols that track the test score
instead.

Final test metrics are computed per recording on the reassembled frame
timeline (padding removed), then pooled, so chunking does not affect the
segment grid.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import MultichannelAudio, load_audio
from .datasets import (
    SceneParams,
    labels_to_roll,
    read_labels,
    read_manifest,
    render_scene,
    sample_scene,
    scene_to_roll,
)
from .estimator import se_config_from_flags
from .features import chunk_sequences, extract_features
from .metrics import (
    EventRoll,
    SegmentCounts,
    metrics_from_counts,
    segment_counts,
)
from .model import CrnnConfig, SedModel, build_model, count_parameters, predict_events
from .training import DataSplit, TrainConfig, train


def worker_count(requested: int | None = None) -> int:
    """Thread-pool size; the TFCSE_THREADS environment variable wins."""
    env = os.environ.get("TFCSE_THREADS")
    if env:
        return max(1, int(env))
    if requested:
        return max(1, requested)
    return min(8, os.cpu_count() or 1)


@dataclass
class SceneFeatures:
    """Features and targets of one recording."""

    chunks: np.ndarray      # [n, frames, freq, channels]
    mask: np.ndarray        # [n, frames]
    roll: np.ndarray        # [total_frames, classes], unpadded timeline
    hop_seconds: float


@dataclass
class SceneSet:
    scenes: list[SceneFeatures] = field(default_factory=list)

    @property
    def hop_seconds(self) -> float:
        return self.scenes[0].hop_seconds if self.scenes else 0.0

    def to_split(self) -> DataSplit:
        """Concatenate all chunks for minibatch training."""
        x = np.concatenate([s.chunks for s in self.scenes])
        mask = np.concatenate([s.mask for s in self.scenes])
        rolls = []
        for s in self.scenes:
            padded, _ = chunk_sequences(s.roll, s.chunks.shape[1])
            rolls.append(padded)
        y = np.concatenate(rolls)
        return DataSplit(x=x, y=y.astype(np.uint8), mask=mask,
                         hop_seconds=self.hop_seconds)


def scene_features(audio: MultichannelAudio, labels, num_classes: int,
                   window: int, frames: int) -> SceneFeatures:
    chunks, mask, hop = extract_features(audio, window, frames)
    total_frames = int(mask.sum())
    roll = labels_to_roll(labels, hop, total_frames, num_classes)
    return SceneFeatures(chunks.astype(np.float32), mask, roll, hop)


def synthesize_scene_set(params: SceneParams, count: int, seed: int,
                         window: int, frames: int,
                         workers: int | None = None) -> SceneSet:
    """Render and featurise ``count`` scenes, seeds ``seed .. seed+count-1``."""
    specs = [sample_scene(params, seed + i) for i in range(count)]

    def build(spec):
        audio = render_scene(spec)
        labels = [(e.class_id, e.onset, e.offset) for e in spec.events]
        return scene_features(audio, labels, params.num_classes, window, frames)

    with ThreadPoolExecutor(max_workers=worker_count(workers)) as pool:
        scenes = list(pool.map(build, specs))
    return SceneSet(scenes)


def scene_set_from_manifest(manifest_path, split: str, num_classes: int,
                            window: int, frames: int,
                            workers: int | None = None) -> SceneSet:
    """Load and featurise every manifest row whose split label matches.

    Rows pointing at ``.npz`` files are treated as cached features (see
    :func:`cache_features`) and loaded directly.
    """
    rows = [r for r in read_manifest(manifest_path) if r[2] == split]
    if not rows:
        raise ValueError(f"manifest {manifest_path} has no rows for split {split!r}")

    def build(row):
        audio_path, label_path, _ = row
        if audio_path.endswith(".npz"):
            data = np.load(audio_path)
            return SceneFeatures(data["chunks"], data["mask"].astype(bool),
                                 data["roll"], float(data["hop_seconds"]))
        audio = load_audio(audio_path)
        labels = read_labels(label_path)
        return scene_features(audio, labels, num_classes, window, frames)

    with ThreadPoolExecutor(max_workers=worker_count(workers)) as pool:
        scenes = list(pool.map(build, rows))
    return SceneSet(scenes)


def cache_features(manifest_path, out_dir, num_classes: int, window: int,
                   frames: int, workers: int | None = None) -> Path:
    """Extract features for every manifest row into ``.npz`` files and write
    a cache manifest next to them.

    Each archive holds ``chunks`` [n, frames, freq, channels] float32,
    ``mask`` [n, frames] bool, ``roll`` [total_frames, classes] uint8 and
    the scalar ``hop_seconds``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = read_manifest(manifest_path)

    def build(row):
        audio_path, label_path, split = row
        sf = scene_features(load_audio(audio_path), read_labels(label_path),
                            num_classes, window, frames)
        path = out_dir / (Path(audio_path).stem + ".npz")
        np.savez(path, chunks=sf.chunks, mask=sf.mask, roll=sf.roll,
                 hop_seconds=sf.hop_seconds)
        return str(path), split

    with ThreadPoolExecutor(max_workers=worker_count(workers)) as pool:
        cached = list(pool.map(build, rows))
    cache_manifest = out_dir / "features_manifest.csv"
    with open(cache_manifest, "w", newline="") as fh:
        import csv

        writer = csv.writer(fh)
        for path, split in cached:
            writer.writerow([path, "-", split])
    return cache_manifest


def evaluate_scene_set(model: SedModel, scene_set: SceneSet, threshold: float,
                       segment_seconds: float = 1.0,
                       batch_size: int = 16) -> tuple[dict, SegmentCounts, dict]:
    """Per-recording evaluation on the reassembled timeline.

    Returns (segment metrics, pooled counts, sequence-level any-frame
    report).  The sequence report treats each chunk as one sequence and a
    class as detected if any of its frame probabilities clears the
    threshold.
    """
    pooled = SegmentCounts()
    seq_tp = seq_fp = seq_fn = 0
    for scene in scene_set.scenes:
        parts = []
        for start in range(0, len(scene.chunks), batch_size):
            parts.append(model.forward(scene.chunks[start:start + batch_size],
                                       train=False, cache=False))
        probs = np.concatenate(parts)
        rolls = predict_events(probs, threshold)
        padded_ref, _ = chunk_sequences(scene.roll, scene.chunks.shape[1])
        seq_est = rolls.max(axis=1).astype(bool)
        seq_ref = padded_ref.astype(bool).max(axis=1)
        seq_tp += int((seq_est & seq_ref).sum())
        seq_fp += int((seq_est & ~seq_ref).sum())
        seq_fn += int((~seq_est & seq_ref).sum())
        est_timeline = np.concatenate(
            [rolls[i][scene.mask[i]] for i in range(len(rolls))])
        pooled = pooled.merge(segment_counts(
            EventRoll(scene.roll, scene.hop_seconds),
            EventRoll(est_timeline, scene.hop_seconds), segment_seconds))
    metrics = metrics_from_counts(pooled)
    denom = 2 * seq_tp + seq_fp + seq_fn
    sequence_report = {
        "tp": seq_tp, "fp": seq_fp, "fn": seq_fn,
        "f1": 2 * seq_tp / denom if denom else 0.0,
    }
    return metrics, pooled, sequence_report


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment run needs; mirrors the CLI flags."""

    # data: either a manifest or synthetic generation parameters
    manifest: str | None = None
    scenes_train: int = 40
    scenes_test: int = 10
    scene_duration: float = 10.0
    sample_rate: int = 16000
    mics: int = 4
    num_classes: int = 4
    max_overlap: int = 2
    events_per_scene: int = 10
    event_duration: tuple[float, float] = (0.4, 2.5)
    # features
    window: int = 256
    frames: int = 128
    # architecture
    se_variant: str = "none"
    aggregation: str = "max"
    reduction_ratio: int = 8
    squeeze_op: str = "avg"
    excite_op: str = "sigmoid"
    conv_filters: int = 64
    gru_units: int = 128
    fc_units: int = 128
    pool_widths: tuple[int, ...] = (8, 8, 2)
    precision: str = "f32"
    # training
    epochs: int = 1000
    batch_size: int = 64
    learning_rate: float = 1e-3
    patience: int = 100
    threshold: float = 0.5
    val_fraction: float = 0.1
    monitor: str = "heldout"  # or 'test'
    segment_seconds: float = 1.0
    seed: int = 0
    splits: int = 1
    workers: int | None = None

    def scene_params(self) -> SceneParams:
        return SceneParams(num_events=self.events_per_scene,
                           num_classes=self.num_classes,
                           duration=self.scene_duration,
                           sample_rate=self.sample_rate, mics=self.mics,
                           max_overlap=self.max_overlap,
                           event_duration=self.event_duration)

    def crnn_config(self, freq_bins: int, in_channels: int, seed: int) -> CrnnConfig:
        return CrnnConfig(frames=self.frames, freq_bins=freq_bins,
                          in_channels=in_channels, conv_filters=self.conv_filters,
                          pool_widths=tuple(self.pool_widths),
                          gru_units=self.gru_units, fc_units=self.fc_units,
                          num_classes=self.num_classes,
                          se=se_config_from_flags(self.se_variant, self.aggregation,
                                                  self.reduction_ratio, self.squeeze_op,
                                                  self.excite_op),
                          precision=self.precision, seed=seed)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, patience=self.patience,
                           threshold=self.threshold, seed=seed,
                           segment_seconds=self.segment_seconds)


def load_or_synthesize(cfg: ExperimentConfig, split_index: int) -> tuple[SceneSet, SceneSet]:
    """(train, test) scene sets for one cross-validation split."""
    if cfg.manifest:
        suffix = str(split_index) if cfg.splits > 1 else ""
        return (scene_set_from_manifest(cfg.manifest, "train" + suffix,
                                        cfg.num_classes, cfg.window, cfg.frames,
                                        cfg.workers),
                scene_set_from_manifest(cfg.manifest, "test" + suffix,
                                        cfg.num_classes, cfg.window, cfg.frames,
                                        cfg.workers))
    base = cfg.seed + 1000 * split_index
    params = cfg.scene_params()
    train_set = synthesize_scene_set(params, cfg.scenes_train, base,
                                     cfg.window, cfg.frames, cfg.workers)
    test_set = synthesize_scene_set(params, cfg.scenes_test,
                                    base + cfg.scenes_train,
                                    cfg.window, cfg.frames, cfg.workers)
    return train_set, test_set


def run_split(cfg: ExperimentConfig, split_index: int, epoch_callback=None) -> dict:
    """Train and evaluate one split; returns metrics and artefacts."""
    train_set, test_set = load_or_synthesize(cfg, split_index)
    split = train_set.to_split()
    seed = cfg.seed + 1000 * split_index

    if cfg.monitor == "test":
        val_split = test_set.to_split()
        train_part = split
    else:
        n_val = max(1, int(round(cfg.val_fraction * len(split))))
        if len(split) - n_val < 1:
            raise ValueError("too few training sequences for a held-out validation set")
        order = np.random.default_rng(seed).permutation(len(split))
        val_idx, train_idx = order[:n_val], order[n_val:]
        val_split = DataSplit(split.x[val_idx], split.y[val_idx],
                              None if split.mask is None else split.mask[val_idx],
                              split.hop_seconds)
        train_part = DataSplit(split.x[train_idx], split.y[train_idx],
                               None if split.mask is None else split.mask[train_idx],
                               split.hop_seconds)

    sample = train_set.scenes[0].chunks
    model = build_model(cfg.crnn_config(sample.shape[2], sample.shape[3], seed))
    result = train(model, train_part, val_split, cfg.train_config(seed),
                   epoch_callback=epoch_callback)
    metrics, counts, sequence_report = evaluate_scene_set(
        model, test_set, cfg.threshold, cfg.segment_seconds)
    return {
        "split": split_index,
        "metrics": metrics,
        "counts": counts,
        "sequence_report": sequence_report,
        "history": result.history,
        "best_epoch": result.best_epoch,
        "model": model,
        "n_parameters": count_parameters(model),
    }


def run_experiment(cfg: ExperimentConfig, epoch_callback=None) -> dict:
    """Run every split and average the test metrics."""
    results = [run_split(cfg, i, epoch_callback) for i in range(cfg.splits)]
    mean = {key: float(np.mean([r["metrics"][key] for r in results]))
            for key in ("F1", "ER", "S_SED")}
    return {"splits": results, "mean": mean,
            "n_parameters": results[0]["n_parameters"]}
