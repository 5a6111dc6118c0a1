"""Waveform to network-input feature maps.

Pipeline: Hamming-windowed frames with 50% overlap, per-frame magnitude and
phase spectra with the zeroth bin dropped, magnitude and phase of all
microphones stacked along the channel axis, per-frame per-channel mean and
variance normalisation over the frequency axis, and finally chunking into
fixed-length sequences with a validity mask for the zero-padded tail.

With the defaults (window 512, 8 microphones) each frame yields a
256 x 16 feature matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .audio_io import MultichannelAudio

DEFAULT_WINDOW = 512
DEFAULT_FRAMES = 256
NORM_EPS = 1e-8


def hamming_window(length: int) -> np.ndarray:
    """Symmetric Hamming window, w[n] = 0.54 - 0.46 cos(2 pi n / (M - 1))."""
    return np.hamming(length)


def frame_and_window(audio: MultichannelAudio, window: int) -> np.ndarray:
    """Split into half-overlapping Hamming-windowed frames: [T, M, mics]."""
    if window % 2:
        raise ValueError(f"window length must be even, got {window}")
    if audio.num_samples < window:
        raise ValueError(f"audio has {audio.num_samples} samples, shorter than one "
                         f"window of {window}")
    hop = window // 2
    num_frames = (audio.num_samples - window) // hop + 1
    taper = hamming_window(window)
    frames = np.empty((num_frames, window, audio.num_channels))
    for t in range(num_frames):
        start = t * hop
        frames[t] = audio.samples[:, start:start + window].T * taper[:, None]
    return frames


def stft_mag_phase(frames: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame real DFT magnitude and phase, zeroth bin excluded.

    Input frames are already windowed: [T, M, mics].  Returns two
    [T, M/2, mics] arrays; phase lies in (-pi, pi] and is 0 where the
    spectrum vanishes.
    """
    spectrum = np.fft.rfft(frames, axis=1)[:, 1:, :]
    return np.abs(spectrum), np.angle(spectrum)


def assemble_features(magnitude: np.ndarray, phase: np.ndarray) -> np.ndarray:
    """Stack channels as [mag mic1..K, phase mic1..K] and normalise.

    Normalisation is per frame and per channel across the frequency axis;
    a frame-channel with (near-)zero variance is divided by ``NORM_EPS``,
    which maps a constant spectrum to all-zero features.
    """
    if magnitude.shape != phase.shape:
        raise ValueError(f"magnitude {magnitude.shape} and phase {phase.shape} disagree")
    stacked = np.concatenate([magnitude, phase], axis=2)
    mean = stacked.mean(axis=1, keepdims=True)
    std = stacked.std(axis=1, keepdims=True)
    return (stacked - mean) / np.maximum(std, NORM_EPS)


def chunk_sequences(features: np.ndarray, frames: int) -> tuple[np.ndarray, np.ndarray]:
    """Cut [T_total, F, C] into non-overlapping [n, frames, F, C] chunks.

    The final partial chunk is zero-padded; the returned boolean mask
    [n, frames] is False on padded frames.
    """
    if frames < 1:
        raise ValueError(f"chunk length must be >= 1, got {frames}")
    total = features.shape[0]
    count = max(1, -(-total // frames))
    chunks = np.zeros((count, frames) + features.shape[1:], dtype=features.dtype)
    mask = np.zeros((count, frames), dtype=bool)
    for i in range(count):
        start = i * frames
        span = min(frames, total - start)
        chunks[i, :span] = features[start:start + span]
        mask[i, :span] = True
    return chunks, mask


def extract_features(audio: MultichannelAudio, window: int = DEFAULT_WINDOW,
                     frames: int = DEFAULT_FRAMES) -> tuple[np.ndarray, np.ndarray, float]:
    """Full pipeline; returns (chunks [n, frames, M/2, 2*mics], mask, hop seconds)."""
    mag, phase = stft_mag_phase(frame_and_window(audio, window))
    chunks, mask = chunk_sequences(assemble_features(mag, phase), frames)
    return chunks, mask, (window // 2) / audio.sample_rate


@dataclass
class FeatureSet:
    """Extracted features for one recording."""

    chunks: np.ndarray
    mask: np.ndarray
    hop_seconds: float

    @property
    def num_frames(self) -> int:
        return int(self.mask.sum())

    def flatten_valid(self, per_chunk: np.ndarray) -> np.ndarray:
        """Concatenate per-chunk frame data back to the recording timeline."""
        return np.concatenate([per_chunk[i][self.mask[i]] for i in range(len(per_chunk))])


class SpectrogramFeatures(BaseEstimator, TransformerMixin):
    """Stateless sklearn-style transformer over multi-channel audio.

    ``transform`` maps a list of :class:`MultichannelAudio` to a list of
    :class:`FeatureSet`.  ``fit`` is a no-op kept for pipeline compatibility.
    """

    def __init__(self, window: int = DEFAULT_WINDOW, frames: int = DEFAULT_FRAMES):
        self.window = window
        self.frames = frames

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        out = []
        for audio in X:
            chunks, mask, hop = extract_features(audio, self.window, self.frames)
            out.append(FeatureSet(chunks, mask, hop))
        return out
