"""Multi-channel audio file reading and writing.

Two on-disk formats are supported:

* RIFF WAVE, interleaved, 16-bit PCM or 32-bit IEEE float;
* raw planar float32 little-endian (``.f32``) with a one-line sidecar
  header ``<path>.hdr`` containing ``channels,sample_rate,num_samples``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class MultichannelAudio:
    """Samples are ``[channels, num_samples]`` float arrays in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples))
        if self.samples.ndim != 2:
            raise ValueError(f"samples must be [channels, num_samples], got {self.samples.shape}")
        if not np.isfinite(self.samples).all():
            raise ValueError("audio contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate


def write_wav(path, audio: MultichannelAudio, bit_depth: str = "float32") -> None:
    """Write an interleaved RIFF WAVE file (``pcm16`` or ``float32``)."""
    if bit_depth not in ("pcm16", "float32"):
        raise ValueError(f"unsupported bit depth {bit_depth!r}")
    interleaved = np.ascontiguousarray(audio.samples.T)
    channels = audio.num_channels
    if bit_depth == "pcm16":
        fmt_code, bits = 1, 16
        clipped = np.clip(interleaved, -1.0, 1.0)
        payload = (clipped * 32767.0).round().astype("<i2").tobytes()
    else:
        fmt_code, bits = 3, 32
        payload = interleaved.astype("<f4").tobytes()
    block_align = channels * bits // 8
    byte_rate = audio.sample_rate * block_align
    with open(path, "wb") as fh:
        fh.write(b"RIFF")
        fh.write(struct.pack("<I", 4 + 24 + 8 + len(payload)))
        fh.write(b"WAVE")
        fh.write(b"fmt ")
        fh.write(struct.pack("<IHHIIHH", 16, fmt_code, channels, audio.sample_rate,
                             byte_rate, block_align, bits))
        fh.write(b"data")
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)


def read_wav(path) -> MultichannelAudio:
    """Read an interleaved RIFF WAVE file (16-bit PCM or 32-bit float)."""
    with open(path, "rb") as fh:
        riff, _, wave = struct.unpack("<4sI4s", fh.read(12))
        if riff != b"RIFF" or wave != b"WAVE":
            raise ValueError(f"{path} is not a RIFF WAVE file")
        fmt = None
        data = None
        while True:
            header = fh.read(8)
            if len(header) < 8:
                break
            chunk_id, size = struct.unpack("<4sI", header)
            body = fh.read(size)
            if size % 2:
                fh.read(1)  # chunks are word-aligned
            if chunk_id == b"fmt ":
                fmt = struct.unpack("<HHIIHH", body[:16])
            elif chunk_id == b"data":
                data = body
        if fmt is None or data is None:
            raise ValueError(f"{path} is missing fmt or data chunk")
    fmt_code, channels, sample_rate, _, _, bits = fmt
    if fmt_code == 1 and bits == 16:
        flat = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32767.0
    elif fmt_code == 3 and bits == 32:
        flat = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise ValueError(f"unsupported WAVE encoding: format {fmt_code}, {bits} bits")
    frames = flat.size // channels
    samples = flat[:frames * channels].reshape(frames, channels).T
    return MultichannelAudio(samples, sample_rate)


def _sidecar(path) -> Path:
    return Path(str(path) + ".hdr")


def write_raw_f32(path, audio: MultichannelAudio) -> None:
    """Write planar float32 little-endian samples plus the sidecar header."""
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(audio.samples).astype("<f4").tobytes())
    _sidecar(path).write_text(
        f"{audio.num_channels},{audio.sample_rate},{audio.num_samples}\n")


def read_raw_f32(path) -> MultichannelAudio:
    header = _sidecar(path).read_text().strip()
    channels, sample_rate, num_samples = (int(v) for v in header.split(","))
    flat = np.fromfile(path, dtype="<f4")
    if flat.size != channels * num_samples:
        raise ValueError(f"{path}: expected {channels * num_samples} samples, found {flat.size}")
    return MultichannelAudio(flat.astype(np.float64).reshape(channels, num_samples),
                             sample_rate)


def load_audio(path) -> MultichannelAudio:
    """Dispatch on extension: ``.wav`` or raw float32 (anything else)."""
    if str(path).lower().endswith(".wav"):
        return read_wav(path)
    return read_raw_f32(path)
