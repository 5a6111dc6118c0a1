"""Synthetic labelled multi-channel polyphonic audio scenes.

Each scene is a sum of parameterised events (tones, chirps, noise bursts,
amplitude-modulated tones) with known onsets and offsets.  Every class is
assigned its own base frequency band so classes stay separable by a small
model.  A circular-array style multi-microphone recording is emulated by
per-event per-microphone integer sample delays (up to 8 samples) and gains
in [0.7, 1.0]; there is no room simulation unless the optional decay tail
is enabled.

Everything is deterministic given the seed: scene sampling, per-microphone
placement and noise realisations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import MultichannelAudio, write_raw_f32, write_wav
from .errors import GenerationError

EVENT_KINDS = ("tone", "chirp", "noise-burst", "am-tone")
MAX_DELAY_SAMPLES = 8
GAIN_RANGE = (0.7, 1.0)
EDGE_RAMP_SECONDS = 0.005


@dataclass(frozen=True)
class EventSpec:
    class_id: int
    onset: float
    offset: float
    kind: str
    freq: float
    bandwidth: float
    level: float

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if not 0 <= self.onset < self.offset:
            raise ValueError(f"bad interval [{self.onset}, {self.offset})")


@dataclass
class SceneSpec:
    duration: float = 30.0
    sample_rate: int = 44100
    mics: int = 8
    max_overlap: int = 3
    events: list[EventSpec] = field(default_factory=list)
    seed: int = 0


@dataclass(frozen=True)
class SceneParams:
    """Knobs for random scene sampling."""

    num_events: int = 12
    num_classes: int = 11
    duration: float = 30.0
    sample_rate: int = 44100
    mics: int = 8
    max_overlap: int = 3
    event_duration: tuple[float, float] = (0.4, 2.5)
    level: tuple[float, float] = (0.25, 0.7)


def class_base_frequency(class_id: int, num_classes: int, sample_rate: int) -> float:
    """Distinct per-class frequency, placed inside (8%, 88%) of Nyquist."""
    nyquist = sample_rate / 2
    return nyquist * (0.08 + 0.8 * (class_id + 0.5) / num_classes)


def class_kind(class_id: int) -> str:
    return EVENT_KINDS[class_id % len(EVENT_KINDS)]


def _overlap_ok(events: list[EventSpec], candidate: EventSpec, cap: int) -> bool:
    edges = sorted({candidate.onset, candidate.offset}
                   | {e.onset for e in events} | {e.offset for e in events})
    for a, b in zip(edges[:-1], edges[1:]):
        mid = (a + b) / 2
        count = sum(1 for e in events + [candidate] if e.onset <= mid < e.offset)
        if count > cap:
            return False
    return True


def sample_scene(params: SceneParams, seed: int) -> SceneSpec:
    """Draw a random scene whose instantaneous polyphony never exceeds the
    overlap cap; rejection sampling with a bounded retry budget."""
    if params.max_overlap < 1:
        raise ValueError("overlap cap must be >= 1")
    rng = np.random.default_rng(seed)
    events: list[EventSpec] = []
    retries = 200 * max(1, params.num_events)
    while len(events) < params.num_events:
        if retries <= 0:
            raise GenerationError(
                f"could not place {params.num_events} events of "
                f"{params.event_duration} s within {params.duration} s under "
                f"overlap cap {params.max_overlap}")
        retries -= 1
        length = rng.uniform(*params.event_duration)
        if length >= params.duration:
            continue
        onset = rng.uniform(0.0, params.duration - length)
        class_id = int(rng.integers(params.num_classes))
        candidate = EventSpec(
            class_id=class_id,
            onset=float(onset),
            offset=float(onset + length),
            kind=class_kind(class_id),
            freq=class_base_frequency(class_id, params.num_classes, params.sample_rate),
            bandwidth=float(rng.uniform(0.05, 0.15)),
            level=float(rng.uniform(*params.level)))
        if _overlap_ok(events, candidate, params.max_overlap):
            events.append(candidate)
    events.sort(key=lambda e: e.onset)
    return SceneSpec(duration=params.duration, sample_rate=params.sample_rate,
                     mics=params.mics, max_overlap=params.max_overlap,
                     events=events, seed=seed)


def _event_signal(event: EventSpec, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    length = int(round((event.offset - event.onset) * sample_rate))
    t = np.arange(length) / sample_rate
    if event.kind == "tone":
        sig = np.sin(2 * np.pi * event.freq * t)
    elif event.kind == "chirp":
        f1 = event.freq * (1.0 + event.bandwidth)
        sweep = event.freq + (f1 - event.freq) * t / max(t[-1], 1e-9) if length > 1 \
            else np.full(length, event.freq)
        sig = np.sin(2 * np.pi * np.cumsum(sweep) / sample_rate)
    elif event.kind == "noise-burst":
        sig = rng.standard_normal(length)
        # crude band shaping around the class frequency
        carrier = np.sin(2 * np.pi * event.freq * t)
        sig = 0.5 * sig * np.abs(carrier) + 0.5 * carrier
        sig /= max(np.abs(sig).max(), 1e-9)
    else:  # am-tone
        mod = 1.0 + 0.8 * np.sin(2 * np.pi * 6.0 * t)
        sig = np.sin(2 * np.pi * event.freq * t) * mod / 1.8
    ramp = min(int(EDGE_RAMP_SECONDS * sample_rate), length // 2)
    if ramp > 0:
        envelope = np.ones(length)
        envelope[:ramp] = np.linspace(0.0, 1.0, ramp, endpoint=False)
        envelope[length - ramp:] = np.linspace(1.0, 0.0, ramp)
        sig = sig * envelope
    return event.level * sig


def render_scene(spec: SceneSpec, decay_tail: float = 0.0) -> MultichannelAudio:
    """Render all events and place them on every microphone with the
    per-event delay and gain.  If the mixture clips, the whole scene is
    rescaled to 0.99 full scale and the applied factor is recorded on the
    returned object as ``render_scale`` (1.0 when nothing clipped).

    ``decay_tail`` optionally appends an exponentially decaying echo with
    the given time constant in seconds (off by default).
    """
    sr = spec.sample_rate
    total = int(round(spec.duration * sr))
    out = np.zeros((spec.mics, total))
    rng = np.random.default_rng((spec.seed, 0xA0D10))
    for event in spec.events:
        sig = _event_signal(event, sr, rng)
        if decay_tail > 0:
            kernel_len = min(int(3 * decay_tail * sr), total)
            kernel = np.exp(-np.arange(kernel_len) / (decay_tail * sr))
            sig = np.convolve(sig, kernel)[:len(sig) + kernel_len]
            sig *= event.level / max(np.abs(sig).max(), 1e-9)
        delays = rng.integers(0, MAX_DELAY_SAMPLES + 1, size=spec.mics)
        gains = rng.uniform(*GAIN_RANGE, size=spec.mics)
        delays[0] = 0
        gains[0] = 1.0
        start = int(round(event.onset * sr))
        for mic in range(spec.mics):
            lo = start + int(delays[mic])
            hi = min(lo + len(sig), total)
            if lo < total:
                out[mic, lo:hi] += gains[mic] * sig[:hi - lo]
    scale = 1.0
    peak = np.abs(out).max()
    if peak > 1.0:
        scale = 0.99 / peak
        out *= scale
    audio = MultichannelAudio(out, sr)
    audio.render_scale = scale
    return audio


def scene_to_roll(spec: SceneSpec, frame_hop_seconds: float, num_frames: int,
                  num_classes: int) -> np.ndarray:
    """Frame-level targets: frame t of class n is active iff the frame's
    centre time (t + 0.5) * hop falls inside one of the class's events."""
    roll = np.zeros((num_frames, num_classes), dtype=np.uint8)
    centers = (np.arange(num_frames) + 0.5) * frame_hop_seconds
    for event in spec.events:
        hit = (centers >= event.onset) & (centers < event.offset)
        roll[hit, event.class_id] = 1
    return roll


# -- on-disk dataset -------------------------------------------------------

def write_labels(path, spec: SceneSpec) -> None:
    """Label CSV: one ``class_id,onset_seconds,offset_seconds`` row per event."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for event in spec.events:
            writer.writerow([event.class_id, f"{event.onset:.6f}", f"{event.offset:.6f}"])


def read_labels(path) -> list[tuple[int, float, float]]:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if row:
                rows.append((int(row[0]), float(row[1]), float(row[2])))
    return rows


def labels_to_roll(labels: list[tuple[int, float, float]], frame_hop_seconds: float,
                   num_frames: int, num_classes: int) -> np.ndarray:
    """Same frame-centre rule as :func:`scene_to_roll`, from a label file."""
    roll = np.zeros((num_frames, num_classes), dtype=np.uint8)
    centers = (np.arange(num_frames) + 0.5) * frame_hop_seconds
    for class_id, onset, offset in labels:
        hit = (centers >= onset) & (centers < offset)
        roll[hit, class_id] = 1
    return roll


def write_manifest(path, rows: list[tuple[str, str, str]]) -> None:
    """Manifest CSV: ``audio_path,label_path,split`` per line."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in rows:
            writer.writerow(row)


def read_manifest(path) -> list[tuple[str, str, str]]:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if row:
                rows.append((row[0], row[1], row[2]))
    return rows


def synthesize_dataset(out_dir, params: SceneParams, scenes_per_split: dict[str, int],
                       seed: int = 0, audio_format: str = "wav") -> Path:
    """Render ``{split: count}`` scenes to audio (``wav`` float32 or raw
    ``f32`` planar) plus label CSV files under ``out_dir`` and return the
    manifest path."""
    if audio_format not in ("wav", "f32"):
        raise ValueError(f"audio format must be 'wav' or 'f32', got {audio_format!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    scene_index = 0
    for split, count in scenes_per_split.items():
        for _ in range(count):
            spec = sample_scene(params, seed + scene_index)
            audio = render_scene(spec)
            stem = f"scene_{split}_{scene_index:04d}"
            audio_path = out_dir / f"{stem}.{audio_format}"
            label_path = out_dir / f"{stem}.csv"
            if audio_format == "wav":
                write_wav(audio_path, audio, "float32")
            else:
                write_raw_f32(audio_path, audio)
            write_labels(label_path, spec)
            rows.append((str(audio_path), str(label_path), split))
            scene_index += 1
    manifest = out_dir / "manifest.csv"
    write_manifest(manifest, rows)
    return manifest
