import numpy as np
import pytest

from tfcse.audio_io import (
    MultichannelAudio,
    load_audio,
    read_raw_f32,
    read_wav,
    write_raw_f32,
    write_wav,
)
from tfcse.features import (
    SpectrogramFeatures,
    assemble_features,
    chunk_sequences,
    extract_features,
    frame_and_window,
    hamming_window,
    stft_mag_phase,
)


def tone(freq, sr=8000, seconds=1.0, mics=1, amp=0.5):
    t = np.arange(int(sr * seconds)) / sr
    sig = amp * np.sin(2 * np.pi * freq * t)
    return MultichannelAudio(np.tile(sig, (mics, 1)), sr)


def naive_rdft(frame):
    """O(M^2) reference DFT, bins 0..M/2."""
    m = len(frame)
    bins = m // 2 + 1
    out = np.empty(bins, dtype=complex)
    n = np.arange(m)
    for k in range(bins):
        out[k] = np.sum(frame * np.exp(-2j * np.pi * k * n / m))
    return out


class TestWindow:
    def test_endpoint_value(self):
        for m in (64, 256, 512):
            assert abs(hamming_window(m)[0] - 0.08) < 1e-12

    def test_peak_near_one(self):
        w = hamming_window(512)
        assert w[255] == pytest.approx(1.0, abs=1e-4)
        assert w.max() <= 1.0 + 1e-12

    def test_symmetry(self):
        w = hamming_window(128)
        np.testing.assert_allclose(w, w[::-1], atol=1e-15)


class TestFraming:
    def test_frame_count(self):
        m = 64
        audio = MultichannelAudio(np.zeros((1, 2 * m)), 8000)
        frames = frame_and_window(audio, m)
        assert frames.shape == (3, m, 1)

    def test_constant_signal_yields_window(self):
        m = 32
        audio = MultichannelAudio(np.ones((2, 3 * m)), 8000)
        frames = frame_and_window(audio, m)
        for t in range(frames.shape[0]):
            np.testing.assert_allclose(frames[t, :, 0], hamming_window(m))
            np.testing.assert_allclose(frames[t, :, 1], hamming_window(m))

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            frame_and_window(MultichannelAudio(np.zeros((1, 100)), 8000), 128)

    def test_hop_shift_moves_frames_by_one(self):
        rng = np.random.default_rng(0)
        m = 64
        sig = rng.uniform(-1, 1, 10 * m)
        a = frame_and_window(MultichannelAudio(sig[None, :], 8000), m)
        b = frame_and_window(MultichannelAudio(sig[None, m // 2:], 8000), m)
        np.testing.assert_allclose(b[:-1], a[1:b.shape[0]], atol=1e-15)


class TestStft:
    def test_pure_cosine_hits_single_bin(self):
        # rectangular frames (built directly, no taper) make the bin exact
        m, k = 64, 7
        n = np.arange(m)
        frame = np.cos(2 * np.pi * k * n / m)[None, :, None]
        mag, _ = stft_mag_phase(frame)
        assert mag[0, k - 1, 0] == pytest.approx(m / 2, rel=1e-12)
        others = np.delete(mag[0, :, 0], k - 1)
        assert np.all(others < 1e-9)

    def test_zero_signal_zero_phase(self):
        mag, phase = stft_mag_phase(np.zeros((2, 32, 1)))
        np.testing.assert_array_equal(mag, 0.0)
        np.testing.assert_array_equal(phase, 0.0)

    def test_phase_range(self):
        rng = np.random.default_rng(1)
        _, phase = stft_mag_phase(rng.uniform(-1, 1, (4, 64, 2)))
        assert np.all(phase > -np.pi - 1e-12) and np.all(phase <= np.pi + 1e-12)

    def test_matches_naive_dft(self):
        rng = np.random.default_rng(2)
        m = 48
        frames = rng.uniform(-1, 1, (3, m, 2))
        mag, phase = stft_mag_phase(frames)
        for t in range(3):
            for ch in range(2):
                ref = naive_rdft(frames[t, :, ch])[1:]
                np.testing.assert_allclose(mag[t, :, ch], np.abs(ref), atol=1e-9)
                # circular distance: avoids the +/- pi branch cut on
                # real-negative bins
                wrap = np.angle(np.exp(1j * (phase[t, :, ch] - np.angle(ref))))
                np.testing.assert_allclose(wrap, 0.0, atol=1e-9)

    def test_parseval(self):
        # energy identity on the full spectrum, before the zeroth bin drop
        rng = np.random.default_rng(3)
        m = 128
        audio = MultichannelAudio(rng.uniform(-1, 1, (1, 4 * m)), 8000)
        frames = frame_and_window(audio, m)
        for t in range(frames.shape[0]):
            x = frames[t, :, 0]
            spectrum = np.fft.fft(x)
            assert np.sum(x * x) == pytest.approx(np.sum(np.abs(spectrum) ** 2) / m,
                                                  abs=1e-9)


class TestAssemble:
    def test_channel_count_and_order(self):
        mag = np.random.default_rng(4).uniform(0.1, 1.0, (5, 16, 3))
        phase = np.random.default_rng(5).uniform(-3, 3, (5, 16, 3))
        feats = assemble_features(mag, phase)
        assert feats.shape == (5, 16, 6)
        # de-interleaving recovers the per-mic normalised planes
        for mic in range(3):
            m = mag[:, :, mic]
            expected = (m - m.mean(1, keepdims=True)) / np.maximum(
                m.std(1, keepdims=True), 1e-8)
            np.testing.assert_allclose(feats[:, :, mic], expected)
            p = phase[:, :, mic]
            expected = (p - p.mean(1, keepdims=True)) / np.maximum(
                p.std(1, keepdims=True), 1e-8)
            np.testing.assert_allclose(feats[:, :, 3 + mic], expected)

    def test_default_shape(self):
        audio = tone(440, sr=44100, seconds=2.0, mics=8)
        chunks, mask, hop = extract_features(audio, window=512, frames=256)
        assert chunks.shape[2:] == (256, 16)
        assert hop == pytest.approx(256 / 44100)

    def test_constant_frame_is_zeroed(self):
        mag = np.full((2, 8, 1), 3.0)
        phase = np.zeros((2, 8, 1))
        feats = assemble_features(mag, phase)
        np.testing.assert_array_equal(feats, 0.0)

    def test_normalisation_moments(self):
        rng = np.random.default_rng(6)
        feats = assemble_features(rng.uniform(0.5, 2.0, (4, 64, 2)),
                                  rng.uniform(-3, 3, (4, 64, 2)))
        np.testing.assert_allclose(feats.mean(axis=1), 0.0, atol=1e-6)
        np.testing.assert_allclose(feats.var(axis=1), 1.0, atol=1e-6)


class TestChunking:
    def test_exact_division(self):
        chunks, mask = chunk_sequences(np.ones((512, 4, 2)), 256)
        assert chunks.shape == (2, 256, 4, 2)
        assert mask.all()

    def test_padded_tail(self):
        chunks, mask = chunk_sequences(np.ones((300, 4, 2)), 256)
        assert chunks.shape[0] == 2
        assert mask[0].all()
        assert mask[1, :44].all() and not mask[1, 44:].any()
        np.testing.assert_array_equal(chunks[1, 44:], 0.0)

    def test_chunk_duration(self):
        hop_seconds = 256 / 44100
        assert 256 * hop_seconds == pytest.approx(1.486, abs=5e-4)


class TestAudioIO:
    def test_wav_float32_roundtrip(self, tmp_path):
        audio = tone(500, mics=3)
        path = tmp_path / "a.wav"
        write_wav(path, audio, "float32")
        back = read_wav(path)
        assert back.sample_rate == audio.sample_rate
        np.testing.assert_allclose(back.samples, audio.samples, atol=1e-7)

    def test_wav_pcm16_roundtrip(self, tmp_path):
        audio = tone(500, mics=2)
        path = tmp_path / "a.wav"
        write_wav(path, audio, "pcm16")
        back = read_wav(path)
        np.testing.assert_allclose(back.samples, audio.samples, atol=1e-4)

    def test_raw_roundtrip(self, tmp_path):
        audio = tone(431, mics=4)
        path = tmp_path / "a.f32"
        write_raw_f32(path, audio)
        back = read_raw_f32(path)
        assert back.sample_rate == audio.sample_rate
        np.testing.assert_allclose(back.samples, audio.samples, atol=1e-7)
        assert load_audio(path).samples.shape == audio.samples.shape


class TestTransformer:
    def test_sklearn_surface(self):
        tr = SpectrogramFeatures(window=128, frames=32)
        assert tr.get_params() == {"window": 128, "frames": 32}
        out = tr.fit([]).transform([tone(300, seconds=0.5)])
        assert len(out) == 1
        assert out[0].chunks.shape[1] == 32
        assert out[0].chunks.shape[3] == 2

    def test_flatten_valid_roundtrip(self):
        tr = SpectrogramFeatures(window=64, frames=50)
        fs = tr.transform([tone(300, seconds=0.9)])[0]
        flat = fs.flatten_valid(fs.chunks)
        assert flat.shape[0] == fs.num_frames
