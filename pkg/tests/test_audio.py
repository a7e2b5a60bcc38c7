import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcdance.audio import (AudioBuffer, AudioError, assemble_features, detect_music_beats, encode_gcem,
                           load_embeddings, read_wav, render_beat_track, render_click_track, save_embeddings, stft_features,
                           write_wav)


def test_four_seconds_gives_120_rows():
    assert stft_features(AudioBuffer(22050, np.zeros(4 * 22050)), 30).shape == (120, 513)


def test_silence_is_zero():
    assert np.all(stft_features(AudioBuffer(16000, np.zeros(16000)), 30) == 0.0)


def test_sine_peak_bin():
    sr = 22050
    t = np.arange(2 * sr) / sr
    feats = stft_features(AudioBuffer(sr, 0.5 * np.sin(2 * np.pi * 440 * t)), 30, 1024)
    assert np.all(np.argmax(feats[2:-2], axis=1) == round(440 * 1024 / sr))


def test_log_magnitude_matches_direct_dft():
    sr, fps, n_fft = 8000, 25, 256
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, sr)
    feats = stft_features(AudioBuffer(sr, x), fps, n_fft)
    hop = sr // fps
    i = 7
    start = i * hop - n_fft // 2
    seg = x[start:start + n_fft] * (0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n_fft) / n_fft))
    dft = np.exp(-2j * np.pi * np.outer(np.arange(n_fft // 2 + 1), np.arange(n_fft)) / n_fft) @ seg
    assert np.allclose(feats[i], np.log1p(np.abs(dft)), atol=1e-10)


@settings(max_examples=25)
@given(st.sampled_from([8000, 16000, 22050, 44100]), st.floats(0.1, 3.0), st.sampled_from([24, 25, 30, 60]))
def test_row_count_is_floor(sr, seconds, fps):
    n = int(seconds * sr)
    k = (n * fps) // sr
    if k < 1:
        return
    assert stft_features(AudioBuffer(sr, np.zeros(n)), fps).shape[0] == k == int(np.floor(n / sr * fps))


def test_stft_errors():
    with pytest.raises(AudioError):
        stft_features(AudioBuffer(22050, np.zeros(22050)), 30, n_fft=1000)
    with pytest.raises(AudioError):
        stft_features(AudioBuffer(22050, np.zeros(0)), 30)
    with pytest.raises(AudioError):
        AudioBuffer(0, np.zeros(3))
    with pytest.raises(AudioError):
        AudioBuffer(100, np.array([np.nan]))


# beats ----------------------------------------------------------------------

def _match(pred, truth, tol=1):
    pred = list(pred)
    hits = sum(any(abs(p - t) <= tol for p in pred) for t in truth)
    correct = sum(any(abs(p - t) <= tol for t in truth) for p in pred)
    return hits / max(len(truth), 1), correct / max(len(pred), 1)


@pytest.mark.parametrize("bpm", [60, 75, 90, 100, 120, 140, 160, 180])
def test_click_track_recall_precision(bpm):
    fps, seconds = 30, 8.0
    times = np.arange(0.25, seconds - 0.1, 60.0 / bpm)
    beats = detect_music_beats(render_click_track(times, seconds), fps)
    recall, precision = _match(beats, np.round(times * fps).astype(int))
    assert recall == 1.0 and precision >= 0.9


@pytest.mark.parametrize("bpm", [60, 90, 120, 146])
def test_beat_track_recall_precision(bpm):
    # alternating accents, the pattern the synthetic dance music uses
    fps, seconds = 30, 8.0
    times = np.arange(0.25, seconds - 0.1, 60.0 / bpm)
    accents = np.where(np.arange(len(times)) % 2, 0.5, 1.0)
    beats = detect_music_beats(render_beat_track(times, seconds, accents=accents), fps)
    recall, precision = _match(beats, np.round(times * fps).astype(int))
    assert recall == 1.0 and precision >= 0.9


def test_beat_track_encodes_elapsed_time_and_accent():
    feats = stft_features(render_beat_track([0.5, 1.5], 2.5, accents=[1.0, 0.5]), 30)
    hi, lo = np.argmax(feats[20]), np.argmax(feats[50])
    assert hi != lo
    assert np.all(np.diff(feats[17:44, hi]) < 0)   # decays between onsets


def test_120_bpm_spacing():
    times = np.arange(0.5, 6.0, 0.5)
    beats = detect_music_beats(render_click_track(times, 6.0), 30)
    assert np.all(np.abs(np.diff(beats) - 15) <= 1)


def test_single_click_and_silence():
    beats = detect_music_beats(render_click_track([1.0], 3.0), 30)
    assert len(beats) == 1 and abs(beats[0] - 30) <= 1
    assert detect_music_beats(AudioBuffer(22050, np.zeros(3 * 22050)), 30) == []
    with pytest.raises(AudioError):
        detect_music_beats(AudioBuffer(22050, np.zeros(1000)), 30)


def test_beats_in_range():
    beats = detect_music_beats(render_click_track(np.arange(0, 4.0, 0.4), 4.0), 30)
    assert all(0 <= b < 120 for b in beats)


# files ------------------------------------------------------------------------

def test_wav_round_trip(tmp_path):
    audio = render_click_track([0.2, 0.7], 1.0, sample_rate=8000)
    write_wav(tmp_path / "a.wav", audio)
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate == 8000
    assert np.abs(back.samples - audio.samples).max() <= 0.5 / 32768


def test_stereo_wav_is_averaged(tmp_path):
    import wave

    left = np.full(100, 8000, "<i2")
    right = np.full(100, -4000, "<i2")
    with wave.open(str(tmp_path / "s.wav"), "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(1000)
        w.writeframes(np.stack([left, right], 1).tobytes())
    assert np.allclose(read_wav(tmp_path / "s.wav").samples, 2000 / 32768)


def test_gcem_broadcast_and_exact(tmp_path, rng):
    row = rng.standard_normal((1, 512)).astype(np.float32)
    save_embeddings(tmp_path / "one.gcem", row)
    m = load_embeddings(tmp_path / "one.gcem", k=120)
    assert m.shape == (120, 512) and np.all(m == row)
    full = rng.standard_normal((120, 512)).astype(np.float32)
    save_embeddings(tmp_path / "full.gcem", full)
    assert np.array_equal(load_embeddings(tmp_path / "full.gcem", k=120), full)


def test_gcem_errors(tmp_path):
    (tmp_path / "bad.gcem").write_bytes(b"XXXX" + bytes(12))
    with pytest.raises(AudioError, match="not a GCEM file"):
        load_embeddings(tmp_path / "bad.gcem")
    (tmp_path / "short.gcem").write_bytes(encode_gcem(np.zeros((3, 4)))[:-4])
    with pytest.raises(AudioError):
        load_embeddings(tmp_path / "short.gcem")
    save_embeddings(tmp_path / "rows.gcem", np.zeros((3, 4)))
    with pytest.raises(AudioError):
        load_embeddings(tmp_path / "rows.gcem", k=5)


def test_assemble_order_and_bits(rng):
    s, e = rng.standard_normal((120, 513)), rng.standard_normal((120, 512))
    mf = assemble_features(s, e)
    assert mf.matrix.shape == (120, 1025) and mf.has_stft and mf.has_embed
    assert np.array_equal(mf.matrix[:, :513], s) and np.array_equal(mf.matrix[:, 513:], e)
    only = assemble_features(s)
    assert not only.has_embed and np.array_equal(only.matrix, s)
    with pytest.raises(AudioError):
        assemble_features(s, e[:100])
