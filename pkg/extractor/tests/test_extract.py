import numpy as np
import pytest

from merit_extractor.encoder import DeterministicEncoder
from merit_extractor.extract import (ExtractionJob, center_crop, embed_file,
                                     extract, read_wav, resample)

from wavgen import write_wav


def test_read_wav_mono_mix_and_range(wav_file):
    waveform, rate = read_wav(wav_file)
    assert rate == 44_100
    assert waveform.ndim == 1
    assert len(waveform) == 2 * 44_100
    assert np.abs(waveform).max() <= 1.0


def test_read_wav_eight_bit(tmp_path):
    import wave

    path = tmp_path / "eight.wav"
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(1)
        w.setframerate(8000)
        w.writeframes(bytes([128, 255, 0, 128] * 100))
    waveform, rate = read_wav(path)
    assert rate == 8000
    assert waveform.max() <= 1.0 and waveform.min() >= -1.0


def test_resample_length_and_identity():
    x = np.sin(np.linspace(0, 20, 44_100))
    assert resample(x, 44_100, 44_100) is x
    y = resample(x, 44_100, 24_000)
    assert len(y) == 24_000
    assert np.isfinite(y).all()


def test_center_crop():
    x = np.arange(100.0)
    assert np.array_equal(center_crop(x, 200), x)
    cropped = center_crop(x, 50)
    assert len(cropped) == 50
    assert cropped[0] == 25.0


def test_job_validation(tmp_path):
    with pytest.raises(ValueError, match="no audio files"):
        ExtractionJob([], str(tmp_path / "s.bin"))
    with pytest.raises(ValueError, match="distinct"):
        ExtractionJob(["a.wav"], str(tmp_path / "s.bin"), layers=(3, 3))
    with pytest.raises(ValueError, match="window_seconds"):
        ExtractionJob(["a.wav"], str(tmp_path / "s.bin"), window_seconds=0)


def test_layer_out_of_range(wav_file):
    encoder = DeterministicEncoder()
    with pytest.raises(ValueError, match="out of range"):
        embed_file(wav_file, encoder, layers=(99,), window_seconds=5.0)


def test_duplicate_stems_rejected(tmp_path):
    a = write_wav(tmp_path / "same.wav")
    b = tmp_path / "sub"
    b.mkdir()
    other = write_wav(b / "same.wav")
    job = ExtractionJob([str(a), str(other)], str(tmp_path / "s.bin"),
                        encoder_kind="deterministic")
    with pytest.raises(ValueError, match="duplicate clip id"):
        extract(job)


def test_short_clip_is_finite(tmp_path):
    path = write_wav(tmp_path / "short.wav", seconds=0.5)
    vec = embed_file(path, DeterministicEncoder(), layers=(3, 4, 5, 6, 23),
                     window_seconds=10.0)
    assert vec.shape == (5120,)
    assert np.isfinite(vec).all()


def test_long_clip_equals_center_window(tmp_path):
    long_path = write_wav(tmp_path / "long.wav", seconds=6.0, channels=1)
    encoder = DeterministicEncoder()
    vec_long = embed_file(long_path, encoder, layers=(3,), window_seconds=2.0)
    waveform, rate = read_wav(long_path)
    waveform = resample(waveform, rate, encoder.sample_rate)
    cropped = center_crop(waveform, int(2.0 * encoder.sample_rate))
    pooled = encoder.layer_states(cropped, [3])[0].mean(axis=0)
    assert np.allclose(vec_long, pooled.astype(np.float32))
