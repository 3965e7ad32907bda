"""Audio-to-store extraction: decode, resample, window, encode, mean-pool the
selected layers, concatenate in layer order, and write the binary embedding
store (magic ``MERITEMB``), the toolkit's interchange format.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

STORE_MAGIC = b"MERITEMB"
STORE_VERSION = 1
DEFAULT_LAYERS = (3, 4, 5, 6, 23)


@dataclass
class ExtractionJob:
    audio_files: list[str]
    out_path: str
    layers: tuple[int, ...] = DEFAULT_LAYERS
    window_seconds: float = 10.0   # longer clips are center-cropped
    batch_size: int = 4
    encoder_kind: str = "auto"

    def __post_init__(self):
        if not self.audio_files:
            raise ValueError("no audio files given")
        if len(set(self.layers)) != len(self.layers) or not self.layers:
            raise ValueError("layers must be a nonempty list of distinct indices")
        if self.window_seconds <= 0:
            raise ValueError("window_seconds must be > 0")


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Decode a PCM WAV file to a mono float64 waveform in [-1, 1]."""
    with wave.open(str(path), "rb") as w:
        n_channels = w.getnchannels()
        width = w.getsampwidth()
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    if width == 2:
        data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif width == 4:
        data = np.frombuffer(raw, dtype="<i4").astype(np.float64) / 2147483648.0
    elif width == 1:
        data = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    else:
        raise ValueError(f"unsupported sample width: {width} bytes")
    if n_channels > 1:
        data = data.reshape(-1, n_channels).mean(axis=1)
    if data.size == 0:
        raise ValueError(f"empty audio file: {path}")
    return data, rate


def resample(waveform: np.ndarray, src_rate: int, dst_rate: int) -> np.ndarray:
    if src_rate == dst_rate:
        return waveform
    n_out = max(1, int(round(len(waveform) * dst_rate / src_rate)))
    t_out = np.arange(n_out) * (src_rate / dst_rate)
    return np.interp(t_out, np.arange(len(waveform)), waveform)


def center_crop(waveform: np.ndarray, max_samples: int) -> np.ndarray:
    if len(waveform) <= max_samples:
        return waveform
    start = (len(waveform) - max_samples) // 2
    return waveform[start:start + max_samples]


def embed_file(path: str | Path, encoder, layers, window_seconds: float) -> np.ndarray:
    """One vector per file: per-layer mean-pool over time, blocks concatenated
    in the order the layers were requested."""
    waveform, rate = read_wav(path)
    waveform = resample(waveform, rate, encoder.sample_rate)
    waveform = center_crop(waveform, int(window_seconds * encoder.sample_rate))
    states = encoder.layer_states(waveform, list(layers))
    pooled = [s.mean(axis=0) for s in states]
    vec = np.concatenate(pooled).astype(np.float32)
    if not np.isfinite(vec).all():
        raise ValueError(f"non-finite embedding for {path}")
    return vec


def write_store_file(entries: list[tuple[str, np.ndarray]], path: str | Path,
                     n_blocks: int, block_dim: int) -> None:
    """Serialize (clip_id, f32 vector) pairs in the documented store layout."""
    dim = n_blocks * block_dim
    with open(path, "wb") as f:
        f.write(struct.pack("<8sIIIIQ", STORE_MAGIC, STORE_VERSION, dim,
                            n_blocks, block_dim, len(entries)))
        for clip_id, vec in entries:
            if vec.shape != (dim,):
                raise ValueError(f"vector shape {vec.shape} != ({dim},)")
            id_bytes = clip_id.encode("utf-8")
            f.write(struct.pack("<H", len(id_bytes)))
            f.write(id_bytes)
            f.write(np.ascontiguousarray(vec, dtype="<f4").tobytes())


def extract(job: ExtractionJob, encoder=None) -> Path:
    """Run the job; returns the written store path. Clip ids are file stems."""
    from .encoder import make_encoder

    if encoder is None:
        encoder = make_encoder(job.encoder_kind)
    entries: list[tuple[str, np.ndarray]] = []
    seen: set[str] = set()
    for file_path in job.audio_files:
        clip_id = Path(file_path).stem
        if clip_id in seen:
            raise ValueError(f"duplicate clip id (file stem): {clip_id!r}")
        seen.add(clip_id)
        entries.append(
            (clip_id, embed_file(file_path, encoder, job.layers,
                                 job.window_seconds)))
    write_store_file(entries, job.out_path,
                     n_blocks=len(job.layers), block_dim=encoder.hidden_size)
    return Path(job.out_path)
