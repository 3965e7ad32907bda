"""Encoders exposing per-layer hidden states for a mono waveform.

Both encoders share one contract: ``layer_states(waveform, layers)`` returns
one (T, hidden) array per requested transformer layer index, depending only
on the waveform and the layer index. That property is what the block-layout
permutation check in the toolkit relies on.
"""

from __future__ import annotations

import numpy as np

HIDDEN = 1024
NUM_LAYERS = 24
SAMPLE_RATE = 24_000


class PretrainedMusicEncoder:
    """Frozen pretrained transformer encoder (loaded via ``transformers``).

    Weights are fetched on first use; requires the ``mert`` extra and network
    or a local model cache.
    """

    def __init__(self, model_id: str = "m-a-p/MERT-v1-330M", device: str = "cpu"):
        import torch  # deferred: heavy optional dependency
        from transformers import AutoModel

        self._torch = torch
        self.model = AutoModel.from_pretrained(model_id, trust_remote_code=True,
                                               output_hidden_states=True)
        self.model.eval().to(device)
        self.device = device
        self.sample_rate = SAMPLE_RATE
        self.hidden_size = int(self.model.config.hidden_size)
        self.num_layers = int(self.model.config.num_hidden_layers)

    def layer_states(self, waveform: np.ndarray, layers: list[int]) -> list[np.ndarray]:
        torch = self._torch
        for layer in layers:
            if not 0 <= layer <= self.num_layers:
                raise ValueError(f"layer {layer} out of range 0..{self.num_layers}")
        with torch.no_grad():
            x = torch.from_numpy(np.ascontiguousarray(waveform, dtype=np.float32))
            out = self.model(input_values=x[None, :].to(self.device))
        hidden = out.hidden_states  # (num_layers + 1) tensors of (1, T, hidden)
        return [hidden[layer][0].cpu().double().numpy() for layer in layers]


class DeterministicEncoder:
    """Offline stand-in with the same interface and shapes.

    Frames the waveform, computes a small bank of frame statistics, and maps
    them through a fixed per-layer random projection with a tanh
    nonlinearity. Purely seeded by the layer index, so outputs are
    reproducible across processes and layer order.
    """

    frame = 1200
    hop = 600

    def __init__(self):
        self.sample_rate = SAMPLE_RATE
        self.hidden_size = HIDDEN
        self.num_layers = NUM_LAYERS

    def _frame_features(self, waveform: np.ndarray) -> np.ndarray:
        n = len(waveform)
        if n < self.frame:
            waveform = np.pad(waveform, (0, self.frame - n))
            n = self.frame
        starts = np.arange(0, n - self.frame + 1, self.hop)
        frames = np.stack([waveform[s:s + self.frame] for s in starts])
        window = np.hanning(self.frame)
        spec = np.abs(np.fft.rfft(frames * window, axis=1))
        # coarse log-spaced band energies plus simple time-domain stats
        edges = np.unique(np.geomspace(1, spec.shape[1] - 1, 24).astype(int))
        bands = np.stack([spec[:, a:b + 1].mean(axis=1)
                          for a, b in zip(edges[:-1], edges[1:])], axis=1)
        feats = np.hstack([
            np.log1p(bands),
            frames.mean(axis=1, keepdims=True),
            frames.std(axis=1, keepdims=True),
            np.abs(np.diff(np.signbit(frames), axis=1)).mean(axis=1, keepdims=True),
        ])
        return feats

    def layer_states(self, waveform: np.ndarray, layers: list[int]) -> list[np.ndarray]:
        for layer in layers:
            if not 0 <= layer <= self.num_layers:
                raise ValueError(f"layer {layer} out of range 0..{self.num_layers}")
        feats = self._frame_features(np.asarray(waveform, dtype=np.float64))
        out = []
        for layer in layers:
            rng = np.random.default_rng(77_000 + layer)
            W = rng.standard_normal((feats.shape[1], self.hidden_size))
            b = rng.standard_normal(self.hidden_size)
            out.append(np.tanh(feats @ W / np.sqrt(feats.shape[1]) + 0.1 * b))
        return out


def make_encoder(kind: str = "auto"):
    """auto: the pretrained encoder when available, else the deterministic one."""
    if kind == "pretrained":
        return PretrainedMusicEncoder()
    if kind == "deterministic":
        return DeterministicEncoder()
    if kind != "auto":
        raise ValueError(f"unknown encoder kind: {kind!r}")
    try:
        return PretrainedMusicEncoder()
    except Exception:
        return DeterministicEncoder()
