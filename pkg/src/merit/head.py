"""Factor projection head: two-layer MLP with ReLU and an L2-normalized
128-d output, plus bit-exact parameter serialization.

Head file layout (little-endian): magic ``MERITHED`` | version u32
| factor (u16 len + UTF-8) | in u32 | hidden u32 | out u32
| W1 row-major f32 | b1 f32 | W2 row-major f32.

Arithmetic is double precision in memory; files store single precision.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateOutputError, FormatError

HEAD_MAGIC = b"MERITHED"
HEAD_VERSION = 1
NORM_EPS = 1e-12


@dataclass
class HeadConfig:
    hidden_dim: int = 512
    out_dim: int = 128
    in_dim: int | None = None  # None: take the store's dim at training time


@dataclass
class HeadParams:
    W1: np.ndarray  # (hidden, in)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (out, hidden), no bias
    factor: str = ""

    def __post_init__(self):
        hidden, _ = self.W1.shape
        out, hidden2 = self.W2.shape
        if hidden2 != hidden or self.b1.shape != (hidden,):
            raise ValueError(
                f"shape inconsistency: W1 {self.W1.shape}, b1 {self.b1.shape}, "
                f"W2 {self.W2.shape}")
        for name, arr in (("W1", self.W1), ("b1", self.b1), ("W2", self.W2)):
            if not np.isfinite(arr).all():
                raise ValueError(f"non-finite entries in {name}")

    @property
    def in_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W2.shape[0]

    def copy(self) -> "HeadParams":
        return HeadParams(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.factor)


@dataclass
class ForwardTrace:
    """All intermediates of one forward pass, retained for backprop."""

    z: np.ndarray       # input
    a1: np.ndarray      # W1 z + b1
    h: np.ndarray       # ReLU(a1)
    u: np.ndarray       # W2 h (pre-norm)
    norm: float
    y: np.ndarray       # u / ||u||


def init_head(in_dim: int, hidden_dim: int, out_dim: int, seed: int,
              factor: str = "") -> HeadParams:
    """Glorot-uniform weights, zero hidden bias; deterministic given seed."""
    if min(in_dim, hidden_dim, out_dim) < 1:
        raise ValueError("all dims must be >= 1")
    rng = np.random.default_rng(seed)
    lim1 = np.sqrt(6.0 / (in_dim + hidden_dim))
    W1 = rng.uniform(-lim1, lim1, size=(hidden_dim, in_dim))
    b1 = np.zeros(hidden_dim)
    lim2 = np.sqrt(6.0 / (hidden_dim + out_dim))
    W2 = rng.uniform(-lim2, lim2, size=(out_dim, hidden_dim))
    return HeadParams(W1, b1, W2, factor)


def forward(params: HeadParams, z: np.ndarray, eps: float = NORM_EPS) -> ForwardTrace:
    """Project one embedding; raises DegenerateOutputError when ||u|| < eps."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (params.in_dim,):
        raise ValueError(f"input shape {z.shape} != ({params.in_dim},)")
    if not np.isfinite(z).all():
        raise ValueError("non-finite input")
    a1 = params.W1 @ z + params.b1
    h = np.maximum(a1, 0.0)
    u = params.W2 @ h
    norm = float(np.linalg.norm(u))
    if norm < eps:
        raise DegenerateOutputError(f"pre-norm output collapsed (||u|| = {norm:.3e})")
    return ForwardTrace(z=z, a1=a1, h=h, u=u, norm=norm, y=u / norm)


@dataclass
class BatchTrace:
    Z: np.ndarray
    A1: np.ndarray
    H: np.ndarray
    U: np.ndarray
    norms: np.ndarray   # (B,)
    Y: np.ndarray       # (B, out), rows unit-norm


def forward_batch_trace(params: HeadParams, Z: np.ndarray,
                        eps: float = NORM_EPS) -> BatchTrace:
    """Vectorized forward pass retaining intermediates; strict on degeneracy."""
    Z = np.asarray(Z, dtype=np.float64)
    A1 = Z @ params.W1.T + params.b1
    H = np.maximum(A1, 0.0)
    U = H @ params.W2.T
    norms = np.linalg.norm(U, axis=1)
    bad = np.where(norms < eps)[0]
    if bad.size:
        raise DegenerateOutputError(
            f"pre-norm output collapsed for batch rows {bad[:5].tolist()}")
    Y = U / norms[:, None]
    return BatchTrace(Z=Z, A1=A1, H=H, U=U, norms=norms, Y=Y)


def forward_batch(params: HeadParams, Z: np.ndarray, lenient: bool = False,
                  eps: float = NORM_EPS) -> tuple[np.ndarray, np.ndarray]:
    """Batch projection for inference tooling.

    Returns (Y, ok) where ok flags non-degenerate rows. In lenient mode
    degenerate rows come back as zero vectors instead of raising.
    """
    Z = np.asarray(Z, dtype=np.float64)
    A1 = Z @ params.W1.T + params.b1
    U = np.maximum(A1, 0.0) @ params.W2.T
    norms = np.linalg.norm(U, axis=1)
    ok = norms >= eps
    if not lenient and not ok.all():
        bad = np.where(~ok)[0]
        raise DegenerateOutputError(
            f"pre-norm output collapsed for batch rows {bad[:5].tolist()}")
    safe = np.where(ok, norms, 1.0)
    Y = U / safe[:, None]
    Y[~ok] = 0.0
    return Y, ok


def similarity(y_a: np.ndarray, y_b: np.ndarray, tol: float = 1e-6) -> float:
    """Cosine similarity of two projected clips (dot product of unit vectors)."""
    y_a = np.asarray(y_a, dtype=np.float64)
    y_b = np.asarray(y_b, dtype=np.float64)
    for name, y in (("y_a", y_a), ("y_b", y_b)):
        dev = abs(np.linalg.norm(y) - 1.0)
        if dev > tol:
            raise ValueError(f"{name} is not unit-norm (deviation {dev:.3e})")
    return float(y_a @ y_b)


def save_head(params: HeadParams, path: str | Path) -> None:
    factor_bytes = params.factor.encode("utf-8")
    if len(factor_bytes) > 0xFFFF:
        raise ValueError("factor tag too long")
    with open(path, "wb") as f:
        f.write(HEAD_MAGIC)
        f.write(struct.pack("<I", HEAD_VERSION))
        f.write(struct.pack("<H", len(factor_bytes)))
        f.write(factor_bytes)
        f.write(struct.pack("<III", params.in_dim, params.hidden_dim, params.out_dim))
        for arr in (params.W1, params.b1, params.W2):
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_head(path: str | Path, expect_in: int | None = None,
              expect_hidden: int | None = None,
              expect_out: int | None = None) -> HeadParams:
    """Load a head file; returned arrays are float64 widenings of the stored f32."""
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:8] != HEAD_MAGIC:
        raise FormatError(f"bad magic in head file {path}")
    off = 8
    (version,) = struct.unpack_from("<I", data, off)
    off += 4
    if version != HEAD_VERSION:
        raise FormatError(f"unsupported head version: {version}")
    (flen,) = struct.unpack_from("<H", data, off)
    off += 2
    factor = data[off:off + flen].decode("utf-8")
    off += flen
    in_dim, hidden, out = struct.unpack_from("<III", data, off)
    off += 12
    expected = {"in": (expect_in, in_dim), "hidden": (expect_hidden, hidden),
                "out": (expect_out, out)}
    for name, (want, got) in expected.items():
        if want is not None and want != got:
            raise ValueError(f"shape mismatch: {name} dim is {got}, expected {want}")
    n_payload = hidden * in_dim + hidden + out * hidden
    if len(data) - off != 4 * n_payload:
        raise FormatError("truncated or oversized head file")
    flat = np.frombuffer(data, dtype="<f4", count=n_payload, offset=off)
    W1 = flat[:hidden * in_dim].reshape(hidden, in_dim).astype(np.float64)
    b1 = flat[hidden * in_dim:hidden * in_dim + hidden].astype(np.float64)
    W2 = flat[hidden * in_dim + hidden:].reshape(out, hidden).astype(np.float64)
    return HeadParams(W1, b1, W2, factor)
