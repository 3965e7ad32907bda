"""Training loop for one factor head: AdamW with decoupled weight decay, a
per-epoch cosine-annealed learning rate, seeded shuffling, and history capture.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .dataset import TripletManifest
from .errors import DegenerateOutputError
from .head import HeadConfig, HeadParams, init_head
from .loss import LossConfig, TripletBatch, batch_loss_and_grads
from .store import EmbeddingStore


@dataclass
class TrainConfig:
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    weight_decay: float = 1e-4
    batch_size: int = 1024
    epochs: int = 200
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8

    def __post_init__(self):
        if self.lr_min > self.lr_max:
            raise ValueError("lr_min must be <= lr_max")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        """Parse a ``key = value`` config file; unknown keys are rejected."""
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            caster = int if key in ("batch_size", "epochs", "seed") else float
            kwargs[key] = caster(value)
        return cls(**kwargs)


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: HeadParams) -> "OptimizerState":
        zeros = lambda a: np.zeros_like(a)
        return cls(
            m={"W1": zeros(params.W1), "b1": zeros(params.b1), "W2": zeros(params.W2)},
            v={"W1": zeros(params.W1), "b1": zeros(params.b1), "W2": zeros(params.W2)},
        )


@dataclass
class TrainHistory:
    epochs: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def append(self, epoch: int, loss: float, lr: float, secs: float) -> None:
        self.epochs.append(epoch)
        self.losses.append(loss)
        self.lrs.append(lr)
        self.seconds.append(secs)

    def __len__(self) -> int:
        return len(self.epochs)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("epoch,loss,lr,seconds\n")
            for e, l, r, s in zip(self.epochs, self.losses, self.lrs, self.seconds):
                f.write(f"{e},{l!r},{r!r},{s:.6f}\n")


def cosine_lr(t: int, cfg: TrainConfig) -> float:
    """lr(t) = lr_min + (lr_max - lr_min)(1 + cos(pi t / epochs)) / 2."""
    if not 0 <= t <= cfg.epochs:
        raise ValueError(f"epoch {t} outside [0, {cfg.epochs}]")
    cosine = np.cos(np.pi * t / cfg.epochs)
    return float(cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + cosine))


# Hidden bias is exempt from weight decay.
_DECAYED = ("W1", "W2")


def adamw_step(
    params: HeadParams,
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    cfg: TrainConfig,
) -> tuple[HeadParams, OptimizerState]:
    """One AdamW update, in place: decoupled decay p *= (1 - lr wd) on the
    weight matrices, then the bias-corrected Adam step."""
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for name, p in (("W1", params.W1), ("b1", params.b1), ("W2", params.W2)):
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}: "
                             f"{g.shape} vs {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        if name in _DECAYED and cfg.weight_decay > 0.0:
            p *= 1.0 - lr * cfg.weight_decay
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps_adam)
    return params, state


def train_head(
    manifest: TripletManifest,
    store: EmbeddingStore,
    head_cfg: HeadConfig | None = None,
    train_cfg: TrainConfig | None = None,
    loss_cfg: LossConfig | None = None,
) -> tuple[HeadParams, TrainHistory]:
    """Train one head on cached embeddings; deterministic given (seed, data)."""
    head_cfg = head_cfg or HeadConfig()
    train_cfg = train_cfg or TrainConfig()
    loss_cfg = loss_cfg or LossConfig()
    if manifest.split != "train":
        raise ValueError(f"manifest split is {manifest.split!r}, expected 'train'")
    if not manifest.triplets:
        raise ValueError("manifest has no triplets")

    missing = sorted({
        cid
        for t in manifest.triplets
        for cid in (t.anchor_id, t.positive_id, t.negative_id)
        if cid not in store.id_index
    })
    if missing:
        raise ValueError(f"unresolvable clip ids: {missing[:5]}"
                         + (" ..." if len(missing) > 5 else ""))

    E = store.matrix.astype(np.float64)
    ai = np.array([store.id_index[t.anchor_id] for t in manifest.triplets])
    pi = np.array([store.id_index[t.positive_id] for t in manifest.triplets])
    ni = np.array([store.id_index[t.negative_id] for t in manifest.triplets])
    n = len(manifest.triplets)

    in_dim = head_cfg.in_dim if head_cfg.in_dim is not None else store.dim
    params = init_head(in_dim, head_cfg.hidden_dim, head_cfg.out_dim,
                       seed=train_cfg.seed, factor=manifest.factor)
    state = OptimizerState.for_params(params)
    history = TrainHistory()

    for epoch in range(train_cfg.epochs):
        t0 = time.perf_counter()
        lr = cosine_lr(epoch, train_cfg)
        perm = np.random.default_rng(train_cfg.seed ^ epoch).permutation(n)
        loss_sum = 0.0
        for start in range(0, n, train_cfg.batch_size):
            idx = perm[start:start + train_cfg.batch_size]
            batch = TripletBatch(E[ai[idx]], E[pi[idx]], E[ni[idx]])
            try:
                loss, grads = batch_loss_and_grads(params, batch, loss_cfg)
            except DegenerateOutputError as err:
                raise DegenerateOutputError(
                    f"epoch {epoch}, batch at offset {start}: {err}") from err
            adamw_step(params, grads, state, lr, train_cfg)
            loss_sum += loss * len(idx)
        history.append(epoch, loss_sum / n, lr, time.perf_counter() - t0)

    return params, history
