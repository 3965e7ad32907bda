"""Circle Loss over triplet cosine similarities with full analytic gradients
through the loss, the L2 normalization, and the two-layer head.

For a triplet with positive/negative similarities (S_p, S_n), margin m,
scale gamma, and O_p = 1 - m:

    alpha_p = max(0, O_p - S_p)        alpha_n = max(0, S_n - m)
    L       = softplus(gamma * [alpha_n (S_n - m) + alpha_p (O_p - S_p)])

The alphas are treated as constants under differentiation (stop-gradient
re-weights), so with s = sigmoid(inner):

    dL/dS_p = -gamma * alpha_p * s        dL/dS_n = +gamma * alpha_n * s

``sign="paper"`` flips the alpha_p term to the literal printed form
(alpha_n (S_n - m) - alpha_p (O_p - S_p)); that variant is decreasing in the
positive-pair slack and is provided for comparison only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .head import HeadParams, forward_batch_trace

SIGNS = ("consistent", "paper")


@dataclass
class LossConfig:
    gamma: float = 10.0
    margin: float = 0.2
    sign: str = "consistent"

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if not 0.0 < self.margin < 1.0:
            raise ValueError(f"margin must be in (0, 1), got {self.margin}")
        if self.sign not in SIGNS:
            raise ValueError(f"sign must be one of {SIGNS}, got {self.sign!r}")

    @property
    def o_p(self) -> float:
        return 1.0 - self.margin


@dataclass
class TripletBatch:
    """Input embeddings of B triplets, one row per anchor/positive/negative."""

    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray

    def __post_init__(self):
        shapes = {a.shape for a in (self.anchors, self.positives, self.negatives)}
        if len(shapes) != 1:
            raise ValueError(f"mismatched batch shapes: {shapes}")
        if self.anchors.ndim != 2 or self.anchors.shape[0] < 1:
            raise ValueError("batch must be (B, in_dim) with B >= 1")

    @property
    def size(self) -> int:
        return self.anchors.shape[0]


def softplus(x):
    """Overflow-safe softplus: max(x, 0) + log1p(exp(-|x|))."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_sims(s_p, s_n, tol: float = 1e-9):
    s_p = np.asarray(s_p, dtype=np.float64)
    s_n = np.asarray(s_n, dtype=np.float64)
    for name, s in (("S_p", s_p), ("S_n", s_n)):
        if np.any(s < -1.0 - tol) or np.any(s > 1.0 + tol):
            raise ValueError(f"{name} outside [-1, 1]")
    return s_p, s_n


def _inner(s_p, s_n, cfg: LossConfig):
    alpha_p = np.maximum(0.0, cfg.o_p - s_p)
    alpha_n = np.maximum(0.0, s_n - cfg.margin)
    p_term = alpha_p * (cfg.o_p - s_p)
    if cfg.sign == "paper":
        p_term = -p_term
    inner = cfg.gamma * (alpha_n * (s_n - cfg.margin) + p_term)
    return inner, alpha_p, alpha_n


def circle_loss(s_p, s_n, cfg: LossConfig | None = None):
    """Loss value(s); scalar in, scalar out; arrays broadcast elementwise."""
    cfg = cfg or LossConfig()
    s_p, s_n = _check_sims(s_p, s_n)
    inner, _, _ = _inner(s_p, s_n, cfg)
    out = softplus(inner)
    return float(out) if out.ndim == 0 else out


def loss_grad_sims(s_p, s_n, cfg: LossConfig | None = None):
    """(dL/dS_p, dL/dS_n) with the alphas held constant."""
    cfg = cfg or LossConfig()
    s_p, s_n = _check_sims(s_p, s_n)
    inner, alpha_p, alpha_n = _inner(s_p, s_n, cfg)
    s = sigmoid(inner)
    p_sign = 1.0 if cfg.sign == "paper" else -1.0
    g_p = p_sign * cfg.gamma * alpha_p * s + 0.0  # + 0.0 normalizes -0.0
    g_n = cfg.gamma * alpha_n * s
    if g_p.ndim == 0:
        return float(g_p), float(g_n)
    return g_p, g_n


def _backprop_branch(params: HeadParams, trace, G_y: np.ndarray, grads: dict) -> None:
    """Accumulate parameter gradients for one branch given dL/dY.

    Chains through the normalization Jacobian (I - y y^T)/||u||, the ReLU
    mask, and both linear layers.
    """
    G_u = (G_y - np.sum(G_y * trace.Y, axis=1, keepdims=True) * trace.Y)
    G_u /= trace.norms[:, None]
    grads["W2"] += G_u.T @ trace.H
    G_h = G_u @ params.W2
    G_a1 = G_h * (trace.A1 > 0.0)
    grads["W1"] += G_a1.T @ trace.Z
    grads["b1"] += G_a1.sum(axis=0)


def batch_loss_and_grads(
    params: HeadParams, batch: TripletBatch, cfg: LossConfig | None = None
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean Circle Loss over the batch and gradients w.r.t. W1, b1, W2.

    The anchor branch receives gradient contributions from both the positive
    and the negative pair. Reduction order is fixed (anchor, positive,
    negative) so results are bit-reproducible.
    """
    cfg = cfg or LossConfig()
    ta = forward_batch_trace(params, batch.anchors)
    tp = forward_batch_trace(params, batch.positives)
    tn = forward_batch_trace(params, batch.negatives)

    s_p = np.clip(np.sum(ta.Y * tp.Y, axis=1), -1.0, 1.0)
    s_n = np.clip(np.sum(ta.Y * tn.Y, axis=1), -1.0, 1.0)
    losses = circle_loss(s_p, s_n, cfg)
    mean_loss = float(np.mean(losses))

    g_p, g_n = loss_grad_sims(s_p, s_n, cfg)
    B = batch.size
    g_p = np.asarray(g_p, dtype=np.float64) / B
    g_n = np.asarray(g_n, dtype=np.float64) / B

    grads = {
        "W1": np.zeros_like(params.W1),
        "b1": np.zeros_like(params.b1),
        "W2": np.zeros_like(params.W2),
    }
    G_a = g_p[:, None] * tp.Y + g_n[:, None] * tn.Y
    _backprop_branch(params, ta, G_a, grads)
    _backprop_branch(params, tp, g_p[:, None] * ta.Y, grads)
    _backprop_branch(params, tn, g_n[:, None] * ta.Y, grads)
    return mean_loss, grads
