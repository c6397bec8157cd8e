"""Multi-head attention with swappable activation and output normalization.

The softmax baseline is Att(X, Y) = softmax(Q K^T / sqrt(d_h)) V per head,
heads concatenated and projected by W_o.  The rectified variants replace the
softmax with a rectifier and re-normalize the result:

    ReLA(X, Y) = Norm(relu(Q K^T / sqrt(d_h)) V)

with the norm applied to the concatenated head representation, not to each
head separately, before the W_o projection.  Because a rectified row can be
all zero, a query may attend to nothing; with a bias-free W_o such a query
contributes an exact zero vector downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .activations import ActivationKind, apply_activation
from .normalization import NormConfig, NormParams, apply_norm, init_gain
from .tensor import Tensor, matmul, multiply, reshape, scale, transpose

ATTENTION_TYPES = ("encoder_self", "decoder_self", "cross")


@dataclass(frozen=True)
class AttentionConfig:
    model_dim: int
    heads: int
    head_dim: int
    activation: ActivationKind
    norm: NormConfig
    dropout: float = 0.1
    capture: bool = False

    def __post_init__(self):
        if self.model_dim != self.heads * self.head_dim:
            raise ValueError(
                f"model_dim {self.model_dim} must equal heads*head_dim = {self.heads * self.head_dim}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        # Distribution activations are the faithful baselines and never take a
        # post-attention norm; rectifier kinds may use any norm, including
        # none (the famously unstable bare-ReLU configuration).
        if self.activation.is_distribution and self.norm.kind != "none":
            raise ValueError(f"{self.activation.tag} must use norm 'none', got {self.norm.kind!r}")
        if self.norm.kind != "none" and self.norm.width != self.model_dim:
            raise ValueError("norm width must equal the concatenated head width")


@dataclass
class AttentionRecord:
    """Captured attention weights for one sentence, one layer, one sublayer.

    ``alpha`` is post-activation, pre-dropout, shape [heads, queries, keys].
    ``valid`` marks cells that are live after padding and causal masking;
    ``query_mask``/``key_mask`` are the padding masks alone.
    """

    layer: int
    kind: str
    activation: str
    alpha: np.ndarray
    query_mask: np.ndarray
    key_mask: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if self.kind not in ATTENTION_TYPES:
            raise ValueError(f"unknown attention type {self.kind!r}")

    def to_json(self) -> dict:
        return {
            "layer": self.layer,
            "type": self.kind,
            "activation": self.activation,
            "alpha": self.alpha.tolist(),
            "query_mask": self.query_mask.astype(int).tolist(),
            "key_mask": self.key_mask.astype(int).tolist(),
            "valid": self.valid.astype(int).tolist(),
        }

    @classmethod
    def from_json(cls, payload: dict) -> "AttentionRecord":
        return cls(
            layer=int(payload["layer"]),
            kind=payload["type"],
            activation=payload["activation"],
            alpha=np.asarray(payload["alpha"], dtype=np.float64),
            query_mask=np.asarray(payload["query_mask"], dtype=bool),
            key_mask=np.asarray(payload["key_mask"], dtype=bool),
            valid=np.asarray(payload["valid"], dtype=bool),
        )


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


def scaled_scores(x: Tensor, y: Tensor, w_q: Tensor, w_k: Tensor, head_dim: int) -> Tensor:
    """Single-head scaled dot-product scores Q K^T / sqrt(d_h)."""
    q = matmul(x, w_q)
    k = matmul(y, w_k)
    return scale(matmul(q, transpose(k, _swap_axes(k.ndim))), 1.0 / np.sqrt(head_dim))


def att_head(
    x: Tensor,
    y: Tensor,
    w_q: Tensor,
    w_k: Tensor,
    w_v: Tensor,
    activation: ActivationKind,
    mask: np.ndarray | None = None,
) -> tuple[Tensor, Tensor]:
    """One attention head; returns (weighted values, attention weights)."""
    head_dim = w_q.shape[-1]
    scores = scaled_scores(x, y, w_q, w_k, head_dim)
    alpha = apply_activation(activation, scores, mask)
    return matmul(alpha, matmul(y, w_v)), alpha


def _swap_axes(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class MultiHeadAttention:
    """H parallel heads sharing fused projection matrices.

    The per-head W_q/W_k/W_v of the single-head formulation live as column
    blocks of [d, H*d_h] matrices; results are bit-identical to running the
    heads separately and concatenating.
    """

    def __init__(self, config: AttentionConfig, rng: np.random.Generator):
        self.config = config
        d, h, dh = config.model_dim, config.heads, config.head_dim
        self.w_q = Tensor(_xavier(rng, d, h * dh), requires_grad=True)
        self.w_k = Tensor(_xavier(rng, d, h * dh), requires_grad=True)
        self.w_v = Tensor(_xavier(rng, d, h * dh), requires_grad=True)
        self.w_o = Tensor(_xavier(rng, h * dh, d), requires_grad=True)
        self.norm_params: NormParams = init_gain(config.norm, rng)

    def parameters(self, prefix: str = "attn") -> dict[str, Tensor]:
        params = {
            f"{prefix}.w_q": self.w_q,
            f"{prefix}.w_k": self.w_k,
            f"{prefix}.w_v": self.w_v,
            f"{prefix}.w_o": self.w_o,
        }
        params.update(self.norm_params.named(f"{prefix}.norm"))
        return params

    def _split_heads(self, t: Tensor, length: int) -> Tensor:
        # [B, n, H*dh] -> [B, H, n, dh]
        b = t.shape[0]
        h, dh = self.config.heads, self.config.head_dim
        return transpose(reshape(t, (b, length, h, dh)), (0, 2, 1, 3))

    def __call__(
        self,
        x: Tensor,
        y: Tensor,
        key_mask: np.ndarray,
        query_mask: np.ndarray,
        causal: bool = False,
        training: bool = False,
        rng: np.random.Generator | None = None,
        capture_to: list | None = None,
        layer: int = 0,
        kind: str = "encoder_self",
    ) -> Tensor:
        """Attend queries ``x`` over keys/values ``y``.

        ``key_mask``/``query_mask`` are [B, m]/[B, n] padding masks; the key
        mask (plus the causal triangle when asked) gates the activation.
        """
        cfg = self.config
        b, n = x.shape[0], x.shape[1]
        m = y.shape[1]

        q = self._split_heads(matmul(x, self.w_q), n)
        k = self._split_heads(matmul(y, self.w_k), m)
        v = self._split_heads(matmul(y, self.w_v), m)

        scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(cfg.head_dim))

        cell_mask = np.broadcast_to(key_mask[:, None, None, :], (b, 1, n, m)).copy()
        if causal:
            if n != m:
                raise ValueError("causal attention requires square score matrices")
            cell_mask &= causal_mask(n)[None, None, :, :]
        alpha = apply_activation(cfg.activation, scores, cell_mask)

        if capture_to is not None and cfg.capture:
            valid = cell_mask[:, 0] & query_mask[:, :, None]
            for i in range(b):
                capture_to.append(
                    AttentionRecord(
                        layer=layer,
                        kind=kind,
                        activation=cfg.activation.tag,
                        alpha=alpha.data[i].copy(),
                        query_mask=query_mask[i].copy(),
                        key_mask=key_mask[i].copy(),
                        valid=valid[i].copy(),
                    )
                )

        if training and cfg.dropout > 0.0:
            if rng is None:
                raise ValueError("training-mode attention dropout needs an rng")
            keep = rng.random(alpha.shape) >= cfg.dropout
            alpha = multiply(alpha, keep / (1.0 - cfg.dropout))

        context = matmul(alpha, v)  # [B, H, n, dh]
        context = reshape(transpose(context, (0, 2, 1, 3)), (b, n, cfg.heads * cfg.head_dim))
        context = apply_norm(context, cfg.norm, self.norm_params)
        return matmul(context, self.w_o)
