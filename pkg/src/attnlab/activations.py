"""Row-wise attention activations: the probability family and the rectifier family.

Each activation maps a score row to attention weights over the last axis.
The distribution kinds (softmax, sparsemax, 1.5-entmax) return rows on the
simplex; the rectifier kinds (relu, gelu, leaky_relu) drop that constraint,
which is what lets whole rows switch off ("null attention").

Masking convention: a boolean mask marks VALID positions.  Masked scores are
set to -1e9 before the activation (one code path for every kind) and the
corresponding outputs are forced to exact 0.0 afterwards, so "masked means
exactly zero" holds even for leaky_relu where the pre-mask alone would leak.
Every activation is a single autodiff node with a hand-registered adjoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, node

MASKED_SCORE = -1e9

DISTRIBUTION_TAGS = frozenset({"softmax", "sparsemax", "entmax15"})
RECTIFIER_TAGS = frozenset({"relu", "gelu", "leaky_relu"})
ACTIVATION_TAGS = DISTRIBUTION_TAGS | RECTIFIER_TAGS

_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715


@dataclass(frozen=True)
class ActivationKind:
    """An activation tag plus its scalar knobs (currently just the leak)."""

    tag: str
    leak: float = 0.01

    def __post_init__(self):
        if self.tag not in ACTIVATION_TAGS:
            raise ValueError(f"unknown activation {self.tag!r}; choose from {sorted(ACTIVATION_TAGS)}")
        if self.tag == "leaky_relu" and not 0.0 < self.leak < 1.0:
            raise ValueError(f"leak must lie strictly inside (0, 1), got {self.leak}")

    @property
    def is_distribution(self) -> bool:
        return self.tag in DISTRIBUTION_TAGS


def _prepare_mask(shape: tuple[int, ...], mask) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=bool)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), shape)
    return np.ascontiguousarray(mask)


def _require_support(mask: np.ndarray, tag: str) -> None:
    # distribution kinds cannot produce a row summing to 1 out of nothing
    rows_ok = mask.any(axis=-1)
    if not rows_ok.all():
        bad = np.argwhere(~rows_ok)[0].tolist()
        raise ValueError(f"{tag}: fully masked row at index {bad}")


# ---------------------------------------------------------------------------
# numpy kernels (forward only); shared with the analysis re-normalization


def softmax_kernel(scores: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Max-subtracted softmax over the last axis; masked cells exactly 0."""
    mask = _prepare_mask(scores.shape, mask)
    zm = np.where(mask, scores, MASKED_SCORE)
    zmax = zm.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(zm - zmax), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def sparsemax_kernel(scores: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Euclidean projection of each row onto the probability simplex.

    Sort descending, keep the largest k with 1 + k*z_(k) > cumsum_k, subtract
    the threshold tau = (cumsum_k - 1) / k, clamp at zero.
    """
    mask = _prepare_mask(scores.shape, mask)
    zm = np.where(mask, scores, MASKED_SCORE)
    zm = zm - zm.max(axis=-1, keepdims=True)  # shift invariant; tames magnitudes
    m = zm.shape[-1]
    zs = -np.sort(-zm, axis=-1)
    rho = np.arange(1, m + 1, dtype=np.float64)
    cum = np.cumsum(zs, axis=-1)
    keep = 1.0 + rho * zs > cum
    k = keep.sum(axis=-1, keepdims=True)
    cum_k = np.take_along_axis(cum, k - 1, axis=-1)
    tau = (cum_k - 1.0) / k
    out = np.maximum(zm - tau, 0.0)
    return np.where(mask, out, 0.0)


def entmax15_kernel(scores: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Exact alpha=1.5 entmax over the last axis.

    Works on s = (z - max) / 2: among sorted entries the threshold candidates
    are tau_k = mean_k - sqrt((1 - k*var_k) / k); the support size is the largest
    k with tau_k <= s_(k) and the output is max(0, s - tau*)^2, summing to 1.
    """
    mask = _prepare_mask(scores.shape, mask)
    zm = np.where(mask, scores, MASKED_SCORE)
    s = (zm - zm.max(axis=-1, keepdims=True)) / 2.0
    m = s.shape[-1]
    ss = -np.sort(-s, axis=-1)
    rho = np.arange(1, m + 1, dtype=np.float64)
    mean = np.cumsum(ss, axis=-1) / rho
    mean_sq = np.cumsum(ss * ss, axis=-1) / rho
    variance = mean_sq - mean * mean
    delta = np.maximum((1.0 - rho * variance) / rho, 0.0)
    tau = mean - np.sqrt(delta)
    support = (tau <= ss).sum(axis=-1, keepdims=True)
    tau_star = np.take_along_axis(tau, support - 1, axis=-1)
    out = np.square(np.maximum(s - tau_star, 0.0))
    return np.where(mask, out, 0.0)


def gelu_kernel(scores: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Tanh-approximated GeLU: 0.5*z*(1 + tanh(c*(z + a*z^3)))."""
    mask = _prepare_mask(scores.shape, mask)
    zm = np.where(mask, scores, MASKED_SCORE)
    inner = np.tanh(_GELU_C * (zm + _GELU_A * zm**3))
    return np.where(mask, 0.5 * zm * (1.0 + inner), 0.0)


# ---------------------------------------------------------------------------
# autodiff nodes


def softmax_rows(scores: Tensor, mask=None) -> Tensor:
    mask_arr = _prepare_mask(scores.shape, mask)
    _require_support(mask_arr, "softmax")
    p = softmax_kernel(scores.data, mask_arr)

    def vjp(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        return (np.where(mask_arr, p * (g - inner), 0.0),)

    return node(p, (scores,), vjp)


def relu_rows(scores: Tensor, mask=None) -> Tensor:
    mask_arr = _prepare_mask(scores.shape, mask)
    active = mask_arr & (scores.data > 0.0)
    out = np.where(active, scores.data, 0.0)

    def vjp(g):
        return (np.where(active, g, 0.0),)

    return node(out, (scores,), vjp)


def sparsemax_rows(scores: Tensor, mask=None) -> Tensor:
    mask_arr = _prepare_mask(scores.shape, mask)
    _require_support(mask_arr, "sparsemax")
    p = sparsemax_kernel(scores.data, mask_arr)
    support = p > 0.0

    def vjp(g):
        # projection Jacobian: on the support, subtract the support mean
        cnt = support.sum(axis=-1, keepdims=True)
        total = np.where(support, g, 0.0).sum(axis=-1, keepdims=True)
        v = total / np.maximum(cnt, 1)
        return (np.where(support, g - v, 0.0),)

    return node(p, (scores,), vjp)


def entmax15_rows(scores: Tensor, mask=None) -> Tensor:
    mask_arr = _prepare_mask(scores.shape, mask)
    _require_support(mask_arr, "entmax15")
    p = entmax15_kernel(scores.data, mask_arr)
    s = np.sqrt(p)  # zero off support, so it doubles as the support filter

    def vjp(g):
        num = (g * s).sum(axis=-1, keepdims=True)
        den = s.sum(axis=-1, keepdims=True)
        return (s * (g - num / den),)

    return node(p, (scores,), vjp)


def gelu_rows(scores: Tensor, mask=None) -> Tensor:
    mask_arr = _prepare_mask(scores.shape, mask)
    zm = np.where(mask_arr, scores.data, MASKED_SCORE)
    u = _GELU_C * (zm + _GELU_A * zm**3)
    t = np.tanh(u)
    out = np.where(mask_arr, 0.5 * zm * (1.0 + t), 0.0)

    def vjp(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * zm * zm)
        local = 0.5 * (1.0 + t) + 0.5 * zm * (1.0 - t * t) * du
        return (np.where(mask_arr, g * local, 0.0),)

    return node(out, (scores,), vjp)


def leaky_relu_rows(scores: Tensor, mask=None, leak: float = 0.01) -> Tensor:
    if not 0.0 < leak < 1.0:
        raise ValueError(f"leak must lie strictly inside (0, 1), got {leak}")
    mask_arr = _prepare_mask(scores.shape, mask)
    positive = scores.data > 0.0
    out = np.where(mask_arr, np.where(positive, scores.data, leak * scores.data), 0.0)

    def vjp(g):
        slope = np.where(positive, 1.0, leak)
        return (np.where(mask_arr, g * slope, 0.0),)

    return node(out, (scores,), vjp)


def apply_activation(kind: ActivationKind, scores: Tensor, mask=None) -> Tensor:
    """Dispatch a score tensor through the named activation."""
    if kind.tag == "softmax":
        return softmax_rows(scores, mask)
    if kind.tag == "relu":
        return relu_rows(scores, mask)
    if kind.tag == "sparsemax":
        return sparsemax_rows(scores, mask)
    if kind.tag == "entmax15":
        return entmax15_rows(scores, mask)
    if kind.tag == "gelu":
        return gelu_rows(scores, mask)
    if kind.tag == "leaky_relu":
        return leaky_relu_rows(scores, mask, kind.leak)
    raise ValueError(f"unknown activation {kind.tag!r}")
