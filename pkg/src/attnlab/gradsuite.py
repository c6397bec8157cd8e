"""Finite-difference verification suite for every registered adjoint rule.

Each probe pairs a scalar-valued function with a sampler that draws points
away from subgradient boundaries (|pre-activation| above a margin much wider
than the difference step), then runs ``grad_check`` at a number of seeded
points and reports the worst relative error.  The CLI gradcheck subcommand
and the test suite both drive this table.
"""

from __future__ import annotations

import zlib
from typing import Callable

import numpy as np

from . import activations as act
from . import normalization as norm
from . import tensor as T
from .attention import AttentionConfig, MultiHeadAttention
from .tensor import Tensor, grad_check

KINK_MARGIN = 1e-3
DEFAULT_STEP = 1e-5
TOLERANCE = 1e-4


def _away_from_zero(rng: np.random.Generator, shape, margin=KINK_MARGIN) -> np.ndarray:
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x) * margin * 2 + (x == 0) * margin * 2, x)


def _sample_simplex_interior(rng: np.random.Generator, kernel, shape) -> np.ndarray:
    # resample until every coordinate sits clear of a support boundary
    for _ in range(200):
        z = rng.normal(size=shape)
        p = kernel(z)
        margins = _support_margins(z, p, kernel)
        if np.all(np.abs(margins) > KINK_MARGIN):
            return z
    raise RuntimeError("could not sample a non-boundary point")


def _support_margins(z: np.ndarray, p: np.ndarray, kernel) -> np.ndarray:
    # per-row distance of each entry to its activation threshold, with the
    # threshold recovered from the output itself (z - p on the sparsemax
    # support; z/2 - sqrt(p) on the entmax support)
    if kernel is act.sparsemax_kernel:
        tau = np.where(p > 0, z - p, np.nan)
        tau_row = np.nanmean(tau, axis=-1, keepdims=True)
        return z - tau_row
    tau = np.where(p > 0, z / 2.0 - np.sqrt(p), np.nan)
    tau_row = np.nanmean(tau, axis=-1, keepdims=True)
    return z / 2.0 - tau_row


# ---------------------------------------------------------------------------
# probe construction

ProbeFn = Callable[[np.random.Generator], tuple[Callable[[Tensor], Tensor], Tensor]]


def _activation_probe(apply, sampler) -> ProbeFn:
    def build(rng):
        point = Tensor(sampler(rng))

        def f(x: Tensor) -> Tensor:
            out = apply(x)
            return T.reduce_sum(out * _weights(out.shape))

        return f, point

    return build


def _weights(shape) -> np.ndarray:
    # fixed non-uniform weighting so the scalar probe exercises every output
    flat = np.linspace(0.5, 1.5, int(np.prod(shape)))
    return flat.reshape(shape)


def _norm_probe(builder) -> ProbeFn:
    def build(rng):
        width = 6
        point = Tensor(rng.normal(size=(3, width)) + 0.1)
        apply = builder(width, rng)

        def f(x: Tensor) -> Tensor:
            return T.reduce_sum(apply(x) * _weights((3, width)))

        return f, point

    return build


def _rela_block_probe() -> ProbeFn:
    def build(rng):
        d, h, dh, n, m = 6, 2, 3, 3, 4
        config = AttentionConfig(
            model_dim=d,
            heads=h,
            head_dim=dh,
            activation=act.ActivationKind("relu"),
            norm=norm.NormConfig(kind="gated_rmsnorm", width=d, gain_fan=dh),
            dropout=0.0,
        )
        mha = MultiHeadAttention(config, rng)
        # a zero gate would sit exactly on nothing, but spread it anyway
        mha.norm_params.gate.data = rng.normal(size=d) * 0.3
        y = Tensor(rng.normal(size=(1, m, d)))
        key_mask = np.ones((1, m), dtype=bool)
        query_mask = np.ones((1, n), dtype=bool)

        def run(x: Tensor) -> Tensor:
            return mha(x, y, key_mask=key_mask, query_mask=query_mask)

        for _ in range(200):
            x = Tensor(rng.normal(size=(1, n, d)))
            scores = _head_scores(mha, x, y, d, h, dh)
            if np.all(np.abs(scores) > KINK_MARGIN):
                break
        else:
            raise RuntimeError("could not sample non-boundary attention scores")

        def f(probe: Tensor) -> Tensor:
            return T.reduce_sum(run(probe) * _weights((1, n, d)))

        return f, x

    return build


def _head_scores(mha, x, y, d, h, dh) -> np.ndarray:
    q = (x.data @ mha.w_q.data).reshape(1, -1, h, dh).transpose(0, 2, 1, 3)
    k = (y.data @ mha.w_k.data).reshape(1, -1, h, dh).transpose(0, 2, 1, 3)
    return (q @ k.transpose(0, 1, 3, 2)) / np.sqrt(dh)


def _tensor_op_probes() -> dict[str, ProbeFn]:
    def probe(fn, shape=(2, 3), transform=None):
        def build(rng):
            data = rng.normal(size=shape)
            if transform is not None:
                data = transform(data)
            point = Tensor(data)

            def f(x):
                return T.reduce_sum(fn(x) * _weights(fn(point).shape))

            return f, point

        return build

    other = Tensor(np.arange(1.0, 7.0).reshape(2, 3) / 3.0)
    rhs = Tensor(np.arange(1.0, 13.0).reshape(3, 4) / 5.0)
    return {
        "matmul": probe(lambda x: T.matmul(x, rhs)),
        "add": probe(lambda x: T.add(x, other)),
        "multiply": probe(lambda x: T.multiply(x, other)),
        "scale": probe(lambda x: T.scale(x, -1.7)),
        "maximum": probe(lambda x: T.maximum(x, other), transform=lambda d: d + 2.0),
        "exp": probe(T.exp),
        "log": probe(T.log, transform=lambda d: np.abs(d) + 0.5),
        "sqrt": probe(T.sqrt, transform=lambda d: np.abs(d) + 0.5),
        "power": probe(lambda x: T.power(x, 3.0)),
        "sigmoid": probe(T.sigmoid),
        "tanh": probe(T.tanh),
        "divide": probe(lambda x: T.divide(x, other)),
        "reduce_sum": probe(lambda x: T.reduce_sum(x, axis=1)),
        "reduce_mean": probe(lambda x: T.reduce_mean(x, axis=0)),
        "reduce_max": probe(lambda x: T.reduce_max(x, axis=1)),
    }


def _activation_probes() -> dict[str, ProbeFn]:
    shape = (4, 5)
    return {
        "softmax": _activation_probe(
            act.softmax_rows, lambda rng: rng.normal(size=shape)
        ),
        "relu": _activation_probe(
            act.relu_rows, lambda rng: _away_from_zero(rng, shape)
        ),
        "sparsemax": _activation_probe(
            act.sparsemax_rows,
            lambda rng: _sample_simplex_interior(rng, act.sparsemax_kernel, shape),
        ),
        "entmax15": _activation_probe(
            act.entmax15_rows,
            lambda rng: _sample_simplex_interior(rng, act.entmax15_kernel, shape),
        ),
        "gelu": _activation_probe(
            act.gelu_rows, lambda rng: _away_from_zero(rng, shape)
        ),
        "leaky_relu": _activation_probe(
            lambda x: act.leaky_relu_rows(x, leak=0.1),
            lambda rng: _away_from_zero(rng, shape),
        ),
    }


def _norm_probes() -> dict[str, ProbeFn]:
    def rms(width, rng):
        gain = Tensor(rng.normal(size=width) + 1.0)
        return lambda x: norm.rmsnorm(x, gain)

    def layer(width, rng):
        gain = Tensor(rng.normal(size=width) + 1.0)
        bias = Tensor(rng.normal(size=width) * 0.1)
        return lambda x: norm.layernorm(x, gain, bias)

    def gated(width, rng):
        gain = Tensor(rng.normal(size=width) + 1.0)
        gate = Tensor(rng.normal(size=width) * 0.5)
        return lambda x: norm.gated_rmsnorm(x, gain, gate)

    return {
        "rmsnorm": _norm_probe(rms),
        "layernorm": _norm_probe(layer),
        "gated_rmsnorm": _norm_probe(gated),
    }


def probes() -> dict[str, ProbeFn]:
    table: dict[str, ProbeFn] = {}
    table.update(_activation_probes())
    table.update(_norm_probes())
    table["rela_g_block"] = _rela_block_probe()
    return table


def tensor_op_probes() -> dict[str, ProbeFn]:
    return _tensor_op_probes()


def run_suite(scope: str | None = None, points: int = 20, seed: int = 0,
              step: float = DEFAULT_STEP, include_tensor_ops: bool = False) -> dict[str, float]:
    """Worst relative error per component over ``points`` seeded draws."""
    table = probes()
    if include_tensor_ops:
        table.update(tensor_op_probes())
    if scope is not None:
        if scope not in table:
            raise KeyError(f"unknown gradcheck scope {scope!r}; choose from {sorted(table)}")
        table = {scope: table[scope]}
    results = {}
    for name, build in table.items():
        rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
        worst = 0.0
        for _ in range(points):
            f, point = build(rng)
            worst = max(worst, grad_check(f, point, step))
        results[name] = worst
    return results
