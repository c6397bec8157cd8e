"""A small trainable encoder-decoder transformer over the toy tasks.

Desk-scale by default (2 layers, width 64, 4 heads, ffn 256) so a full
training run finishes in minutes on a CPU.  Every attention sublayer takes
its activation and output-norm from the per-attention-type table in
``ModelConfig``, which is how the rectified variants and their ablations are
switched on.  Residual wiring is pre-norm by default with post-norm behind a
flag.

Training follows the usual recipe for this family of models: Adam with
beta1=0.9, beta2=0.98, the inverse-square-root warmup schedule
d^-0.5 * min(step^-0.5, step * warmup^-1.5), label smoothing 0.1, dropout
0.1 on residual connections and attention weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .activations import ActivationKind
from .attention import ATTENTION_TYPES, AttentionConfig, MultiHeadAttention
from .normalization import NormConfig, apply_norm, init_gain
from .tensor import (
    Tensor,
    from_snapshot,
    matmul,
    multiply,
    relu,
    reshape,
    take_rows,
    to_snapshot,
)
from .toydata import EOS_ID, PAD_ID, SentencePair, ToyTask

CHECKPOINT_FORMAT = "attnlab-checkpoint-v1"


@dataclass(frozen=True)
class AttentionSpec:
    """Activation + norm choice for one attention type."""

    activation: str = "softmax"
    leak: float = 0.01
    norm: str = "none"
    norm_init: str = "ones"

    def to_dict(self) -> dict:
        return {
            "activation": self.activation,
            "leak": self.leak,
            "norm": self.norm,
            "norm_init": self.norm_init,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "AttentionSpec":
        return cls(
            activation=payload.get("activation", "softmax"),
            leak=float(payload.get("leak", 0.01)),
            norm=payload.get("norm", "none"),
            norm_init=payload.get("norm_init", "ones"),
        )


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    model_dim: int = 64
    heads: int = 4
    ffn_dim: int = 256
    src_vocab: int = 50
    tgt_vocab: int = 50
    dropout: float = 0.1
    label_smoothing: float = 0.1
    seed: int = 0
    pre_norm: bool = True
    max_len: int = 128
    attention: dict = field(
        default_factory=lambda: {kind: AttentionSpec() for kind in ATTENTION_TYPES}
    )

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.model_dim % self.heads != 0:
            raise ValueError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.ffn_dim < self.model_dim:
            raise ValueError("ffn_dim must be at least model_dim")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must lie in [0, 1)")
        if min(self.src_vocab, self.tgt_vocab) < 3:
            raise ValueError("vocabularies need pad, eos and at least one content id")
        missing = [k for k in ATTENTION_TYPES if k not in self.attention]
        if missing:
            raise ValueError(f"attention table missing entries for {missing}")
        for kind in ATTENTION_TYPES:  # reject bad activation/norm pairings now
            self.attention_config(kind)

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    @classmethod
    def uniform(cls, activation: str = "softmax", norm: str = "none", norm_init: str = "ones",
                leak: float = 0.01, **kwargs) -> "ModelConfig":
        spec = AttentionSpec(activation=activation, leak=leak, norm=norm, norm_init=norm_init)
        return cls(attention={kind: spec for kind in ATTENTION_TYPES}, **kwargs)

    def attention_config(self, kind: str) -> AttentionConfig:
        spec = self.attention[kind]
        return AttentionConfig(
            model_dim=self.model_dim,
            heads=self.heads,
            head_dim=self.head_dim,
            activation=ActivationKind(spec.activation, spec.leak),
            norm=NormConfig(
                kind=spec.norm,
                width=self.model_dim,
                init=spec.norm_init,
                gain_fan=self.head_dim,
            ),
            dropout=self.dropout,
            capture=True,
        )

    def to_dict(self) -> dict:
        return {
            "layers": self.layers,
            "model_dim": self.model_dim,
            "heads": self.heads,
            "ffn_dim": self.ffn_dim,
            "src_vocab": self.src_vocab,
            "tgt_vocab": self.tgt_vocab,
            "dropout": self.dropout,
            "label_smoothing": self.label_smoothing,
            "seed": self.seed,
            "pre_norm": self.pre_norm,
            "max_len": self.max_len,
            "attention": {kind: spec.to_dict() for kind, spec in self.attention.items()},
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        payload = dict(payload)
        attention = {
            kind: AttentionSpec.from_dict(spec)
            for kind, spec in payload.pop("attention", {}).items()
        }
        if not attention:
            attention = {kind: AttentionSpec() for kind in ATTENTION_TYPES}
        return cls(attention=attention, **payload)


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """Fixed sine/cosine position table, [length, dim]."""
    positions = np.arange(length)[:, None].astype(np.float64)
    div = np.exp(np.arange(0, dim, 2, dtype=np.float64) * (-np.log(10000.0) / dim))
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(positions * div)
    table[:, 1::2] = np.cos(positions * div[: dim // 2])
    return table


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _dropout(t: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    if not training or rate <= 0.0:
        return t
    keep = rng.random(t.shape) >= rate
    return multiply(t, keep / (1.0 - rate))


class _SublayerNorm:
    """Plain layernorm used around every residual sublayer."""

    def __init__(self, width: int, rng: np.random.Generator):
        self.config = NormConfig(kind="layernorm", width=width)
        self.params = init_gain(self.config, rng)

    def __call__(self, t: Tensor) -> Tensor:
        return apply_norm(t, self.config, self.params)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return self.params.named(prefix)


class _FeedForward:
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.w1 = Tensor(_xavier(rng, dim, hidden), requires_grad=True)
        self.b1 = Tensor(np.zeros(hidden), requires_grad=True)
        self.w2 = Tensor(_xavier(rng, hidden, dim), requires_grad=True)
        self.b2 = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, t: Tensor) -> Tensor:
        return matmul(relu(matmul(t, self.w1) + self.b1), self.w2) + self.b2

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.w1": self.w1,
            f"{prefix}.b1": self.b1,
            f"{prefix}.w2": self.w2,
            f"{prefix}.b2": self.b2,
        }


class _EncoderLayer:
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(config.attention_config("encoder_self"), rng)
        self.ffn = _FeedForward(config.model_dim, config.ffn_dim, rng)
        self.norm1 = _SublayerNorm(config.model_dim, rng)
        self.norm2 = _SublayerNorm(config.model_dim, rng)
        self.pre_norm = config.pre_norm
        self.dropout = config.dropout

    def __call__(self, x, src_mask, layer, training, rng, capture_to):
        def attend(t):
            return self.self_attn(
                t, t, key_mask=src_mask, query_mask=src_mask, training=training,
                rng=rng, capture_to=capture_to, layer=layer, kind="encoder_self",
            )

        if self.pre_norm:
            x = x + _dropout(attend(self.norm1(x)), self.dropout, training, rng)
            x = x + _dropout(self.ffn(self.norm2(x)), self.dropout, training, rng)
        else:
            x = self.norm1(x + _dropout(attend(x), self.dropout, training, rng))
            x = self.norm2(x + _dropout(self.ffn(x), self.dropout, training, rng))
        return x

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        params = {}
        params.update(self.self_attn.parameters(f"{prefix}.self_attn"))
        params.update(self.ffn.parameters(f"{prefix}.ffn"))
        params.update(self.norm1.parameters(f"{prefix}.norm1"))
        params.update(self.norm2.parameters(f"{prefix}.norm2"))
        return params


class _DecoderLayer:
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(config.attention_config("decoder_self"), rng)
        self.cross_attn = MultiHeadAttention(config.attention_config("cross"), rng)
        self.ffn = _FeedForward(config.model_dim, config.ffn_dim, rng)
        self.norm1 = _SublayerNorm(config.model_dim, rng)
        self.norm2 = _SublayerNorm(config.model_dim, rng)
        self.norm3 = _SublayerNorm(config.model_dim, rng)
        self.pre_norm = config.pre_norm
        self.dropout = config.dropout

    def __call__(self, x, memory, src_mask, tgt_mask, layer, training, rng, capture_to):
        def self_attend(t):
            return self.self_attn(
                t, t, key_mask=tgt_mask, query_mask=tgt_mask, causal=True,
                training=training, rng=rng, capture_to=capture_to, layer=layer,
                kind="decoder_self",
            )

        def cross_attend(t):
            return self.cross_attn(
                t, memory, key_mask=src_mask, query_mask=tgt_mask, training=training,
                rng=rng, capture_to=capture_to, layer=layer, kind="cross",
            )

        if self.pre_norm:
            x = x + _dropout(self_attend(self.norm1(x)), self.dropout, training, rng)
            x = x + _dropout(cross_attend(self.norm2(x)), self.dropout, training, rng)
            x = x + _dropout(self.ffn(self.norm3(x)), self.dropout, training, rng)
        else:
            x = self.norm1(x + _dropout(self_attend(x), self.dropout, training, rng))
            x = self.norm2(x + _dropout(cross_attend(x), self.dropout, training, rng))
            x = self.norm3(x + _dropout(self.ffn(x), self.dropout, training, rng))
        return x

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        params = {}
        params.update(self.self_attn.parameters(f"{prefix}.self_attn"))
        params.update(self.cross_attn.parameters(f"{prefix}.cross_attn"))
        params.update(self.ffn.parameters(f"{prefix}.ffn"))
        params.update(self.norm1.parameters(f"{prefix}.norm1"))
        params.update(self.norm2.parameters(f"{prefix}.norm2"))
        params.update(self.norm3.parameters(f"{prefix}.norm3"))
        return params


class Seq2SeqTransformer:
    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        d = config.model_dim
        self.src_embed = Tensor(rng.normal(0.0, d**-0.5, size=(config.src_vocab, d)), requires_grad=True)
        self.tgt_embed = Tensor(rng.normal(0.0, d**-0.5, size=(config.tgt_vocab, d)), requires_grad=True)
        self.positions = sinusoidal_positions(config.max_len, d)
        self.encoder = [_EncoderLayer(config, rng) for _ in range(config.layers)]
        self.decoder = [_DecoderLayer(config, rng) for _ in range(config.layers)]
        self.enc_norm = _SublayerNorm(d, rng) if config.pre_norm else None
        self.dec_norm = _SublayerNorm(d, rng) if config.pre_norm else None
        self.out_proj = Tensor(_xavier(rng, d, config.tgt_vocab), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        params = {"src_embed": self.src_embed, "tgt_embed": self.tgt_embed}
        for i, layer in enumerate(self.encoder):
            params.update(layer.parameters(f"enc.{i}"))
        for i, layer in enumerate(self.decoder):
            params.update(layer.parameters(f"dec.{i}"))
        if self.enc_norm is not None:
            params.update(self.enc_norm.parameters("enc_norm"))
        if self.dec_norm is not None:
            params.update(self.dec_norm.parameters("dec_norm"))
        params["out_proj"] = self.out_proj
        return params

    def zero_grad(self) -> None:
        for param in self.parameters().values():
            param.zero_grad()

    def _embed(self, table: Tensor, ids: np.ndarray, vocab: int) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= vocab):
            raise ValueError(f"token id out of range for vocabulary of size {vocab}")
        if ids.shape[1] > self.config.max_len:
            raise ValueError(f"sequence length {ids.shape[1]} exceeds max_len {self.config.max_len}")
        b, t = ids.shape
        d = self.config.model_dim
        looked = reshape(take_rows(table, ids.reshape(-1)), (b, t, d))
        return looked * np.sqrt(d) + self.positions[:t]

    def encode(self, src: np.ndarray, src_mask: np.ndarray, training=False, rng=None, capture_to=None) -> Tensor:
        x = self._embed(self.src_embed, src, self.config.src_vocab)
        for i, layer in enumerate(self.encoder):
            x = layer(x, src_mask, i, training, rng, capture_to)
        if self.enc_norm is not None:
            x = self.enc_norm(x)
        return x

    def decode(self, memory: Tensor, src_mask: np.ndarray, tgt_in: np.ndarray,
               tgt_mask: np.ndarray, training=False, rng=None, capture_to=None) -> Tensor:
        x = self._embed(self.tgt_embed, tgt_in, self.config.tgt_vocab)
        for i, layer in enumerate(self.decoder):
            x = layer(x, memory, src_mask, tgt_mask, i, training, rng, capture_to)
        if self.dec_norm is not None:
            x = self.dec_norm(x)
        return matmul(x, self.out_proj)

    def forward(self, src: np.ndarray, tgt_in: np.ndarray, src_mask: np.ndarray,
                tgt_mask: np.ndarray, training=False, rng=None, capture_to=None) -> Tensor:
        memory = self.encode(src, src_mask, training, rng, capture_to)
        return self.decode(memory, src_mask, tgt_in, tgt_mask, training, rng, capture_to)


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    src: np.ndarray          # [B, Ts] source content + eos, padded
    tgt_in: np.ndarray       # [B, Tt] pad-led decoder input
    tgt_out: np.ndarray      # [B, Tt] expected outputs (content + eos)
    src_mask: np.ndarray     # [B, Ts] bool
    tgt_mask: np.ndarray     # [B, Tt] bool
    pairs: list


def make_batch(pairs: list[SentencePair]) -> Batch:
    """Pack sentence pairs into padded id arrays.

    The decoder input starts with a pad token standing in for begin-of-
    sequence; its first real prediction is target position 0.  Source rows
    end with eos.  Masks count the eos / leading-pad positions as valid.
    """
    b = len(pairs)
    src_lens = [len(p.source) + 1 for p in pairs]
    tgt_lens = [len(p.target) + 1 for p in pairs]
    ts, tt = max(src_lens), max(tgt_lens)
    src = np.full((b, ts), PAD_ID, dtype=np.int64)
    tgt_in = np.full((b, tt), PAD_ID, dtype=np.int64)
    tgt_out = np.full((b, tt), PAD_ID, dtype=np.int64)
    src_mask = np.zeros((b, ts), dtype=bool)
    tgt_mask = np.zeros((b, tt), dtype=bool)
    for i, pair in enumerate(pairs):
        n, m = len(pair.source), len(pair.target)
        src[i, :n] = pair.source
        src[i, n] = EOS_ID
        src_mask[i, : n + 1] = True
        tgt_in[i, 1 : m + 1] = pair.target  # position 0 keeps the pad lead
        tgt_out[i, :m] = pair.target
        tgt_out[i, m] = EOS_ID
        tgt_mask[i, : m + 1] = True
    return Batch(src, tgt_in, tgt_out, src_mask, tgt_mask, list(pairs))


# ---------------------------------------------------------------------------
# loss, accuracy, schedule, optimizer


def label_smoothed_loss(logits: Tensor, targets: np.ndarray, mask: np.ndarray,
                        smoothing: float = 0.1) -> Tensor:
    """Mean smoothed cross-entropy over unmasked positions.

    The target distribution is (1-e)*onehot + e/V.  An all-masked batch
    contributes exactly zero loss and zero gradient.
    """
    if not 0.0 <= smoothing < 1.0:
        raise ValueError("smoothing must lie in [0, 1)")
    z = logits.data
    vocab = z.shape[-1]
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    zmax = z.max(axis=-1, keepdims=True)
    lse = zmax + np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True))
    logp = z - lse
    q = np.full_like(z, smoothing / vocab)
    np.put_along_axis(q, targets[..., None], smoothing / vocab + (1.0 - smoothing), axis=-1)
    per_pos = -(q * logp).sum(axis=-1)
    denom = max(1, int(mask.sum()))
    value = float((per_pos * mask).sum() / denom)

    def vjp(g):
        p = np.exp(logp)
        return (np.asarray(g) * mask[..., None] * (p - q) / denom,)

    from .tensor import node

    return node(np.float64(value), (logits,), vjp)


def token_accuracy(logits_data: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> float:
    """Teacher-forced accuracy: argmax vs expected token over live positions."""
    mask = np.asarray(mask, dtype=bool)
    total = int(mask.sum())
    if total == 0:
        return 0.0
    hits = (logits_data.argmax(axis=-1) == targets) & mask
    return float(hits.sum() / total)


def lr_at(step: int, warmup: int, model_dim: int) -> float:
    """Inverse-square-root schedule with linear warmup; peaks at step=warmup."""
    if step < 1:
        raise ValueError("schedule steps are 1-based")
    if warmup < 1:
        raise ValueError("warmup must be >= 1")
    return model_dim**-0.5 * min(step**-0.5, step * warmup**-1.5)


class Adam:
    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9,
                 beta2: float = 0.98, eps: float = 1e-9):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for key, param in self.params.items():
            if param.grad is None:
                continue
            g = param.grad
            self.m[key] = b1 * self.m[key] + (1.0 - b1) * g
            self.v[key] = b2 * self.v[key] + (1.0 - b2) * g * g
            m_hat = self.m[key] / (1.0 - b1**self.t)
            v_hat = self.v[key] / (1.0 - b2**self.t)
            param.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainState:
    step: int
    lr: float
    loss_history: list
    diverged: bool
    optimizer: Adam


def divergence_flag(losses: list) -> bool:
    """True when training failed: non-finite loss, or the trailing moving
    average never dropped below the leading one.

    The window is 500 steps; runs shorter than two windows shrink it to half
    the history so the two means stay disjoint.
    """
    if len(losses) == 0:
        return False
    arr = np.asarray(losses, dtype=np.float64)
    if not np.isfinite(arr).all():
        return True
    if len(arr) < 2:
        return False
    window = min(500, max(1, len(arr) // 2))
    return bool(arr[-window:].mean() >= arr[:window].mean())


def _format_row(step: int, loss: float, lr: float, accuracy: float, flag: bool) -> str:
    return f"{step},{loss!r},{lr!r},{accuracy!r},{int(flag)}\n"


def train(
    config: ModelConfig,
    task: ToyTask,
    steps: int,
    batch_size: int = 64,
    warmup: int = 400,
    out_dir: str | Path | None = None,
    checkpoint_every: int = 0,
    model: Seq2SeqTransformer | None = None,
) -> tuple[TrainState, Seq2SeqTransformer]:
    """Run ``steps`` optimizer updates of ``config`` on ``task``.

    With ``out_dir`` set, writes telemetry.csv incrementally, checkpoints at
    ``checkpoint_every`` (0 means final only) with an attention snapshot from
    a fixed probe batch, and run_summary.json.  Everything is driven by
    ``config.seed``; identical seeds give byte-identical telemetry.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    if model is None:
        model = Seq2SeqTransformer(config)
    params = model.parameters()
    optimizer = Adam(params)
    rng = np.random.default_rng([config.seed, 7])
    state = TrainState(step=0, lr=0.0, loss_history=[], diverged=False, optimizer=optimizer)

    out_path = Path(out_dir) if out_dir is not None else None
    telemetry = None
    probe_batch = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        telemetry = (out_path / "telemetry.csv").open("w", encoding="utf-8", newline="")
        telemetry.write("step,loss,lr,accuracy,divergence_flag\n")
        probe_batch = make_batch(task.generate(np.random.default_rng([config.seed, 11]), 8))

    nan_seen = False
    try:
        for step in range(1, steps + 1):
            batch = make_batch(task.sample_batch(rng, batch_size))
            logits = model.forward(
                batch.src, batch.tgt_in, batch.src_mask, batch.tgt_mask,
                training=True, rng=rng,
            )
            loss = label_smoothed_loss(logits, batch.tgt_out, batch.tgt_mask,
                                       config.label_smoothing)
            accuracy = token_accuracy(logits.data, batch.tgt_out, batch.tgt_mask)
            loss_value = loss.item()
            state.loss_history.append(loss_value)
            nan_seen = nan_seen or not np.isfinite(loss_value)

            if np.isfinite(loss_value):
                model.zero_grad()
                loss.backward()
                lr = lr_at(step, warmup, config.model_dim)
                optimizer.step(lr)
            else:
                lr = lr_at(step, warmup, config.model_dim)
            state.step, state.lr = step, lr

            if telemetry is not None:
                flag = nan_seen if step < steps else divergence_flag(state.loss_history)
                telemetry.write(_format_row(step, loss_value, lr, accuracy, flag))
                if checkpoint_every and step % checkpoint_every == 0 and step < steps:
                    _dump_checkpoint_files(out_path, model, step, probe_batch)
    finally:
        if telemetry is not None:
            telemetry.close()

    state.diverged = divergence_flag(state.loss_history)
    if out_path is not None:
        _dump_checkpoint_files(out_path, model, state.step, probe_batch, final=True)
        summary = {
            "steps": state.step,
            "final_loss": state.loss_history[-1] if state.loss_history else None,
            "diverged": state.diverged,
        }
        (out_path / "run_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return state, model


def _dump_checkpoint_files(out_path: Path, model: Seq2SeqTransformer, step: int,
                           probe_batch: Batch | None, final: bool = False) -> None:
    name = "checkpoint.json" if final else f"checkpoint_{step:06d}.json"
    save_checkpoint(out_path / name, model, step)
    if probe_batch is not None:
        records: list = []
        model.forward(
            probe_batch.src, probe_batch.tgt_in, probe_batch.src_mask,
            probe_batch.tgt_mask, training=False, capture_to=records,
        )
        snap_name = "attention_probe.json" if final else f"attention_probe_{step:06d}.json"
        payload = [record.to_json() for record in records]
        (out_path / snap_name).write_text(json.dumps(payload) + "\n")


# ---------------------------------------------------------------------------
# checkpoints and decoding


def save_checkpoint(path, model: Seq2SeqTransformer, step: int) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "step": int(step),
        "config": model.config.to_dict(),
        "params": {name: to_snapshot(t) for name, t in model.parameters().items()},
    }
    Path(path).write_text(json.dumps(payload) + "\n")


def load_checkpoint(path) -> tuple[Seq2SeqTransformer, int]:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a recognized checkpoint file")
    config = ModelConfig.from_dict(payload["config"])
    model = Seq2SeqTransformer(config)
    params = model.parameters()
    saved = payload["params"]
    if set(saved) != set(params):
        raise ValueError(f"{path}: parameter names do not match the configured model")
    for name, tensor in params.items():
        restored = from_snapshot(saved[name])
        if restored.shape != tensor.shape:
            raise ValueError(
                f"{path}: parameter {name} has shape {restored.shape}, expected {tensor.shape}"
            )
        tensor.data = restored.data
    return model, int(payload["step"])


def greedy_decode(model: Seq2SeqTransformer, source: list[int],
                  max_len: int | None = None) -> list[int]:
    """Argmax decoding until eos, capped at 2*|source| + 5 tokens."""
    cap = 2 * len(source) + 5 if max_len is None else max_len
    pair = SentencePair(tuple(source), (), None)
    batch = make_batch([pair])
    memory = model.encode(batch.src, batch.src_mask)
    emitted: list[int] = []
    while len(emitted) < cap:
        tgt_in = np.asarray([[PAD_ID] + emitted], dtype=np.int64)
        tgt_mask = np.ones_like(tgt_in, dtype=bool)
        logits = model.decode(memory, batch.src_mask, tgt_in, tgt_mask)
        nxt = int(logits.data[0, -1].argmax())
        if nxt == EOS_ID:
            break
        emitted.append(nxt)
    return emitted
