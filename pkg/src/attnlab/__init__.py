"""Desk-scale laboratory for rectified and sparsified attention.

Everything runs on a small reverse-mode tensor core (`tensor`), with
attention activations, head-output normalization, a trainable
encoder-decoder, synthetic alignment tasks, and diagnostics layered on top.
"""

from .tensor import Graph, Tensor, grad_check, node
from .activations import ActivationKind, apply_activation
from .normalization import NormConfig, NormParams, apply_norm, init_gain
from .attention import AttentionConfig, AttentionRecord, MultiHeadAttention, causal_mask
from .toydata import GoldAlignment, SentencePair, ToyTask, load_jsonl, save_jsonl, shuffle_targets
from .transformer import (
    AttentionSpec,
    ModelConfig,
    Seq2SeqTransformer,
    greedy_decode,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .analysis import (
    MetricsReport,
    build_report,
    capture_run,
    corpus_aer,
    flops,
    flops_crossover,
    insertion_null_rates,
    js_diversity,
    null_rate,
    sparsity_rate,
)

__version__ = "0.1.0"

__all__ = [
    "ActivationKind",
    "AttentionConfig",
    "AttentionRecord",
    "AttentionSpec",
    "GoldAlignment",
    "Graph",
    "MetricsReport",
    "ModelConfig",
    "MultiHeadAttention",
    "NormConfig",
    "NormParams",
    "SentencePair",
    "Seq2SeqTransformer",
    "Tensor",
    "ToyTask",
    "apply_activation",
    "apply_norm",
    "build_report",
    "capture_run",
    "causal_mask",
    "corpus_aer",
    "flops",
    "flops_crossover",
    "grad_check",
    "greedy_decode",
    "init_gain",
    "insertion_null_rates",
    "js_diversity",
    "load_checkpoint",
    "load_jsonl",
    "node",
    "null_rate",
    "save_checkpoint",
    "save_jsonl",
    "shuffle_targets",
    "sparsity_rate",
    "train",
    "__version__",
]
