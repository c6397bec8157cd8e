"""Diagnostics over captured attention maps.

Everything here consumes ``AttentionRecord`` objects (weights post
activation, with validity masks) and the gold alignments shipped with the
toy tasks:

  sparsity_rate     fraction of exactly-zero entries among valid cells
  null_rate         fraction of valid query rows that are entirely zero
  js_diversity      generalized Jensen-Shannon divergence between heads
  aer               alignment error rate of argmax links vs gold
  flops             closed-form per-layer attention cost model

Rectified attention rows are not distributions, so for the JS measure each
row is re-normalized with a softmax over its powered weights (alpha^tau) and
an extra dummy outcome absorbs null rows as a point mass: a query attending
to nothing is maximally confident about "no key".
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .activations import DISTRIBUTION_TAGS
from .attention import ATTENTION_TYPES, AttentionRecord
from .toydata import GoldAlignment, SentencePair, shuffle_targets
from .transformer import Seq2SeqTransformer, make_batch

REPORT_METRICS = (
    "sparsity_rate",
    "null_rate",
    "null_variance",
    "js_diversity",
    "aer_layer",
    "aer_best_head",
)


def group_records(records) -> dict:
    groups: dict = defaultdict(list)
    for record in records:
        groups[(record.kind, record.layer)].append(record)
    return dict(groups)


def _row_is_null(alpha_head: np.ndarray, valid: np.ndarray, row: int) -> bool:
    live = valid[row]
    return bool(live.any()) and not np.any(alpha_head[row, live] != 0.0)


# ---------------------------------------------------------------------------
# sparsity and null measurements


def sparsity_rate(records) -> dict:
    """Per (kind, layer): zero fraction among valid cells, averaged over heads."""
    out = {}
    for key, group in group_records(records).items():
        heads = group[0].alpha.shape[0]
        zeros = np.zeros(heads)
        cells = np.zeros(heads)
        for record in group:
            live = record.valid & record.query_mask[:, None]
            for h in range(heads):
                zeros[h] += np.count_nonzero(record.alpha[h][live] == 0.0)
                cells[h] += live.sum()
        out[key] = float(np.mean(zeros / np.maximum(cells, 1)))
    return out


def null_rate(records) -> dict:
    """Per (kind, layer): {'mean', 'per_head', 'variance'} of all-zero rows."""
    out = {}
    for key, group in group_records(records).items():
        heads = group[0].alpha.shape[0]
        nulls = np.zeros(heads)
        rows = 0
        for record in group:
            # a candidate row is live on the query side and can reach a key
            live_rows = [
                i for i in np.flatnonzero(record.query_mask) if record.valid[i].any()
            ]
            rows += len(live_rows)
            for h in range(heads):
                for i in live_rows:
                    if _row_is_null(record.alpha[h], record.valid, i):
                        nulls[h] += 1
        per_head = nulls / max(rows, 1)
        out[key] = {
            "mean": float(per_head.mean()),
            "per_head": per_head.tolist(),
            "variance": float(per_head.var()),
        }
    return out


def layer_attention(alpha: np.ndarray) -> np.ndarray:
    """Mean over heads: [H, n, m] -> [n, m]."""
    return alpha.mean(axis=0)


def shifted(alpha: np.ndarray) -> np.ndarray:
    """Drop the first decoding step's weights; row i then describes target i-1."""
    return alpha[..., 1:, :]


# ---------------------------------------------------------------------------
# alignment error rate


def extract_links(matrix: np.ndarray, n_source: int, n_target: int,
                  use_shifted: bool = False) -> frozenset:
    """Argmax links {(source, target)} from one attention matrix.

    Row t describes target t (or t+1 describes t with ``use_shifted``);
    argmax runs over source content columns only, and a target whose content
    slice is entirely zero yields no link (null rows abstain).
    """
    links = []
    for t in range(n_target):
        row = matrix[t + 1 if use_shifted else t, :n_source]
        if not np.any(row != 0.0):
            continue
        links.append((int(row.argmax()), t))
    return frozenset(links)


def aer(links: frozenset, gold: GoldAlignment) -> float:
    """1 - (|A & S| + |A & P|) / (|A| + |S|); 0 is perfect."""
    a, s, p = len(links), len(gold.sure), gold.possible
    hits = len(links & gold.sure) + len(links & p)
    denom = a + s
    if denom == 0:
        return 0.0
    return 1.0 - hits / denom


class AerAccumulator:
    """Corpus-level AER: pools link and intersection counts over sentences."""

    def __init__(self):
        self.hits = 0
        self.links = 0
        self.sure = 0

    def add(self, links: frozenset, gold: GoldAlignment) -> None:
        self.hits += len(links & gold.sure) + len(links & gold.possible)
        self.links += len(links)
        self.sure += len(gold.sure)

    def value(self) -> float:
        denom = self.links + self.sure
        if denom == 0:
            return 0.0
        return 1.0 - self.hits / denom


def corpus_aer(sentence_records, pairs, layer: int, use_shifted: bool = False,
               head: int | None = None) -> float:
    """AER across a dataset for one cross-attention layer.

    ``head=None`` scores the head-averaged layer attention, otherwise the
    given head.  Sentences without gold alignments are skipped.
    """
    acc = AerAccumulator()
    for records, pair in zip(sentence_records, pairs):
        if pair.alignment is None:
            continue
        for record in records:
            if record.kind != "cross" or record.layer != layer:
                continue
            matrix = record.alpha[head] if head is not None else layer_attention(record.alpha)
            links = extract_links(matrix, len(pair.source), len(pair.target), use_shifted)
            acc.add(links, pair.alignment)
    return acc.value()


# ---------------------------------------------------------------------------
# head diversity


def _entropy(p: np.ndarray) -> float:
    live = p > 0.0
    return float(-(p[live] * np.log(p[live])).sum())


def _head_distributions(alpha: np.ndarray, valid_row: np.ndarray, row: int,
                        activation: str, temperature: float) -> np.ndarray:
    """Rows of all heads re-normalized over valid keys plus a dummy outcome."""
    heads = alpha.shape[0]
    live = valid_row
    k = int(live.sum())
    dists = np.zeros((heads, k + 1))
    for h in range(heads):
        weights = alpha[h, row, live]
        if activation in DISTRIBUTION_TAGS:
            dists[h, :k] = weights / weights.sum()
        elif not np.any(weights != 0.0):
            dists[h, k] = 1.0  # null row: point mass on the dummy outcome
        else:
            # sign-preserving power keeps rare negative weights (gelu, leaky
            # rectifiers) in the real domain; identity at temperature 1
            logits = np.sign(weights) * np.power(np.abs(weights), temperature)
            logits -= logits.max()
            e = np.exp(logits)
            dists[h, :k] = e / e.sum()
    return dists


def js_divergence(dists: np.ndarray) -> float:
    """Generalized JS: entropy of the mean minus mean of the entropies."""
    mean = dists.mean(axis=0)
    return _entropy(mean) - float(np.mean([_entropy(d) for d in dists]))


def js_diversity(records, temperature: float = 1.0) -> dict:
    """Per (kind, layer): mean JS divergence between heads over valid rows."""
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    out = {}
    for key, group in group_records(records).items():
        values = []
        for record in group:
            for i in np.flatnonzero(record.query_mask):
                if not record.valid[i].any():
                    continue
                dists = _head_distributions(
                    record.alpha, record.valid[i], i, record.activation, temperature
                )
                values.append(js_divergence(dists))
        out[key] = float(np.mean(values)) if values else 0.0
    return out


# ---------------------------------------------------------------------------
# model-in-the-loop probes


def capture_run(model: Seq2SeqTransformer, pairs, batch_size: int = 32):
    """Teacher-forced eval forward over ``pairs`` collecting attention.

    Returns one list of AttentionRecords per sentence, in dataset order.
    """
    per_sentence = [[] for _ in pairs]
    for start in range(0, len(pairs), batch_size):
        chunk = list(pairs[start : start + batch_size])
        batch = make_batch(chunk)
        raw: list[AttentionRecord] = []
        model.forward(batch.src, batch.tgt_in, batch.src_mask, batch.tgt_mask,
                      capture_to=raw)
        b = len(chunk)
        for idx, record in enumerate(raw):
            per_sentence[start + idx % b].append(record)
    return per_sentence


def insertion_null_rates(sentence_records, pairs, use_shifted: bool = True) -> dict:
    """Null-row rates at aligned vs unaligned (inserted) target positions.

    Pools cross-attention rows over sentences, layers and heads.  With
    ``use_shifted`` the row consuming target token t (row t+1) speaks for
    position t, which is where a token without a source counterpart shows up.
    """
    counts = {"aligned": [0, 0], "inserted": [0, 0]}  # [nulls, rows]
    for records, pair in zip(sentence_records, pairs):
        inserted = set(pair.unaligned_target_positions())
        for record in records:
            if record.kind != "cross":
                continue
            heads = record.alpha.shape[0]
            for t in range(len(pair.target)):
                row = t + 1 if use_shifted else t
                bucket = counts["inserted" if t in inserted else "aligned"]
                for h in range(heads):
                    bucket[0] += _row_is_null(record.alpha[h], record.valid, row)
                    bucket[1] += 1
    return {
        name: (nulls / rows if rows else 0.0) for name, (nulls, rows) in counts.items()
    }


def hallucination_probe(model: Seq2SeqTransformer, pairs,
                        rng: np.random.Generator) -> dict:
    """Cross-attention null rates on a dataset vs its target-deranged twin."""
    aligned_records = [r for sent in capture_run(model, pairs) for r in sent]
    deranged = shuffle_targets(list(pairs), rng)
    shuffled_records = [r for sent in capture_run(model, deranged) for r in sent]
    aligned = {
        key[1]: val["mean"] for key, val in null_rate(aligned_records).items() if key[0] == "cross"
    }
    shuffled = {
        key[1]: val["mean"] for key, val in null_rate(shuffled_records).items() if key[0] == "cross"
    }
    return {
        "aligned": aligned,
        "shuffled": shuffled,
        "difference": {layer: shuffled[layer] - aligned[layer] for layer in aligned},
    }


# ---------------------------------------------------------------------------
# FLOPs model

FLOPS_MODELS = ("softmax_att", "rela_g")


def flops(model: str, heads: int, seq_len: int, model_dim: int = 0) -> int:
    """Per-layer attention cost beyond the shared projections.

    softmax_att: 3*H*T^2 - H*T   (scores, exponentials, weighted sum)
    rela_g:      H*T^2 + 10*T*d + T   (rectification is free; the gate and
    RMS normalization cost a fixed multiple of the width per position)
    """
    if model not in FLOPS_MODELS:
        raise ValueError(f"unknown flops model {model!r}; choose from {FLOPS_MODELS}")
    if heads < 1 or seq_len < 1:
        raise ValueError("heads and seq_len must be positive")
    h, t, d = int(heads), int(seq_len), int(model_dim)
    if model == "softmax_att":
        return 3 * h * t * t - h * t
    if d < 1:
        raise ValueError("rela_g flops need a positive model_dim")
    return h * t * t + 10 * t * d + t


def flops_crossover(heads: int, model_dim: int, limit: int = 1_000_000) -> int:
    """Sequence length where the two cost models are closest (by scan)."""
    best_t, best_gap = 1, None
    for t in range(1, limit + 1):
        gap = abs(flops("softmax_att", heads, t) - flops("rela_g", heads, t, model_dim))
        if best_gap is None or gap < best_gap:
            best_t, best_gap = t, gap
        elif flops("softmax_att", heads, t) > flops("rela_g", heads, t, model_dim):
            break  # quadratic lead is now growing; the scan is done
    return best_t


# ---------------------------------------------------------------------------
# report assembly


@dataclass
class MetricsReport:
    meta: dict
    rows: list  # grid: one dict per layer x attention type x metric
    detail: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"meta": self.meta, "rows": self.rows, "detail": self.detail}

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    def write_csv(self, path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["layer", "attention_type", "metric", "value"])
            for row in self.rows:
                value = row["value"]
                writer.writerow(
                    [row["layer"], row["attention_type"], row["metric"],
                     "" if value is None else repr(value)]
                )


def build_report(sentence_records, pairs, layers: int, temperature: float = 1.0,
                 meta: dict | None = None, hallucination: dict | None = None) -> MetricsReport:
    """Assemble the full metrics grid plus per-head detail for a capture run."""
    flat = [record for sent in sentence_records for record in sent]
    sparsity = sparsity_rate(flat)
    nulls = null_rate(flat)
    diversity = js_diversity(flat, temperature)
    heads = flat[0].alpha.shape[0] if flat else 0
    have_gold = any(p.alignment is not None for p in pairs)

    aer_layer: dict = {}
    aer_heads: dict = {}
    if have_gold:
        for layer in range(layers):
            aer_layer[layer] = {
                "normal": corpus_aer(sentence_records, pairs, layer, use_shifted=False),
                "shifted": corpus_aer(sentence_records, pairs, layer, use_shifted=True),
            }
            aer_heads[layer] = {
                "normal": [
                    corpus_aer(sentence_records, pairs, layer, use_shifted=False, head=h)
                    for h in range(heads)
                ],
                "shifted": [
                    corpus_aer(sentence_records, pairs, layer, use_shifted=True, head=h)
                    for h in range(heads)
                ],
            }

    rows = []
    for layer in range(layers):
        for kind in ATTENTION_TYPES:
            key = (kind, layer)
            values = {
                "sparsity_rate": sparsity.get(key),
                "null_rate": nulls[key]["mean"] if key in nulls else None,
                "null_variance": nulls[key]["variance"] if key in nulls else None,
                "js_diversity": diversity.get(key),
                "aer_layer": aer_layer[layer]["normal"] if kind == "cross" and have_gold else None,
                "aer_best_head": (
                    min(aer_heads[layer]["normal"]) if kind == "cross" and have_gold else None
                ),
            }
            for metric in REPORT_METRICS:
                rows.append(
                    {"layer": layer, "attention_type": kind, "metric": metric,
                     "value": values[metric]}
                )

    detail = {
        "null_rate": {f"{kind}/{layer}": val for (kind, layer), val in nulls.items()},
        "aer": {
            "layer": {str(l): v for l, v in aer_layer.items()},
            "per_head": {str(l): v for l, v in aer_heads.items()},
        },
        "temperature": temperature,
    }
    if hallucination is not None:
        detail["hallucination"] = {
            part: {str(l): v for l, v in series.items()}
            for part, series in hallucination.items()
        }
    return MetricsReport(meta=meta or {}, rows=rows, detail=detail)
