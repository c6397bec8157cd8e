"""Synthetic sequence-to-sequence tasks with gold alignments.

Four task kinds over a shared integer vocabulary:

  copy        target = source                       alignment diagonal
  reverse     target = reversed source              alignment anti-diagonal
  lexical_translate
              target_i = bijection(source_{pi(i)})  alignment {(pi(i), i)}
  lexical_translate_with_insertions
              lexical_translate plus random content tokens spliced into the
              target; inserted tokens carry no gold link

The bijection is a fixed permutation of the content vocabulary.  pi is a
fixed per-task position permutation: identity by default, or (with
``reorder=True``) induced from a seeded master permutation so that relative
order is consistent across sentence lengths.  Token ids 0 and 1 are pad and
end-of-sequence; content ids start at 2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PAD_ID = 0
EOS_ID = 1
CONTENT_BASE = 2

TASK_KINDS = (
    "copy",
    "reverse",
    "lexical_translate",
    "lexical_translate_with_insertions",
)

_LEXICAL_KINDS = ("lexical_translate", "lexical_translate_with_insertions")


@dataclass(frozen=True)
class GoldAlignment:
    """Sure links S and possible links P over content positions; S is a
    subset of P, and P defaults to S."""

    sure: frozenset
    possible: frozenset

    def __post_init__(self):
        if not self.sure <= self.possible:
            raise ValueError("sure links must be a subset of possible links")

    @classmethod
    def of(cls, sure, possible=None) -> "GoldAlignment":
        sure = frozenset((int(s), int(t)) for s, t in sure)
        possible = sure if possible is None else frozenset((int(s), int(t)) for s, t in possible)
        return cls(sure=sure, possible=possible | sure)


@dataclass(frozen=True)
class SentencePair:
    source: tuple
    target: tuple
    alignment: GoldAlignment | None

    def unaligned_target_positions(self) -> tuple:
        """Target content positions with no sure link (inserted tokens)."""
        if self.alignment is None:
            return tuple(range(len(self.target)))
        linked = {t for _, t in self.alignment.sure}
        return tuple(i for i in range(len(self.target)) if i not in linked)


@dataclass
class ToyTask:
    kind: str
    vocab: int = 50
    min_len: int = 5
    max_len: int = 20
    permutation_seed: int = 0
    insertion_rate: float = 0.1
    reorder: bool = False
    bijection: np.ndarray = field(init=False, repr=False)
    _master_order: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}; choose from {TASK_KINDS}")
        if self.vocab < 4:
            raise ValueError(f"vocab must be at least 4 (pad, eos, two content ids), got {self.vocab}")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError(f"empty length range [{self.min_len}, {self.max_len}]")
        if not 0.0 <= self.insertion_rate <= 0.5:
            raise ValueError(f"insertion rate must lie in [0, 0.5], got {self.insertion_rate}")
        table = np.arange(self.vocab, dtype=np.int64)
        if self.kind in _LEXICAL_KINDS:
            rng = np.random.default_rng(self.permutation_seed)
            table = table.copy()
            table[CONTENT_BASE:] = CONTENT_BASE + rng.permutation(self.vocab - CONTENT_BASE)
        self.bijection = table
        master = np.arange(self.max_len, dtype=np.int64)
        if self.reorder:
            master = np.random.default_rng(self.permutation_seed + 1).permutation(self.max_len)
        self._master_order = master

    # -- task mechanics -------------------------------------------------

    def position_permutation(self, length: int) -> np.ndarray:
        """pi for sentences of ``length``: target slot i reads source pi(i)."""
        if length > self.max_len:
            raise ValueError(f"length {length} exceeds max_len {self.max_len}")
        order = np.argsort(self._master_order[:length], kind="stable")
        return order.astype(np.int64)

    def _make_pair(self, rng: np.random.Generator, length: int) -> SentencePair:
        source = rng.integers(CONTENT_BASE, self.vocab, size=length)
        if self.kind == "copy":
            return SentencePair(
                tuple(int(t) for t in source),
                tuple(int(t) for t in source),
                GoldAlignment.of((i, i) for i in range(length)),
            )
        if self.kind == "reverse":
            return SentencePair(
                tuple(int(t) for t in source),
                tuple(int(t) for t in source[::-1]),
                GoldAlignment.of((length - 1 - i, i) for i in range(length)),
            )
        pi = self.position_permutation(length)
        translated = self.bijection[source[pi]]
        if self.kind == "lexical_translate":
            return SentencePair(
                tuple(int(t) for t in source),
                tuple(int(t) for t in translated),
                GoldAlignment.of((int(pi[i]), i) for i in range(length)),
            )
        # insertions: each slot independently gains a random unaligned token
        target: list[int] = []
        links = []
        for i in range(length):
            if rng.random() < self.insertion_rate:
                target.append(int(rng.integers(CONTENT_BASE, self.vocab)))
            links.append((int(pi[i]), len(target)))
            target.append(int(translated[i]))
        return SentencePair(
            tuple(int(t) for t in source),
            tuple(target),
            GoldAlignment.of(links),
        )

    def generate(self, rng: np.random.Generator, count: int) -> list[SentencePair]:
        """Evaluation-style sampling: each sentence draws its own length."""
        lengths = rng.integers(self.min_len, self.max_len + 1, size=count)
        return [self._make_pair(rng, int(l)) for l in lengths]

    def sample_batch(self, rng: np.random.Generator, size: int) -> list[SentencePair]:
        """Training-style sampling: one length per batch (length bucketing)."""
        length = int(rng.integers(self.min_len, self.max_len + 1))
        return [self._make_pair(rng, length) for _ in range(size)]


def shuffle_targets(pairs: list[SentencePair], rng: np.random.Generator) -> list[SentencePair]:
    """Derange targets across pairs; alignments become meaningless (None).

    Sattolo's algorithm yields a uniform full cycle, so no pair keeps its
    original target; for two pairs this is exactly the swap.
    """
    n = len(pairs)
    if n < 2:
        raise ValueError("shuffle_targets needs at least 2 pairs to derange")
    perm = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i))
        perm[i], perm[j] = perm[j], perm[i]
    return [
        SentencePair(pair.source, pairs[int(perm[i])].target, None)
        for i, pair in enumerate(pairs)
    ]


# ---------------------------------------------------------------------------
# line-oriented JSON dataset files


def save_jsonl(pairs: list[SentencePair], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for pair in pairs:
            record = {
                "source": list(pair.source),
                "target": list(pair.target),
                "sure": None if pair.alignment is None else sorted(pair.alignment.sure),
                "possible": None if pair.alignment is None else sorted(pair.alignment.possible),
            }
            fh.write(json.dumps(record) + "\n")


def load_jsonl(path) -> list[SentencePair]:
    pairs = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise ValueError(f"{path}: malformed JSON on line {line_no}: {err}") from None
            alignment = None
            if record.get("sure") is not None:
                alignment = GoldAlignment.of(record["sure"], record.get("possible"))
            pairs.append(
                SentencePair(tuple(record["source"]), tuple(record["target"]), alignment)
            )
    return pairs
