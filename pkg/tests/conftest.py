"""Shared fixtures for the acceptance suite.

The trained-model bundles are expensive (a few minutes each on one CPU), so
they are session-scoped and only built when a test asks for them; the unit
test files never touch them.  Criterion verdict lines are collected here and
replayed in the terminal summary so `pytest -v` output always carries one
pass/fail line per acceptance criterion.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import pytest

from attnlab import analysis
from attnlab.toydata import ToyTask
from attnlab.transformer import Seq2SeqTransformer, ModelConfig, TrainState, make_batch, token_accuracy, train

CRITERION_LINES: list[str] = []


def record_criterion(number: int, name: str, passed: bool, detail: str) -> None:
    verdict = "PASS" if passed else "FAIL"
    line = f"criterion {number:2d} {name}: {verdict}  ({detail})"
    CRITERION_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERION_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in sorted(CRITERION_LINES):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def criterion():
    return record_criterion


@dataclass
class RunBundle:
    """One trained configuration plus everything the diagnostics need."""

    name: str
    task: ToyTask
    state: TrainState
    model: Seq2SeqTransformer
    eval_pairs: list
    minutes: float
    accuracy: float = field(init=False)
    sentence_records: list = field(init=False)

    def __post_init__(self):
        hits, total = 0.0, 0
        for start in range(0, len(self.eval_pairs), 64):
            batch = make_batch(self.eval_pairs[start : start + 64])
            logits = self.model.forward(batch.src, batch.tgt_in, batch.src_mask, batch.tgt_mask)
            n = int(batch.tgt_mask.sum())
            hits += token_accuracy(logits.data, batch.tgt_out, batch.tgt_mask) * n
            total += n
        self.accuracy = hits / total
        self.sentence_records = analysis.capture_run(self.model, self.eval_pairs)

    @property
    def flat_records(self):
        return [r for sent in self.sentence_records for r in sent]


def train_bundle(name: str, task_kind: str, activation: str, norm: str,
                 seed: int = 0, steps: int = 3000, eval_count: int = 200,
                 **task_kw) -> RunBundle:
    task = ToyTask(kind=task_kind, vocab=50, **task_kw)
    config = ModelConfig.uniform(activation=activation, norm=norm, seed=seed)
    t0 = time.time()
    state, model = train(config, task, steps=steps, batch_size=64, warmup=400)
    minutes = (time.time() - t0) / 60
    eval_pairs = task.generate(np.random.default_rng([seed, 3]), eval_count)
    return RunBundle(name=name, task=task, state=state, model=model,
                     eval_pairs=eval_pairs, minutes=minutes)


@pytest.fixture(scope="session")
def copy_softmax_run():
    return train_bundle("copy_softmax", "copy", "softmax", "none")


@pytest.fixture(scope="session")
def copy_rela_g_runs():
    # three seeds back the divergence-flag clause; seed 0 also serves accuracy
    return {seed: train_bundle(f"copy_rela_g_s{seed}", "copy", "relu",
                               "gated_rmsnorm", seed=seed)
            for seed in (0, 1, 2)}


@pytest.fixture(scope="session")
def lexical_softmax_run():
    return train_bundle("lexical_softmax", "lexical_translate", "softmax", "none")


@pytest.fixture(scope="session")
def lexical_rela_g_run():
    return train_bundle("lexical_rela_g", "lexical_translate", "relu", "gated_rmsnorm")


@pytest.fixture(scope="session")
def insert_rela_g_run():
    return train_bundle("insert_rela_g", "lexical_translate_with_insertions",
                        "relu", "gated_rmsnorm")
