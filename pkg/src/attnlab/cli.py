"""Command-line driver: train, analyze, gradcheck, flops, ablate, dataset.

Each invocation is a single process writing into its own output directory
(created fresh; an existing directory is refused so parallel runs cannot
trample each other).  Configuration is a flat ``key = value`` text file with
CLI flags taking precedence.  Exit codes: 0 success, 1 usage or config
error, 2 internal invariant failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .attention import ATTENTION_TYPES
from .gradsuite import TOLERANCE, run_suite
from .toydata import TASK_KINDS, ToyTask, save_jsonl, load_jsonl, shuffle_targets
from .transformer import (
    AttentionSpec,
    ModelConfig,
    greedy_decode,
    load_checkpoint,
    make_batch,
    token_accuracy,
    train,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        raise UsageError(message)


_BASE_DEFAULTS = {
    "task": "copy",
    "vocab": 50,
    "min_len": 5,
    "max_len": 20,
    "permutation_seed": 0,
    "insertion_rate": 0.1,
    "reorder": False,
    "layers": 2,
    "model_dim": 64,
    "heads": 4,
    "ffn_dim": 256,
    "dropout": 0.1,
    "label_smoothing": 0.1,
    "pre_norm": True,
    "activation": "softmax",
    "leak": 0.01,
    "norm": "none",
    "norm_init": "ones",
    "seed": 0,
    "steps": 3000,
    "batch_size": 64,
    "warmup": 400,
    "checkpoint_every": 0,
    "eval_count": 200,
}

_OVERRIDE_KEYS = tuple(
    f"{kind}_{field}"
    for kind in ATTENTION_TYPES
    for field in ("activation", "norm", "norm_init", "leak")
)

VARIANTS = {
    "softmax": {"activation": "softmax", "norm": "none"},
    "sparsemax": {"activation": "sparsemax", "norm": "none"},
    "entmax15": {"activation": "entmax15", "norm": "none"},
    "relu": {"activation": "relu", "norm": "none"},
    "relu_rmsnorm": {"activation": "relu", "norm": "rmsnorm"},
    "rela_i": {"activation": "relu", "norm": "rmsnorm", "norm_init": "xavier_uniform_gain"},
    "rela_g": {"activation": "relu", "norm": "gated_rmsnorm"},
    "relu_layernorm": {"activation": "relu", "norm": "layernorm"},
    "gelu_gated": {"activation": "gelu", "norm": "gated_rmsnorm"},
    "leaky_gated": {"activation": "leaky_relu", "norm": "gated_rmsnorm"},
    "rela_g_encoder_only": {
        "activation": "softmax", "norm": "none",
        "encoder_self_activation": "relu", "encoder_self_norm": "gated_rmsnorm",
    },
    "rela_g_decoder_only": {
        "activation": "softmax", "norm": "none",
        "decoder_self_activation": "relu", "decoder_self_norm": "gated_rmsnorm",
    },
    "rela_g_cross_only": {
        "activation": "softmax", "norm": "none",
        "cross_activation": "relu", "cross_norm": "gated_rmsnorm",
    },
}


def _coerce(key: str, raw: str):
    if key in _OVERRIDE_KEYS:
        return float(raw) if key.endswith("_leak") else raw
    default = _BASE_DEFAULTS[key]
    if isinstance(default, bool):
        lowered = raw.strip().lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise UsageError(f"expected a boolean for {key}, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config_file(path) -> dict:
    """Flat ``key = value`` lines; '#' starts a comment; unknown keys error."""
    settings = {}
    text = Path(path).read_text(encoding="utf-8")
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{line_no}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _BASE_DEFAULTS and key not in _OVERRIDE_KEYS:
            raise UsageError(f"{path}:{line_no}: unknown config key {key!r}")
        settings[key] = _coerce(key, raw)
    return settings


def assemble_settings(args) -> dict:
    settings = dict(_BASE_DEFAULTS)
    if getattr(args, "config", None):
        settings.update(parse_config_file(args.config))
    preset = getattr(args, "preset", None)
    if preset is not None:
        if preset not in VARIANTS:
            raise UsageError(f"unknown preset {preset!r}; choose from {sorted(VARIANTS)}")
        settings.update(VARIANTS[preset])
    for key in list(_BASE_DEFAULTS) + list(_OVERRIDE_KEYS):
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def build_task(settings: dict) -> ToyTask:
    return ToyTask(
        kind=settings["task"],
        vocab=settings["vocab"],
        min_len=settings["min_len"],
        max_len=settings["max_len"],
        permutation_seed=settings["permutation_seed"],
        insertion_rate=settings["insertion_rate"],
        reorder=settings["reorder"],
    )


def build_model_config(settings: dict) -> ModelConfig:
    base = {
        "activation": settings["activation"],
        "leak": settings["leak"],
        "norm": settings["norm"],
        "norm_init": settings["norm_init"],
    }
    table = {}
    for kind in ATTENTION_TYPES:
        spec = dict(base)
        for field in ("activation", "norm", "norm_init", "leak"):
            override = settings.get(f"{kind}_{field}")
            if override is not None:
                spec[field] = override
        table[kind] = AttentionSpec(**spec)
    # position table sized for the longest decode the task can ask for
    pe_capacity = max(64, 4 * settings["max_len"] + 16)
    return ModelConfig(
        layers=settings["layers"],
        model_dim=settings["model_dim"],
        heads=settings["heads"],
        ffn_dim=settings["ffn_dim"],
        src_vocab=settings["vocab"],
        tgt_vocab=settings["vocab"],
        dropout=settings["dropout"],
        label_smoothing=settings["label_smoothing"],
        seed=settings["seed"],
        pre_norm=settings["pre_norm"],
        max_len=pe_capacity,
        attention=table,
    )


def _make_run_dir(path_str: str) -> Path:
    path = Path(path_str)
    try:
        path.mkdir(parents=True, exist_ok=False)
    except FileExistsError:
        raise UsageError(f"output directory {path} already exists; runs never share a directory")
    return path


def _echo_config(path: Path, settings: dict) -> None:
    lines = [f"{key} = {settings[key]}" for key in sorted(settings)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _eval_accuracy(model, pairs, batch_size: int = 64) -> float:
    hits, total = 0.0, 0
    for start in range(0, len(pairs), batch_size):
        batch = make_batch(list(pairs[start : start + batch_size]))
        logits = model.forward(batch.src, batch.tgt_in, batch.src_mask, batch.tgt_mask)
        n = int(batch.tgt_mask.sum())
        hits += token_accuracy(logits.data, batch.tgt_out, batch.tgt_mask) * n
        total += n
    return hits / max(total, 1)


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    settings = assemble_settings(args)
    task = build_task(settings)
    config = build_model_config(settings)
    out = _make_run_dir(args.out)
    _echo_config(out / "config.txt", settings)

    state, model = train(
        config,
        task,
        steps=settings["steps"],
        batch_size=settings["batch_size"],
        warmup=settings["warmup"],
        out_dir=out,
        checkpoint_every=settings["checkpoint_every"],
    )
    eval_pairs = task.generate(np.random.default_rng([settings["seed"], 3]), settings["eval_count"])
    save_jsonl(eval_pairs, out / "eval_data.jsonl")

    final_loss = state.loss_history[-1] if state.loss_history else float("nan")
    print(f"trained {state.step} steps; final loss {final_loss:.4f}; diverged={state.diverged}")
    print(f"run directory: {out}")
    return 0


def cmd_analyze(args) -> int:
    model, step = load_checkpoint(args.checkpoint)
    pairs = load_jsonl(args.dataset)
    if not pairs:
        raise UsageError(f"{args.dataset}: empty dataset")
    out = _make_run_dir(args.out)

    sentence_records = analysis.capture_run(model, pairs, batch_size=args.batch_size)
    hallucination = None
    if args.hallucinate:
        hallucination = analysis.hallucination_probe(
            model, pairs, np.random.default_rng([args.seed, 13])
        )
    meta = {
        "checkpoint": str(args.checkpoint),
        "step": step,
        "dataset": str(args.dataset),
        "sentences": len(pairs),
        "layers": model.config.layers,
        "heads": model.config.heads,
        "temperature": args.temperature,
    }
    report = analysis.build_report(
        sentence_records,
        pairs,
        layers=model.config.layers,
        temperature=args.temperature,
        meta=meta,
        hallucination=hallucination,
    )
    if any(pair.alignment is not None and pair.unaligned_target_positions() for pair in pairs):
        report.detail["insertion_null_rates"] = analysis.insertion_null_rates(
            sentence_records, pairs
        )
    report.write_json(out / "metrics.json")
    report.write_csv(out / "metrics.csv")
    print(f"analyzed {len(pairs)} sentences at step {step}")
    print(f"report: {out / 'metrics.json'} and {out / 'metrics.csv'}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_suite(
        scope=args.scope, points=args.points, seed=args.seed, include_tensor_ops=True
    )
    failed = False
    for name in sorted(results):
        worst = results[name]
        status = "ok" if worst < TOLERANCE else "FAIL"
        failed = failed or worst >= TOLERANCE
        print(f"{name:20s} worst relative error {worst:.3e}  {status}")
    if failed:
        print(f"gradient check FAILED (tolerance {TOLERANCE:g})", file=sys.stderr)
        return 2
    return 0


def cmd_flops(args) -> int:
    soft = analysis.flops("softmax_att", args.heads, args.seq_len)
    rela = analysis.flops("rela_g", args.heads, args.seq_len, args.model_dim)
    cheaper = "softmax_att" if soft < rela else "rela_g"
    print(f"softmax_att H={args.heads} T={args.seq_len}: {soft}")
    print(f"rela_g      H={args.heads} T={args.seq_len} d={args.model_dim}: {rela}")
    print(f"cheaper: {cheaper}")
    if args.crossover:
        t_star = analysis.flops_crossover(args.heads, args.model_dim)
        print(f"closest at T={t_star}")
    return 0


def cmd_ablate(args) -> int:
    names = list(VARIANTS) if args.variants is None else [
        name.strip() for name in args.variants.split(",") if name.strip()
    ]
    unknown = [name for name in names if name not in VARIANTS]
    if unknown:
        raise UsageError(f"unknown variants {unknown}; choose from {sorted(VARIANTS)}")
    out = _make_run_dir(args.out)

    rows = []
    for name in names:
        settings = assemble_settings(args)
        settings.update(VARIANTS[name])
        task = build_task(settings)
        config = build_model_config(settings)
        run_dir = out / name
        run_dir.mkdir()
        _echo_config(run_dir / "config.txt", settings)
        state, model = train(
            config, task, steps=settings["steps"], batch_size=settings["batch_size"],
            warmup=settings["warmup"], out_dir=run_dir,
        )
        eval_pairs = task.generate(np.random.default_rng([settings["seed"], 3]), 64)
        accuracy = _eval_accuracy(model, eval_pairs)
        records = [r for sent in analysis.capture_run(model, eval_pairs) for r in sent]
        cross_sparsity = [
            v for (kind, _), v in analysis.sparsity_rate(records).items() if kind == "cross"
        ]
        cross_null = [
            v["mean"] for (kind, _), v in analysis.null_rate(records).items() if kind == "cross"
        ]
        final_loss = state.loss_history[-1] if state.loss_history else float("nan")
        rows.append(
            [name, settings["activation"], settings["norm"], repr(final_loss),
             repr(accuracy), int(state.diverged),
             repr(float(np.mean(cross_sparsity))), repr(float(np.mean(cross_null)))]
        )
        print(f"{name}: loss {final_loss:.4f} accuracy {accuracy:.4f} diverged={state.diverged}")

    with (out / "ablation.csv").open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["variant", "activation", "norm", "final_loss", "eval_accuracy",
             "diverged", "cross_sparsity", "cross_null_rate"]
        )
        writer.writerows(rows)
    print(f"summary: {out / 'ablation.csv'}")
    return 0


def cmd_dataset(args) -> int:
    settings = assemble_settings(args)
    task = build_task(settings)
    pairs = task.generate(np.random.default_rng([settings["seed"], 3]), args.count)
    if args.shuffle_targets:
        pairs = shuffle_targets(pairs, np.random.default_rng([settings["seed"], 5]))
    out = Path(args.out)
    if out.exists():
        raise UsageError(f"{out} already exists")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_jsonl(pairs, out)
    print(f"wrote {len(pairs)} pairs to {out}")
    return 0


def cmd_decode(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    source = [int(tok) for tok in args.tokens.split(",") if tok.strip()]
    print(",".join(str(tok) for tok in greedy_decode(model, source)))
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_settings_flags(sub, include_training: bool = True) -> None:
    sub.add_argument("--config", help="flat key = value config file")
    sub.add_argument("--preset", help=f"named variant: {', '.join(sorted(VARIANTS))}")
    sub.add_argument("--task", choices=TASK_KINDS)
    sub.add_argument("--vocab", type=int)
    sub.add_argument("--min-len", dest="min_len", type=int)
    sub.add_argument("--max-len", dest="max_len", type=int)
    sub.add_argument("--permutation-seed", dest="permutation_seed", type=int)
    sub.add_argument("--insertion-rate", dest="insertion_rate", type=float)
    sub.add_argument("--reorder", action="store_const", const=True, default=None)
    sub.add_argument("--seed", type=int)
    if include_training:
        sub.add_argument("--layers", type=int)
        sub.add_argument("--model-dim", dest="model_dim", type=int)
        sub.add_argument("--heads", type=int)
        sub.add_argument("--ffn-dim", dest="ffn_dim", type=int)
        sub.add_argument("--dropout", type=float)
        sub.add_argument("--label-smoothing", dest="label_smoothing", type=float)
        sub.add_argument("--post-norm", dest="pre_norm", action="store_const",
                         const=False, default=None)
        sub.add_argument("--activation", choices=(
            "softmax", "relu", "sparsemax", "entmax15", "gelu", "leaky_relu"))
        sub.add_argument("--leak", type=float)
        sub.add_argument("--norm", choices=("none", "rmsnorm", "layernorm", "gated_rmsnorm"))
        sub.add_argument("--norm-init", dest="norm_init",
                         choices=("ones", "xavier_uniform_gain"))
        for kind in ATTENTION_TYPES:
            flag = kind.replace("_", "-")
            sub.add_argument(f"--{flag}-activation", dest=f"{kind}_activation")
            sub.add_argument(f"--{flag}-norm", dest=f"{kind}_norm")
            sub.add_argument(f"--{flag}-norm-init", dest=f"{kind}_norm_init")
            sub.add_argument(f"--{flag}-leak", dest=f"{kind}_leak", type=float)
        sub.add_argument("--steps", type=int)
        sub.add_argument("--batch-size", dest="batch_size", type=int)
        sub.add_argument("--warmup", type=int)
        sub.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
        sub.add_argument("--eval-count", dest="eval_count", type=int)


def _build_parser() -> _Parser:
    parser = _Parser(prog="attnlab", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p_train = subs.add_parser("train", help="train a model on a toy task")
    p_train.add_argument("--out", required=True, help="fresh run directory")
    _add_settings_flags(p_train)
    p_train.set_defaults(fn=cmd_train)

    p_analyze = subs.add_parser("analyze", help="attention diagnostics for a checkpoint")
    p_analyze.add_argument("--checkpoint", required=True)
    p_analyze.add_argument("--dataset", required=True, help="JSONL sentence pairs")
    p_analyze.add_argument("--out", required=True, help="fresh output directory")
    p_analyze.add_argument("--temperature", type=float, default=1.0)
    p_analyze.add_argument("--hallucinate", action="store_true",
                           help="also probe a target-deranged copy of the dataset")
    p_analyze.add_argument("--batch-size", dest="batch_size", type=int, default=32)
    p_analyze.add_argument("--seed", type=int, default=0)
    p_analyze.set_defaults(fn=cmd_analyze)

    p_grad = subs.add_parser("gradcheck", help="finite-difference adjoint verification")
    p_grad.add_argument("--scope", help="single component name (default: all)")
    p_grad.add_argument("--points", type=int, default=20)
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.set_defaults(fn=cmd_gradcheck)

    p_flops = subs.add_parser("flops", help="attention cost model")
    p_flops.add_argument("--heads", type=int, required=True)
    p_flops.add_argument("--seq-len", dest="seq_len", type=int, required=True)
    p_flops.add_argument("--model-dim", dest="model_dim", type=int, required=True)
    p_flops.add_argument("--crossover", action="store_true")
    p_flops.set_defaults(fn=cmd_flops)

    p_ablate = subs.add_parser("ablate", help="train the named variants and summarize")
    p_ablate.add_argument("--out", required=True)
    p_ablate.add_argument("--variants", help="comma-separated variant names (default: all)")
    _add_settings_flags(p_ablate)
    p_ablate.set_defaults(fn=cmd_ablate)

    p_data = subs.add_parser("dataset", help="materialize a JSONL evaluation set")
    p_data.add_argument("--out", required=True)
    p_data.add_argument("--count", type=int, default=200)
    p_data.add_argument("--shuffle-targets", dest="shuffle_targets", action="store_true")
    _add_settings_flags(p_data, include_training=False)
    p_data.set_defaults(fn=cmd_dataset)

    p_decode = subs.add_parser("decode", help="greedy-decode one comma-separated source")
    p_decode.add_argument("--checkpoint", required=True)
    p_decode.add_argument("--tokens", required=True)
    p_decode.set_defaults(fn=cmd_decode)

    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    try:
        return args.fn(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # anything else is a broken internal invariant
        print(f"internal error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
