"""Command-line workflow: corpus generation, training, duration estimation,
generation, evaluation, and the paired on/off cross-attention comparison.

Exit codes: 0 success, 2 usage/config error, 3 runtime/divergence error.
All randomness flows from explicit seeds; reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint
from .decoding import SamplerConfig, generate
from .duration import (
    DEFAULT_FRAME_RATE,
    estimate_from_rate,
    estimate_from_reference,
    target_token_count,
)
from .metrics import (
    bootstrap_ci,
    duration_accuracy,
    error_rate,
    style_similarity,
    wilson_interval,
)
from .model import ModelConfig
from .synthcorpus import (
    CorpusConfig,
    SymbolSpec,
    Utterance,
    build_symbol_spec,
    generate_corpus,
    load_corpus,
    load_manifest,
    prompt_for,
    save_corpus,
)
from .training import DivergenceError, TrainConfig, train, write_loss_csv

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3


class ConfigError(ValueError):
    """Raised for malformed run-configuration files."""


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    corpus: CorpusConfig
    sampler: SamplerConfig


_SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "corpus": CorpusConfig,
    "sampler": SamplerConfig,
}


def load_run_config(path=None) -> RunConfig:
    """Parse a JSON run configuration; unknown keys are rejected outright."""
    if path is None:
        raw = {}
    else:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    for key in raw:
        if key not in _SECTIONS:
            raise ConfigError(f"unknown config key {key!r}")
    built = {}
    for section, cls in _SECTIONS.items():
        body = raw.get(section, {})
        if not isinstance(body, dict):
            raise ConfigError(f"config section {section!r} must be a JSON object")
        known = {f.name for f in fields(cls)}
        for key in body:
            if key not in known:
                raise ConfigError(f"unknown config key {section}.{key!r}")
        if "stretch_factors" in body:
            body = dict(body, stretch_factors=tuple(body["stretch_factors"]))
        try:
            built[section] = cls(**body)
        except ValueError as err:
            raise ConfigError(f"config section {section!r}: {err}") from None
    return RunConfig(**built)


def _parse_tokens(text: str) -> list:
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


# ---------------------------------------------------------------------------
# Evaluation core (shared by eval and ablate)
# ---------------------------------------------------------------------------


def evaluate_model(params, config, spec: SymbolSpec, utterances, sampler: SamplerConfig,
                   frame_rate: int = DEFAULT_FRAME_RATE, da_margin: float = 0.10):
    """Generate at oracle target lengths and score the result set.

    Per-utterance sampler seeds derive as base seed + index, so two
    configurations evaluated on the same split are exactly paired. Returns
    (reports, scatter rows, per-utterance detail dict).
    """
    alphabets = spec.style_alphabets()
    error_rates = []
    similarities = []
    target_seconds = []
    generated_seconds = []
    rows = []
    for i, utt in enumerate(utterances):
        prompt = prompt_for(utt, spec)
        result = generate(utt.text, prompt, utt.duration_tokens, params, config,
                          replace(sampler, seed=sampler.seed + i))
        error_rates.append(error_rate(utt.audio, result.tokens))
        if result.tokens:
            similarities.append(style_similarity(prompt, result.tokens, alphabets))
        else:
            similarities.append(0.0)
        target_seconds.append(utt.duration_tokens / frame_rate)
        generated_seconds.append(result.generated_len / frame_rate)
        rows.append((i, utt.duration_tokens / frame_rate, result.generated_len / frame_rate))
    da = duration_accuracy(generated_seconds, target_seconds, da_margin)
    successes = round(da * len(utterances))
    reports = [
        bootstrap_ci(error_rates, metric="error_rate"),
        bootstrap_ci(similarities, metric="style_similarity"),
        wilson_interval(successes, len(utterances), metric="duration_accuracy"),
    ]
    detail = {
        "error_rates": error_rates,
        "similarities": similarities,
        "target_seconds": target_seconds,
        "generated_seconds": generated_seconds,
    }
    return reports, rows, detail


def _write_reports(path, reports) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=2)
        fh.write("\n")


def _write_scatter(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("utterance,target_duration,generated_duration\n")
        for idx, target, generated in rows:
            fh.write(f"{idx},{target:.6f},{generated:.6f}\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_corpus(args) -> int:
    cfg = load_run_config(args.config)
    corpus = generate_corpus(cfg.corpus, cfg.model.audio_vocab)
    save_corpus(corpus, args.out)
    print(f"wrote {len(corpus.train)}/{len(corpus.val)}/{len(corpus.test)} utterances to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    corpus = load_corpus(args.corpus)
    loss_csv = args.loss_csv if args.loss_csv else str(args.out) + ".losses.csv"
    try:
        result = train(corpus, cfg.train, cfg.model, checkpoint_path=args.out,
                       verbose=not args.quiet)
    except DivergenceError as err:
        if err.result is not None:
            write_loss_csv(loss_csv, err.result.curve)
        print(f"error: {err} (best checkpoint retained at {args.out})", file=sys.stderr)
        return EXIT_RUNTIME
    write_loss_csv(loss_csv, result.curve)
    print(f"best validation loss {result.best_val_loss:.4f} at step {result.best_step}; "
          f"checkpoint at {args.out}, losses at {loss_csv}")
    return EXIT_OK


def _load_model(checkpoint_path, pm_rope: str | None):
    params = load_checkpoint(checkpoint_path)
    config = params.config
    if pm_rope is not None:
        config = replace(config, pm_rope_enabled=(pm_rope == "on"))
    return params, config


def _prompt_from_args(args, config, text) -> list:
    if args.prompt_tokens is not None:
        prompt = _parse_tokens(args.prompt_tokens)
        for token in prompt:
            if not 0 <= token < config.audio_vocab_ext:
                raise ConfigError(f"prompt token {token} outside [0, {config.audio_vocab_ext})")
        return prompt
    if args.style is not None:
        if args.corpus is None:
            raise ConfigError("--style needs --corpus to rebuild the symbol table")
        corpus_config, audio_vocab = load_manifest(args.corpus)
        spec = build_symbol_spec(corpus_config, audio_vocab)
        probe = Utterance(text=list(text), style_id=args.style, stretch=1, audio=[],
                          duration_tokens=1)
        return prompt_for(probe, spec)
    return []


def cmd_generate(args) -> int:
    params, config = _load_model(args.checkpoint, args.pm_rope)
    text = _parse_tokens(args.text)
    prompt = _prompt_from_args(args, config, text)
    if args.target_seconds is not None:
        target_len = target_token_count(args.target_seconds, args.frame_rate)
    else:
        target_len = args.oracle_length
    sampler = SamplerConfig(top_k=args.top_k, top_p=args.top_p,
                            temperature=args.temperature, seed=args.seed)
    result = generate(text, prompt, target_len, params, config, sampler)
    payload = json.dumps({
        "tokens": result.tokens,
        "stop_reason": result.stop_reason,
        "generated_len": result.generated_len,
        "target_len": result.target_len,
    }, indent=2)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
    else:
        print(payload)
    return EXIT_OK


def cmd_eval(args) -> int:
    params, config = _load_model(args.checkpoint, args.pm_rope)
    corpus = load_corpus(args.corpus)
    utterances = corpus.test[: args.limit] if args.limit else corpus.test
    sampler = SamplerConfig(seed=args.seed)
    reports, rows, _ = evaluate_model(params, config, corpus.spec, utterances, sampler)
    _write_reports(args.report, reports)
    scatter = args.scatter if args.scatter else str(args.report) + ".scatter.csv"
    _write_scatter(scatter, rows)
    for report in reports:
        print(f"{report.metric}: {report.mean:.4f} [{report.ci_low:.4f}, {report.ci_high:.4f}] "
              f"(n={report.n}, {report.method})")
    return EXIT_OK


def cmd_ablate(args) -> int:
    params, config = _load_model(args.checkpoint, None)
    if not config.pm_rope_enabled:
        raise ConfigError("ablate needs a checkpoint trained with progress rotation enabled")
    corpus = load_corpus(args.corpus)
    utterances = corpus.test[: args.limit] if args.limit else corpus.test
    sampler = SamplerConfig(seed=args.seed)
    blocks = {}
    for label, enabled in (("pm_on", True), ("pm_off", False)):
        reports, _, _ = evaluate_model(params, replace(config, pm_rope_enabled=enabled),
                                       corpus.spec, utterances, sampler)
        blocks[label] = {r.metric: r.to_dict() for r in reports}
    deltas = {
        metric: blocks["pm_on"][metric]["mean"] - blocks["pm_off"][metric]["mean"]
        for metric in ("error_rate", "style_similarity", "duration_accuracy")
    }
    payload = {"configurations": blocks, "deltas": deltas}
    with open(args.report, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    for label, block in blocks.items():
        print(f"{label}: " + "  ".join(f"{m}={block[m]['mean']:.4f}" for m in block))
    print("deltas: " + "  ".join(f"{m}={v:+.4f}" for m, v in deltas.items()))
    return EXIT_OK


def cmd_duration(args) -> int:
    if args.lang is not None:
        estimate = estimate_from_rate(args.tgt_units, args.lang)
    else:
        if args.ref_seconds is None or args.ref_units is None:
            raise ConfigError("need either --lang or both --ref-seconds and --ref-units")
        estimate = estimate_from_reference(args.ref_seconds, args.ref_units, args.tgt_units)
    tokens = target_token_count(estimate, args.frame_rate)
    print(f"{estimate.seconds:.3f} s, {tokens} tokens")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pmrope",
        description="Duration-controlled toy codec language model workflow",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("corpus", help="generate the synthetic corpus splits")
    p.add_argument("--config", default=None, help="JSON run configuration")
    p.add_argument("--out", required=True, help="output directory for JSONL splits")
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("train", help="train a model on a corpus directory")
    p.add_argument("--config", default=None)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--loss-csv", default=None)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample audio tokens for a text")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text", required=True, help="comma-separated symbol ids")
    p.add_argument("--corpus", default=None, help="corpus dir (for --style prompts)")
    p.add_argument("--style", type=int, default=None, help="render a prompt in this style")
    p.add_argument("--prompt-tokens", default=None, help="explicit prompt token ids")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--target-seconds", type=float, default=None)
    group.add_argument("--oracle-length", type=int, default=None)
    p.add_argument("--frame-rate", type=int, default=DEFAULT_FRAME_RATE)
    p.add_argument("--top-k", type=int, default=30)
    p.add_argument("--top-p", type=float, default=0.9)
    p.add_argument("--temperature", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pm-rope", choices=("on", "off"), default=None)
    p.add_argument("--out", default=None, help="write result JSON here instead of stdout")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="score a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--report", required=True, help="output JSON report path")
    p.add_argument("--scatter", default=None, help="output scatter CSV path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--pm-rope", choices=("on", "off"), default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="paired eval with rotation on then off")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=int, default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("duration", help="estimate a target duration")
    p.add_argument("--ref-seconds", type=float, default=None)
    p.add_argument("--ref-units", type=int, default=None)
    p.add_argument("--tgt-units", type=int, required=True)
    p.add_argument("--lang", default=None)
    p.add_argument("--frame-rate", type=int, default=DEFAULT_FRAME_RATE)
    p.set_defaults(func=cmd_duration)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
