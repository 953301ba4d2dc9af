"""Next-token training: AdamW, linear warmup/decay, unit-norm clipping,
token-budget batching, and lowest-validation-loss checkpoint selection.

Each utterance trains as one decoder stream bos + prompt + separator + audio
+ eos under teacher forcing; the progress schedule spans that full stream so
inference can mirror it. The loss covers the prompt region by default (an
option masks it out) and never covers padding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .checkpoint import save_checkpoint
from .model import (
    ModelConfig,
    ModelParams,
    SpecialTokens,
    decoder_batch,
    decoder_forward,
    encode,
    encode_batch,
    init_params,
)
from .numerics import Tape
from .positional import ProgressSchedule
from .synthcorpus import Corpus, prompt_for

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class DivergenceError(RuntimeError):
    """Raised when training hits a non-finite loss or gradient."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


@dataclass
class TrainConfig:
    peak_lr: float = 1e-4
    weight_decay: float = 1e-2
    total_steps: int = 20000
    warmup_fraction: float = 0.02
    clip_norm: float = 1.0
    token_budget: int = 4096
    seed: int = 0
    validation_interval: int = 500
    mask_prompt: bool = False

    def __post_init__(self):
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError(f"warmup_fraction must be in (0, 1), got {self.warmup_fraction}")
        if self.clip_norm <= 0:
            raise ValueError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be positive, got {self.total_steps}")
        if self.token_budget < 1:
            raise ValueError(f"token_budget must be positive, got {self.token_budget}")
        if self.validation_interval < 1:
            raise ValueError(f"validation_interval must be positive, got {self.validation_interval}")


@dataclass
class OptimState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "OptimState":
        return cls(
            m={n: np.zeros_like(t.data) for n, t in params.items()},
            v={n: np.zeros_like(t.data) for n, t in params.items()},
        )


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Piecewise-linear schedule: 0 -> peak over the warmup, then peak -> 0."""
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    warmup = math.ceil(cfg.warmup_fraction * cfg.total_steps)
    if step <= warmup:
        return cfg.peak_lr * step / warmup
    return cfg.peak_lr * (cfg.total_steps - step) / (cfg.total_steps - warmup)


def clip_gradients(params: ModelParams, clip_norm: float) -> float:
    """Rescale all gradients in place so the global L2 norm is at most
    clip_norm; returns the pre-clip norm."""
    total = 0.0
    for _, t in params.items():
        if t.grad is not None:
            total += float((t.grad.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if norm > clip_norm:
        factor = clip_norm / norm
        for _, t in params.items():
            if t.grad is not None:
                t.grad *= factor
    return norm


def _decayed(name: str) -> bool:
    # Gains and embedding tables are exempt from weight decay.
    return not (name.endswith(".norm") or name.endswith("_emb"))


def adamw_step(params: ModelParams, state: OptimState, lr: float, cfg: TrainConfig) -> None:
    """One decoupled-weight-decay Adam update with bias correction."""
    for name, t in params.items():
        if t.grad is None or not np.isfinite(t.grad).all():
            raise DivergenceError(f"non-finite gradient in {name}; step aborted")
    state.step += 1
    c1 = 1.0 - ADAM_BETA1 ** state.step
    c2 = 1.0 - ADAM_BETA2 ** state.step
    for name, t in params.items():
        g = t.grad
        m, v = state.m[name], state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        if cfg.weight_decay and _decayed(name):
            t.data -= lr * cfg.weight_decay * t.data
        t.data -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


# ---------------------------------------------------------------------------
# Examples and batching
# ---------------------------------------------------------------------------


@dataclass
class DecoderExample:
    """One teacher-forcing example: encoder text plus the decoder stream."""

    text: np.ndarray     # encoder input token ids
    stream: np.ndarray   # bos + prompt + separator + audio + eos
    prompt_len: int


@dataclass
class Batch:
    examples: list
    tokens: np.ndarray   # [n, max_len] streams, right-padded with the pad id
    lengths: np.ndarray  # true stream lengths


def build_example(utterance, spec, specials: SpecialTokens, prompt_symbols: int = 2) -> DecoderExample:
    prompt = prompt_for(utterance, spec, prompt_symbols)
    stream = [specials.bos, *prompt, specials.separator, *utterance.audio, specials.eos]
    return DecoderExample(
        text=np.asarray(utterance.text, dtype=np.int64),
        stream=np.asarray(stream, dtype=np.int64),
        prompt_len=len(prompt),
    )


def make_batches(examples, token_budget: int, seed: int, pad_id: int) -> list:
    """Shuffle deterministically, then pack greedily under the token budget."""
    for i, ex in enumerate(examples):
        if len(ex.stream) > token_budget:
            raise ValueError(
                f"utterance #{i} has {len(ex.stream)} decoder tokens, over budget {token_budget}"
            )
    order = np.random.default_rng(seed).permutation(len(examples))
    batches = []
    current: list = []
    current_tokens = 0
    for idx in order:
        ex = examples[int(idx)]
        n = len(ex.stream)
        if current and current_tokens + n > token_budget:
            batches.append(_finish_batch(current, pad_id))
            current, current_tokens = [], 0
        current.append(ex)
        current_tokens += n
    if current:
        batches.append(_finish_batch(current, pad_id))
    return batches


def _finish_batch(examples: list, pad_id: int) -> Batch:
    lengths = np.array([len(ex.stream) for ex in examples], dtype=np.int64)
    tokens = np.full((len(examples), int(lengths.max())), pad_id, dtype=np.int64)
    for row, ex in enumerate(examples):
        tokens[row, : len(ex.stream)] = ex.stream
    return Batch(examples=examples, tokens=tokens, lengths=lengths)


def _example_loss(ex: DecoderExample, params: ModelParams, config: ModelConfig,
                  mask_prompt: bool):
    """Teacher-forced mean NLL for one example plus its masked-position count."""
    inputs = ex.stream[:-1]
    targets = ex.stream[1:]
    enc_out = encode(ex.text, params, config)
    sched_dec = ProgressSchedule(len(inputs), config.progress_scale)
    sched_enc = ProgressSchedule(enc_out.length, config.progress_scale)
    logits = decoder_forward(inputs, enc_out, sched_dec, sched_enc, params, config)
    mask = np.ones(len(targets), dtype=bool)
    if mask_prompt:
        mask[: ex.prompt_len + 1] = False  # predictions of prompt tokens and separator
    return nm.cross_entropy(logits, targets, mask), int(mask.sum())


def _batch_arrays(examples, config: ModelConfig, pad_id: int, mask_prompt: bool):
    """Padded input/target/mask/progress arrays for one fused forward pass."""
    n = len(examples)
    S = max(len(ex.stream) for ex in examples) - 1  # teacher forcing drops the last token
    T = max(len(ex.text) for ex in examples)
    inputs = np.full((n, S), pad_id, dtype=np.int64)
    targets = np.full((n, S), pad_id, dtype=np.int64)
    texts = np.zeros((n, T), dtype=np.int64)
    text_real = np.zeros((n, T), dtype=bool)
    loss_mask = np.zeros((n, S), dtype=bool)
    dec_progress = np.zeros((n, S), dtype=np.float64)
    enc_progress = np.zeros((n, T), dtype=np.float64)
    for i, ex in enumerate(examples):
        t = len(ex.text)
        texts[i, :t] = ex.text
        text_real[i, :t] = True
        length = len(ex.stream) - 1
        inputs[i, :length] = ex.stream[:-1]
        targets[i, :length] = ex.stream[1:]
        loss_mask[i, :length] = True
        if mask_prompt:
            loss_mask[i, : ex.prompt_len + 1] = False
        dec_progress[i] = ProgressSchedule(length, config.progress_scale).position_ids(
            S, allow_overflow=True)
        enc_progress[i] = ProgressSchedule(t, config.progress_scale).position_ids(
            T, allow_overflow=True)
    if not text_real.all():
        return inputs, targets, texts, text_real, loss_mask, dec_progress, enc_progress
    return inputs, targets, texts, None, loss_mask, dec_progress, enc_progress


# quadratic attention cost makes mixed-length padding expensive; examples are
# regrouped by similar stream length before the fused passes
_GROUP_WASTE = 1.25


def _length_groups(examples):
    order = sorted(range(len(examples)), key=lambda i: (-len(examples[i].stream), i))
    groups = []
    current = []
    group_max = None
    for idx in order:
        length = len(examples[idx].stream)
        if current and group_max > _GROUP_WASTE * length:
            groups.append(current)
            current, group_max = [], None
        if not current:
            group_max = length
        current.append(examples[idx])
    if current:
        groups.append(current)
    return groups


def _fused_loss(examples, params: ModelParams, config: ModelConfig, mask_prompt: bool):
    specials = SpecialTokens.for_vocab(config.audio_vocab)
    inputs, targets, texts, text_real, loss_mask, dec_prog, enc_prog = _batch_arrays(
        examples, config, specials.pad, mask_prompt)
    enc_states = encode_batch(texts, text_real, params, config)
    logits = decoder_batch(inputs, enc_states, text_real, dec_prog, enc_prog, params, config)
    n, S = inputs.shape
    flat = nm.reshape(logits, (n * S, config.audio_vocab_ext))
    loss = nm.cross_entropy(flat, targets.reshape(-1), loss_mask.reshape(-1))
    return loss, int(loss_mask.sum())


def batch_loss(batch: Batch, params: ModelParams, config: ModelConfig,
               mask_prompt: bool = False):
    """Mean NLL over every unmasked position of a batch.

    Returns (loss tensor, number of positions in the mean). Runs one fused
    pass per within-batch length group and recombines position-weighted.
    """
    parts = []
    total = 0
    for group in _length_groups(batch.examples):
        loss, count = _fused_loss(group, params, config, mask_prompt)
        parts.append((loss, count))
        total += count
    combined = nm.scale(parts[0][0], parts[0][1] / total)
    for loss, count in parts[1:]:
        combined = nm.add(combined, nm.scale(loss, count / total))
    return combined, total


def evaluate_loss(examples, params: ModelParams, config: ModelConfig,
                  mask_prompt: bool = False, token_budget: int = 8192) -> float:
    """Mean NLL over a list of examples, forward-only."""
    if not examples:
        raise ValueError("evaluate_loss needs at least one example")
    pad = SpecialTokens.for_vocab(config.audio_vocab).pad
    total_nll = 0.0
    total_count = 0
    for batch in make_batches(examples, token_budget, seed=0, pad_id=pad):
        loss, count = batch_loss(batch, params, config, mask_prompt)
        total_nll += loss.item() * count
        total_count += count
    return total_nll / total_count


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: ModelParams
    best_val_loss: float
    best_step: int
    curve: list = field(default_factory=list)  # rows of (step, train_loss, val_loss)


def best_validation(curve) -> tuple:
    """(step, val_loss) of the first minimum-validation row of a loss curve."""
    best_step, best_val = curve[0][0], curve[0][2]
    for step, _, val in curve[1:]:
        if val < best_val:
            best_step, best_val = step, val
    return best_step, best_val


def train(corpus: Corpus, cfg: TrainConfig, model_config: ModelConfig,
          checkpoint_path=None, verbose: bool = False) -> TrainResult:
    """Run cfg.total_steps updates and return the lowest-validation snapshot.

    The best checkpoint is written to checkpoint_path (when given) every time
    validation improves, so a divergence abort always leaves the last good
    checkpoint on disk; the DivergenceError carries the partial result.
    """
    if not corpus.train or not corpus.val:
        raise ValueError("train and validation splits must be nonempty")
    specials = SpecialTokens.for_vocab(model_config.audio_vocab)
    train_ex = [build_example(u, corpus.spec, specials) for u in corpus.train]
    val_ex = [build_example(u, corpus.spec, specials) for u in corpus.val]

    params = init_params(model_config, cfg.seed)
    state = OptimState.for_params(params)

    init_train = evaluate_loss(train_ex[: min(len(train_ex), 200)], params, model_config, cfg.mask_prompt)
    init_val = evaluate_loss(val_ex, params, model_config, cfg.mask_prompt)
    curve = [(0, init_train, init_val)]
    best_params = params.copy()
    best_val = init_val
    best_step = 0
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, best_params)
    if verbose:
        print(f"step {0:>6d}/{cfg.total_steps}  train {init_train:.4f}  val {init_val:.4f}")

    def result() -> TrainResult:
        return TrainResult(params=best_params, best_val_loss=best_val, best_step=best_step, curve=curve)

    step = 0
    epoch = 0
    window: list = []
    while step < cfg.total_steps:
        for batch in make_batches(train_ex, cfg.token_budget, cfg.seed + epoch, specials.pad):
            if step >= cfg.total_steps:
                break
            with Tape() as tape:
                loss, _ = batch_loss(batch, params, model_config, cfg.mask_prompt)
            loss_value = loss.item()
            if not math.isfinite(loss_value):
                raise DivergenceError(f"non-finite training loss at step {step}", result())
            tape.backward(loss)
            clip_gradients(params, cfg.clip_norm)
            try:
                adamw_step(params, state, lr_at(step + 1, cfg), cfg)
            except DivergenceError as err:
                raise DivergenceError(f"{err} (step {step})", result()) from None
            params.zero_grad()
            window.append(loss_value)
            step += 1
            if step % cfg.validation_interval == 0 or step == cfg.total_steps:
                val = evaluate_loss(val_ex, params, model_config, cfg.mask_prompt)
                train_avg = sum(window) / len(window)
                window = []
                curve.append((step, train_avg, val))
                if val < best_val:
                    best_val = val
                    best_step = step
                    best_params = params.copy()
                    if checkpoint_path is not None:
                        save_checkpoint(checkpoint_path, best_params)
                if verbose:
                    print(f"step {step:>6d}/{cfg.total_steps}  train {train_avg:.4f}  val {val:.4f}"
                          f"  lr {lr_at(step, cfg):.2e}")
        epoch += 1
    return result()


def write_loss_csv(path, curve) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,train_loss,val_loss\n")
        for step, train_loss, val_loss in curve:
            fh.write(f"{step},{train_loss:.6f},{val_loss:.6f}\n")
