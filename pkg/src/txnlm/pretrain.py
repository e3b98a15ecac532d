"""Masked-language-model pretraining and distillation for the encoder.

Every source of randomness is a pure function of (seed, stream name, step),
so a run interrupted at any checkpoint and resumed produces byte-identical
parameters to an uninterrupted run. Batch order is derived per epoch, and
masking plus dropout draws are derived per step.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import encoder
from .encoder import DistillLossSpec, MlmLossSpec, ModelConfig, Params
from .tokenizer import MASKABLE_MIN_ID, MASK_ID, Vocabulary, encode
from .util import config_hash, derived_rng, save_container, split_fraction

DEFAULT_LR = 3e-4


@dataclass(frozen=True)
class MaskingConfig:
    """BERT-style corruption: of the selected 15%, 80% become [MASK],
    10% a random non-structural token, 10% stay unchanged."""

    mask_rate: float = 0.15
    mask_token_prob: float = 0.8
    random_token_prob: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.mask_rate <= 1.0:
            raise ValueError("mask_rate must be in (0, 1]")
        if self.mask_token_prob + self.random_token_prob > 1.0:
            raise ValueError("mask/random probabilities exceed 1")

    @property
    def keep_prob(self) -> float:
        return 1.0 - self.mask_token_prob - self.random_token_prob


@dataclass(frozen=True)
class DistillConfig:
    """Soft/hard loss mix for training a student against a frozen teacher."""

    temperature: float = 2.0
    w_soft: float = 0.7
    w_hard: float = 0.3

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.w_soft < 0 or self.w_hard < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int
    batch_size: int = 16
    lr: float = DEFAULT_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_frac: float = 0.01
    seed: int = 0
    masking: MaskingConfig = field(default_factory=MaskingConfig)
    eval_fraction: float = 0.05
    eval_every: int = 0  # 0 disables held-out evaluation
    checkpoint_every: int = 0  # 0 keeps only the final checkpoint
    probe_every: int = 0  # 0 disables the probe hook
    log_every: int = 50  # 0 logs only the final step

    def __post_init__(self):
        if self.total_steps <= 0 or self.batch_size <= 0:
            raise ValueError("total_steps and batch_size must be positive")
        if not 0.0 <= self.eval_fraction < 1.0:
            raise ValueError("eval_fraction must be in [0, 1)")

    @property
    def warmup_steps(self) -> int:
        return max(1, int(round(self.warmup_frac * self.total_steps)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["masking"] = asdict(self.masking)
        return d


def lr_at_step(config: TrainConfig, step: int) -> float:
    """Linear warmup to the base rate, then constant."""
    w = config.warmup_steps
    if step < w:
        return config.lr * (step + 1) / w
    return config.lr


def maskable_positions(ids: np.ndarray, attention_mask: np.ndarray) -> np.ndarray:
    """Boolean map of positions eligible for MLM corruption.

    Structural vocabulary (padding, specials, section markers, [UNK]) is
    never masked; only ids at or above MASKABLE_MIN_ID under a live
    attention slot qualify.
    """
    return (ids >= MASKABLE_MIN_ID) & (attention_mask != 0)


def apply_masking(ids: np.ndarray, attention_mask: np.ndarray,
                  masking: MaskingConfig, rng: np.random.Generator,
                  vocab_size: int) -> tuple[np.ndarray, MlmLossSpec]:
    """Corrupt a batch in the 80/10/10 scheme and return the loss targets.

    If the Bernoulli draw selects nothing (tiny batches), one eligible
    position is forced so the loss is always defined.
    """
    ids = np.asarray(ids)
    attention_mask = np.asarray(attention_mask)
    squeeze = ids.ndim == 1
    if squeeze:
        ids = ids[None, :]
        attention_mask = attention_mask[None, :]

    eligible = maskable_positions(ids, attention_mask)
    if not eligible.any():
        raise ValueError("batch has no maskable positions")
    draws = rng.random(ids.shape)
    selected = eligible & (draws < masking.mask_rate)
    if not selected.any():
        flat = np.flatnonzero(eligible.ravel())
        pick = flat[rng.integers(0, flat.size)]
        selected.ravel()[pick] = True

    rows, cols = np.nonzero(selected)
    target_ids = ids[rows, cols].copy()

    masked = ids.copy()
    mode = rng.random(rows.size)
    to_mask = mode < masking.mask_token_prob
    to_random = (~to_mask) & (mode < masking.mask_token_prob + masking.random_token_prob)
    masked[rows[to_mask], cols[to_mask]] = MASK_ID
    n_random = int(to_random.sum())
    if n_random:
        randoms = rng.integers(MASKABLE_MIN_ID, vocab_size, size=n_random)
        masked[rows[to_random], cols[to_random]] = randoms
    # remaining selections keep their original token but are still predicted

    return masked, MlmLossSpec(rows=rows, cols=cols, target_ids=target_ids)


@dataclass
class AdamState:
    m: Params
    v: Params
    t: int = 0

    @classmethod
    def zeros(cls, params: Params) -> "AdamState":
        return cls(m=encoder.zeros_like_params(params),
                   v=encoder.zeros_like_params(params), t=0)


def adam_step(params: Params, grads: Params, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        p -= (lr / c1) * m / (np.sqrt(v / c2) + eps)


@dataclass
class Dataset:
    """Encoded corpus ready for batching."""

    ids: np.ndarray  # (N, L) int32
    attention_mask: np.ndarray  # (N, L) uint8
    account_ids: list[str]

    def __post_init__(self):
        if self.ids.shape != self.attention_mask.shape:
            raise ValueError("ids and attention_mask shapes differ")
        if self.ids.shape[0] != len(self.account_ids):
            raise ValueError("row count does not match account_ids")

    def __len__(self) -> int:
        return self.ids.shape[0]

    def take(self, idx) -> tuple[np.ndarray, np.ndarray]:
        return self.ids[idx], self.attention_mask[idx]


def encode_dataset(documents: dict[str, str], vocab: Vocabulary,
                   max_context: int) -> Dataset:
    """Encode account documents (ordered by account id for determinism)."""
    account_ids = sorted(documents)
    ids = np.zeros((len(account_ids), max_context), dtype=np.int32)
    mask = np.zeros((len(account_ids), max_context), dtype=np.uint8)
    for i, acct in enumerate(account_ids):
        seq = encode(documents[acct], vocab, max_context=max_context)
        ids[i] = seq.ids
        mask[i] = seq.attention_mask
    return Dataset(ids=ids, attention_mask=mask, account_ids=account_ids)


def split_dataset(data: Dataset, eval_fraction: float,
                  salt: str = "pretrain-eval") -> tuple[np.ndarray, np.ndarray]:
    """Account-hash holdout; returns (train_indices, eval_indices)."""
    fracs = np.array([split_fraction(a, salt) for a in data.account_ids])
    eval_idx = np.flatnonzero(fracs < eval_fraction)
    train_idx = np.flatnonzero(fracs >= eval_fraction)
    if train_idx.size == 0:
        raise ValueError("eval_fraction leaves no training accounts")
    return train_idx, eval_idx


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return derived_rng(seed, "order", epoch).permutation(n)


def _batch_indices(train_idx: np.ndarray, step: int, seed: int,
                   batch_size: int) -> np.ndarray:
    n = train_idx.size
    per_epoch = max(1, n // batch_size)
    epoch, slot = divmod(step, per_epoch)
    order = _epoch_order(seed, epoch, n)
    lo = slot * batch_size
    return train_idx[order[lo:lo + batch_size]]


def eval_mlm_loss(params: Params, model_config: ModelConfig, data: Dataset,
                  eval_idx: np.ndarray, masking: MaskingConfig, seed: int,
                  vocab_size: int, batch_size: int = 32) -> float:
    """Held-out MLM loss under a fixed evaluation masking (no dropout)."""
    if eval_idx.size == 0:
        return float("nan")
    rng = derived_rng(seed, "eval-mask")
    total, count = 0.0, 0
    for lo in range(0, eval_idx.size, batch_size):
        idx = eval_idx[lo:lo + batch_size]
        ids, mask = data.take(idx)
        masked, spec = apply_masking(ids, mask, masking, rng, vocab_size)
        out = encoder.forward(params, masked, mask, model_config,
                              positions=(spec.rows, spec.cols))
        loss, _ = encoder.mlm_loss_and_dlogits(out.mlm_logits, spec.target_ids)
        total += loss * spec.target_ids.size
        count += spec.target_ids.size
    return total / count


@dataclass
class TrainResult:
    params: Params
    model_config: ModelConfig
    loss_history: list[tuple[int, float, float]]  # (step, loss, lr)
    eval_history: list[tuple[int, float]]
    final_checkpoint: str


def _save_train_checkpoint(path: str, model_config: ModelConfig, params: Params,
                           adam: AdamState, step: int, train_config: TrainConfig,
                           stage: str) -> None:
    header = {
        "stage": stage,
        "step": step,
        "train_config": train_config.to_dict(),
        "config_hash": config_hash({"model": model_config.to_dict(),
                                    "train": train_config.to_dict()}),
    }
    arrays = {}
    for name, _ in encoder.param_spec(model_config):
        arrays["adam.m." + name] = adam.m[name]
        arrays["adam.v." + name] = adam.v[name]
    encoder.save_checkpoint(path, model_config, params,
                            header_extra=header, arrays_extra=arrays)


def load_train_checkpoint(path: str):
    """Restore (model_config, params, adam, step, header) for resumption."""
    model_config, params, header, extras = encoder.load_checkpoint(path)
    adam = AdamState.zeros(params)
    for name in params:
        adam.m[name] = extras["adam.m." + name]
        adam.v[name] = extras["adam.v." + name]
    adam.t = int(header["step"])
    return model_config, params, adam, int(header["step"]), header


def pretrain(data: Dataset, model_config: ModelConfig, train_config: TrainConfig,
             out_dir: str,
             teacher: Optional[tuple[Params, ModelConfig]] = None,
             distill: Optional[DistillConfig] = None,
             resume_from: Optional[str] = None,
             probe_hook: Optional[Callable[[int, Params], list]] = None,
             quiet: bool = False) -> TrainResult:
    """Run MLM pretraining (or distillation when a teacher is provided).

    The probe hook is called at checkpoint cadence with (step, params) and
    its rows are appended to probe_log.csv as step,task,metric,score.
    """
    os.makedirs(out_dir, exist_ok=True)
    stage = "distill" if teacher is not None else "pretrain"
    vocab_size = model_config.vocab_size
    cfg = train_config

    train_idx, eval_idx = split_dataset(data, cfg.eval_fraction)
    if teacher is not None:
        t_params, t_config = teacher
        if t_config.vocab_size != vocab_size:
            raise ValueError("teacher and student vocabularies differ")
        if distill is None:
            distill = DistillConfig()

    start_step = 0
    if resume_from is not None:
        ck_config, params, adam, start_step, _ = load_train_checkpoint(resume_from)
        if ck_config != model_config:
            raise ValueError("resume checkpoint model config mismatch")
    else:
        params = encoder.init_params(model_config, cfg.seed)
        adam = AdamState.zeros(params)

    loss_history: list[tuple[int, float, float]] = []
    eval_history: list[tuple[int, float]] = []
    loss_log = os.path.join(out_dir, f"{stage}_loss.csv")
    probe_log = os.path.join(out_dir, "probe_log.csv")
    log_mode = "a" if start_step else "w"
    log_fh = open(loss_log, log_mode, encoding="utf-8")
    if not start_step:
        log_fh.write("step,loss,lr\n")
        if probe_hook is not None:
            with open(probe_log, "w", encoding="utf-8") as pf:
                pf.write("step,task,metric,score\n")

    try:
        for step in range(start_step, cfg.total_steps):
            idx = _batch_indices(train_idx, step, cfg.seed, cfg.batch_size)
            ids, mask = data.take(idx)
            rng = derived_rng(cfg.seed, "step", step)
            masked, spec = apply_masking(ids, mask, cfg.masking, rng, vocab_size)

            if teacher is not None:
                t_out = encoder.forward(t_params, masked, mask, t_config,
                                        positions=(spec.rows, spec.cols))
                spec = DistillLossSpec(rows=spec.rows, cols=spec.cols,
                                       target_ids=spec.target_ids,
                                       teacher_logits=t_out.mlm_logits,
                                       temperature=distill.temperature,
                                       w_soft=distill.w_soft, w_hard=distill.w_hard)

            loss, grads = encoder.backward(params, masked, mask, spec, model_config,
                                           train_mode=True, rng=rng)
            lr = lr_at_step(cfg, step)
            adam_step(params, grads, adam, lr, cfg.beta1, cfg.beta2, cfg.eps)

            if ((cfg.log_every and step % cfg.log_every == 0)
                    or step == cfg.total_steps - 1):
                loss_history.append((step, loss, lr))
                log_fh.write(f"{step},{loss:.6f},{lr:.8f}\n")
                log_fh.flush()
                if not quiet:
                    print(f"[{stage}] step {step:>6d} loss {loss:.4f} lr {lr:.2e}")

            done = step + 1
            if (cfg.checkpoint_every and done % cfg.checkpoint_every == 0
                    and done < cfg.total_steps):
                path = os.path.join(out_dir, f"checkpoint_step{done:06d}.bin")
                _save_train_checkpoint(path, model_config, params, adam, done, cfg, stage)
            if cfg.eval_every and done % cfg.eval_every == 0:
                ev = eval_mlm_loss(params, model_config, data, eval_idx,
                                   cfg.masking, cfg.seed, vocab_size)
                eval_history.append((done, ev))
                if not quiet:
                    print(f"[{stage}] step {done:>6d} eval_loss {ev:.4f}")
            if probe_hook is not None and cfg.probe_every and done % cfg.probe_every == 0:
                rows = probe_hook(done, params)
                with open(probe_log, "a", encoding="utf-8") as pf:
                    for task, metric, score in rows:
                        pf.write(f"{done},{task},{metric},{score:.6f}\n")
    finally:
        log_fh.close()

    final = os.path.join(out_dir, "checkpoint_final.bin")
    _save_train_checkpoint(final, model_config, params, adam,
                           cfg.total_steps, cfg, stage)
    if eval_history:
        with open(os.path.join(out_dir, f"{stage}_eval_loss.csv"), "w",
                  encoding="utf-8") as fh:
            fh.write("step,eval_loss\n")
            for s, ev in eval_history:
                fh.write(f"{s},{ev:.6f}\n")
    return TrainResult(params=params, model_config=model_config,
                       loss_history=loss_history, eval_history=eval_history,
                       final_checkpoint=final)
