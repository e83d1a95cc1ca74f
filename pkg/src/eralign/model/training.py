"""Adam, next-token pretraining and ERA / DPO alignment steps for sequence policies."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from eralign.core import (
    DPO_TEMPERATURE,
    AlignmentParams,
    bernoulli_kl_from_logits,
    log_sigmoid,
    sigmoid,
    target_logit,
)
from eralign.errors import InvalidArgument, TrainingFailure
from eralign.model.policy import SequencePolicy
from eralign.model.transformer import SequenceBatch, completion_logprobs


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 20
    batch_size: int = 64
    grad_clip: float | None = 1.0  # global-norm clip; None disables

    def __post_init__(self):
        if not self.lr > 0 or self.epochs < 0 or self.batch_size < 1:
            raise InvalidArgument("need lr > 0, epochs >= 0, batch_size >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidArgument("Adam decay rates must lie in [0, 1)")


class Adam:
    def __init__(self, params: dict, cfg: AdamConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        """Descent step on ``grads`` (gradients of a loss), in place."""
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingFailure(f"non-finite gradient in {k}")
        c = self.cfg
        if c.grad_clip is not None:
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > c.grad_clip:
                grads = {k: g * (c.grad_clip / norm) for k, g in grads.items()}
        self.t += 1
        b1t, b2t = 1 - c.beta1**self.t, 1 - c.beta2**self.t
        for k, g in grads.items():
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
            params[k] -= c.lr * (self.m[k] / b1t) / (np.sqrt(self.v[k] / b2t) + c.eps)


def _scale(grads: dict, s: float) -> dict:
    return {k: g * s for k, g in grads.items()}


# -- cross entropy ----------------------------------------------------------------------


def cross_entropy(policy: SequencePolicy, batch: SequenceBatch, with_grad: bool = False):
    """Mean next-token cross entropy over completion tokens (stop included)."""
    n = batch.n_targets
    if not with_grad:
        return float(-policy.logprob_sequence(batch).sum() / n)
    logp, grads = completion_logprobs(policy.params, policy.config, policy.vocab, batch, np.full(batch.size, -1.0 / n))
    return float(-logp.sum() / n), grads


@dataclass
class TrainingReport:
    epoch_losses: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)


def _frame_all(policy, corpus):
    pairs = []
    for item in corpus:
        x, y = item if isinstance(item, tuple) else ([], item)
        pairs.append(policy.vocab.frame(x, y))
    return pairs


def pretrain_next_token(policy: SequencePolicy, corpus, opt: AdamConfig, seed: int, adam: Adam | None = None) -> TrainingReport:
    """Minimize next-token cross entropy; ``corpus`` holds id lists or (prompt ids, completion ids) tuples.

    The epoch loss is the token-weighted mean over all minibatches of that epoch.
    """
    if not corpus:
        raise InvalidArgument("empty corpus")
    framed = _frame_all(policy, corpus)
    rng = np.random.default_rng(seed)
    adam = adam or Adam(policy.params, opt)
    report = TrainingReport()
    for _ in range(opt.epochs):
        order = rng.permutation(len(framed))
        total, count = 0.0, 0
        for i in range(0, len(order), opt.batch_size):
            rows = [framed[j] for j in order[i : i + opt.batch_size]]
            batch = SequenceBatch.from_sequences([r[0] for r in rows], [r[1] for r in rows], policy.vocab.pad_id)
            loss, grads = cross_entropy(policy, batch, with_grad=True)
            if not np.isfinite(loss):
                raise TrainingFailure("cross-entropy loss became non-finite")
            adam.step(policy.params, grads)
            report.step_losses.append(loss)
            total += loss * batch.n_targets
            count += batch.n_targets
        report.epoch_losses.append(total / count)
    return report


# -- preference alignment ------------------------------------------------------------------


def _pair_batch(policy: SequencePolicy, records):
    pairs = [(r.prompt, r.completion_a) for r in records] + [(r.prompt, r.completion_b) for r in records]
    return policy.batch(pairs)


def era_loss_and_grad(policy: SequencePolicy, records, align: AlignmentParams):
    """Mean pairwise ERA loss over ``records`` and its parameter gradient."""
    if not records:
        raise InvalidArgument("empty record batch")
    n = len(records)
    z = np.array([target_logit(r, align) for r in records])
    batch = _pair_batch(policy, records)
    logp = completion_logprobs(policy.params, policy.config, policy.vocab, batch)
    d = logp[:n] - logp[n:]
    loss = float(bernoulli_kl_from_logits(z, d).mean())
    dd = (sigmoid(d) - sigmoid(z)) / n
    _, grads = completion_logprobs(policy.params, policy.config, policy.vocab, batch, np.concatenate([dd, -dd]))
    return loss, grads


def dpo_loss_and_grad(policy: SequencePolicy, records, temperature: float = DPO_TEMPERATURE):
    """Mean DPO loss with the lower-energy completion of each record as the winner."""
    if not records:
        raise InvalidArgument("empty record batch")
    n = len(records)
    batch = _pair_batch(policy, records)
    logp = completion_logprobs(policy.params, policy.config, policy.vocab, batch)
    sign = np.array([1.0 if r.energy_a <= r.energy_b else -1.0 for r in records])
    ref = np.array([r.ref_logp_a - r.ref_logp_b for r in records])
    m = sign * temperature * ((logp[:n] - logp[n:]) - ref)
    loss = float(-log_sigmoid(m).mean())
    dm = -sigmoid(-m) * sign * temperature / n  # d loss / d (logp_a - logp_b)
    _, grads = completion_logprobs(policy.params, policy.config, policy.vocab, batch, np.concatenate([dm, -dm]))
    return loss, grads


def era_align_step(policy: SequencePolicy, records, align: AlignmentParams, adam: Adam) -> float:
    """One optimizer step on the mean ERA loss; returns the pre-step loss."""
    loss, grads = era_loss_and_grad(policy, records, align)
    if not np.isfinite(loss):
        raise TrainingFailure("ERA loss became non-finite")
    adam.step(policy.params, grads)
    return loss


def dpo_align_step(policy: SequencePolicy, records, adam: Adam, temperature: float = DPO_TEMPERATURE) -> float:
    loss, grads = dpo_loss_and_grad(policy, records, temperature)
    if not np.isfinite(loss):
        raise TrainingFailure("DPO loss became non-finite")
    adam.step(policy.params, grads)
    return loss


def mean_era_loss(policy: SequencePolicy, records, align: AlignmentParams, chunk: int = 256) -> float:
    """Mean ERA loss over all records, without gradients."""
    total = 0.0
    for i in range(0, len(records), chunk):
        part = records[i : i + chunk]
        n = len(part)
        z = np.array([target_logit(r, align) for r in part])
        logp = policy.logprob_sequence(_pair_batch(policy, part))
        total += float(bernoulli_kl_from_logits(z, logp[:n] - logp[n:]).sum())
    return total / len(records)
