"""Pretraining and alignment runs over policies and preference datasets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from eralign.chem.smiles import tokenize_smiles
from eralign.core import DPO_TEMPERATURE, AlignmentParams
from eralign.errors import ConfigError, InvalidArgument, TrainingFailure
from eralign.model.policy import SequencePolicy
from eralign.model.training import (
    Adam,
    AdamConfig,
    TrainingReport,
    dpo_align_step,
    era_align_step,
    mean_era_loss,
    pretrain_next_token,
)
from eralign.model.transformer import ModelConfig
from eralign.model.vocab import Vocabulary

ALIGN_MODES = ("era", "dpo")


def pretrain_policy(corpus, model: ModelConfig, opt: AdamConfig, seed: int, pairs=None) -> tuple[SequencePolicy, TrainingReport]:
    """Fresh policy trained on ``corpus`` (SMILES); ``pairs`` adds (prompt, completion) token pairs."""
    toks = [tuple(tokenize_smiles(s)) for s in corpus]
    pairs = list(pairs or [])
    vocab = Vocabulary.from_corpus(toks + [x for x, _ in pairs] + [y for _, y in pairs])
    policy = SequencePolicy.create(model, vocab, seed)
    data = [vocab.encode(t) for t in toks] + [(vocab.encode(x), vocab.encode(y)) for x, y in pairs]
    report = pretrain_next_token(policy, data, opt, seed=seed)
    return policy, report


@dataclass
class AlignLog:
    mode: str
    step_losses: list = field(default_factory=list)
    epoch_start_loss: list = field(default_factory=list)  # full-dataset ERA loss before each epoch
    final_loss: float | None = None

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.__dict__, indent=1) + "\n")


def run_align(
    reference: SequencePolicy,
    records,
    align: AlignmentParams,
    opt: AdamConfig,
    seed: int,
    mode: str = "era",
    dpo_temperature: float = DPO_TEMPERATURE,
    checkpoint_path=None,
    track_loss: bool = True,
) -> tuple[SequencePolicy, AlignLog]:
    """Initialize from ``reference`` and run minibatch alignment for ``opt.epochs`` epochs.

    On a non-finite loss or gradient the last good parameters are written to
    ``checkpoint_path`` (if given) and TrainingFailure propagates.
    """
    if mode not in ALIGN_MODES:
        raise ConfigError(f"unknown alignment mode {mode!r}")
    if not records:
        raise InvalidArgument("empty preference dataset")
    policy = reference.copy()
    adam = Adam(policy.params, opt)
    rng = np.random.default_rng(seed)
    log = AlignLog(mode)
    for _ in range(opt.epochs):
        if track_loss:
            log.epoch_start_loss.append(mean_era_loss(policy, records, align))
        order = rng.permutation(len(records))
        for i in range(0, len(order), opt.batch_size):
            batch = [records[j] for j in order[i : i + opt.batch_size]]
            good = {k: v.copy() for k, v in policy.params.items()}
            try:
                if mode == "era":
                    loss = era_align_step(policy, batch, align, adam)
                else:
                    loss = dpo_align_step(policy, batch, adam, dpo_temperature)
                if not all(np.all(np.isfinite(v)) for v in policy.params.values()):
                    raise TrainingFailure("parameters became non-finite")
            except TrainingFailure:
                policy.params = good
                if checkpoint_path is not None:
                    policy.save(checkpoint_path)
                raise
            log.step_losses.append(loss)
    if track_loss:
        log.final_loss = mean_era_loss(policy, records, align)
    if checkpoint_path is not None:
        policy.save(checkpoint_path)
    return policy, log
