"""Desk-scale molecular alignment experiments shared by scripts/ and the acceptance tests.

Seeds are derived from one base seed: corpus and pretraining use ``seed``,
preference sampling ``seed + 1``, alignment shuffling ``seed + 2`` and metric
sampling ``seed + 3``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from eralign.chem.energy import Composite, Harmonic, Prompted
from eralign.core import AlignmentParams
from eralign.model.policy import SequencePolicy
from eralign.model.training import AdamConfig, pretrain_next_token
from eralign.model.transformer import ModelConfig
from eralign.pipeline.corpus import generate_corpus
from eralign.pipeline.dataset import PromptSet, gen_preference_dataset, prompted_pairs
from eralign.pipeline.metrics import MetricsReport, emit_metrics
from eralign.pipeline.run import pretrain_policy, run_align


@dataclass(frozen=True)
class DeskScale:
    family: str = "mixed"
    corpus_size: int = 4000
    model: ModelConfig = field(default_factory=lambda: ModelConfig(max_len=64))
    pretrain: AdamConfig = field(default_factory=lambda: AdamConfig(lr=1e-3, epochs=20, batch_size=64))
    align: AdamConfig = field(default_factory=lambda: AdamConfig(lr=3e-5, epochs=1, batch_size=32))
    groups: int = 500
    k: int = 4
    n_samples: int = 1000


@dataclass(frozen=True)
class PromptedScale:
    sft_molecules: int = 2000  # taken from the front of the corpus
    sft: AdamConfig = field(default_factory=lambda: AdamConfig(lr=1e-3, epochs=15, batch_size=64))
    align: AdamConfig = field(default_factory=lambda: AdamConfig(lr=1e-4, epochs=1, batch_size=32))
    n_prompts: int = 20  # drawn from the back of the corpus, unseen during fine-tuning
    max_prompt_len: int = 25
    repeats: int = 25  # sample groups per prompt in the preference dataset
    n_samples: int = 100  # per prompt, for metrics
    property_mu: float = 5.0
    similarity_beta: float = 5.0
    property_beta: float = 10.0
    gamma: float = 0.1


def reference_policy(scale: DeskScale, seed: int) -> tuple[SequencePolicy, list[str]]:
    corpus = generate_corpus(scale.family, scale.corpus_size, seed)
    policy, _ = pretrain_policy(corpus, scale.model, scale.pretrain, seed)
    return policy, corpus


def align_and_measure(
    reference: SequencePolicy,
    prompts: PromptSet,
    spec,
    params: AlignmentParams,
    opt: AdamConfig,
    k: int,
    eval_prompts: PromptSet,
    n_samples: int,
    properties,
    seed: int,
) -> tuple[SequencePolicy, MetricsReport]:
    records = gen_preference_dataset(reference, prompts, spec, k, seed + 1)
    policy, _ = run_align(reference, records, params, opt, seed + 2, track_loss=False)
    return policy, emit_metrics(policy, eval_prompts, n_samples, properties, seed + 3)


def ring_count_alignment(reference: SequencePolicy, scale: DeskScale, seed: int, mu: float = 2.0) -> MetricsReport:
    """Harmonic ring-count target at beta 1, gamma 0, from the bare start prompt."""
    _, report = align_and_measure(
        reference,
        PromptSet.unprompted(scale.groups),
        Harmonic("ring_count", mu, 1.0),
        AlignmentParams(1.0, 0.0),
        scale.align,
        scale.k,
        PromptSet.unprompted(),
        scale.n_samples,
        ["ring_count", "logp"],
        seed,
    )
    return report


def multi_property_sweep(
    reference: SequencePolicy,
    scale: DeskScale,
    seed: int,
    betas=(0.05, 0.3, 2.0),
    ring_mu: float = 2.0,
    logp_mu: float = 5.0,
) -> list[MetricsReport]:
    """Ring-count term at weight 1 plus a LogP term at each weight in ``betas``."""
    reports = []
    for b in betas:
        spec = Composite(((1.0, Harmonic("ring_count", ring_mu)), (b, Harmonic("logp", logp_mu))))
        _, report = align_and_measure(
            reference,
            PromptSet.unprompted(scale.groups),
            spec,
            AlignmentParams(1.0, 0.0),
            scale.align,
            scale.k,
            PromptSet.unprompted(),
            scale.n_samples,
            ["ring_count", "logp"],
            seed,
        )
        reports.append(report)
    return reports


def prompted_reference(reference: SequencePolicy, corpus, scale: DeskScale, pscale: PromptedScale, seed: int) -> SequencePolicy:
    """Fine-tune on (molecule, one-token perturbation) pairs that fit the context window."""
    pairs = prompted_pairs(corpus[: pscale.sft_molecules], np.random.default_rng(seed))
    limit = scale.model.max_len
    pairs = [(x, y) for x, y in pairs if len(x) + len(y) + 3 <= limit]
    sft = reference.copy()
    data = [(sft.vocab.encode(x), sft.vocab.encode(y)) for x, y in pairs]
    pretrain_next_token(sft, data, pscale.sft, seed=seed)
    return sft


def held_out_prompts(corpus, pscale: PromptedScale) -> PromptSet:
    pool = [s for s in corpus[pscale.sft_molecules :] if len(s) <= pscale.max_prompt_len]
    return PromptSet.from_smiles(pool[: pscale.n_prompts])


def prompted_alignment(
    sft: SequencePolicy, prompts: PromptSet, pscale: PromptedScale, k: int, seed: int
) -> tuple[MetricsReport, MetricsReport]:
    """Metrics for the fine-tuned reference and for its aligned copy, on the same prompts and seed."""
    spec = Prompted(
        Harmonic("logp", pscale.property_mu),
        similarity_beta=pscale.similarity_beta,
        property_beta=pscale.property_beta,
    )
    before = emit_metrics(sft, prompts, pscale.n_samples, ["logp"], seed + 3)
    _, after = align_and_measure(
        sft,
        PromptSet(prompts.prompts * pscale.repeats),
        spec,
        AlignmentParams(1.0, pscale.gamma),
        pscale.align,
        k,
        prompts,
        pscale.n_samples,
        ["logp"],
        seed,
    )
    return before, after
