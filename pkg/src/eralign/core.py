"""Energy rank alignment objective: preference probabilities, losses and closed-form optima.

Everything here is a pure function of its arguments. Probabilities are carried in
log space and only exponentiated at the boundary.

Convention: for a record ``(x, a, b)`` the "target" probability that ``a`` is
preferred over ``b`` is

    p_target = sigmoid(beta' * (U_b - U_a) + gamma' * (log ref_a - log ref_b))

with ``beta' = beta / (1 + gamma)`` and ``gamma' = gamma / (1 + gamma)``, and the
model probability is ``p_theta = sigmoid(log pi_a - log pi_b)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from eralign.errors import DegenerateWeightError, InvalidArgument

DPO_TEMPERATURE = 0.1
LOG_WEIGHT_CAP = 30.0


def log_sigmoid(x):
    """Stable ``log(sigmoid(x))`` for scalars or arrays."""
    return -np.logaddexp(0.0, -x)


def sigmoid(x):
    return np.exp(log_sigmoid(x))


def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise InvalidArgument(f"non-finite input: {v!r}")


@dataclass(frozen=True)
class AlignmentParams:
    beta: float
    gamma: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise InvalidArgument(f"beta must be positive, got {self.beta}")
        if not (math.isfinite(self.gamma) and self.gamma >= 0):
            raise InvalidArgument(f"gamma must be non-negative, got {self.gamma}")

    @property
    def beta_prime(self) -> float:
        return self.beta / (1.0 + self.gamma)

    @property
    def gamma_prime(self) -> float:
        return self.gamma / (1.0 + self.gamma)


@dataclass(frozen=True)
class PreferenceRecord:
    """One training atom: a prompt, two completions, their energies and reference log-probs."""

    prompt: tuple
    completion_a: tuple
    completion_b: tuple
    energy_a: float
    energy_b: float
    ref_logp_a: float
    ref_logp_b: float

    def __post_init__(self):
        _check_finite(self.energy_a, self.energy_b, self.ref_logp_a, self.ref_logp_b)
        if self.ref_logp_a > 0 or self.ref_logp_b > 0:
            raise InvalidArgument("reference log-probabilities must be <= 0")

    def swapped(self) -> "PreferenceRecord":
        return PreferenceRecord(
            self.prompt,
            self.completion_b,
            self.completion_a,
            self.energy_b,
            self.energy_a,
            self.ref_logp_b,
            self.ref_logp_a,
        )

    def to_dict(self) -> dict:
        return {
            "prompt": list(self.prompt),
            "completion_a": list(self.completion_a),
            "completion_b": list(self.completion_b),
            "energy_a": self.energy_a,
            "energy_b": self.energy_b,
            "ref_logp_a": self.ref_logp_a,
            "ref_logp_b": self.ref_logp_b,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PreferenceRecord":
        return cls(
            tuple(d["prompt"]),
            tuple(d["completion_a"]),
            tuple(d["completion_b"]),
            float(d["energy_a"]),
            float(d["energy_b"]),
            float(d["ref_logp_a"]),
            float(d["ref_logp_b"]),
        )


@dataclass(frozen=True)
class PolicyScores:
    logp_a: float
    logp_b: float


class Policy(Protocol):
    def logprob(self, prompt, completion) -> float: ...


# -- preference probabilities ------------------------------------------------


def theta_logit(scores: PolicyScores) -> float:
    _check_finite(scores.logp_a, scores.logp_b)
    return scores.logp_a - scores.logp_b


def target_logit(rec: PreferenceRecord, params: AlignmentParams) -> float:
    return params.beta_prime * (rec.energy_b - rec.energy_a) + params.gamma_prime * (
        rec.ref_logp_a - rec.ref_logp_b
    )


def preference_prob_theta(scores: PolicyScores) -> float:
    return float(sigmoid(theta_logit(scores)))


def preference_prob_target(rec: PreferenceRecord, params: AlignmentParams) -> float:
    return float(sigmoid(target_logit(rec, params)))


def bernoulli_kl_from_logits(target, theta):
    """KL(Bernoulli(sigmoid(target)) || Bernoulli(sigmoid(theta))), elementwise.

    The derivative with respect to ``theta`` is ``sigmoid(theta) - sigmoid(target)``.
    """
    ls, ls_c = log_sigmoid(target), log_sigmoid(-target)
    lp, lp_c = log_sigmoid(theta), log_sigmoid(-theta)
    kl = np.exp(ls) * (ls - lp) + np.exp(ls_c) * (ls_c - lp_c)
    return np.maximum(kl, 0.0)


def era_pairwise_kl(rec: PreferenceRecord, scores: PolicyScores, params: AlignmentParams) -> float:
    return float(bernoulli_kl_from_logits(target_logit(rec, params), theta_logit(scores)))


def era_loss_batch(records: Sequence[PreferenceRecord], policy: Policy, params: AlignmentParams) -> float:
    """Mean pairwise KL over a batch, scoring completions with ``policy``."""
    if len(records) == 0:
        raise InvalidArgument("empty batch")
    total = 0.0
    for rec in records:
        scores = PolicyScores(
            policy.logprob(rec.prompt, rec.completion_a),
            policy.logprob(rec.prompt, rec.completion_b),
        )
        total += era_pairwise_kl(rec, scores, params)
    return total / len(records)


def era_grad_scale(p_target: float, p_theta: float) -> float:
    """Prefactor multiplying grad p_theta in the per-pair gradient of the ERA loss."""
    for p in (p_target, p_theta):
        if not (0.0 < p < 1.0):
            raise InvalidArgument(f"probability must lie strictly inside (0, 1), got {p}")
    return (1.0 - p_target) / (1.0 - p_theta) - p_target / p_theta


def importance_weighted_kl(
    rec: PreferenceRecord,
    scores: PolicyScores,
    params: AlignmentParams,
    log_weight_cap: float = LOG_WEIGHT_CAP,
) -> float:
    log_w = scores.logp_a + scores.logp_b - rec.ref_logp_a - rec.ref_logp_b
    _check_finite(log_w)
    if log_w > log_weight_cap:
        raise DegenerateWeightError(f"importance log-weight {log_w:.3g} exceeds cap {log_weight_cap}")
    return math.exp(log_w) * era_pairwise_kl(rec, scores, params)


def lower_energy_winner(rec: PreferenceRecord) -> str:
    """Winner label used for DPO data: the lower-energy completion (ties go to ``a``)."""
    return "a" if rec.energy_a <= rec.energy_b else "b"


def dpo_margin(rec: PreferenceRecord, scores: PolicyScores, winner: str) -> float:
    ratio_a = scores.logp_a - rec.ref_logp_a
    ratio_b = scores.logp_b - rec.ref_logp_b
    if winner == "a":
        return ratio_a - ratio_b
    if winner == "b":
        return ratio_b - ratio_a
    raise InvalidArgument(f"winner must be 'a' or 'b', got {winner!r}")


def dpo_pairwise_loss(
    rec: PreferenceRecord,
    scores: PolicyScores,
    winner: str,
    temperature: float = DPO_TEMPERATURE,
) -> float:
    """Bradley-Terry negative log-likelihood of the implicit reward margin.

    ``temperature`` plays the role of the ratio gamma/beta in the ERA notation.
    """
    _check_finite(scores.logp_a, scores.logp_b, temperature)
    return float(-log_sigmoid(temperature * dpo_margin(rec, scores, winner)))


# -- closed-form optima ------------------------------------------------------


def gibbs_unnormalized_logdensity(energy, ref_logp, params: AlignmentParams):
    _check_finite(energy, ref_logp)
    return -params.beta_prime * energy + params.gamma_prime * ref_logp


def ppo_unnormalized_logdensity(energy, ref_logp, params: AlignmentParams):
    if params.gamma == 0:
        raise InvalidArgument("the KL-regularized reward minimizer is undefined at gamma = 0")
    _check_finite(energy, ref_logp)
    return -(params.beta / params.gamma) * energy + ref_logp
