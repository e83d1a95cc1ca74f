"""Prompt sets, offline preference datasets and prompted fine-tuning pairs."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from eralign.chem.energy import evaluate_energy
from eralign.chem.properties import PropertyTable
from eralign.chem.smiles import is_valid, tokenize_smiles
from eralign.core import PreferenceRecord
from eralign.errors import ConfigError, InvalidArgument, TokenizationError
from eralign.model.policy import SequencePolicy


@dataclass(frozen=True)
class PromptSet:
    """Prompts as token tuples, sampled uniformly; the empty tuple is the bare start token."""

    prompts: tuple

    def __post_init__(self):
        if not self.prompts:
            raise InvalidArgument("prompt set is empty")
        object.__setattr__(self, "prompts", tuple(tuple(p) for p in self.prompts))

    @classmethod
    def unprompted(cls, repeats: int = 1) -> "PromptSet":
        """The start-token prompt, listed ``repeats`` times (one sample group per entry)."""
        return cls(((),) * repeats)

    @classmethod
    def from_smiles(cls, smiles) -> "PromptSet":
        try:
            return cls(tuple(tuple(tokenize_smiles(s)) for s in smiles))
        except TokenizationError as e:
            raise InvalidArgument(f"prompt not tokenizable: {e}") from None

    @classmethod
    def read(cls, path) -> "PromptSet":
        """One SMILES per line; a blank line stands for the start-token prompt."""
        lines = Path(path).read_text().splitlines()
        return cls.from_smiles(lines)

    def __len__(self):
        return len(self.prompts)

    def texts(self) -> list[str]:
        return ["".join(p) for p in self.prompts]


def gen_preference_dataset(
    policy: SequencePolicy,
    prompts: PromptSet,
    spec,
    k: int,
    seed: int,
    table: PropertyTable | None = None,
    temperature: float = 1.0,
) -> list[PreferenceRecord]:
    """Draw k completions per prompt from the reference policy and pair them all.

    Returns |prompts| * k(k-1)/2 records with energies and reference log-probs.
    """
    if k < 2:
        raise InvalidArgument("need at least 2 samples per prompt")
    for p in prompts.prompts:
        try:
            policy.encode(p)
        except InvalidArgument as e:
            raise ConfigError(f"prompt does not fit the checkpoint vocabulary: {e}") from None
    rng = np.random.default_rng(seed)
    records = []
    for p in prompts.prompts:
        samples = policy.sample_tokens(p, k, rng, temperature)
        prompt_text = "".join(p) if p else None
        energies = [evaluate_energy(spec, "".join(y), prompt_text, table) for y in samples]
        ref = policy.logprobs([(p, y) for y in samples])
        for i, j in itertools.combinations(range(k), 2):
            records.append(PreferenceRecord(p, samples[i], samples[j], energies[i], energies[j], float(ref[i]), float(ref[j])))
    return records


def write_records(path, records) -> None:
    with open(Path(path), "w") as f:
        for r in records:
            f.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_records(path) -> list[PreferenceRecord]:
    out = []
    with open(Path(path)) as f:
        for n, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(PreferenceRecord.from_dict(json.loads(line)))
            except (KeyError, ValueError, TypeError) as e:
                raise ConfigError(f"{path}:{n}: bad preference record ({e})") from None
    return out


# -- prompted fine-tuning data ---------------------------------------------------------------


def perturb_tokens(tokens, alphabet, rng: np.random.Generator, max_tries: int = 100):
    """Replace one random token by a random alphabet symbol until the result is a valid, different molecule.

    Returns None after ``max_tries`` failed attempts.
    """
    tokens = list(tokens)
    for _ in range(max_tries):
        i = int(rng.integers(len(tokens)))
        new = alphabet[int(rng.integers(len(alphabet)))]
        if new == tokens[i]:
            continue
        cand = tokens[:i] + [new] + tokens[i + 1 :]
        if is_valid("".join(cand)):
            return tuple(cand)
    return None


def prompted_pairs(corpus, rng: np.random.Generator, per_molecule: int = 1, max_tries: int = 100):
    """(prompt tokens, perturbed completion tokens) pairs for supervised prompted training."""
    toks = [tuple(tokenize_smiles(s)) for s in corpus]
    alphabet = sorted({t for seq in toks for t in seq})
    pairs = []
    for seq in toks:
        for _ in range(per_molecule):
            y = perturb_tokens(seq, alphabet, rng, max_tries)
            if y is not None:
                pairs.append((seq, y))
    return pairs
