"""Token vocabularies with reserved start/stop/pad/separator symbols."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from eralign.chem.smiles import tokenize_smiles
from eralign.errors import InvalidArgument

PAD, START, STOP, SEP = "<pad>", "<start>", "<stop>", "<sep>"
RESERVED = (PAD, START, STOP, SEP)
TOKENIZERS = ("smiles", "char")


@dataclass(frozen=True)
class Vocabulary:
    """Reserved symbols occupy ids 0..3; ``tokens`` lists the ordinary symbols after them."""

    tokens: tuple
    tokenizer: str = "smiles"

    def __post_init__(self):
        tokens = tuple(self.tokens)
        if len(set(tokens)) != len(tokens):
            raise InvalidArgument("vocabulary tokens must be unique")
        if any(t in RESERVED for t in tokens):
            raise InvalidArgument("reserved symbols cannot be ordinary tokens")
        if not tokens:
            raise InvalidArgument("vocabulary needs at least one ordinary token")
        if self.tokenizer not in TOKENIZERS:
            raise InvalidArgument(f"unknown tokenizer {self.tokenizer!r}")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.symbols)})

    @classmethod
    def from_corpus(cls, sequences, tokenizer: str = "smiles") -> "Vocabulary":
        seen = set()
        for seq in sequences:
            seen.update(seq)
        return cls(tuple(sorted(seen)), tokenizer)

    @property
    def symbols(self) -> tuple:
        return RESERVED + self.tokens

    @property
    def size(self) -> int:
        return len(RESERVED) + len(self.tokens)

    pad_id, start_id, stop_id, sep_id = 0, 1, 2, 3

    def output_mask(self) -> np.ndarray:
        """Symbols the model may emit: ordinary tokens and stop."""
        mask = np.ones(self.size, dtype=bool)
        mask[[self.pad_id, self.start_id, self.sep_id]] = False
        return mask

    def tokenize(self, text: str) -> list[str]:
        return tokenize_smiles(text) if self.tokenizer == "smiles" else list(text)

    def encode(self, tokens) -> list[int]:
        try:
            return [self._index[t] for t in tokens]
        except KeyError as e:
            raise InvalidArgument(f"token {e.args[0]!r} is not in the vocabulary") from None

    def encode_text(self, text: str) -> list[int]:
        return self.encode(self.tokenize(text))

    def decode(self, ids) -> list[str]:
        """Ordinary tokens only; reserved ids are dropped."""
        syms = self.symbols
        return [syms[i] for i in ids if i >= len(RESERVED)]

    def frame(self, prompt_ids, completion_ids) -> tuple[list[int], int]:
        """Full sequence and the index where the completion starts.

        Unprompted: start, y..., stop. Prompted: start, x..., sep, y..., stop.
        """
        head = [self.start_id] + list(prompt_ids)
        if prompt_ids:
            head.append(self.sep_id)
        return head + list(completion_ids) + [self.stop_id], len(head)

    def to_dict(self) -> dict:
        return {"tokens": list(self.tokens), "tokenizer": self.tokenizer}

    @classmethod
    def from_dict(cls, d) -> "Vocabulary":
        return cls(tuple(d["tokens"]), d.get("tokenizer", "smiles"))
