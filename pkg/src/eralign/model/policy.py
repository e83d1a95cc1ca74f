"""Sequence policy wrapper: scoring, sampling, checkpoints."""

from __future__ import annotations

import copy
import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from eralign.errors import ConfigError, InvalidArgument
from eralign.model.transformer import (
    ModelConfig,
    SequenceBatch,
    check_params,
    completion_logprobs,
    init_params,
    next_token_logprobs,
)
from eralign.model.vocab import Vocabulary

CHECKPOINT_VERSION = 1


@dataclass
class SequencePolicy:
    config: ModelConfig
    vocab: Vocabulary
    params: dict

    @classmethod
    def create(cls, config: ModelConfig, vocab: Vocabulary, seed: int) -> "SequencePolicy":
        return cls(config, vocab, init_params(config, vocab.size, np.random.default_rng(seed)))

    def copy(self) -> "SequencePolicy":
        return SequencePolicy(self.config, self.vocab, copy.deepcopy(self.params))

    # -- scoring --------------------------------------------------------------------

    def encode(self, seq) -> list[int]:
        """Ids for a text string or a sequence of token strings."""
        return self.vocab.encode_text(seq) if isinstance(seq, str) else self.vocab.encode(seq)

    def encode_pair(self, prompt, completion) -> tuple[list[int], list[int]]:
        return self.encode(prompt), self.encode(completion)

    def batch(self, pairs) -> SequenceBatch:
        """Batch from (prompt, completion) pairs given as text or token sequences."""
        return SequenceBatch.framed(self.vocab, [self.encode_pair(x, y) for x, y in pairs])

    def logprob_sequence(self, batch: SequenceBatch) -> np.ndarray:
        return completion_logprobs(self.params, self.config, self.vocab, batch)

    def logprob(self, prompt: str, completion: str) -> float:
        return float(self.logprob_sequence(self.batch([(prompt, completion)]))[0])

    def logprobs(self, pairs, chunk: int = 256) -> np.ndarray:
        pairs = list(pairs)
        out = [self.logprob_sequence(self.batch(pairs[i : i + chunk])) for i in range(0, len(pairs), chunk)]
        return np.concatenate(out) if out else np.zeros(0)

    # -- sampling -------------------------------------------------------------------

    def sample_ids(self, prompt_ids, n: int, rng: np.random.Generator, temperature: float = 1.0) -> list[list[int]]:
        """``n`` completions (ids, without stop) for one prompt; ancestral sampling."""
        if not temperature > 0:
            raise InvalidArgument("temperature must be positive")
        head, _ = self.vocab.frame(prompt_ids, [])
        head = head[:-1]  # drop the stop appended by frame
        L = self.config.max_len
        if len(head) >= L:
            raise InvalidArgument("prompt does not fit in max_len")
        ids = np.full((n, L), self.vocab.pad_id, dtype=np.int64)
        ids[:, : len(head)] = head
        done = np.zeros(n, dtype=bool)
        ends = np.full(n, L, dtype=np.int64)
        for t in range(len(head), L):
            live = np.flatnonzero(~done)
            if live.size == 0:
                break
            logp = next_token_logprobs(self.params, self.config, self.vocab, ids[live, :t])[:, -1] / temperature
            logp = logp - logp.max(-1, keepdims=True)
            p = np.exp(logp)
            p /= p.sum(-1, keepdims=True)
            u = rng.random(live.size)
            tok = np.minimum((p.cumsum(-1) < u[:, None]).sum(-1), p.shape[-1] - 1)
            # guard against rounding landing on a masked symbol
            tok = np.where(p[np.arange(live.size), tok] > 0, tok, p.argmax(-1))
            if t == L - 1:
                tok[:] = self.vocab.stop_id  # truncate so the framed sequence still fits
            ids[live, t] = tok
            stop = tok == self.vocab.stop_id
            ends[live[stop]] = t
            done[live[stop]] = True
        start = len(head)
        return [ids[b, start : ends[b]].tolist() for b in range(n)]

    def sample_sequence(self, prompt_ids, rng_seed: int, temperature: float = 1.0) -> list[int]:
        return self.sample_ids(prompt_ids, 1, np.random.default_rng(rng_seed), temperature)[0]

    def sample_tokens(self, prompt, n: int, rng: np.random.Generator, temperature: float = 1.0) -> list[tuple]:
        """``n`` completions as token tuples; ``prompt`` is text or a token sequence."""
        return [tuple(self.vocab.decode(s)) for s in self.sample_ids(self.encode(prompt), n, rng, temperature)]

    # -- persistence ----------------------------------------------------------------

    def save(self, path) -> None:
        meta = {
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "vocab": self.vocab.to_dict(),
        }
        arrays = {"__meta__": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
        arrays.update((k, self.params[k]) for k in sorted(self.params))
        # npz layout with fixed timestamps, so equal parameters give equal bytes
        with zipfile.ZipFile(Path(path), "w", zipfile.ZIP_STORED) as zf:
            for name, arr in arrays.items():
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
                zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())

    @classmethod
    def load(cls, path) -> "SequencePolicy":
        try:
            with np.load(Path(path)) as z:
                meta = json.loads(z["__meta__"].tobytes().decode())
                params = {k: z[k].astype(np.float64) for k in z.files if k != "__meta__"}
        except (OSError, KeyError, ValueError, zipfile.BadZipFile) as e:
            raise ConfigError(f"cannot read checkpoint {path}: {e}") from None
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"checkpoint version {meta.get('version')} unsupported (expected {CHECKPOINT_VERSION})")
        config = ModelConfig(**meta["config"])
        vocab = Vocabulary.from_dict(meta["vocab"])
        try:
            check_params(params, config, vocab.size)
        except InvalidArgument as e:
            raise ConfigError(f"checkpoint {path}: {e}") from None
        return cls(config, vocab, params)
