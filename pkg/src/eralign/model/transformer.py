"""Decoder-only transformer in float64 numpy with a hand-written backward pass.

Blocks are pre-norm: ``x + attn(ln(x))`` then ``x + mlp(ln(x))`` with a tanh
GELU, learned positional embeddings and an untied output head. Sequences are
right-padded; the causal mask alone keeps padding from reaching real positions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from eralign.errors import InvalidArgument
from eralign.model.vocab import Vocabulary

LN_EPS = 1e-5
_GELU_C = np.sqrt(2.0 / np.pi)


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    heads: int = 4
    width: int = 64
    max_len: int = 128
    ff_mult: int = 4
    init_std: float = 0.02

    def __post_init__(self):
        if self.layers < 1 or self.heads < 1 or self.width < 1 or self.ff_mult < 1:
            raise InvalidArgument("layers, heads, width and ff_mult must be positive")
        if self.width % self.heads:
            raise InvalidArgument(f"width {self.width} not divisible by heads {self.heads}")
        if self.max_len < 2:
            raise InvalidArgument("max_len must be at least 2")

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(cfg: ModelConfig, vocab_size: int) -> dict[str, tuple]:
    d, f = cfg.width, cfg.width * cfg.ff_mult
    shapes = {"tok_emb": (vocab_size, d), "pos_emb": (cfg.max_len, d)}
    for i in range(cfg.layers):
        p = f"l{i}."
        shapes.update({
            p + "ln1_g": (d,), p + "ln1_b": (d,),
            p + "qkv_w": (d, 3 * d), p + "qkv_b": (3 * d,),
            p + "proj_w": (d, d), p + "proj_b": (d,),
            p + "ln2_g": (d,), p + "ln2_b": (d,),
            p + "ff1_w": (d, f), p + "ff1_b": (f,),
            p + "ff2_w": (f, d), p + "ff2_b": (d,),
        })
    shapes.update({"lnf_g": (d,), "lnf_b": (d,), "head_w": (d, vocab_size), "head_b": (vocab_size,)})
    return shapes


def init_params(cfg: ModelConfig, vocab_size: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = {}
    resid_std = cfg.init_std / np.sqrt(2 * cfg.layers)
    for name, shape in param_shapes(cfg, vocab_size).items():
        leaf = name.split(".")[-1]
        if leaf.endswith("_g"):
            params[name] = np.ones(shape)
        elif leaf.endswith("_b"):
            params[name] = np.zeros(shape)
        else:
            std = resid_std if leaf in ("proj_w", "ff2_w") else cfg.init_std
            params[name] = rng.normal(0.0, std, size=shape)
    return params


def check_params(params: dict, cfg: ModelConfig, vocab_size: int) -> None:
    shapes = param_shapes(cfg, vocab_size)
    if set(params) != set(shapes):
        raise InvalidArgument("parameter names do not match the model config")
    for name, shape in shapes.items():
        if params[name].shape != shape:
            raise InvalidArgument(f"{name}: shape {params[name].shape}, expected {shape}")
        if not np.all(np.isfinite(params[name])):
            raise InvalidArgument(f"{name}: non-finite entries")


# -- primitives ------------------------------------------------------------------------


def _ln_fwd(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def _ln_bwd(dy, cache):
    xhat, inv, g = cache
    red = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(red)
    db = dy.sum(red)
    dxhat = dy * g
    n = xhat.shape[-1]
    dx = inv / n * (n * dxhat - dxhat.sum(-1, keepdims=True) - xhat * (dxhat * xhat).sum(-1, keepdims=True))
    return dx, dg, db


def _gelu(u):
    u2 = u * u
    t = np.tanh(_GELU_C * u * (1.0 + 0.044715 * u2))
    return 0.5 * u * (1.0 + t), t


def _gelu_bwd(du_out, u, t):
    # d/du of 0.5 u (1 + tanh(c (u + a u^3)))
    dt = _GELU_C * (1.0 + 3 * 0.044715 * u * u)
    return du_out * (0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * dt)


def _softmax(s):
    s = s - s.max(-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(-1, keepdims=True)


def masked_log_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Log-softmax over the entries where ``mask`` is True; excluded entries get -inf."""
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(-1, keepdims=True)
    return z - np.log(np.exp(z).sum(-1, keepdims=True))


# -- forward / backward ------------------------------------------------------------------


def forward(params, cfg: ModelConfig, ids: np.ndarray, keep_cache: bool = True):
    """Logits of shape (B, T, V) for token ids of shape (B, T)."""
    B, T = ids.shape
    if T > cfg.max_len:
        raise InvalidArgument(f"sequence length {T} exceeds max_len {cfg.max_len}")
    H, d = cfg.heads, cfg.width
    dh = d // H
    scale = 1.0 / np.sqrt(dh)
    causal = np.triu(np.full((T, T), -np.inf), 1)
    x = params["tok_emb"][ids] + params["pos_emb"][:T]
    caches = []
    for i in range(cfg.layers):
        p = f"l{i}."
        h, ln1 = _ln_fwd(x, params[p + "ln1_g"], params[p + "ln1_b"])
        qkv = h @ params[p + "qkv_w"] + params[p + "qkv_b"]
        q, k, v = (qkv[..., j * d : (j + 1) * d].reshape(B, T, H, dh).transpose(0, 2, 1, 3) for j in range(3))
        att = _softmax(q @ k.transpose(0, 1, 3, 2) * scale + causal)
        o = (att @ v).transpose(0, 2, 1, 3).reshape(B, T, d)
        x = x + o @ params[p + "proj_w"] + params[p + "proj_b"]
        h2, ln2 = _ln_fwd(x, params[p + "ln2_g"], params[p + "ln2_b"])
        u = h2 @ params[p + "ff1_w"] + params[p + "ff1_b"]
        gu, t = _gelu(u)
        x = x + gu @ params[p + "ff2_w"] + params[p + "ff2_b"]
        if keep_cache:
            caches.append((h, ln1, q, k, v, att, o, h2, ln2, u, gu, t))
    hf, lnf = _ln_fwd(x, params["lnf_g"], params["lnf_b"])
    logits = hf @ params["head_w"] + params["head_b"]
    cache = (ids, caches, hf, lnf) if keep_cache else None
    return logits, cache


def backward(params, cfg: ModelConfig, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    ids, caches, hf, lnf = cache
    B, T = ids.shape
    H, d = cfg.heads, cfg.width
    dh = d // H
    scale = 1.0 / np.sqrt(dh)
    grads = {}
    grads["head_w"] = hf.reshape(-1, d).T @ dlogits.reshape(-1, dlogits.shape[-1])
    grads["head_b"] = dlogits.sum((0, 1))
    dx, grads["lnf_g"], grads["lnf_b"] = _ln_bwd(dlogits @ params["head_w"].T, lnf)
    for i in reversed(range(cfg.layers)):
        p = f"l{i}."
        h, ln1, q, k, v, att, o, h2, ln2, u, gu, t = caches[i]
        # feed-forward branch
        grads[p + "ff2_w"] = gu.reshape(-1, gu.shape[-1]).T @ dx.reshape(-1, d)
        grads[p + "ff2_b"] = dx.sum((0, 1))
        du = _gelu_bwd(dx @ params[p + "ff2_w"].T, u, t)
        grads[p + "ff1_w"] = h2.reshape(-1, d).T @ du.reshape(-1, du.shape[-1])
        grads[p + "ff1_b"] = du.sum((0, 1))
        dh2, grads[p + "ln2_g"], grads[p + "ln2_b"] = _ln_bwd(du @ params[p + "ff1_w"].T, ln2)
        dx = dx + dh2
        # attention branch
        grads[p + "proj_w"] = o.reshape(-1, d).T @ dx.reshape(-1, d)
        grads[p + "proj_b"] = dx.sum((0, 1))
        do = (dx @ params[p + "proj_w"].T).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        datt = do @ v.transpose(0, 1, 3, 2)
        dv = att.transpose(0, 1, 3, 2) @ do
        ds = att * (datt - (datt * att).sum(-1, keepdims=True)) * scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        dqkv = np.concatenate([g.transpose(0, 2, 1, 3).reshape(B, T, d) for g in (dq, dk, dv)], axis=-1)
        grads[p + "qkv_w"] = h.reshape(-1, d).T @ dqkv.reshape(-1, 3 * d)
        grads[p + "qkv_b"] = dqkv.sum((0, 1))
        dh1, grads[p + "ln1_g"], grads[p + "ln1_b"] = _ln_bwd(dqkv @ params[p + "qkv_w"].T, ln1)
        dx = dx + dh1
    grads["pos_emb"] = np.zeros_like(params["pos_emb"])
    grads["pos_emb"][:T] = dx.sum(0)
    grads["tok_emb"] = np.zeros_like(params["tok_emb"])
    np.add.at(grads["tok_emb"], ids, dx)
    return grads


# -- sequence batches ---------------------------------------------------------------------


@dataclass
class SequenceBatch:
    """Right-padded id matrix; row b's completion is ``ids[b, starts[b]:lengths[b]]``."""

    ids: np.ndarray
    lengths: np.ndarray
    starts: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.lengths = np.asarray(self.lengths, dtype=np.int64)
        self.starts = np.asarray(self.starts, dtype=np.int64)
        if self.ids.ndim != 2 or self.lengths.shape != (self.ids.shape[0],) or self.starts.shape != self.lengths.shape:
            raise InvalidArgument("batch arrays have inconsistent shapes")
        if np.any(self.starts < 1) or np.any(self.starts >= self.lengths) or np.any(self.lengths > self.ids.shape[1]):
            raise InvalidArgument("every row needs a non-empty completion after at least one context token")

    @classmethod
    def from_sequences(cls, seqs, starts, pad_id: int = 0) -> "SequenceBatch":
        T = max(len(s) for s in seqs)
        ids = np.full((len(seqs), T), pad_id, dtype=np.int64)
        for b, s in enumerate(seqs):
            ids[b, : len(s)] = s
        return cls(ids, [len(s) for s in seqs], starts)

    @classmethod
    def framed(cls, vocab: Vocabulary, pairs) -> "SequenceBatch":
        """From (prompt ids, completion ids) pairs, framed with start/sep/stop."""
        seqs, starts = zip(*(vocab.frame(x, y) for x, y in pairs))
        return cls.from_sequences(list(seqs), list(starts), vocab.pad_id)

    @property
    def size(self) -> int:
        return self.ids.shape[0]

    def target_mask(self) -> np.ndarray:
        """(B, T-1) mask of positions t whose next token ids[t+1] lies in the completion."""
        t = np.arange(1, self.ids.shape[1])[None, :]
        return (t >= self.starts[:, None]) & (t < self.lengths[:, None])

    @property
    def n_targets(self) -> int:
        return int((self.lengths - self.starts).sum())


def _check_ids(batch: SequenceBatch, vocab_size: int, max_len: int):
    if batch.ids.min() < 0 or batch.ids.max() >= vocab_size:
        raise InvalidArgument("token id outside the vocabulary")
    if batch.ids.shape[1] > max_len:
        raise InvalidArgument(f"sequence length {batch.ids.shape[1]} exceeds max_len {max_len}")


def completion_logprobs(params, cfg: ModelConfig, vocab: Vocabulary, batch: SequenceBatch, weights=None):
    """Per-row sum of completion token log-probs.

    With ``weights`` given, also returns the gradient of ``sum_b weights[b] * logp[b]``
    with respect to every parameter.
    """
    _check_ids(batch, vocab.size, cfg.max_len)
    logits, cache = forward(params, cfg, batch.ids, keep_cache=weights is not None)
    logp_all = masked_log_softmax(logits[:, :-1], vocab.output_mask())
    targets = batch.ids[:, 1:]
    mask = batch.target_mask()
    if np.any(mask & ~vocab.output_mask()[targets]):
        raise InvalidArgument("completion contains a symbol the model cannot emit")
    tok = np.take_along_axis(logp_all, targets[..., None], -1)[..., 0]
    logp = np.where(mask, tok, 0.0).sum(1)
    if weights is None:
        return logp
    w = np.asarray(weights, dtype=float)
    coef = np.where(mask, w[:, None], 0.0)[..., None]
    probs = np.exp(logp_all)
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, targets[..., None], 1.0, -1)
    dlogits = np.zeros_like(logits)
    dlogits[:, :-1] = coef * (onehot - probs)
    return logp, backward(params, cfg, cache, dlogits)


def next_token_logprobs(params, cfg: ModelConfig, vocab: Vocabulary, ids: np.ndarray) -> np.ndarray:
    """(B, T, V) log-distributions over the next symbol at every position."""
    logits, _ = forward(params, cfg, np.asarray(ids, dtype=np.int64), keep_cache=False)
    return masked_log_softmax(logits, vocab.output_mask())
