"""Word-level tokenizer and the caption transformer."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import config as cfgio
from .nn import NEG_INF, Block, LayerNorm, Module
from .numerics import Parameter, Tensor, no_grad, ops

BOS, EOS, PAD, UNK = "<bos>", "<eos>", "<pad>", "<unk>"
SPECIALS = (BOS, EOS, PAD, UNK)
BOS_ID, EOS_ID, PAD_ID, UNK_ID = range(4)


class Vocab:
    """Dense token ids; the four specials occupy ids 0..3."""

    def __init__(self, words, max_len: int = 16):
        if max_len < 2:
            raise ValueError("max_len must leave room for BOS and EOS")
        self.max_len = max_len
        self.itos: list[str] = list(SPECIALS)
        for w in sorted(set(words) - set(SPECIALS)):
            self.itos.append(w)
        self.stoi = {w: i for i, w in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos and self.max_len == other.max_len

    def id(self, word: str) -> int:
        return self.stoi.get(word, UNK_ID)

    def dumps(self) -> str:
        return "".join(f"{w}\t{i}\n" for i, w in enumerate(self.itos))

    @classmethod
    def loads(cls, text: str, max_len: int = 16) -> "Vocab":
        pairs = []
        for line in text.splitlines():
            if not line:
                continue
            tok, idx = line.split("\t")
            pairs.append((int(idx), tok))
        pairs.sort()
        if [i for i, _ in pairs] != list(range(len(pairs))):
            raise ValueError("vocab ids are not dense 0..V-1")
        if tuple(t for _, t in pairs[:4]) != SPECIALS:
            raise ValueError("vocab does not start with the reserved specials")
        v = cls([], max_len)
        v.itos = [t for _, t in pairs]
        v.stoi = {w: i for i, w in enumerate(v.itos)}
        return v

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path: str | os.PathLike, max_len: int = 16) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read(), max_len)


def tokenize(text: str, vocab: Vocab) -> np.ndarray:
    """Lowercase, split on whitespace, wrap in BOS/EOS, pad or truncate to max_len."""
    words = text.lower().split()[: vocab.max_len - 2]
    ids = [BOS_ID] + [vocab.id(w) for w in words] + [EOS_ID]
    ids += [PAD_ID] * (vocab.max_len - len(ids))
    return np.asarray(ids, dtype=np.int64)


def tokenize_batch(texts, vocab: Vocab) -> np.ndarray:
    return np.stack([tokenize(t, vocab) for t in texts]) if texts else np.zeros((0, vocab.max_len), np.int64)


@dataclass(frozen=True)
class TextConfig:
    vocab_size: int = 0
    max_len: int = 16
    width: int = 64
    depth: int = 2
    heads: int = 4
    embed_dim: int = 64
    pooling: str = "mean"

    def dumps(self) -> str:
        return cfgio.dumps(self)

    @classmethod
    def loads(cls, text: str) -> "TextConfig":
        return cfgio.loads(text, cls)


class TextEncoder(Module):
    """Bidirectional transformer; mean-pools non-PAD tokens, projects, normalises."""

    def __init__(self, config: TextConfig, seed: int = 0):
        if config.vocab_size <= len(SPECIALS):
            raise ValueError("vocab_size must exceed the special-token count")
        rng = np.random.default_rng(seed)
        k = config.width
        self.config = config
        self.token_embed = Parameter((rng.standard_normal((config.vocab_size, k)) * 0.02).astype(np.float32))
        self.pos = Parameter((rng.standard_normal((config.max_len, k)) * 0.01).astype(np.float32))
        self.blocks = [Block(rng, k, config.heads) for _ in range(config.depth)]
        self.ln_final = LayerNorm(k)
        self.proj = Parameter((rng.standard_normal((k, config.embed_dim)) / math.sqrt(k)).astype(np.float32))

    def encode_ids(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        B, T = ids.shape
        k = self.config.width
        valid = (ids != PAD_ID)
        x = ops.embedding(self.token_embed, ids) + ops.getitem(self.pos, slice(0, T))
        x = x.reshape(B, 1, T, k)
        key_bias = np.where(valid, 0.0, NEG_INF).reshape(B, 1, 1, 1, T)
        for block in self.blocks:
            x = block(x, key_bias=key_bias)
        x = self.ln_final(x.reshape(B, T, k))
        w = (valid / valid.sum(axis=1, keepdims=True)).astype(x.dtype)[:, :, None]
        pooled = ops.sum(x * Tensor(w), axis=1)
        return ops.l2_normalize(ops.matmul(pooled, self.proj), axis=-1)

    def encode(self, texts, vocab: Vocab) -> Tensor:
        return self.encode_ids(tokenize_batch(list(texts), vocab))


def encode_text(text: str, encoder: TextEncoder, vocab: Vocab) -> np.ndarray:
    with no_grad():
        return encoder.encode([text], vocab).data[0]
