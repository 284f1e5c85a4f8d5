"""Embedding index, prompt-ensemble classification, retrieval metrics and concept mixing.

All searches are exact.  Ties are broken deterministically: by ascending
class index for classification and by insertion order for retrieval.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

MAGIC = b"DDEM"
VERSION = 1
_HEADER = struct.Struct("<4sIQI")


def _unit(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ValueError("cannot normalise a zero vector")
    return x / norm


class EmbeddingIndex:
    """Id-keyed unit-norm embeddings (float32 rows)."""

    def __init__(self, ids: Sequence[str], matrix: np.ndarray):
        ids = [str(i) for i in ids]
        matrix = np.asarray(matrix, dtype=np.float32)
        if matrix.ndim != 2 or matrix.shape[0] != len(ids):
            raise ValueError(f"{len(ids)} ids for a matrix of shape {matrix.shape}")
        if len(set(ids)) != len(ids):
            raise ValueError("ids must be unique")
        if any("\n" in i for i in ids):
            raise ValueError("ids may not contain newlines")
        if len(ids) and not np.allclose(np.linalg.norm(matrix, axis=1), 1.0, atol=1e-5):
            raise ValueError("rows must be unit norm")
        self.ids = ids
        self.matrix = matrix
        self._pos = {k: i for i, k in enumerate(ids)}

    @classmethod
    def from_vectors(cls, ids: Sequence[str], vectors: np.ndarray) -> "EmbeddingIndex":
        return cls(ids, _unit(vectors).astype(np.float32))

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def vector(self, id_: str) -> np.ndarray:
        return self.matrix[self._pos[id_]]

    def similarities(self, query: np.ndarray) -> np.ndarray:
        q = _unit(query)
        if q.shape[-1] != self.dim:
            raise ValueError(f"query dim {q.shape[-1]} != index dim {self.dim}")
        return cosine_scores(self.matrix, q)

    def dumps(self) -> tuple[bytes, str]:
        """(binary store, id sidecar text)."""
        n, d = self.matrix.shape
        blob = _HEADER.pack(MAGIC, VERSION, n, d) + self.matrix.astype("<f4").tobytes()
        return blob, "".join(i + "\n" for i in self.ids)

    @classmethod
    def loads(cls, blob: bytes, ids_text: str) -> "EmbeddingIndex":
        if len(blob) < _HEADER.size:
            raise ValueError("truncated embedding store")
        magic, version, n, d = _HEADER.unpack_from(blob)
        if magic != MAGIC:
            raise ValueError("not an embedding store (bad magic)")
        if version != VERSION:
            raise ValueError(f"unsupported embedding store version {version}")
        if len(blob) != _HEADER.size + 4 * n * d:
            raise ValueError("embedding store size does not match its header")
        matrix = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(n, d).astype(np.float32)
        ids = ids_text.split("\n")[:-1] if ids_text else []
        if len(ids) != n:
            raise ValueError(f"id sidecar has {len(ids)} lines, store has {n} rows")
        return cls(ids, matrix)

    def save(self, path: str | os.PathLike) -> None:
        blob, ids = self.dumps()
        Path(path).write_bytes(blob)
        Path(str(path) + ".ids").write_text(ids, encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "EmbeddingIndex":
        return cls.loads(Path(path).read_bytes(), Path(str(path) + ".ids").read_text(encoding="utf-8"))


@dataclass
class ClassPromptSet:
    classes: list[str]
    templates: list[str]
    embeddings: np.ndarray  # (C, d), unit rows


def build_class_embeddings(classes: Sequence[str], templates: Sequence[str],
                           text_encoder: Callable[[list[str]], np.ndarray]) -> ClassPromptSet:
    """Per class: embed every filled template, average, normalise."""
    if not classes:
        raise ValueError("class list is empty")
    if not templates:
        raise ValueError("template list is empty")
    rows = []
    for c in classes:
        sentences = np.asarray(text_encoder([t.format(c) for t in templates]), dtype=np.float64)
        rows.append(_unit(sentences.mean(axis=0)))
    return ClassPromptSet(list(classes), list(templates), np.stack(rows))


def cosine_scores(rows: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Dot products of every row with unit query(ies), shape (..., n).

    A row-wise multiply-and-sum rounds every row identically, so duplicated
    rows always score the same; BLAS products may not, which would break ties
    out of index order.
    """
    rows = np.asarray(rows, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    return (queries[..., None, :] * rows).sum(axis=-1)


def _ranking(scores: np.ndarray) -> np.ndarray:
    # stable sort of negated scores keeps ascending index among ties
    return np.argsort(-scores, kind="stable")


def classify(f: np.ndarray, prompts: ClassPromptSet) -> list[tuple[str, float]]:
    f = np.asarray(f)
    if f.shape[-1] != prompts.embeddings.shape[1]:
        raise ValueError(f"embedding dim {f.shape[-1]} != class embedding dim {prompts.embeddings.shape[1]}")
    scores = cosine_scores(prompts.embeddings, _unit(f))
    return [(prompts.classes[i], float(scores[i])) for i in _ranking(scores)]


def classify_batch(features: np.ndarray, prompts: ClassPromptSet) -> np.ndarray:
    """Class-index rankings (n, C) for a batch of embeddings."""
    features = np.asarray(features)
    if features.shape[-1] != prompts.embeddings.shape[1]:
        raise ValueError("embedding dim does not match the class embeddings")
    scores = cosine_scores(prompts.embeddings, _unit(features))
    return np.argsort(-scores, axis=1, kind="stable")


def retrieve_topk(query: np.ndarray, index: EmbeddingIndex, k: int) -> list[tuple[str, float]]:
    if not 1 <= k <= len(index):
        raise ValueError(f"k={k} outside [1, {len(index)}]")
    scores = index.similarities(query)
    return [(index.ids[i], float(scores[i])) for i in _ranking(scores)[:k]]


def metrics(rankings: Sequence[Sequence], truth: Sequence) -> dict[str, float]:
    """Top-1/3/5 accuracy and RR@1/5: the fraction of queries whose target is in the first k."""
    if len(rankings) != len(truth):
        raise ValueError(f"{len(rankings)} rankings but {len(truth)} ground-truth entries")
    if not rankings:
        raise ValueError("no queries")
    if any(t is None for t in truth):
        raise ValueError("every query needs a ground-truth target")

    def hit(k: int) -> float:
        return float(np.mean([t in list(r[:k]) for r, t in zip(rankings, truth)]))

    return {"top1": hit(1), "top3": hit(3), "top5": hit(5), "rr1": hit(1), "rr5": hit(5)}


def concept_mix(index: EmbeddingIndex, fa: np.ndarray, fb: np.ndarray, exclude=()) -> str:
    """Id maximising min(<f_i, f_a>, <f_i, f_b>) over the non-excluded rows."""
    exclude = set(exclude)
    keep = np.array([i not in exclude for i in index.ids], dtype=bool)
    if not keep.any():
        raise ValueError("no candidates left in the index")
    score = np.minimum(index.similarities(fa), index.similarities(fb))
    score[~keep] = -np.inf
    return index.ids[int(np.argmax(score))]  # argmax returns the first maximum
