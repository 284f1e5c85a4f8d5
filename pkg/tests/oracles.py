"""Straight-line reference implementations used as test oracles."""
import math

import numpy as np


def unit(v):
    v = [float(x) for x in v]
    n = math.sqrt(math.fsum(x * x for x in v))
    return [x / n for x in v]


def dot(a, b):
    return math.fsum(float(x) * float(y) for x, y in zip(a, b))


def rank(scores):
    """Indices by descending score, ascending index among ties."""
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def classify(f, class_rows):
    q = unit(f)
    return rank([dot(row, q) for row in class_rows])


def topk(query, rows, k):
    q = unit(query)
    return rank([dot(row, q) for row in rows])[:k]


def mix(rows, fa, fb, excluded):
    a, b = unit(fa), unit(fb)
    best, best_score = None, -math.inf
    for i, row in enumerate(rows):
        if i in excluded:
            continue
        s = min(dot(row, a), dot(row, b))
        if s > best_score:
            best, best_score = i, s
    return best


def random_index_case(rng: np.random.Generator, max_size: int = 1000):
    """Unit rows (float32) with some exact duplicates, so ties occur."""
    n = int(rng.integers(1, max_size + 1))
    d = int(rng.integers(2, 17))
    rows = rng.standard_normal((n, d))
    if n > 2:
        dup = rng.integers(n, size=max(1, n // 10))
        rows[rng.integers(n, size=len(dup))] = rows[dup]
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return rows.astype(np.float32)
