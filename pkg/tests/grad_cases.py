"""Random double-precision gradient-check cases, one builder per differentiable op.

Each builder takes a seed and returns ``(loss_fn, params)``.  Weights of the
scalarising sum come from a stream separate from the inputs so they are
never correlated with them.
"""
import numpy as np

from mvclip.nn import scaled_dot_attention
from mvclip.numerics import Parameter, Tensor, ops

SEEDS = range(20)


def param(rng, shape, scale=1.0):
    return Parameter(rng.standard_normal(shape) * scale, dtype=np.float64)


def random_shape(rng, ndim_range=(1, 3), size=(1, 5)):
    ndim = rng.integers(*ndim_range, endpoint=True)
    return tuple(int(v) for v in rng.integers(size[0], size[1] + 1, size=ndim))


def weighted(t, seed):
    """Scalar loss sum(t * w) with a fixed random w, so every output element matters."""
    w = Tensor(np.random.default_rng([seed, 1]).standard_normal(t.shape))
    return ops.sum(t * w)


def matmul(seed):
    rng = np.random.default_rng(seed)
    b = random_shape(rng, (0, 2))
    n, k, m = (int(v) for v in rng.integers(1, 6, size=3))
    a = param(rng, b + (n, k))
    w = param(rng, (k, m)) if rng.random() < 0.5 else param(rng, b + (k, m))
    return (lambda: weighted(ops.matmul(a, w), seed)), [a, w]


def softmax(seed):
    rng = np.random.default_rng(seed)
    x = param(rng, random_shape(rng), 2.0)
    return (lambda: weighted(ops.softmax(x), seed)), [x]


def log_softmax(seed):
    rng = np.random.default_rng(seed)
    x = param(rng, random_shape(rng), 2.0)
    return (lambda: weighted(ops.log_softmax(x), seed)), [x]


def layer_norm(seed):
    rng = np.random.default_rng(seed)
    # two features normalise to +-1 regardless of x, leaving only round-off to compare
    shape = random_shape(rng, (0, 2)) + (int(rng.integers(3, 7)),)
    x, g, b = param(rng, shape), param(rng, shape[-1:]), param(rng, shape[-1:])
    return (lambda: weighted(ops.layer_norm(x, g, b), seed)), [x, g, b]


def gelu(seed):
    rng = np.random.default_rng(seed)
    # beyond |x| ~ 4 the derivative drops under the finite-difference round-off;
    # the tails are checked against a closed form in the numerics tests
    x = Parameter(np.clip(rng.standard_normal(random_shape(rng)) * 2.0, -4, 4), dtype=np.float64)
    return (lambda: weighted(ops.gelu(x), seed)), [x]


def linear(seed):
    rng = np.random.default_rng(seed)
    shape = random_shape(rng, (2, 3))
    n_out = int(rng.integers(1, 6))
    x, w, b = param(rng, shape), param(rng, (shape[-1], n_out)), param(rng, (n_out,))
    return (lambda: weighted(ops.linear(x, w, b), seed)), [x, w, b]


def embedding(seed):
    rng = np.random.default_rng(seed)
    vocab, width = int(rng.integers(2, 8)), int(rng.integers(1, 6))
    table = param(rng, (vocab, width))
    ids = rng.integers(vocab, size=random_shape(rng, (1, 2)))  # repeats exercise the scatter-add
    return (lambda: weighted(ops.embedding(table, ids), seed)), [table]


def l2_normalize(seed):
    rng = np.random.default_rng(seed)
    x = param(rng, random_shape(rng, (1, 3), (2, 5)))
    return (lambda: weighted(ops.l2_normalize(x), seed)), [x]


def attention(seed):
    rng = np.random.default_rng(seed)
    lead = random_shape(rng, (0, 2))
    t, s, d = (int(v) for v in rng.integers(1, 5, size=3))
    q, k, v = param(rng, lead + (t, d)), param(rng, lead + (s, d)), param(rng, lead + (s, d))
    return (lambda: weighted(scaled_dot_attention(q, k, v)[0], seed)), [q, k, v]


def elementwise(seed):
    rng = np.random.default_rng(seed)
    shape = random_shape(rng, (2, 3))
    a, b = param(rng, shape), param(rng, shape[-1:])
    pos = Parameter(rng.random(shape) + 0.5, dtype=np.float64)

    def loss():
        y = (a + b) * a - b / pos + ops.exp(a * 0.3) + ops.log(pos) + ops.sqrt(pos) - (-a)
        return weighted(y, seed)

    return loss, [a, b, pos]


def shape_ops(seed):
    rng = np.random.default_rng(seed)
    shape = random_shape(rng, (2, 3), (2, 4))
    a, b = param(rng, shape), param(rng, shape[-1:])

    def loss():
        y = ops.reshape(ops.transpose(a), (-1,))
        z = ops.concat([y, y[:2] * 2.0], axis=0)
        s = ops.swap_last(a)
        return (ops.mean(z * z) + ops.sum(ops.broadcast_to(b, (3,) + b.shape), axis=0)[0]
                + weighted(ops.mean(s, axis=-1, keepdims=True), seed) + ops.sum(ops.sum(a, axis=0)[0:1]))

    return loss, [a, b]


def indexing(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    x = param(rng, (n, 4))
    idx = rng.integers(n, size=5)

    def loss():
        left, right = ops.split(x, 2, axis=-1)
        picked = ops.getitem(x, (idx, slice(None)))
        return weighted(left * right, seed) + ops.sum(picked * picked)

    return loss, [x]


CASES = {f.__name__: f for f in (matmul, softmax, log_softmax, layer_norm, gelu, linear, embedding, l2_normalize,
                                 attention, elementwise, shape_ops, indexing)}
