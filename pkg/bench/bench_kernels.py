"""Time the compiled kernels against the numpy fallback.

    python bench/bench_kernels.py [--repeat 20]

Prints one line per kernel with the best-of-N time for each backend and the
speed-up.  Outputs of the two backends are also compared.
"""
import argparse
import timeit

import numpy as np

from mvclip import kernels
from mvclip.synth.render import render_view
from mvclip.synth.scene import PRIMITIVES, Pose, sample_scene


def best(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    compiled, python = kernels.get_backend("compiled"), kernels.get_backend("python")
    rng = np.random.default_rng(0)
    x = rng.standard_normal(1 << 20).astype(np.float32)
    g = rng.standard_normal(x.shape).astype(np.float32)
    scenes = [sample_scene(rng, p, p) for p in PRIMITIVES]
    pose = Pose(1.9, 35.0, 20.0)

    def gelu_fwd(impl):
        return lambda: kernels.gelu(x, backend=impl)

    def gelu_bwd(impl):
        _, cdf = kernels.gelu(x, backend=impl)
        return lambda: kernels.gelu_grad(x, cdf, g, backend=impl)

    def render(impl, res):
        return lambda: [render_view(s, pose, res, backend=impl) for s in scenes]

    cases = [("gelu forward, 1M float32", gelu_fwd), ("gelu backward, 1M float32", gelu_bwd),
             ("render 5 primitives at 32px", lambda impl: render(impl, 32)),
             ("render 5 primitives at 128px", lambda impl: render(impl, 128))]
    print(f"{'kernel':32s} {'compiled':>12s} {'python':>12s} {'speed-up':>9s}  outputs")
    for name, make in cases:
        tc, tp = best(make(compiled), args.repeat), best(make(python), args.repeat)
        a, b = make(compiled)(), make(python)()
        a, b = (r if isinstance(r, (tuple, list)) else [r] for r in (a, b))
        same = all(np.array_equal(u, v) for u, v in zip(a, b))
        print(f"{name:32s} {tc * 1e3:10.2f}ms {tp * 1e3:10.2f}ms {tp / tc:8.1f}x  {'identical' if same else 'differ'}")


if __name__ == "__main__":
    main()
