"""Compiled vs numpy kernels: im2col, col2im, a full conv forward/backward, and row distances.

    python benchmarks/bench_kernels.py [--repeat N] [--batch B]

Prints one row per case with the best-of-N time for each backend and the
speedup. Both backends are checked for agreement before timing.
"""

from __future__ import annotations

import argparse
import sys
import timeit
from contextlib import contextmanager

import numpy as np

from framesearch import _fallback, kernels, nn

try:
    from framesearch import _ckernels
except ImportError:
    _ckernels = None

# (channels in, channels out, spatial extent, stride) for the default 64 x 64 AE
LAYERS = [(3, 16, 64, 2), (16, 32, 32, 2), (32, 64, 16, 2), (64, 32, 16, 1), (32, 16, 32, 1), (16, 3, 64, 1)]


@contextmanager
def backend(mod):
    saved = kernels.im2col, kernels.col2im, kernels.sq_l2_rows
    kernels.im2col, kernels.col2im, kernels.sq_l2_rows = mod.im2col, mod.col2im, mod.sq_l2_rows
    try:
        yield
    finally:
        kernels.im2col, kernels.col2im, kernels.sq_l2_rows = saved


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def cases(batch, rng):
    for c, f, h, s in LAYERS:
        x = rng.random((batch, c, h, h), dtype=np.float32)
        oh = (h - 1) // s + 1
        cols = rng.random((batch * oh * oh, c * 9), dtype=np.float32)
        label = f"{c}->{f} @{h} s{s}"
        yield f"im2col {label}", lambda m, x=x, s=s: m.im2col(x, 3, 3, s, 1), None
        yield f"col2im {label}", lambda m, cols=cols, x=x, s=s: m.col2im(cols, x.shape, 3, 3, s, 1), None

        w = nn.Tensor(rng.normal(0, 0.1, (f, c, 3, 3)).astype(np.float32), requires_grad=True)
        b = nn.Tensor(np.zeros(f, dtype=np.float32), requires_grad=True)

        def conv(m, x=x, w=w, b=b, s=s):
            with backend(m):
                xt = nn.Tensor(x, requires_grad=True)
                out = nn.conv2d(xt, w, b, stride=s)
                out.sum().backward()
                return out.data, xt.grad

        yield f"conv fwd+bwd {label}", conv, "conv"
    latents = rng.normal(size=(100_000, 32)).astype(np.float32)
    q = latents[0] + 0.5
    yield "sq_l2_rows 100k x 32", lambda m: m.sq_l2_rows(q, latents), None


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--batch", type=int, default=32)
    args = p.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; run `python setup.py build_ext --inplace`", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    print(f"{'case':<28}{'cython ms':>11}{'numpy ms':>11}{'speedup':>9}")
    for name, fn, kind in cases(args.batch, rng):
        a, b = fn(_ckernels), fn(_fallback)
        for u, v in zip(a if kind else (a,), b if kind else (b,)):
            np.testing.assert_allclose(u, v, rtol=1e-4, atol=1e-4)
        tc = best(lambda: fn(_ckernels), args.repeat)
        tn = best(lambda: fn(_fallback), args.repeat)
        print(f"{name:<28}{tc * 1e3:>11.2f}{tn * 1e3:>11.2f}{tn / tc:>8.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
