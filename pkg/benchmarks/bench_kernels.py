"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each kernel runs on identical inputs under every available backend; the
table reports the best wall time and the speed-up relative to numpy.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from rdsnet import _kernels, crf
from rdsnet.autograd import Tensor, backward
from rdsnet.ops import conv2d, mse_loss


def cases(rng):
    x = rng.standard_normal((8, 16, 32, 32))
    w = rng.standard_normal((16, 16, 3, 3))
    b = rng.standard_normal(16)
    target = rng.random((8, 16, 32, 32))

    def conv_forward():
        conv2d(Tensor(x), Tensor(w), Tensor(b), 1, 1)

    def conv_backward():
        xt, wt = Tensor(x, requires_grad=True), Tensor(w, requires_grad=True)
        backward(mse_loss(conv2d(xt, wt, Tensor(b), 1, 1), target))

    image = rng.integers(0, 256, (48, 48, 3)).astype(np.uint8)
    sal = rng.random((48, 48))

    def crf_refine():
        crf.refine(image, sal, crf.CrfParams())

    return {"conv2d forward 8x16x32x32 k3": conv_forward,
            "conv2d forward+backward": conv_backward,
            "crf refine 48x48, 5 iterations": crf_refine}


def run(repeat):
    rows = []
    for name, fn in cases(np.random.default_rng(0)).items():
        times = {}
        for backend in sorted(_kernels.available_backends()):
            previous = _kernels.use_backend(backend)
            try:
                fn()  # warm-up
                times[backend] = min(timeit.repeat(fn, number=1, repeat=repeat))
            finally:
                _kernels.use_backend(previous)
        rows.append({"case": name, "seconds": times})
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)
    rows = run(args.repeat)
    backends = sorted(_kernels.available_backends())
    print(f"{'case':34s}" + "".join(f"{b:>12s}" for b in backends) + "   speed-up")
    for r in rows:
        t = r["seconds"]
        speed = f"{t['python'] / t['cython']:8.2f}x" if "cython" in t else "       n/a"
        print(f"{r['case']:34s}" + "".join(f"{t[b]:11.4f}s" for b in backends) + "  " + speed)
    if "cython" not in backends:
        print("compiled extension not built; only the numpy backend was timed", file=sys.stderr)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2, sort_keys=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
