"""Compiled vs numpy gather kernel.

Times ``im2row`` on a 64x64 block-sized input for each available backend,
then a full convolution block (forward + backward, batch 8) in a fresh
interpreter per backend, since the backend is fixed at import.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from stegattn.numerics import kernels

BLOCK_SNIPPET = """
import json, timeit
import numpy as np
from stegattn import model as M, numerics as nx
p = M.init_params(0)
blk = p.hiding[1]
x = nx.Tensor(np.random.default_rng(0).uniform(0, 1, (8, 65, 64, 64)).astype(np.float32))
tensors = [t for c in blk.convs for t in (c.weight, c.bias)]
def step():
    y = M.conv_block_forward(x, blk)
    nx.grad(nx.mse(y, nx.Tensor(np.zeros(y.shape, np.float32))), tensors)
step()
print(json.dumps({"backend": nx.BACKEND, "times": timeit.repeat(step, number=1, repeat=%d)}))
"""


def im2row_case(size=64, channels=65, k=5):
    rng = np.random.default_rng(0)
    src = rng.standard_normal((size + k - 1, size + k - 1, channels)).astype(np.float32)
    entries = np.array([(dy, dx, 0, channels) for dy in range(k) for dx in range(k)], dtype=np.int64)
    return src, entries, size


def bench_im2row(repeat):
    src, entries, size = im2row_case()
    out = {}
    for name in kernels.available_backends():
        t = timeit.repeat(lambda: kernels.im2row(src, entries, size, size, backend=name),
                          number=10, repeat=repeat)
        out[name] = min(t) / 10
    return out


def bench_block(repeat):
    out = {}
    for pure in ("", "1"):
        env = dict(os.environ, STEGATTN_PURE_PYTHON=pure)
        proc = subprocess.run([sys.executable, "-c", BLOCK_SNIPPET % repeat], env=env,
                              capture_output=True, text=True, check=True)
        res = json.loads(proc.stdout.strip().splitlines()[-1])
        out.setdefault(res["backend"], min(res["times"]))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    print(f"active backend: {kernels.BACKEND}")
    print("im2row 64x64x65, 5x5 offsets (best of %d):" % args.repeat)
    for name, sec in bench_im2row(args.repeat).items():
        print(f"  {name:<8} {sec * 1e3:8.2f} ms")
    print("conv block forward+backward, batch 8 at 64x64:")
    for name, sec in bench_block(args.repeat).items():
        print(f"  {name:<8} {sec * 1e3:8.1f} ms")


if __name__ == "__main__":
    main()
