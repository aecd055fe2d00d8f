"""Compare the compiled and the numpy kernels at the default grid size.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel is timed on identical inputs with both backends, and a full
coupled step is timed in a subprocess per backend (the backend is fixed at
import time).
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from swimcycle import _kernels_py as py

STEP_SNIPPET = """
import json, timeit
from swimcycle import kernels
from swimcycle.body import ActuationSpec, fish_template
from swimcycle.coupling import Stepper, rest_state
from swimcycle.fluid import FluidGrid
g = FluidGrid(128, 128, 4.0, 4.0, mu=0.003, sponge_width=8, sponge_rate=10.0)
m = fish_template(center=(2.0, 2.0))
S = Stepper(g, m, ActuationSpec(0.15, 1.0, 1.0))
st = S.advance(rest_state(g, m), 20)
t = min(timeit.repeat(lambda: S.advance(st, 50, out=st), number=1, repeat={repeat})) / 50
print(json.dumps({{"backend": kernels.BACKEND, "step": t}}))
"""


def kernel_cases(n=128, n_points=40, seed=0):
    rng = np.random.default_rng(seed)
    u, v = rng.normal(size=(n, n)), rng.normal(size=(n, n))
    pts = rng.uniform(0, n, size=(n_points, 2))
    F = rng.normal(size=(n_points, 2))
    samples = rng.uniform(0, n, size=(n * n, 2))
    return {
        "ib_interpolate": lambda m: m.ib_interpolate(u, v, pts),
        "ib_spread": lambda m: m.ib_spread((n, n), pts, F),
        "advect_mac": lambda m: m.advect_mac(0.1 * u, 0.1 * v, 0.5),
        "sample_bilinear": lambda m: m.sample_bilinear(u, samples, 0.0, 0.5),
    }


def bench(fn, repeat, number):
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20)
    args = ap.parse_args(argv)
    try:
        from swimcycle import _kernels as cy
    except ImportError:
        sys.exit("the compiled extension is not built; run `pip install -e . --no-build-isolation`")
    print(f"{'kernel':<18}{'python [ms]':>14}{'cython [ms]':>14}{'speed-up':>10}")
    for name, call in kernel_cases().items():
        tp = bench(lambda: call(py), args.repeat, args.number)
        tc = bench(lambda: call(cy), args.repeat, args.number)
        print(f"{name:<18}{1e3 * tp:>14.3f}{1e3 * tc:>14.3f}{tp / tc:>10.1f}")
    steps = {}
    for backend in ("python", "cython"):
        env = dict(os.environ, SWIMCYCLE_BACKEND=backend)
        out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(repeat=args.repeat)],
                             env=env, capture_output=True, text=True, check=True)
        doc = json.loads(out.stdout)
        steps[doc["backend"]] = doc["step"]
    tp, tc = steps["python"], steps["cython"]
    print(f"{'coupled step':<18}{1e3 * tp:>14.3f}{1e3 * tc:>14.3f}{tp / tc:>10.1f}")


if __name__ == "__main__":
    main()
