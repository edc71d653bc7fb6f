"""Time the compiled and numpy gram kernels on attention-sized inputs.

    python3 benchmarks/bench_gram.py [--repeat 20] [--groups 128] [--length 24] [--dim 16]

``groups`` is batch times heads.  Each row reports the best-of-``repeat``
wall time for one forward and one backward pass.  ``dispatch`` is what the
package actually calls: numpy for the dot-product kernels, compiled loops
for the rest.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from kernattn.kernels import KINDS, _backend
from kernattn.kernels._backend import BACKENDS
from kernattn.kernels.spec import KIND_CODES


def bench(kind, fwd, bwd, Q, K, param, scale, repeat):
    code = KIND_CODES[kind]
    out = fwd(code, Q, K, param, scale)
    gout = np.ones_like(out)
    t_f = min(timeit.repeat(lambda: fwd(code, Q, K, param, scale), number=1, repeat=repeat))
    t_b = min(timeit.repeat(lambda: bwd(code, Q, K, param, scale, out, gout), number=1, repeat=repeat))
    return t_f, t_b, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--groups", type=int, default=128)
    ap.add_argument("--length", type=int, default=24)
    ap.add_argument("--dim", type=int, default=16)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    G, L, d = args.groups, args.length, args.dim
    Q = rng.normal(size=(G, L, d))
    K = rng.normal(size=(G, L, d))
    param = np.full(G, 0.5)
    scale = 1.0 / np.sqrt(d)
    if "compiled" not in BACKENDS:
        print("compiled extension not built; timing the numpy fallback only")

    print(f"G={G} T=S={L} d={d}, best of {args.repeat} (ms)")
    print(f"{'kernel':>18} {'backend':>9} {'forward':>9} {'backward':>9} {'speedup':>8}")
    impls = dict(BACKENDS)
    if "compiled" in impls:
        impls["dispatch"] = (_backend.gram_forward, _backend.gram_backward)
    for kind in KINDS:
        base = None
        for name, (fwd, bwd) in impls.items():
            t_f, t_b, out = bench(kind, fwd, bwd, Q, K, param, scale, args.repeat)
            if base is None:
                base, ref = t_f + t_b, out
                speed = ""
            else:
                assert np.allclose(out, ref, rtol=1e-12, atol=1e-12), f"{kind}: backends disagree"
                speed = f"{base / (t_f + t_b):7.1f}x"
            print(f"{kind:>18} {name:>9} {1e3 * t_f:9.3f} {1e3 * t_b:9.3f} {speed:>8}")


if __name__ == "__main__":
    main()
