"""Compare the compiled kernels with the numpy fallback on the 39-feature network.

    python benchmarks/bench_kernels.py [--rows 20000] [--repeat 5]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from hbfl import _kernels_py
from hbfl.nn import LayerSpec, init_model, shuffle_order

try:
    from hbfl import _kernels as _compiled
except ImportError:
    _compiled = None


def cases(impl, values, sizes, x, y, order, batch):
    return {
        "forward": lambda: impl.forward(values, sizes, x),
        "gradient (full batch)": lambda: impl.batch_gradient(values, sizes, x, y),
        "train (1 epoch)": lambda: impl.train(values, sizes, x, y, order, batch, 1e-3, 0.9, 0.999, 1e-8),
    }


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=20000)
    p.add_argument("--dim", type=int, default=39)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)

    rng = np.random.default_rng(0)
    spec = LayerSpec.for_input(args.dim)
    values = init_model(spec, 0).values
    x = rng.uniform(size=(args.rows, args.dim))
    y = (rng.uniform(size=args.rows) < 0.3).astype(np.float64)
    order = shuffle_order(args.rows, 1, 0)

    impls = {"python": _kernels_py}
    if _compiled is not None:
        impls["cython"] = _compiled
    else:
        print("compiled extension not built; timing the fallback only")

    timings: dict[str, dict[str, float]] = {}
    for name, impl in impls.items():
        for case, fn in cases(impl, values, spec.sizes, x, y, order, args.batch).items():
            fn()  # warm-up
            best = min(timeit.repeat(fn, number=1, repeat=args.repeat))
            timings.setdefault(case, {})[name] = best

    print(f"{args.rows} rows x {args.dim} features, batch {args.batch}, best of {args.repeat}")
    print(f"{'kernel':<24}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for case, t in timings.items():
        py = t["python"] * 1e3
        cy = t.get("cython")
        cy_s = f"{cy * 1e3:12.2f}" if cy is not None else f"{'-':>12}"
        sp = f"{t['python'] / cy:9.1f}x" if cy else f"{'-':>10}"
        print(f"{case:<24}{py:12.2f}{cy_s}{sp}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
