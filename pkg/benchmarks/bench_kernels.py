"""Compare the compiled kernels with the numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py``.  Each row times both
backends on the same inputs, checks they agree, and reports the speedup.
"""
import argparse
import itertools
import timeit

import numpy as np

from keyagree import _kernels_py as py
from keyagree.kernels import _segment_index

try:
    from keyagree import _ckernels as cy
except ImportError:  # extension not built
    cy = None


def nofb_masks(nd):
    """Every non-empty subset of the axes, as used for a full entropy table."""
    return [m for r in range(1, nd + 1) for m in itertools.combinations(range(nd), r)]


def cases(rng):
    for shape in [(2, 2, 2, 2, 2, 2, 2, 2, 2), (2, 3, 2, 2, 2, 2, 3, 2), (4, 4, 4, 4, 4)]:
        mass = rng.dirichlet(np.ones(int(np.prod(shape)))).reshape(shape)
        masks = nofb_masks(len(shape))
        yield (f"marginal_entropies {shape} x{len(masks)}",
               lambda k, mass=mass, masks=masks: k.marginal_entropies(mass, masks))
        index, offsets = _segment_index(shape, masks)
        yield (f"segment_entropies {shape} x{len(masks)}",
               lambda k, mass=mass, index=index, offsets=offsets:
               k.segment_entropies(mass, index, offsets))
    for m, n, A in [(4096, 12, 4), (65536, 16, 2), (20000, 24, 8)]:
        codes = rng.integers(A, size=(m, n))
        probs = rng.dirichlet(np.ones(A))
        yield (f"typical_mask {m}x{n} |A|={A}",
               lambda k, codes=codes, probs=probs: k.typical_mask(codes, probs, 0.3))


def best_time(fn, repeat):
    t = timeit.Timer(fn)
    number, _ = t.autorange()
    return min(t.repeat(repeat, number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if cy is None:
        print("compiled kernels not built; nothing to compare")
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<52}{'numpy':>12}{'cython':>12}{'speedup':>10}")
    for name, call in cases(rng):
        a, b = np.asarray(call(py)), np.asarray(call(cy))
        if a.dtype == bool:
            assert np.array_equal(a, b), name
        else:
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12, err_msg=name)
        tp = best_time(lambda: call(py), args.repeat)
        tc = best_time(lambda: call(cy), args.repeat)
        print(f"{name:<52}{tp * 1e3:>10.3f}ms{tc * 1e3:>10.3f}ms{tp / tc:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
