"""Kernel dispatch: compiled core when available, numpy otherwise.

Set ``KEYAGREE_PURE_PYTHON=1`` before import to force the numpy versions.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"

if os.environ.get("KEYAGREE_PURE_PYTHON", "").lower() not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

typical_mask = _impl.typical_mask
raw_marginal_entropies = _impl.marginal_entropies

# rough per-call overhead of one numpy reduction, in units of cell*mask work
_SPLIT_OVERHEAD = 20000
_PLANS: dict = {}


class EntropyPlan:
    """Precomputed reduction schedule for a fixed shape and mask list.

    Axes no mask uses are summed out first; then the planner greedily
    peels off the axis whose removal saves the most work for the masks
    that do not need it.  Executing the plan is a handful of numpy
    reductions plus one leaf-kernel call per level.
    """

    def __init__(self, shape, masks):
        self.shape = tuple(shape)
        self.masks = [tuple(m) for m in masks]
        self.n = len(self.masks)
        self.steps = []   # (src, sum_axes, dst) or (src, bits, out_idx)
        self._ntensors = 1
        live = [i for i in range(self.n) if self.masks[i]]
        self._plan(0, list(range(len(self.shape))), list(self.shape), live, 0)

    def _new(self):
        self._ntensors += 1
        return self._ntensors - 1

    def _plan(self, src, axes, shape, live, depth):
        if not live:
            return
        used = set()
        for i in live:
            used.update(self.masks[i])
        drop = tuple(k for k, a in enumerate(axes) if a not in used)
        if drop:
            dst = self._new()
            self.steps.append(("sum", src, drop, dst))
            src = dst
            shape = [c for c, a in zip(shape, axes) if a in used]
            axes = [a for a in axes if a in used]
        cells = int(np.prod(shape))
        best = None
        if depth < 4 and len(axes) > 1:
            base_cost = cells * len(live)
            for k, a in enumerate(axes):
                without = [i for i in live if a not in self.masks[i]]
                if not without:
                    continue
                cost = (cells * (len(live) - len(without)) + (cells // shape[k]) * len(without)
                        + _SPLIT_OVERHEAD)
                if cost < base_cost and (best is None or cost < best[0]):
                    best = (cost, k, a, without)
        pos = {a: j for j, a in enumerate(axes)}
        if best is None:
            here, rest = live, None
        else:
            _, k, a, rest = best
            rs = set(rest)
            here = [i for i in live if i not in rs]
        if here:
            self.steps.append(("leaf", src, _segment_index(shape, [[pos[a] for a in self.masks[i]]
                                                                    for i in here]),
                               np.array(here, dtype=np.intp)))
        if best is not None:
            dst = self._new()
            self.steps.append(("sum", src, (k,), dst))
            self._plan(dst, [ax for ax in axes if ax != a],
                       [c for j, c in enumerate(shape) if j != k], rest, depth + 1)

    def __call__(self, mass):
        mass = np.asarray(mass, dtype=float)
        tensors = [None] * self._ntensors
        tensors[0] = mass
        out = np.zeros(self.n)
        leaf = _impl.segment_entropies
        for kind, src, arg, dst in self.steps:
            if kind == "sum":
                tensors[dst] = tensors[src].sum(axis=arg)
            else:
                out[dst] = leaf(tensors[src], *arg)
        return out


def _segment_index(shape, local_masks):
    """Per-cell slot of every marginal, laid out back to back."""
    shape = tuple(shape)
    grids = np.indices(shape).reshape(len(shape), -1)
    rows, offsets = [], [0]
    for keep in local_masks:
        sub = tuple(shape[a] for a in keep)
        flat = np.ravel_multi_index(tuple(grids[a] for a in keep), sub) if keep else \
            np.zeros(grids.shape[1], dtype=np.int64)
        rows.append(flat + offsets[-1])
        offsets.append(offsets[-1] + int(np.prod(sub)))
    return np.ascontiguousarray(np.stack(rows), dtype=np.int64), np.array(offsets, dtype=np.int64)


def get_plan(shape, masks) -> EntropyPlan:
    key = (tuple(shape), tuple(tuple(m) for m in masks))
    plan = _PLANS.get(key)
    if plan is None:
        if len(_PLANS) > 4096:
            _PLANS.clear()
        plan = _PLANS[key] = EntropyPlan(*key)
    return plan


def marginal_entropies(mass, masks):
    """Entropies (bits) of the marginals of ``mass`` on each axis tuple."""
    mass = np.asarray(mass, dtype=float)
    return get_plan(mass.shape, masks)(mass)


__all__ = ["BACKEND", "EntropyPlan", "get_plan", "marginal_entropies", "raw_marginal_entropies",
           "typical_mask"]
