import os
import subprocess
import sys

import numpy as np
import pytest

import oracles
from keyagree import _kernels_py, kernels

try:
    from keyagree import _ckernels
except ImportError:  # extension not built
    _ckernels = None

needs_c = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


def masks_for(nd):
    rng = np.random.default_rng(nd)
    out = [(), tuple(range(nd))]
    for _ in range(8):
        k = int(rng.integers(1, nd + 1))
        out.append(tuple(sorted(rng.choice(nd, size=k, replace=False).tolist())))
    return out


@pytest.mark.parametrize("shape", [(3,), (2, 3), (2, 1, 3, 2), (2, 2, 2, 2, 2, 2, 2, 2)])
def test_marginal_entropies_match_brute_force(shape):
    mass = np.random.default_rng(1).dirichlet(np.ones(int(np.prod(shape)))).reshape(shape)
    names = [f"A{i}" for i in range(len(shape))]
    masks = masks_for(len(shape))
    got = kernels.marginal_entropies(mass, masks)
    for m, h in zip(masks, got):
        ref = oracles.entropy(names, mass, [names[a] for a in m]) if m else 0.0
        assert h == pytest.approx(ref, abs=1e-12)


def test_plan_handles_zero_cells():
    mass = np.zeros((2, 3, 2))
    mass[0, 0, 0] = mass[1, 2, 1] = 0.5
    got = kernels.marginal_entropies(mass, [(0,), (1, 2), (0, 1, 2)])
    assert np.allclose(got, [1.0, 1.0, 1.0])


@needs_c
@pytest.mark.parametrize("seed", range(5))
def test_backends_agree_on_entropies(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(int(c) for c in rng.integers(1, 4, size=5))
    mass = rng.dirichlet(np.full(int(np.prod(shape)), 0.5)).reshape(shape)
    masks = masks_for(len(shape))
    a = _kernels_py.marginal_entropies(mass, masks)
    b = _ckernels.marginal_entropies(mass, masks)
    assert np.allclose(a, b, atol=1e-12)
    index, offsets = kernels._segment_index(shape, masks)
    assert np.allclose(_kernels_py.segment_entropies(mass, index, offsets),
                       _ckernels.segment_entropies(mass, index, offsets), atol=1e-12)


@needs_c
@pytest.mark.parametrize("eps", [0.05, 0.2, 0.75])
def test_backends_agree_on_typicality(eps):
    rng = np.random.default_rng(3)
    probs = rng.dirichlet(np.ones(6))
    codes = rng.choice(6, size=(500, 12), p=probs).astype(np.int64)
    assert np.array_equal(_kernels_py.typical_mask(codes, probs, eps),
                          _ckernels.typical_mask(codes, probs, eps))


def test_typical_mask_matches_definition():
    probs = np.array([0.5, 0.25, 0.25, 0.0])
    codes = np.array([[0, 0, 1, 2], [0, 1, 2, 3], [0, 0, 0, 1], [0, 1, 0, 2]])
    got = kernels.typical_mask(codes, probs, 0.2)
    for row, flag in zip(codes, got):
        freq = np.bincount(row, minlength=4) / 4
        assert flag == bool(np.all(np.abs(freq - probs) <= 0.2 * probs + 1e-12))
    assert got.tolist() == [True, False, False, True]


def test_typical_mask_empty():
    assert kernels.typical_mask(np.zeros((0, 4), dtype=np.int64), np.ones(2) / 2, 0.1).shape == (0,)


def test_pure_python_switch():
    env = dict(os.environ, KEYAGREE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import keyagree; print(keyagree.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_c
def test_compiled_backend_selected_by_default():
    env = {k: v for k, v in os.environ.items() if k != "KEYAGREE_PURE_PYTHON"}
    out = subprocess.run([sys.executable, "-c", "import keyagree; print(keyagree.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "cython"
