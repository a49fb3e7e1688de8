"""Pure numpy implementations of the hot kernels.

These are the reference versions; the compiled module ``_ckernels`` must
agree with them to round-off.
"""
import numpy as np


def marginal_entropies(mass, masks):
    """Entropy in bits of each marginal of ``mass`` listed in ``masks``.

    ``masks`` is a sequence of axis tuples; an empty tuple yields 0.
    """
    mass = np.asarray(mass, dtype=float)
    nd = mass.ndim
    out = np.empty(len(masks))
    for i, keep in enumerate(masks):
        keep = set(keep)
        if not keep:
            out[i] = 0.0
            continue
        drop = tuple(a for a in range(nd) if a not in keep)
        m = mass.sum(axis=drop) if drop else mass
        p = m[m > 0]
        out[i] = -float(np.dot(p, np.log2(p)))
    return out


def typical_mask(codes, probs, eps):
    """Robust typicality test for each row of ``codes``.

    Row ``r`` passes when every symbol ``a`` of the joint alphabet has
    ``|count(a)/n - probs[a]| <= eps * probs[a]``.
    """
    codes = np.asarray(codes, dtype=np.int64)
    probs = np.asarray(probs, dtype=float)
    m, n = codes.shape
    A = probs.shape[0]
    if m == 0:
        return np.zeros(0, dtype=bool)
    flat = (np.arange(m, dtype=np.int64)[:, None] * A + codes).ravel()
    counts = np.bincount(flat, minlength=m * A).reshape(m, A)
    dev = np.abs(counts / n - probs[None, :])
    return np.all(dev <= eps * probs[None, :] + 1e-12, axis=1)


def marginal_entropies_bits(mass, bits):
    """Same as :func:`marginal_entropies` with masks given as axis bitmasks."""
    mass = np.asarray(mass, dtype=float)
    masks = [tuple(a for a in range(mass.ndim) if (int(b) >> a) & 1) for b in bits]
    return marginal_entropies(mass, masks)


def segment_entropies(values, index, offsets):
    """Entropies of several marginals from precomputed cell indices.

    ``index[m, i]`` is the slot (already offset into a shared buffer) that
    cell ``i`` of ``values`` contributes to in marginal ``m``; marginal
    ``m`` occupies slots ``offsets[m]:offsets[m+1]``.
    """
    values = np.asarray(values, dtype=float).ravel()
    nm = index.shape[0]
    buf = np.bincount(index.ravel(), weights=np.tile(values, nm), minlength=int(offsets[-1]))
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(buf > 0, -buf * np.log2(np.where(buf > 0, buf, 1.0)), 0.0)
    return np.add.reduceat(terms, offsets[:-1]) if nm else np.zeros(0)
