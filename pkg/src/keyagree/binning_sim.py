"""Finite-blocklength simulators for both key-agreement protocols.

Without feedback the transmitter covers the state sequence with a
superposition codebook of auxiliary words; keys are the random bin labels
of the chosen words.  With feedback each receiver quantizes its output to
a typical ``v^n``, publishes its bin, keeps its sub-bin as the key, and the
transmitter recovers both words from ``(x^n, s^n)`` and the two bins.

Leakage is computed exactly for a fixed codebook by summing over every
state/output sequence when that enumeration is small enough, and is
otherwise estimated from trial samples with a warning flag.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import AuxScheme, BroadcastChannelSpec, FeedbackScheme
from .kernels import typical_mask

LEAKAGE_CAP = 10 ** 6          # enumerated states for exact leakage
SYMBOL_CAP = 5 * 10 ** 7       # stored codeword symbols
SEQUENCE_CAP = 2 ** 22         # sequences enumerated for a typical set
SCHEMA_VERSION = 1


class SimulationError(ValueError):
    pass


# ------------------------------------------------------------------ basics

@dataclass(frozen=True)
class TypicalityParams:
    """Blocklength ``n`` and robust-typicality slack ``eps``."""

    n: int
    eps: float = 0.2

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise SimulationError(f"blocklength must be a positive integer, got {self.n!r}")
        if not 0 < self.eps < 1:
            raise SimulationError(f"eps must lie in (0, 1), got {self.eps!r}")


@dataclass(frozen=True)
class CoveringFailure:
    candidates: int = 0


@dataclass(frozen=True)
class PackingFailure:
    receiver: int
    candidates: int


@dataclass(frozen=True)
class Failure:
    stage: str
    candidates: int


def word_count(n: int, rate: float) -> int:
    """``ceil(2^{n R})`` with float noise at exact powers of two ignored."""
    if rate < 0:
        raise SimulationError(f"negative rate {rate}")
    x = 2.0 ** (n * rate)
    k = math.ceil(x)
    return int(k - 1) if k - 1 >= 1 and x - (k - 1) < 1e-9 * x else int(k)


def realized_rate(n: int, count: int) -> float:
    return math.log2(count) / n


def jointly_typical(seqs: Sequence[np.ndarray], pmf: np.ndarray, eps: float) -> np.ndarray:
    """Robust joint typicality of stacked sequences against ``pmf``.

    ``seqs[k]`` holds symbols of the ``k``-th variable with shape ``[m, n]``
    or ``[n]`` (broadcast); ``pmf`` has one axis per variable.
    """
    pmf = np.asarray(pmf, dtype=float)
    arrs = np.broadcast_arrays(*[np.atleast_2d(np.asarray(s, dtype=np.int64)) for s in seqs])
    codes = np.ravel_multi_index(tuple(arrs), pmf.shape)
    return typical_mask(codes, pmf.ravel(), eps)


def all_sequences(card: int, n: int) -> np.ndarray:
    """Every length-``n`` sequence over ``range(card)`` in lexicographic order."""
    if card ** n > SEQUENCE_CAP:
        raise SimulationError(f"{card}^{n} sequences exceed the enumeration cap")
    return np.indices((card,) * n).reshape(n, -1).T.astype(np.int64)


def seq_index(seq: np.ndarray, card: int) -> np.ndarray:
    """Lexicographic rank of each row (or of one sequence)."""
    seq = np.asarray(seq, dtype=np.int64)
    w = card ** np.arange(seq.shape[-1] - 1, -1, -1, dtype=np.int64)
    return seq @ w


def _sample(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """One draw per row of ``probs[..., k]``."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1])
    return np.minimum((cdf < (u * cdf[..., -1])[..., None]).sum(axis=-1), probs.shape[-1] - 1)


def _first_occurrence(words: np.ndarray) -> np.ndarray:
    """Mask of rows that are the first copy of their word."""
    if len(words) == 0:
        return np.zeros(0, dtype=bool)
    _, first = np.unique(words, axis=0, return_index=True)
    mask = np.zeros(len(words), dtype=bool)
    mask[first] = True
    return mask


def _entropy(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=float).ravel()
    p = p[p > 0]
    if p.size == 0:
        return 0.0
    p = p / p.sum()
    return float(-np.dot(p, np.log2(p))) + 0.0   # no negative zero


def _mi_matrix(J: np.ndarray) -> float:
    """``I(A;B)`` in bits from an unnormalized joint table ``J[a, b]``."""
    tot = J.sum()
    if tot <= 0:
        return 0.0
    return _entropy(J.sum(axis=1)) + _entropy(J.sum(axis=0)) - _entropy(J)


def _mi_samples(a: np.ndarray, b: np.ndarray, weights: np.ndarray | None = None) -> float:
    """``I(A;B)`` from weighted samples; rows of ``a``/``b`` are outcomes."""
    a = np.asarray(a).reshape(len(a), -1)
    b = np.asarray(b).reshape(len(b), -1)
    w = np.ones(len(a)) if weights is None else np.asarray(weights, dtype=float)
    _, ia = np.unique(a, axis=0, return_inverse=True)
    _, ib = np.unique(b, axis=0, return_inverse=True)
    ia, ib = ia.ravel(), ib.ravel()
    J = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(J, (ia, ib), w)
    return _mi_matrix(J)


def _plugin_entropy(labels: np.ndarray) -> float:
    _, counts = np.unique(np.asarray(labels), return_counts=True)
    return _entropy(counts)


# ---------------------------------------------------------------- reports

@dataclass
class SimulationReport:
    """Outcome of one simulation run; all leakages are bits per channel use."""

    protocol: str
    trials: int
    n: int
    eps: float
    seed: int
    rates: dict
    realized_rates: dict
    counts: dict
    error_rates: dict
    failures: dict
    leakage: dict
    leakage_exact: bool
    leakage_states: int
    bias_warning: bool
    key_entropy_bits: dict
    key_entropy_per_use: dict
    metadata: dict = field(default_factory=dict)
    trial_log: list | None = None

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "protocol", "trials", "n", "eps", "seed", "rates", "realized_rates", "counts",
            "error_rates", "failures", "leakage", "leakage_exact", "leakage_states",
            "bias_warning", "key_entropy_bits", "key_entropy_per_use", "metadata")}
        d["schema_version"] = SCHEMA_VERSION
        if self.trial_log is not None:
            d["trial_log"] = self.trial_log
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        """One ``metric,value`` row per scalar metric."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for group in ("rates", "realized_rates", "counts", "error_rates", "failures", "leakage",
                      "key_entropy_bits", "key_entropy_per_use"):
            for k in sorted(getattr(self, group)):
                w.writerow([f"{group}.{k}", repr(getattr(self, group)[k])])
        for k in ("trials", "n", "eps", "seed", "leakage_exact", "leakage_states", "bias_warning"):
            w.writerow([k, repr(getattr(self, k))])
        return buf.getvalue()


# ------------------------------------------------------ no-feedback codes

@dataclass(frozen=True, eq=False)
class Codebook:
    """Superposition codebook with bin labels; indices are 0-based.

    ``canonical*`` marks the first copy of each distinct word (per
    ``u0`` row for the satellite words).  Encoder and decoders only use
    canonical entries: duplicated words cannot be told apart by any
    decoder, so later copies are expurgated.
    """

    n: int
    rates: tuple[float, ...]
    u0_words: np.ndarray
    u1_words: np.ndarray
    u2_words: np.ndarray
    bins0: np.ndarray
    bins1: np.ndarray
    bins2: np.ndarray
    n_bins: tuple[int, int, int]
    canonical0: np.ndarray
    canonical1: np.ndarray
    canonical2: np.ndarray
    enc_pmf: np.ndarray
    dec_pmfs: tuple[np.ndarray, np.ndarray]
    seed: int

    @property
    def counts(self) -> tuple[int, int, int]:
        return self.u0_words.shape[0], self.u1_words.shape[1], self.u2_words.shape[1]

    def realized_rates(self) -> dict:
        m0, m1, m2 = self.counts
        b0, b1, b2 = self.n_bins
        r = lambda c: realized_rate(self.n, c)
        return {"Rt0": r(m0), "Rt1": r(m1), "Rt2": r(m2), "R0": r(b0), "R1": r(b1), "R2": r(b2)}

    def canonical_triples(self) -> np.ndarray:
        """All usable ``(m0, m1, m2)`` as rows, in lexicographic order."""
        out = []
        for m0 in np.flatnonzero(self.canonical0):
            a = np.flatnonzero(self.canonical1[m0])
            b = np.flatnonzero(self.canonical2[m0])
            g = np.stack(np.meshgrid(a, b, indexing="ij"), -1).reshape(-1, 2)
            out.append(np.column_stack([np.full(len(g), m0), g]))
        return np.concatenate(out).astype(np.int64) if out else np.zeros((0, 3), np.int64)


def _nofb_pmfs(channel: BroadcastChannelSpec, scheme: AuxScheme):
    p_s = np.asarray(channel.p_s)
    pu0, pu1, pu2, px = scheme.arrays
    enc = p_s[:, None, None, None] * pu0[:, :, None, None] * pu1[:, :, :, None] * pu2[:, :, None, :]
    k1 = channel.marginal_kernel("Y1")  # [x, s, y]
    k2 = channel.marginal_kernel("Y2")
    full = enc[..., None] * px           # [s,u0,u1,u2,x]
    d1 = np.einsum("sabcx,xsy->aby", full, k1)
    d2 = np.einsum("sabcx,xsy->acy", full, k2)
    return enc, (d1, d2)


def gen_codebooks_nofb(channel: BroadcastChannelSpec, scheme: AuxScheme, rates,
                       tp: TypicalityParams, seed: int) -> Codebook:
    """Random superposition codebook with uniform random bins.

    ``rates`` is ``(Rt0, Rt1, Rt2, R0, R1, R2)``: codebook rates first,
    then key (bin) rates.  ``u0`` words are i.i.d. ``p(u0)``; satellite
    words are drawn per ``u0`` word from ``p(u1|u0)`` and ``p(u2|u0)``.
    """
    rates = tuple(float(r) for r in rates)
    if len(rates) != 6:
        raise SimulationError("rates must be (Rt0, Rt1, Rt2, R0, R1, R2)")
    if min(rates) < 0 or any(rates[i + 3] > rates[i] + 1e-12 for i in range(3)):
        raise SimulationError("need codebook rate >= key rate >= 0 for every layer")
    n = tp.n
    m = [word_count(n, r) for r in rates[:3]]
    b = [word_count(n, r) for r in rates[3:]]
    b = [min(bi, mi) for bi, mi in zip(b, m)]
    if (m[0] + m[0] * (m[1] + m[2])) * n > SYMBOL_CAP:
        raise SimulationError("codebook exceeds the memory cap; lower n or the rates")
    enc, dec = _nofb_pmfs(channel, scheme)
    pu0 = enc.sum(axis=(0, 2, 3))
    p01 = enc.sum(axis=(0, 3))
    p02 = enc.sum(axis=(0, 2))
    cond = lambda j, m_: np.where(m_[:, None] > 0, j / np.where(m_ > 0, m_, 1)[:, None],
                                  1.0 / j.shape[1])
    pu1 = cond(p01, pu0)
    pu2 = cond(p02, pu0)
    rng = np.random.default_rng([seed, 1])
    u0 = _sample(rng, np.broadcast_to(pu0, (m[0], n, len(pu0))))
    u1 = _sample(rng, pu1[u0][:, None, :, :].repeat(m[1], axis=1))
    u2 = _sample(rng, pu2[u0][:, None, :, :].repeat(m[2], axis=1))
    bins0 = rng.integers(b[0], size=m[0])
    bins1 = rng.integers(b[1], size=(m[0], m[1]))
    bins2 = rng.integers(b[2], size=(m[0], m[2]))
    c0 = _first_occurrence(u0)
    c1 = np.stack([_first_occurrence(u1[i]) for i in range(m[0])])
    c2 = np.stack([_first_occurrence(u2[i]) for i in range(m[0])])
    return Codebook(n, rates, u0, u1, u2, bins0, bins1, bins2, tuple(b), c0, c1, c2,
                    enc, dec, int(seed))


def extract_keys_nofb(cb: Codebook, indices) -> tuple[int, int, int]:
    """Bin labels of the selected words."""
    m0, m1, m2 = (int(i) for i in indices)
    M0, M1, M2 = cb.counts
    if not (0 <= m0 < M0 and 0 <= m1 < M1 and 0 <= m2 < M2):
        raise IndexError(f"indices {indices} out of range for codebook sizes {cb.counts}")
    return int(cb.bins0[m0]), int(cb.bins1[m0, m1]), int(cb.bins2[m0, m2])


@dataclass(frozen=True)
class EncodeResult:
    m_u0: int
    m_u1: int
    m_u2: int
    x_seq: np.ndarray


class _NofbCoder:
    """Caches typical candidate sets per state/output sequence."""

    def __init__(self, cb: Codebook, tp: TypicalityParams):
        self.cb, self.tp = cb, tp
        self.triples = cb.canonical_triples()
        t = self.triples
        self.w0 = cb.u0_words[t[:, 0]]
        self.w1 = cb.u1_words[t[:, 0], t[:, 1]]
        self.w2 = cb.u2_words[t[:, 0], t[:, 2]]
        self._enc: dict = {}
        self._dec: dict = {}
        self.pairs = []
        for j, (cm, words) in enumerate(((cb.canonical1, cb.u1_words),
                                         (cb.canonical2, cb.u2_words))):
            idx = np.argwhere(cb.canonical0[:, None] & cm)
            self.pairs.append((idx, cb.u0_words[idx[:, 0]], words[idx[:, 0], idx[:, 1]]))

    def candidates(self, s_seq: np.ndarray) -> np.ndarray:
        key = s_seq.tobytes()
        hit = self._enc.get(key)
        if hit is None:
            mask = jointly_typical([s_seq, self.w0, self.w1, self.w2], self.cb.enc_pmf,
                                   self.tp.eps)
            hit = self._enc[key] = np.flatnonzero(mask)
        return hit

    def decode(self, y_seq: np.ndarray, receiver: int):
        key = (receiver, y_seq.tobytes())
        hit = self._dec.get(key)
        if hit is None:
            idx, a, b = self.pairs[receiver - 1]
            mask = jointly_typical([a, b, y_seq], self.cb.dec_pmfs[receiver - 1], self.tp.eps)
            found = np.flatnonzero(mask)
            if len(found) == 1:
                hit = (int(idx[found[0], 0]), int(idx[found[0], 1]))
            else:
                hit = PackingFailure(receiver, int(len(found)))
            self._dec[key] = hit
        return hit


def _draw_x(scheme_px: np.ndarray, s, u0, u1, u2, rng) -> np.ndarray:
    return _sample(rng, scheme_px[s, u0, u1, u2])


def encode_nofb(cb: Codebook, s_seq, scheme: AuxScheme, tp: TypicalityParams,
                rng: np.random.Generator | None = None, selection: str = "random",
                _coder: _NofbCoder | None = None):
    """Pick a typical index triple for ``s_seq`` and draw ``x^n``.

    ``selection="random"`` picks uniformly among the typical canonical
    triples; ``"first"`` takes the first in lexicographic order.  Returns
    :class:`CoveringFailure` when no triple is typical.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    s_seq = np.asarray(s_seq, dtype=np.int64)
    if s_seq.shape != (tp.n,):
        raise SimulationError(f"state sequence must have length {tp.n}")
    coder = _coder or _NofbCoder(cb, tp)
    cand = coder.candidates(s_seq)
    if len(cand) == 0:
        return CoveringFailure(0)
    pick = cand[0] if selection == "first" else cand[int(rng.integers(len(cand)))]
    m0, m1, m2 = (int(v) for v in coder.triples[pick])
    x = _draw_x(scheme.arrays[3], s_seq, cb.u0_words[m0], cb.u1_words[m0, m1],
                cb.u2_words[m0, m2], rng)
    return EncodeResult(m0, m1, m2, x)


def decode_nofb(cb: Codebook, y_seq, receiver: int, tp: TypicalityParams,
                _coder: _NofbCoder | None = None):
    """Unique typical ``(m0, mj)`` for receiver ``j``, else :class:`PackingFailure`."""
    if receiver not in (1, 2):
        raise SimulationError("receiver must be 1 or 2")
    y_seq = np.asarray(y_seq, dtype=np.int64)
    if y_seq.shape != (tp.n,):
        raise SimulationError(f"output sequence must have length {tp.n}")
    return (_coder or _NofbCoder(cb, tp)).decode(y_seq, receiver)


def _nofb_chunk(args):
    channel, scheme, cb, tp, seed, trials, selection, keep_obs = args
    coder = _NofbCoder(cb, tp)
    p_s = np.asarray(channel.p_s)
    W = np.asarray(channel.W)
    shp = W.shape[2:]
    px = scheme.arrays[3]
    all_t = coder.triples
    out = {"cover": 0, "pack1": 0, "pack2": 0, "e0": 0, "e1": 0, "e2": 0, "any": 0,
           "keys": [], "obs": []}
    for t in trials:
        rng = np.random.default_rng([seed, 0, t])
        s = _sample(rng, np.broadcast_to(p_s, (tp.n, len(p_s))))
        cand = coder.candidates(s)
        covered = len(cand) > 0
        if covered:
            pick = cand[int(rng.integers(len(cand)))] if selection == "random" else cand[0]
        else:
            pick = int(rng.integers(len(all_t)))
            out["cover"] += 1
        m0, m1, m2 = (int(v) for v in all_t[pick])
        x = _draw_x(px, s, cb.u0_words[m0], cb.u1_words[m0, m1], cb.u2_words[m0, m2], rng)
        flat = _sample(rng, W[x, s].reshape(tp.n, -1))
        y1, y2, z = np.unravel_index(flat, shp)
        keys = extract_keys_nofb(cb, (m0, m1, m2))
        est = []
        failed = not covered
        for j, y in ((1, y1), (2, y2)):
            d = coder.decode(y.astype(np.int64), j)
            if isinstance(d, PackingFailure):
                out[f"pack{j}"] += 1
                failed = True
                est.append((0, 0))
            else:
                bj = cb.bins1 if j == 1 else cb.bins2
                est.append((int(cb.bins0[d[0]]), int(bj[d[0], d[1]])))
        e0 = est[0][0] != keys[0] or est[1][0] != keys[0]
        e1 = est[0][1] != keys[1]
        e2 = est[1][1] != keys[2]
        out["e0"] += e0
        out["e1"] += e1
        out["e2"] += e2
        out["any"] += bool(e0 or e1 or e2 or failed)
        out["keys"].append(keys)
        if keep_obs:
            out["obs"].append((z.tolist(), y1.tolist(), y2.tolist()))
    return out


def _kron_rows(L: np.ndarray) -> np.ndarray:
    """Row-wise Kronecker product over positions: ``[m, n, k] -> [m, k^n]``."""
    R = L[:, 0, :]
    for i in range(1, L.shape[1]):
        R = (R[:, :, None] * L[:, i, None, :]).reshape(L.shape[0], -1)
    return R


def _nofb_exact_leakage(channel: BroadcastChannelSpec, scheme: AuxScheme, cb: Codebook,
                        tp: TypicalityParams, selection: str, cap: int):
    """Exact leakages, or ``None`` when the enumeration exceeds ``cap``."""
    n = tp.n
    p_s = np.asarray(channel.p_s)
    coder = _NofbCoder(cb, tp)
    support = np.flatnonzero(p_s > 0)
    if len(support) ** n > SEQUENCE_CAP:
        return None, 0
    seqs = support[all_sequences(len(support), n)]
    logp = np.log(p_s[seqs]).sum(axis=1)
    rows, weights = [], []
    T = len(coder.triples)
    for s, lp in zip(seqs, logp):
        cand = coder.candidates(s)
        if len(cand) == 0:
            cand = np.arange(T)
        elif selection == "first":
            cand = cand[:1]
        rows.append(np.column_stack([np.repeat(s[None], len(cand), 0), cand]))
        weights.append(np.full(len(cand), math.exp(lp) / len(cand)))
    rows = np.concatenate(rows)
    weights = np.concatenate(weights)
    px = scheme.arrays[3]
    tr = coder.triples[rows[:, n]]
    s_rows = rows[:, :n]
    u0 = cb.u0_words[tr[:, 0]]
    u1 = cb.u1_words[tr[:, 0], tr[:, 1]]
    u2 = cb.u2_words[tr[:, 0], tr[:, 2]]
    keys = np.stack([cb.bins0[tr[:, 0]], cb.bins1[tr[:, 0], tr[:, 1]],
                     cb.bins2[tr[:, 0], tr[:, 2]]], axis=1)
    targets = {"Z": (0, 1, 2), "Y2": (1,), "Y1": (2,)}
    states = 0
    for out_name in targets:
        states += len(rows) * channel.cards[out_name] ** n
    if states > cap:
        return None, states
    res = {}
    for out_name, which in targets.items():
        K = channel.marginal_kernel(out_name)            # [x, s, o]
        lik = np.einsum("sabcx,xso->sabco", px, K)       # p(o | u0,u1,u2,s)
        L = lik[s_rows, u0, u1, u2]                      # [rows, n, o]
        kk = keys[:, list(which)]
        _, kid = np.unique(kk, axis=0, return_inverse=True)
        kid = kid.ravel()
        J = np.zeros((kid.max() + 1, channel.cards[out_name] ** n))
        step = max(1, cap // max(1, channel.cards[out_name] ** n))
        for a in range(0, len(rows), step):
            np.add.at(J, kid[a:a + step], weights[a:a + step, None] * _kron_rows(L[a:a + step]))
        res[out_name] = _mi_matrix(J)
    return res, states


def _run_chunks(fn, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def _chunks(trials: int, workers: int) -> list[range]:
    k = max(1, workers) * 4
    size = max(1, math.ceil(trials / k))
    return [range(a, min(trials, a + size)) for a in range(0, trials, size)]


def run_nofb(channel: BroadcastChannelSpec, scheme: AuxScheme, rates, tp: TypicalityParams,
             trials: int, seed: int, selection: str = "random", workers: int = 1,
             leakage_cap: int = LEAKAGE_CAP, log_trials: bool = False,
             measure_leakage: bool = True) -> SimulationReport:
    """Monte Carlo run of the no-feedback protocol on one fixed codebook.

    Error rates compare each receiver's key estimates with the
    transmitter's keys (a receiver that cannot decode guesses label 0).
    Leakages use the exact codebook posterior when enumeration fits in
    ``leakage_cap`` states and a flagged plug-in estimate otherwise.
    """
    if trials < 1:
        raise SimulationError("trials must be at least 1")
    if selection not in ("random", "first"):
        raise SimulationError("selection must be 'random' or 'first'")
    cb = gen_codebooks_nofb(channel, scheme, rates, tp, seed)
    exact, states = (_nofb_exact_leakage(channel, scheme, cb, tp, selection, leakage_cap)
                     if measure_leakage else (None, 0))
    keep_obs = measure_leakage and exact is None
    jobs = [(channel, scheme, cb, tp, seed, r, selection, keep_obs)
            for r in _chunks(trials, workers)]
    parts = _run_chunks(_nofb_chunk, jobs, workers)
    tot = {k: sum(p[k] for p in parts) for k in ("cover", "pack1", "pack2", "e0", "e1", "e2", "any")}
    keys = np.array([k for p in parts for k in p["keys"]], dtype=np.int64).reshape(-1, 3)
    n = tp.n
    leakage = {}
    if keep_obs:
        obs = [o for p in parts for o in p["obs"]]
        zs, y1s, y2s = (np.array([o[i] for o in obs]) for i in range(3))
        exact_like = {"Z": _mi_samples(keys, zs), "Y2": _mi_samples(keys[:, 1], y2s),
                      "Y1": _mi_samples(keys[:, 2], y1s)}
    else:
        exact_like = exact
    if exact_like is not None:
        leakage = {"I(K0,K1,K2;Z^n)": exact_like["Z"] / n, "I(K1;Y2^n)": exact_like["Y2"] / n,
                   "I(K2;Y1^n)": exact_like["Y1"] / n}
    ent = {f"K{i}": _plugin_entropy(keys[:, i]) for i in range(3)}
    names = ("Rt0", "Rt1", "Rt2", "R0", "R1", "R2")
    return SimulationReport(
        protocol="nofb", trials=trials, n=n, eps=tp.eps, seed=int(seed),
        rates=dict(zip(names, cb.rates)), realized_rates=cb.realized_rates(),
        counts={"words_u0": cb.counts[0], "words_u1": cb.counts[1], "words_u2": cb.counts[2],
                "bins_k0": cb.n_bins[0], "bins_k1": cb.n_bins[1], "bins_k2": cb.n_bins[2],
                "usable_triples": int(len(cb.canonical_triples()))},
        error_rates={"k0": tot["e0"] / trials, "k1": tot["e1"] / trials,
                     "k2": tot["e2"] / trials, "total": tot["any"] / trials},
        failures={"covering": tot["cover"], "packing_rx1": tot["pack1"],
                  "packing_rx2": tot["pack2"]},
        leakage=leakage, leakage_exact=exact is not None, leakage_states=int(states),
        bias_warning=keep_obs,
        key_entropy_bits=ent, key_entropy_per_use={k: v / n for k, v in ent.items()},
        metadata={"selection": selection, "leakage_cap": int(leakage_cap),
                  "leakage_measured": bool(measure_leakage)},
        trial_log=keys.tolist() if log_trials else None,
    )


# --------------------------------------------------------- feedback codes

@dataclass(frozen=True, eq=False)
class DoubleBinnedCodebook:
    """Typical set of ``V^n`` (lexicographic) with bin and sub-bin labels."""

    n: int
    v_pmf: np.ndarray
    words: np.ndarray
    bins: np.ndarray
    subbins: np.ndarray
    n_bins: int
    n_subbins: int
    seed: int

    def members(self, psi: int) -> np.ndarray:
        return np.flatnonzero(self.bins == psi)


def gen_double_binned(v_pmf, tp: TypicalityParams, Rprime: float, R: float,
                      seed: int) -> DoubleBinnedCodebook:
    """Enumerate the typical set of ``v_pmf`` and double-bin it at random."""
    if Rprime < 0 or R < 0:
        raise SimulationError("rates must be non-negative")
    v_pmf = np.asarray(v_pmf, dtype=float).ravel()
    n = tp.n
    support = np.flatnonzero(v_pmf > 0)
    if len(support) ** n > SEQUENCE_CAP:
        raise SimulationError("typical set enumeration exceeds the memory cap")
    cand = support[all_sequences(len(support), n)]
    words = cand[typical_mask(cand, v_pmf, tp.eps)]
    words = words[np.lexsort(words.T[::-1])] if len(words) else words
    B, K = word_count(n, Rprime), word_count(n, R)
    rng = np.random.default_rng([seed, 2])
    bins = rng.integers(B, size=len(words))
    subbins = rng.integers(K, size=len(words))
    return DoubleBinnedCodebook(n, v_pmf, words, bins, subbins, B, K, int(seed))


def fb_receiver_step(cb: DoubleBinnedCodebook, y_seq, vy_pmf, tp: TypicalityParams):
    """First codebook word jointly typical with ``y_seq``.

    ``vy_pmf[v, y]`` is the composed joint the typicality test uses.
    Returns ``(psi, k, word_index)`` or :class:`Failure`.
    """
    y_seq = np.asarray(y_seq, dtype=np.int64)
    if y_seq.shape != (tp.n,):
        raise SimulationError(f"output sequence must have length {tp.n}")
    if len(cb.words) == 0:
        return Failure("receiver", 0)
    mask = jointly_typical([cb.words, y_seq], vy_pmf, tp.eps)
    hits = np.flatnonzero(mask)
    if len(hits) == 0:
        return Failure("receiver", 0)
    w = int(hits[0])
    return int(cb.bins[w]), int(cb.subbins[w]), w


def tx_recover(x_seq, s_seq, psi1: int, psi2: int, cbs, tp: TypicalityParams, vvxs_pmf):
    """Recover both receivers' words from their bins and ``(x^n, s^n)``.

    ``vvxs_pmf[v1, v2, x, s]`` is the joint the typicality test uses.
    Returns the two sub-bin labels or :class:`Failure` unless exactly one
    pair in ``bin psi1 x bin psi2`` is jointly typical.
    """
    x_seq = np.asarray(x_seq, dtype=np.int64)
    s_seq = np.asarray(s_seq, dtype=np.int64)
    cb1, cb2 = cbs
    eps = tp.eps
    vvxs_pmf = np.asarray(vvxs_pmf, dtype=float)
    a = cb1.members(psi1)
    b = cb2.members(psi2)
    # joint typicality implies typicality of each marginal: prune first
    if len(a):
        a = a[jointly_typical([cb1.words[a], x_seq, s_seq], vvxs_pmf.sum(axis=1), eps)]
    if len(b):
        b = b[jointly_typical([cb2.words[b], x_seq, s_seq], vvxs_pmf.sum(axis=0), eps)]
    if len(a) == 0 or len(b) == 0:
        return Failure("transmitter", 0)
    ia, ib = np.repeat(a, len(b)), np.tile(b, len(a))
    ok = jointly_typical([cb1.words[ia], cb2.words[ib], x_seq, s_seq], vvxs_pmf, eps)
    found = np.flatnonzero(ok)
    if len(found) != 1:
        return Failure("transmitter", int(len(found)))
    k = found[0]
    return int(cb1.subbins[ia[k]]), int(cb2.subbins[ib[k]])


def _fb_pmfs(channel: BroadcastChannelSpec, scheme: FeedbackScheme):
    px, pv1, pv2 = scheme.arrays
    p_s = np.asarray(channel.p_s)
    W = np.asarray(channel.W)                                  # [x,s,y1,y2,z]
    sx = p_s[:, None] * px                                      # [s,x]
    j = np.einsum("sx,xsabz->sxabz", sx, W)                     # [s,x,y1,y2,z]
    out = j.sum(axis=(0, 1))                                    # [y1,y2,z]
    vy1 = (pv1 * j.sum(axis=(0, 1, 3, 4))[:, None]).T           # [v1,y1]
    vy2 = (pv2 * j.sum(axis=(0, 1, 2, 4))[:, None]).T
    vvxs = np.einsum("sxab,av,bw->vwxs", j.sum(axis=4), pv1, pv2)
    return out, vy1, vy2, vvxs


class _FbReceivers:
    def __init__(self, cbs, vys, tp):
        self.cbs, self.vys, self.tp = cbs, vys, tp
        self._cache: dict = {}

    def step(self, j: int, y: np.ndarray):
        key = (j, y.tobytes())
        hit = self._cache.get(key)
        if hit is None:
            hit = self._cache[key] = fb_receiver_step(self.cbs[j - 1], y, self.vys[j - 1], self.tp)
        return hit


def _fb_chunk(args):
    channel, scheme, cbs, tp, seed, trials, keep_obs = args
    _, vy1, vy2, vvxs = _fb_pmfs(channel, scheme)
    rx = _FbReceivers(cbs, (vy1, vy2), tp)
    p_s = np.asarray(channel.p_s)
    W = np.asarray(channel.W)
    shp = W.shape[2:]
    px = scheme.arrays[0]
    out = {"rx1": 0, "rx2": 0, "tx": 0, "e1": 0, "e2": 0, "any": 0, "keys": [], "obs": []}
    for t in trials:
        rng = np.random.default_rng([seed, 0, t])
        s = _sample(rng, np.broadcast_to(p_s, (tp.n, len(p_s))))
        x = _sample(rng, px[s])
        flat = _sample(rng, W[x, s].reshape(tp.n, -1))
        y1, y2, z = (a.astype(np.int64) for a in np.unravel_index(flat, shp))
        msgs, keys, failed = [], [], False
        for j, y in ((1, y1), (2, y2)):
            r = rx.step(j, y)
            if isinstance(r, Failure):
                out[f"rx{j}"] += 1
                failed = True
                r = (0, 0, -1)
            msgs.append(r[0])
            keys.append(r[1])
        est = tx_recover(x, s, msgs[0], msgs[1], cbs, tp, vvxs)
        if isinstance(est, Failure):
            out["tx"] += 1
            failed = True
            est = (0, 0)
        e1, e2 = est[0] != keys[0], est[1] != keys[1]
        out["e1"] += e1
        out["e2"] += e2
        out["any"] += bool(e1 or e2 or failed)
        out["keys"].append((keys[0], keys[1], msgs[0], msgs[1]))
        if keep_obs:
            out["obs"].append((z.tolist(), y1.tolist(), y2.tolist()))
    return out


def _fb_exact_leakage(channel, scheme, cbs, tp, cap):
    """Exact fb leakages, or ``None`` when the output enumeration exceeds ``cap``."""
    out, vy1, vy2, _ = _fb_pmfs(channel, scheme)
    n = tp.n
    supp = np.argwhere(out > 0)                  # rows (y1, y2, z)
    states = len(supp) ** n
    if states > cap:
        return None, states
    probs = out[tuple(supp.T)]
    idx = all_sequences(len(supp), n)            # [states, n] symbol rows
    w = np.exp(np.log(probs)[idx].sum(axis=1))
    c1, c2, cz = channel.cards["Y1"], channel.cards["Y2"], channel.cards["Z"]
    y1 = supp[idx, 0]
    y2 = supp[idx, 1]
    zz = supp[idx, 2]
    rx = _FbReceivers(cbs, (vy1, vy2), tp)

    def labels(j, ys, card):
        ids, inv = np.unique(seq_index(ys, card), return_inverse=True)
        first = {}
        for r, i in enumerate(inv.ravel()):
            first.setdefault(int(i), r)
        lab = np.zeros((len(ids), 2), dtype=np.int64)
        for i, r in first.items():
            res = rx.step(j, ys[r])
            lab[i] = (0, 0) if isinstance(res, Failure) else res[:2]
        return lab[inv.ravel()], inv.ravel()

    a1, y1id = labels(1, y1, c1)
    a2, y2id = labels(2, y2, c2)
    zid = seq_index(zz, cz)
    psi = np.column_stack([a1[:, 0], a2[:, 0]])
    res = {
        "rx2_view": _mi_samples(a1[:, 1], np.column_stack([y2id, psi]), w),
        "rx1_view": _mi_samples(a2[:, 1], np.column_stack([y1id, psi]), w),
        "eve": _mi_samples(np.column_stack([a1[:, 1], a2[:, 1]]), np.column_stack([zid, psi]), w),
    }
    return res, states


def run_fb(channel: BroadcastChannelSpec, scheme: FeedbackScheme, rates, tp: TypicalityParams,
           trials: int, seed: int, workers: int = 1, leakage_cap: int = LEAKAGE_CAP,
           log_trials: bool = False, measure_leakage: bool = True) -> SimulationReport:
    """Monte Carlo run of the one-round feedback protocol.

    ``rates`` is ``(Rp1, Rp2, R1, R2)``: public bin rates then key rates.
    The eavesdropper sees ``(z^n, psi1, psi2)``; each receiver's view of
    the other's key is ``(y^n, psi1, psi2)``.
    """
    if trials < 1:
        raise SimulationError("trials must be at least 1")
    rates = tuple(float(r) for r in rates)
    if len(rates) != 4 or min(rates) < 0:
        raise SimulationError("rates must be four non-negative numbers (Rp1, Rp2, R1, R2)")
    rp1, rp2, r1, r2 = rates
    _, vy1, vy2, _ = _fb_pmfs(channel, scheme)
    sub = [int(x) for x in np.random.SeedSequence([seed, 3]).generate_state(2)]
    cbs = (gen_double_binned(vy1.sum(axis=1), tp, rp1, r1, sub[0]),
           gen_double_binned(vy2.sum(axis=1), tp, rp2, r2, sub[1]))
    exact, states = (_fb_exact_leakage(channel, scheme, cbs, tp, leakage_cap)
                     if measure_leakage else (None, 0))
    keep_obs = measure_leakage and exact is None
    jobs = [(channel, scheme, cbs, tp, seed, r, keep_obs) for r in _chunks(trials, workers)]
    parts = _run_chunks(_fb_chunk, jobs, workers)
    tot = {k: sum(p[k] for p in parts) for k in ("rx1", "rx2", "tx", "e1", "e2", "any")}
    rows = np.array([k for p in parts for k in p["keys"]], dtype=np.int64).reshape(-1, 4)
    n = tp.n
    if keep_obs:
        obs = [o for p in parts for o in p["obs"]]
        zs, y1s, y2s = (np.array([o[i] for o in obs]) for i in range(3))
        psi = rows[:, 2:]
        exact_like = {
            "rx2_view": _mi_samples(rows[:, 0], np.column_stack([y2s, psi])),
            "rx1_view": _mi_samples(rows[:, 1], np.column_stack([y1s, psi])),
            "eve": _mi_samples(rows[:, :2], np.column_stack([zs, psi])),
        }
    else:
        exact_like = exact
    leakage = {} if exact_like is None else {
        "I(K1;Y2^n,psi1,psi2)": exact_like["rx2_view"] / n,
        "I(K2;Y1^n,psi1,psi2)": exact_like["rx1_view"] / n,
        "I(K1,K2;Z^n,psi1,psi2)": exact_like["eve"] / n}
    ent = {"K1": _plugin_entropy(rows[:, 0]), "K2": _plugin_entropy(rows[:, 1])}
    r = lambda c: realized_rate(n, c)
    return SimulationReport(
        protocol="fb", trials=trials, n=n, eps=tp.eps, seed=int(seed),
        rates={"Rp1": rp1, "Rp2": rp2, "R1": r1, "R2": r2},
        realized_rates={"Rp1": r(cbs[0].n_bins), "Rp2": r(cbs[1].n_bins),
                        "R1": r(cbs[0].n_subbins), "R2": r(cbs[1].n_subbins)},
        counts={"words_v1": int(len(cbs[0].words)), "words_v2": int(len(cbs[1].words)),
                "bins_v1": cbs[0].n_bins, "bins_v2": cbs[1].n_bins,
                "subbins_v1": cbs[0].n_subbins, "subbins_v2": cbs[1].n_subbins},
        error_rates={"k1": tot["e1"] / trials, "k2": tot["e2"] / trials,
                     "total": tot["any"] / trials},
        failures={"receiver1": tot["rx1"], "receiver2": tot["rx2"], "transmitter": tot["tx"]},
        leakage=leakage, leakage_exact=exact is not None, leakage_states=int(states),
        bias_warning=keep_obs,
        key_entropy_bits=ent, key_entropy_per_use={k: v / n for k, v in ent.items()},
        metadata={"leakage_cap": int(leakage_cap), "leakage_measured": bool(measure_leakage)},
        trial_log=rows.tolist() if log_trials else None,
    )


__all__ = [
    "Codebook", "CoveringFailure", "DoubleBinnedCodebook", "EncodeResult", "Failure",
    "LEAKAGE_CAP", "PackingFailure", "SimulationError", "SimulationReport", "TypicalityParams",
    "all_sequences", "decode_nofb", "encode_nofb", "extract_keys_nofb", "fb_receiver_step",
    "gen_codebooks_nofb", "gen_double_binned", "jointly_typical", "realized_rate", "run_fb",
    "run_nofb", "seq_index", "tx_recover", "word_count",
]
