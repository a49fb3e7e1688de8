"""The state-dependent broadcast channel and the two designer schemes.

The channel is ``p(S)`` plus a kernel ``p(Y1, Y2, Z | X, S)``.  The
no-feedback scheme chooses ``(U0, U1, U2, X)`` given ``S``; the feedback
scheme chooses ``X`` given ``S`` and the receiver-side quantizers
``V1 | Y1`` and ``V2 | Y2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .prob import (ConditionalPMF, JointPMF, PMFError, Variable, compose,
                   kernel_violations, validate)

NOFB_ORDER = ("S", "U0", "U1", "U2", "X", "Y1", "Y2", "Z")
FB_ORDER = ("S", "X", "Y1", "Y2", "Z", "V1", "V2")


class ChannelError(ValueError):
    pass


def _kernel(target, given, table) -> ConditionalPMF:
    return ConditionalPMF(tuple(Variable(n, c) for n, c in target),
                          tuple(Variable(n, c) for n, c in given), table)


@dataclass(frozen=True, eq=False)
class BroadcastChannelSpec:
    state_pmf: JointPMF
    transition: ConditionalPMF

    def __post_init__(self):
        if self.state_pmf.names != ("S",):
            raise ChannelError("state pmf must be over the single variable S")
        if self.transition.given_names != ("X", "S") or \
                self.transition.target_names != ("Y1", "Y2", "Z"):
            raise ChannelError("transition must be p(Y1,Y2,Z | X,S)")
        if self.transition.given[1].card != self.state_pmf.variables[0].card:
            raise ChannelError("state cardinality mismatch between p(S) and the kernel")
        res = validate(self.state_pmf, tol=1e-9)
        if not res.ok:
            raise ChannelError("state pmf: " + "; ".join(res.violations))
        bad = kernel_violations(self.transition, tol=1e-9)
        if bad:
            raise ChannelError("transition: " + "; ".join(bad))

    @classmethod
    def from_arrays(cls, p_s, W) -> "BroadcastChannelSpec":
        """Build from ``p_s[s]`` and ``W[x, s, y1, y2, z]``."""
        p_s = np.asarray(p_s, dtype=float)
        W = np.asarray(W, dtype=float)
        if W.ndim != 5 or W.shape[1] != p_s.shape[0]:
            raise ChannelError(f"kernel shape {W.shape} inconsistent with |S|={p_s.shape[0]}")
        nx, ns, n1, n2, nz = W.shape
        return cls(JointPMF((Variable("S", ns),), p_s),
                   _kernel((("Y1", n1), ("Y2", n2), ("Z", nz)), (("X", nx), ("S", ns)), W))

    @property
    def p_s(self) -> np.ndarray:
        return self.state_pmf.mass

    @property
    def W(self) -> np.ndarray:
        """Kernel array indexed ``[x, s, y1, y2, z]``."""
        return self.transition.table

    @property
    def cards(self) -> dict[str, int]:
        nx, ns, n1, n2, nz = self.W.shape
        return {"S": ns, "X": nx, "Y1": n1, "Y2": n2, "Z": nz}

    def marginal_kernel(self, output: str) -> np.ndarray:
        """``p(output | x, s)`` as an array ``[x, s, y]``."""
        axis = {"Y1": (3, 4), "Y2": (2, 4), "Z": (2, 3)}[output]
        return self.W.sum(axis=axis)


@dataclass(frozen=True, eq=False)
class AuxScheme:
    u0_given_s: ConditionalPMF
    u1_given_u0_s: ConditionalPMF
    u2_given_u0_s: ConditionalPMF
    x_given_all: ConditionalPMF

    def __post_init__(self):
        expect = [(self.u0_given_s, ("U0",), ("S",)),
                  (self.u1_given_u0_s, ("U1",), ("S", "U0")),
                  (self.u2_given_u0_s, ("U2",), ("S", "U0")),
                  (self.x_given_all, ("X",), ("S", "U0", "U1", "U2"))]
        for k, t, g in expect:
            if k.target_names != t or k.given_names != g:
                raise ChannelError(f"factor p({','.join(k.target_names)}|{','.join(k.given_names)}) "
                                   f"should be p({','.join(t)}|{','.join(g)})")
            bad = kernel_violations(k, tol=1e-9)
            if bad:
                raise ChannelError("; ".join(bad))

    @classmethod
    def from_arrays(cls, pu0, pu1, pu2, px) -> "AuxScheme":
        """Arrays ``pu0[s,u0]``, ``pu1[s,u0,u1]``, ``pu2[s,u0,u2]``, ``px[s,u0,u1,u2,x]``."""
        pu0, pu1, pu2, px = (np.asarray(a, dtype=float) for a in (pu0, pu1, pu2, px))
        ns, n0 = pu0.shape
        n1, n2, nx = pu1.shape[2], pu2.shape[2], px.shape[4]
        return cls(_kernel((("U0", n0),), (("S", ns),), pu0),
                   _kernel((("U1", n1),), (("S", ns), ("U0", n0)), pu1),
                   _kernel((("U2", n2),), (("S", ns), ("U0", n0)), pu2),
                   _kernel((("X", nx),), (("S", ns), ("U0", n0), ("U1", n1), ("U2", n2)), px))

    @property
    def arrays(self):
        return (self.u0_given_s.table, self.u1_given_u0_s.table,
                self.u2_given_u0_s.table, self.x_given_all.table)

    @property
    def cards(self) -> dict[str, int]:
        s, u0, u1, u2, x = self.x_given_all.table.shape
        return {"S": s, "U0": u0, "U1": u1, "U2": u2, "X": x}


@dataclass(frozen=True, eq=False)
class FeedbackScheme:
    x_given_s: ConditionalPMF
    v1_given_y1: ConditionalPMF
    v2_given_y2: ConditionalPMF

    def __post_init__(self):
        expect = [(self.x_given_s, ("X",), ("S",)),
                  (self.v1_given_y1, ("V1",), ("Y1",)),
                  (self.v2_given_y2, ("V2",), ("Y2",))]
        for k, t, g in expect:
            if k.target_names != t or k.given_names != g:
                raise ChannelError(f"factor p({','.join(k.target_names)}|{','.join(k.given_names)}) "
                                   f"should be p({','.join(t)}|{','.join(g)})")
            bad = kernel_violations(k, tol=1e-9)
            if bad:
                raise ChannelError("; ".join(bad))

    @classmethod
    def from_arrays(cls, px, pv1, pv2) -> "FeedbackScheme":
        """Arrays ``px[s,x]``, ``pv1[y1,v1]``, ``pv2[y2,v2]``."""
        px, pv1, pv2 = (np.asarray(a, dtype=float) for a in (px, pv1, pv2))
        return cls(_kernel((("X", px.shape[1]),), (("S", px.shape[0]),), px),
                   _kernel((("V1", pv1.shape[1]),), (("Y1", pv1.shape[0]),), pv1),
                   _kernel((("V2", pv2.shape[1]),), (("Y2", pv2.shape[0]),), pv2))

    @property
    def arrays(self):
        return self.x_given_s.table, self.v1_given_y1.table, self.v2_given_y2.table


def _check_nofb(channel: BroadcastChannelSpec, scheme: AuxScheme) -> None:
    c, k = channel.cards, scheme.cards
    if c["S"] != k["S"] or c["X"] != k["X"]:
        raise ChannelError(f"scheme alphabets S={k['S']}, X={k['X']} do not match "
                           f"channel S={c['S']}, X={c['X']}")


def build_joint_nofb(channel: BroadcastChannelSpec, scheme: AuxScheme) -> JointPMF:
    """Joint over (S, U0, U1, U2, X, Y1, Y2, Z) from the chain factorization."""
    _check_nofb(channel, scheme)
    return compose([scheme.u0_given_s, scheme.u1_given_u0_s, scheme.u2_given_u0_s,
                    scheme.x_given_all, channel.transition], channel.state_pmf)


def nofb_tensor(p_s, pu0, pu1, pu2, px, W) -> np.ndarray:
    """Same product as :func:`build_joint_nofb` on raw arrays (optimizer path)."""
    # [s,u0] -> [s,u0,u1,u2] -> [s,u0,u1,u2,x] -> [...,y1,y2,z]
    a = p_s[:, None] * pu0
    a = a[:, :, None, None] * pu1[:, :, :, None] * pu2[:, :, None, :]
    a = a[..., None] * px
    ns, n0, n1, n2, nx = a.shape
    Wt = np.transpose(W, (1, 0, 2, 3, 4))  # [s,x,y1,y2,z]
    ny = W.shape[2] * W.shape[3] * W.shape[4]
    out = a[..., None] * Wt.reshape(ns, 1, 1, 1, nx, ny)
    return out.reshape(a.shape + W.shape[2:])


def build_joint_fb(channel: BroadcastChannelSpec, scheme: FeedbackScheme) -> JointPMF:
    """Joint over (S, X, Y1, Y2, Z, V1, V2)."""
    c = channel.cards
    px, pv1, pv2 = scheme.arrays
    if px.shape != (c["S"], c["X"]) or pv1.shape[0] != c["Y1"] or pv2.shape[0] != c["Y2"]:
        raise ChannelError("feedback scheme alphabets do not match the channel")
    # compose wants the kernel given (X,S); the root already has S
    return compose([scheme.x_given_s, channel.transition, scheme.v1_given_y1,
                    scheme.v2_given_y2], channel.state_pmf)


def fb_tensor(p_s, px, W, pv1, pv2) -> np.ndarray:
    a = p_s[:, None] * px                                   # [s,x]
    a = a[:, :, None, None, None] * np.transpose(W, (1, 0, 2, 3, 4))
    a = a[..., None, None] * pv1[None, None, :, None, None, :, None]
    return a * pv2[None, None, None, :, None, None, :]


def induced_x_given_s(channel: BroadcastChannelSpec, scheme: AuxScheme) -> np.ndarray:
    """p(x|s) implied by the auxiliary scheme, as ``[s, x]``."""
    pu0, pu1, pu2, px = scheme.arrays
    w = pu0[:, :, None, None] * pu1[:, :, :, None] * pu2[:, :, None, :]
    return np.einsum("sabc,sabcx->sx", w, px)


def reduce_to_wiretap(channel: BroadcastChannelSpec,
                      mode: Literal["nofb", "fb_keep_rx1", "fb_keep_rx2"]) -> BroadcastChannelSpec:
    """Specialize the three-receiver channel to a wiretap channel.

    ``nofb`` requires identical legitimate kernels and returns a channel in
    which ``Y2`` is an exact copy of ``Y1``.  The feedback modes collapse the
    dropped receiver's output to a single symbol.
    """
    W = channel.W
    if mode == "nofb":
        k1, k2 = channel.marginal_kernel("Y1"), channel.marginal_kernel("Y2")
        if k1.shape != k2.shape or np.max(np.abs(k1 - k2)) > 1e-12:
            raise ChannelError("cannot merge receivers: Y1 and Y2 kernels differ")
        pyz = W.sum(axis=3)                                  # [x,s,y,z]
        n = pyz.shape[2]
        eye = np.eye(n)
        W2 = pyz[:, :, :, None, :] * eye[None, None, :, :, None]
        return BroadcastChannelSpec.from_arrays(channel.p_s, W2)
    if mode == "fb_keep_rx1":
        return BroadcastChannelSpec.from_arrays(channel.p_s, W.sum(axis=3, keepdims=True))
    if mode == "fb_keep_rx2":
        return BroadcastChannelSpec.from_arrays(channel.p_s, W.sum(axis=2, keepdims=True))
    raise ChannelError(f"unknown reduction mode {mode!r}")


# ---------------------------------------------------------------- builders

def deterministic_table(n_in: tuple[int, ...], n_out: int, fn) -> np.ndarray:
    """0/1 kernel table ``[*inputs, output]`` for ``output = fn(*inputs)``."""
    t = np.zeros(n_in + (n_out,))
    for idx in np.ndindex(*n_in):
        t[idx + (int(fn(*idx)),)] = 1.0
    return t


def bsc(p: float) -> np.ndarray:
    return np.array([[1 - p, p], [p, 1 - p]])


def product_channel(p_s, k1, k2, kz) -> BroadcastChannelSpec:
    """Channel whose outputs are independent given (X, S); ``k*[x, s, y]``."""
    k1, k2, kz = (np.asarray(k, dtype=float) for k in (k1, k2, kz))
    W = k1[:, :, :, None, None] * k2[:, :, None, :, None] * kz[:, :, None, None, :]
    return BroadcastChannelSpec.from_arrays(p_s, W)


def noiseless_binary(z_constant: bool = True) -> BroadcastChannelSpec:
    """|S| = 1, Y1 = Y2 = X; Z constant (or Z = X when ``z_constant`` is False)."""
    ident = np.eye(2)[:, None, :]
    kz = np.ones((2, 1, 1)) if z_constant else ident
    return product_channel([1.0], ident, ident, kz)


def bsc_wiretap(p_main: float = 0.05, p_eve: float = 0.25) -> BroadcastChannelSpec:
    """|S| = 1; both legitimate receivers see BSC(p_main), Z sees BSC(p_eve)."""
    m = bsc(p_main)[:, None, :]
    return product_channel([1.0], m, m, bsc(p_eve)[:, None, :])


def state_binary(p_good: float = 0.02, p_bad: float = 0.3, p_eve: float = 0.2) -> BroadcastChannelSpec:
    """Uniform binary S selects the crossover of receiver 1 (and, mirrored, receiver 2)."""
    k1 = np.stack([bsc(p_good), bsc(p_bad)], axis=1)   # [x, s, y]
    k2 = np.stack([bsc(p_bad), bsc(p_good)], axis=1)
    kz = np.stack([bsc(p_eve), bsc(p_eve)], axis=1)
    return product_channel([0.5, 0.5], k1, k2, kz)


def random_channel(rng: np.random.Generator, ns=2, nx=2, n1=2, n2=2, nz=2,
                   alpha: float = 1.0) -> BroadcastChannelSpec:
    p_s = rng.dirichlet(np.full(ns, alpha))
    W = rng.dirichlet(np.full(n1 * n2 * nz, alpha), size=(nx, ns)).reshape(nx, ns, n1, n2, nz)
    return BroadcastChannelSpec.from_arrays(p_s, W)


def random_aux_scheme(rng: np.random.Generator, channel: BroadcastChannelSpec,
                      n0=2, n1=2, n2=2, alpha: float = 1.0) -> AuxScheme:
    ns, nx = channel.cards["S"], channel.cards["X"]
    d = lambda size, k: rng.dirichlet(np.full(k, alpha), size=size)
    return AuxScheme.from_arrays(d((ns,), n0), d((ns, n0), n1), d((ns, n0), n2),
                                 d((ns, n0, n1, n2), nx))


def random_fb_scheme(rng: np.random.Generator, channel: BroadcastChannelSpec,
                     nv1=2, nv2=2, alpha: float = 1.0) -> FeedbackScheme:
    c = channel.cards
    d = lambda size, k: rng.dirichlet(np.full(k, alpha), size=size)
    return FeedbackScheme.from_arrays(d((c["S"],), c["X"]), d((c["Y1"],), nv1), d((c["Y2"],), nv2))


__all__ = [
    "AuxScheme", "BroadcastChannelSpec", "ChannelError", "FeedbackScheme", "FB_ORDER",
    "NOFB_ORDER", "PMFError", "bsc", "bsc_wiretap", "build_joint_fb", "build_joint_nofb",
    "deterministic_table", "fb_tensor", "induced_x_given_s", "noiseless_binary", "nofb_tensor",
    "product_channel", "random_aux_scheme", "random_channel", "random_fb_scheme",
    "reduce_to_wiretap", "state_binary",
]
