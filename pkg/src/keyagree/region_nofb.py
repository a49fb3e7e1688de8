"""Inner and outer bounds on the secret-key region without feedback.

The inner bound is a polytope in (R0, R1, R2) cut out by six sum-rate
constraints, valid for schemes that meet four covering constraints.  The
outer bound is a box per input distribution; we report the enclosing box
over all searched ``p(x|s)``.
"""
from __future__ import annotations

import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from .channel import AuxScheme, BroadcastChannelSpec, NOFB_ORDER, induced_x_given_s
from . import kernels
from .prob import EntropyTable, JointPMF, PMFError, entropies_by_name

log = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-9
CONTAINMENT_TOL = 1e-6
_MAX_EXPAND = 6


def positive_part(x: float) -> float:
    return x if x >= 0 else 0.0


@dataclass(frozen=True)
class InnerPointNofb:
    """Right-hand sides of the six inner-bound constraints (after ``[.]^+``)."""

    r0: float
    r1: float
    r2: float
    r0_plus_r1: float
    r0_plus_r2: float
    r0_plus_r1_plus_r2: float
    feasible: bool
    constraint_slacks: tuple[float, float, float, float]

    def axis_maxima(self) -> tuple[float, float, float]:
        """Largest R0, R1, R2 individually reachable inside the polytope."""
        return (min(self.r0, self.r0_plus_r1, self.r0_plus_r2, self.r0_plus_r1_plus_r2),
                min(self.r1, self.r0_plus_r1, self.r0_plus_r1_plus_r2),
                min(self.r2, self.r0_plus_r2, self.r0_plus_r1_plus_r2))

    def contains(self, rates, tol: float = 1e-9) -> bool:
        r0, r1, r2 = rates
        return (min(rates) >= -tol and r0 <= self.r0 + tol and r1 <= self.r1 + tol
                and r2 <= self.r2 + tol and r0 + r1 <= self.r0_plus_r1 + tol
                and r0 + r2 <= self.r0_plus_r2 + tol
                and r0 + r1 + r2 <= self.r0_plus_r1_plus_r2 + tol)

    def weighted_max(self, weights) -> tuple[float, tuple[float, float, float]]:
        return polytope_weighted_max(self, weights)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["constraint_slacks"] = list(self.constraint_slacks)
        d["axis_maxima"] = list(self.axis_maxima())
        return d


@dataclass(frozen=True)
class OuterBox:
    r0_max: float
    r1_max: float
    r2_max: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SearchBudget:
    restarts: int = 64
    iterations: int = 500
    step0: float = 2.0
    decay: float = 0.95
    decay_every: int = 5
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.restarts < 1 or self.iterations < 0:
            raise ValueError("search budget must allow at least one restart")


@dataclass
class RateRegionReport:
    best_point: InnerPointNofb
    best_scheme: AuxScheme
    outer: OuterBox | None
    objective: float
    weights: tuple[float, float, float]
    search_trace: list[tuple[int, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "weights": list(self.weights),
            "best_point": self.best_point.to_dict(),
            "best_scheme": scheme_to_dict(self.best_scheme),
            "outer": self.outer.to_dict() if self.outer else None,
            "search_trace": [[i, v] for i, v in self.search_trace],
        }


def scheme_to_dict(scheme: AuxScheme) -> dict:
    pu0, pu1, pu2, px = scheme.arrays
    return {"u0_given_s": pu0.tolist(), "u1_given_s_u0": pu1.tolist(),
            "u2_given_s_u0": pu2.tolist(), "x_given_s_u0_u1_u2": px.tolist()}


# ---------------------------------------------------------------- evaluators

def mi_term_matrix(terms):
    """Entropy subsets and the linear map taking their entropies to MI terms.

    ``terms`` maps a label to ``(a, b, given)``; the returned matrix ``A``
    satisfies ``A @ h = [I(a; b | given) for each term]`` where ``h`` holds
    the entropies of ``subsets`` in order.
    """
    subsets: list[tuple[str, ...]] = []
    index: dict[frozenset, int] = {}

    def slot(names):
        key = frozenset(names)
        if not key:
            return None
        if key not in index:
            index[key] = len(subsets)
            subsets.append(tuple(sorted(key)))
        return index[key]

    rows = []
    for a, b, g in terms.values():
        row = {}
        for names, sign in ((a + g, 1), (b + g, 1), (a + b + g, -1), (g, -1)):
            k = slot(names)
            if k is not None:
                row[k] = row.get(k, 0) + sign
        rows.append(row)
    A = np.zeros((len(rows), len(subsets)))
    for r, row in enumerate(rows):
        for k, v in row.items():
            A[r, k] = v
    return subsets, A


_INNER_TERMS = {
    "i0y1": (("U0",), ("Y1",), ()),
    "i0y2": (("U0",), ("Y2",), ()),
    "i0z": (("U0",), ("Z",), ()),
    "i0s": (("U0",), ("S",), ()),
    "i1y1": (("U1",), ("Y1",), ("U0",)),
    "i2y2": (("U2",), ("Y2",), ("U0",)),
    "i1_y2u2": (("U1",), ("Y2", "U2"), ("U0",)),
    "i2_y1u1": (("U2",), ("Y1", "U1"), ("U0",)),
    "i01z": (("U0", "U1"), ("Z",), ()),
    "i02z": (("U0", "U2"), ("Z",), ()),
    "i012z": (("U0", "U1", "U2"), ("Z",), ()),
    "i12": (("U1",), ("U2",), ("U0",)),
    "i1s": (("U1",), ("S",), ("U0",)),
    "i2s": (("U2",), ("S",), ("U0",)),
}
_INNER_SUBSETS, _INNER_A = mi_term_matrix(_INNER_TERMS)
_INNER_NAMES_NOX = ("S", "U0", "U1", "U2", "Y1", "Y2", "Z")


def _inner_from_terms(v) -> InnerPointNofb:
    (i0y1, i0y2, i0z, i0s, i1y1, i2y2, i1_y2u2, i2_y1u1,
     i01z, i02z, i012z, i12, i1s, i2s) = (float(x) for x in v)
    common = min(i0y1, i0y2)
    pp = positive_part
    slacks = (i0y1 - i0s, i0y2 - i0s, i1y1 - i1s, i2y2 - i2s)
    return InnerPointNofb(
        r0=pp(common - i0z),
        r1=pp(i1y1 - i1_y2u2),
        r2=pp(i2y2 - i2_y1u1),
        r0_plus_r1=pp(common + i1y1 - i01z),
        r0_plus_r2=pp(common + i2y2 - i02z),
        r0_plus_r1_plus_r2=pp(common + i1y1 + i2y2 - i012z - i12),
        feasible=all(x >= -FEASIBILITY_TOL for x in slacks),
        constraint_slacks=slacks,
    )


def eval_inner_nofb(joint: JointPMF) -> InnerPointNofb:
    """Inner-bound values and covering slacks for one composed joint.

    The sum-rate terms printed as ``I(U1, Y1 | U0)`` are read as
    ``I(U1; Y1 | U0)``; ``I(U0, U1; Z)`` is the joint-argument information.
    """
    if sorted(joint.names) != sorted(NOFB_ORDER):
        raise PMFError(f"expected variables {NOFB_ORDER}, got {joint.names}")
    h = entropies_by_name(joint.names, joint.mass, _INNER_SUBSETS)
    return _inner_from_terms(_INNER_A @ h)


def eval_outer_nofb(joint: JointPMF, channel: BroadcastChannelSpec | None = None) -> OuterBox:
    """Outer-bound box for one joint over (S, X, Y1, Y2, Z).

    When ``channel`` is given the joint is checked against it.
    """
    need = {"S", "X", "Y1", "Y2", "Z"}
    if not need <= set(joint.names):
        raise PMFError(f"outer bound needs variables {sorted(need)}, got {joint.names}")
    if channel is not None:
        j = joint.transpose(["X", "S", "Y1", "Y2", "Z"]) if set(joint.names) == need else None
        if j is None:
            from .prob import marginalize
            j = marginalize(joint, ["X", "S", "Y1", "Y2", "Z"])
        ps = j.mass.sum(axis=(0, 2, 3, 4))
        if np.max(np.abs(ps - channel.p_s)) > 1e-9:
            raise PMFError("joint state marginal differs from the channel's p(S)")
        pxs = j.mass.sum(axis=(2, 3, 4))
        cond = j.mass / np.where(pxs > 0, pxs, 1.0)[:, :, None, None, None]
        mask = pxs > 0
        if np.max(np.abs(cond[mask] - channel.W[mask]), initial=0.0) > 1e-9:
            raise PMFError("joint output kernel differs from the channel")
    t = EntropyTable(joint, [
        ("Z",), ("Y1",), ("Y2",), ("Y1", "Z"), ("Y2", "Z"), ("Y1", "Y2"),
        ("X", "S", "Z"), ("X", "S", "Y1", "Z"), ("X", "S", "Y2", "Z"),
        ("X", "S", "Y1"), ("X", "S", "Y2"), ("X", "S", "Y1", "Y2"),
    ])
    xs = ["X", "S"]
    return OuterBox(
        r0_max=positive_part(min(t.I(xs, ["Y1"], ["Z"]), t.I(xs, ["Y2"], ["Z"]))),
        r1_max=positive_part(min(t.I(xs, ["Y1"], ["Y2"]), t.I(xs, ["Y1"], ["Z"]))),
        r2_max=positive_part(min(t.I(xs, ["Y2"], ["Y1"]), t.I(xs, ["Y2"], ["Z"]))),
    )


def check_containment(inner: InnerPointNofb, outer: OuterBox,
                      tol: float = CONTAINMENT_TOL) -> bool:
    """Whether every rate triple of the inner polytope lies in the outer box.

    Compares the polytope's per-axis maxima, which is the tightest
    coordinatewise comparison; the individual right-hand sides alone can
    exceed the box without any achievable triple doing so.
    """
    m0, m1, m2 = inner.axis_maxima()
    return m0 <= outer.r0_max + tol and m1 <= outer.r1_max + tol and m2 <= outer.r2_max + tol


def polytope_weighted_max(p: InnerPointNofb, weights) -> tuple[float, tuple[float, float, float]]:
    """Maximize ``w . R`` over the inner polytope for non-negative ``w``.

    For fixed R0 = t the best (R1, R2) is greedy, so the objective is a
    concave piecewise-linear function of t whose kinks are listed below.
    """
    w0, w1, w2 = (float(w) for w in weights)
    a, b, c = p.r0, p.r1, p.r2
    d, e, f = p.r0_plus_r1, p.r0_plus_r2, p.r0_plus_r1_plus_r2
    swap = w2 > w1
    if swap:
        b, c, d, e, w1, w2 = c, b, e, d, w2, w1
    tmax = min(a, d, e, f)

    def best_at(t):
        x = max(0.0, min(b, d - t, f - t))
        y = max(0.0, min(c, e - t, f - t - x))
        return w0 * t + w1 * x + w2 * y, (t, x, y)

    cands = {0.0, tmax, d - b, f - b, e - c, f - b - c, d + e - f}
    best = None
    for t in cands:
        t = min(max(t, 0.0), tmax)
        val, pt = best_at(t)
        if best is None or val > best[0] + 1e-15:
            best = (val, pt)
    val, (t, x, y) = best
    return val, ((t, y, x) if swap else (t, x, y))


# ---------------------------------------------------------------- optimizer

def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class _InnerObjective:
    """Scores softmax logits; recomputes only the factor that changed."""

    def __init__(self, channel: BroadcastChannelSpec, cards, weights):
        self.p_s = np.asarray(channel.p_s)
        W = np.asarray(channel.W)
        ns, nx = channel.cards["S"], channel.cards["X"]
        n0, n1, n2 = cards
        self.out_shape = W.shape[2:]
        self.Wt = np.ascontiguousarray(np.transpose(W, (1, 0, 2, 3, 4)).reshape(ns, nx, -1))
        self.shapes = [(ns, n0), (ns, n0, n1), (ns, n0, n2), (ns, n0, n1, n2, nx)]
        self.weights = weights
        self.plan = kernels.get_plan(
            (ns, n0, n1, n2) + self.out_shape,
            [tuple(_INNER_NAMES_NOX.index(n) for n in sub) for sub in _INNER_SUBSETS])

    def tensor(self, arrays):
        pu0, pu1, pu2, px = arrays
        a = (self.p_s[:, None] * pu0)[:, :, None, None] * pu1[:, :, :, None] * pu2[:, :, None, :]
        a = a[..., None] * px
        ns, n0, n1, n2, nx = a.shape
        q = np.matmul(a.reshape(ns, -1, nx), self.Wt)
        return q.reshape((ns, n0, n1, n2) + self.out_shape)

    def score(self, arrays):
        v = (_INNER_A @ self.plan(self.tensor(arrays))).tolist()
        slacks = (v[0] - v[3], v[1] - v[3], v[4] - v[12], v[5] - v[13])
        if min(slacks) < -FEASIBILITY_TOL:
            return (0, sum(min(x, 0.0) for x in slacks)), v
        val, _ = polytope_weighted_max(_inner_from_terms(v), self.weights)
        return (1, val), v


def _restart(args):
    channel, cards, weights, budget, index = args
    obj = _InnerObjective(channel, cards, weights)
    rng = np.random.default_rng([budget.seed, index])
    if index == 0:
        # all auxiliaries constant: always feasible, objective 0
        logits = [np.zeros(s) for s in obj.shapes]
        for z in logits[:3]:
            z[..., 0] = 30.0
        logits[3] = rng.normal(size=obj.shapes[3]) * 2.0
    else:
        logits = [rng.normal(size=s) * 2.0 for s in obj.shapes]
    arrays = [_softmax(z) for z in logits]
    score, pt = obj.score(arrays)
    sizes = [z.size for z in logits]
    total = sum(sizes)
    step = budget.step0
    it = 0
    while it < budget.iterations:
        if it and it % budget.decay_every == 0:
            step *= budget.decay
        it += 1
        k = int(rng.integers(total))
        f = 0
        while k >= sizes[f]:
            k -= sizes[f]
            f += 1
        delta = step if rng.random() < 0.5 else -step
        width = logits[f].shape[-1]
        row = k // width
        for sgn in (1.0, -1.0):
            z = logits[f].copy()
            z.reshape(-1)[k] += sgn * delta
            trial = list(arrays)
            pf = arrays[f].copy()
            pf.reshape(-1, width)[row] = _softmax(z.reshape(-1, width)[row])
            trial[f] = pf
            s2, p2 = obj.score(trial)
            if s2 > score:
                logits[f], arrays, score, pt = z, trial, s2, p2
                # expanding line search along the accepted direction
                grow = sgn * delta
                for _ in range(_MAX_EXPAND):
                    if it >= budget.iterations:
                        break
                    # each extension spends one iteration of the budget
                    it += 1
                    if it % budget.decay_every == 0:
                        step *= budget.decay
                    grow *= 2.0
                    z = logits[f].copy()
                    z.reshape(-1)[k] += grow
                    pf = arrays[f].copy()
                    pf.reshape(-1, width)[row] = _softmax(z.reshape(-1, width)[row])
                    trial = list(arrays)
                    trial[f] = pf
                    s2, p2 = obj.score(trial)
                    if not s2 > score:
                        break
                    logits[f], arrays, score, pt = z, trial, s2, p2
                break
    return index, score, _inner_from_terms(pt), arrays


def _tie_key(arrays) -> str:
    return json.dumps([np.round(a, 12).tolist() for a in arrays])


def maximize_inner_nofb(channel: BroadcastChannelSpec, cards=None, weights=(1.0, 1.0, 1.0),
                        budget: SearchBudget | None = None, outer: OuterBox | None = None
                        ) -> RateRegionReport:
    """Best-found scheme for ``w . (R0, R1, R2)`` by random-restart coordinate ascent.

    Each restart perturbs one softmax logit at a time and keeps improving
    moves; schemes violating a covering constraint never beat a feasible
    one.  The result is a lower bound on the true optimum.  Unless
    ``outer`` is supplied, the outer box is optimized too, seeded with
    the winning scheme's ``p(x|s)``.
    """
    budget = budget or SearchBudget()
    w = tuple(float(x) for x in weights)
    if len(w) != 3 or min(w) < 0 or max(w) <= 0:
        raise ValueError("weights must be three non-negative numbers, not all zero")
    if budget.iterations == 0 and budget.restarts == 0:
        raise ValueError("zero search budget")
    nx = channel.cards["X"]
    cards = tuple(cards) if cards is not None else (nx + 1,) * 3
    jobs = [(channel, cards, w, budget, i) for i in range(budget.restarts)]
    if budget.workers > 1:
        with ProcessPoolExecutor(budget.workers) as ex:
            results = list(ex.map(_restart, jobs))
    else:
        results = [_restart(j) for j in jobs]
    best = None
    trace = []
    for index, score, pt, arrays in sorted(results, key=lambda r: r[0]):
        val = score[1] if score[0] == 1 else float("-inf")
        trace.append((index, val))
        if score[0] != 1:
            continue
        key = (val, _tie_key(arrays))
        if best is None or val > best[0][0] + 1e-12 or (
                abs(val - best[0][0]) <= 1e-12 and key[1] < best[0][1]):
            best = (key, pt, arrays)
    if best is None:
        raise RuntimeError("no feasible scheme found")
    (val, _), pt, arrays = best
    scheme = AuxScheme.from_arrays(*arrays)
    if outer is None:
        outer = maximize_outer_nofb(channel, SearchBudget(restarts=8, seed=budget.seed),
                                    candidates=[induced_x_given_s(channel, scheme)])
    return RateRegionReport(pt, scheme, outer, val, w, trace)


_OUTER_TERMS = {
    "y1_z": (("X", "S"), ("Y1",), ("Z",)),
    "y2_z": (("X", "S"), ("Y2",), ("Z",)),
    "y1_y2": (("X", "S"), ("Y1",), ("Y2",)),
    "y2_y1": (("X", "S"), ("Y2",), ("Y1",)),
}
_OUTER_SUBSETS, _OUTER_A = mi_term_matrix(_OUTER_TERMS)
_OUTER_NAMES = ("S", "X", "Y1", "Y2", "Z")


def _outer_values(channel: BroadcastChannelSpec, px: np.ndarray) -> np.ndarray:
    """(r0_max, r1_max, r2_max) for one ``p(x|s)`` without building a JointPMF."""
    W = np.asarray(channel.W)
    mass = np.transpose(W, (1, 0, 2, 3, 4)) * (np.asarray(channel.p_s)[:, None] * px)[
        :, :, None, None, None]
    plan = kernels.get_plan(mass.shape, [tuple(_OUTER_NAMES.index(n) for n in sub)
                                         for sub in _OUTER_SUBSETS])
    a, b, c, d = (_OUTER_A @ plan(mass)).tolist()
    return np.maximum([min(a, b), min(c, a), min(d, b)], 0.0)


def _outer_from_px(channel: BroadcastChannelSpec, px: np.ndarray) -> OuterBox:
    return OuterBox(*(float(v) for v in _outer_values(channel, px)))


def _simplex_grid(k: int, step: float):
    m = int(round(1 / step))
    if k == 1:
        yield np.array([1.0])
        return
    for i in range(m + 1):
        for rest in _simplex_grid(k - 1, step):
            yield np.concatenate([[i / m], (1 - i / m) * rest]) if k > 2 else np.array([i / m, 1 - i / m])


def maximize_outer_nofb(channel: BroadcastChannelSpec, budget: SearchBudget | None = None,
                        grid_step: float = 0.05, candidates=()) -> OuterBox:
    """Enclosing box of the outer bound over ``p(x|s)``.

    Each coordinate is maximized separately: coarse grid (product of
    per-state simplex grids, or random draws when that grid is large),
    then a local softmax-parameterized refinement from the best points.
    ``candidates`` are extra ``p(x|s)`` arrays always included.
    """
    budget = budget or SearchBudget(restarts=8)
    if budget.restarts < 1:
        raise ValueError("zero search budget")
    ns, nx = channel.cards["S"], channel.cards["X"]
    rng = np.random.default_rng([budget.seed, 10_001])
    per_state = list(_simplex_grid(nx, grid_step))
    pts = []
    if len(per_state) ** ns <= 20000:
        for combo in itertools.product(range(len(per_state)), repeat=ns):
            pts.append(np.stack([per_state[c] for c in combo]))
    else:
        pts = [rng.dirichlet(np.ones(nx), size=ns) for _ in range(5000)]
    pts.extend(np.asarray(c, dtype=float) for c in candidates)
    vals = np.array([_outer_values(channel, p) for p in pts])
    best = vals.max(axis=0)
    for j in range(3):
        order = np.argsort(-vals[:, j], kind="stable")[: budget.restarts]

        def neg(z, j=j):
            return -_outer_values(channel, _softmax(z.reshape(ns, nx)))[j]

        for i in order:
            z0 = np.log(np.clip(pts[i], 1e-9, None)).ravel()
            res = minimize(neg, z0, method="Nelder-Mead",
                           options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 400 * ns * nx})
            best[j] = max(best[j], -res.fun)
    return OuterBox(*(float(v) for v in best))


__all__ = [
    "InnerPointNofb", "OuterBox", "RateRegionReport", "SearchBudget", "check_containment",
    "eval_inner_nofb", "eval_outer_nofb", "induced_x_given_s", "maximize_inner_nofb",
    "maximize_outer_nofb", "polytope_weighted_max", "positive_part",
]
