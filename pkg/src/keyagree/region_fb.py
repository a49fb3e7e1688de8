"""Secret-key region with one round of public feedback.

Two descriptions of the same region are provided: the closed-form
bounds on ``(R1, R2)`` and the raw rate system over ``(R1, R2, Rp1, Rp2)``
(``Rp`` are the public bin rates each receiver spends on reconciliation).
Projecting the latter with exact Fourier-Motzkin elimination gives an
independent route to the former, and ``verify_fm_matches_closed_form``
compares them point by point.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .channel import FB_ORDER
from .prob import EntropyTable, JointPMF, PMFError
from .region_nofb import positive_part

FB_VARIABLES = ("R1", "R2", "Rp1", "Rp2")
RATIONAL_DENOMINATOR = 10 ** 12
MEMBERSHIP_TOL = 1e-6
# the second line of the decoding constraints as printed, kept for reports
LITERAL_SECOND_LINE = "R1 + Rp1 <= H(V2|V1,Y1)"
SYMMETRIC_SECOND_LINE = "R2 + Rp2 <= H(V2|V1,Y1)"


def _check_joint(joint: JointPMF) -> None:
    if sorted(joint.names) != sorted(FB_ORDER):
        raise PMFError(f"expected variables {FB_ORDER}, got {joint.names}")


def to_rational(x: float, denominator: int = RATIONAL_DENOMINATOR) -> Fraction:
    """Round a float to the nearest multiple of ``1/denominator``."""
    if not np.isfinite(x):
        raise ValueError(f"cannot convert {x!r} to a rational")
    return Fraction(round(Fraction(x) * denominator), denominator)


# ------------------------------------------------------------ closed form

@dataclass(frozen=True)
class FbInnerPoint:
    """Closed-form bounds on ``(R1, R2)`` and the MI terms behind them."""

    r1_max: float
    r2_max: float
    sum_max: float
    terms: dict = field(default_factory=dict)

    def contains(self, r1: float, r2: float, tol: float = MEMBERSHIP_TOL) -> bool:
        return (r1 >= -tol and r2 >= -tol and r1 <= self.r1_max + tol
                and r2 <= self.r2_max + tol and r1 + r2 <= self.sum_max + tol)

    def to_dict(self) -> dict:
        return {"r1_max": self.r1_max, "r2_max": self.r2_max, "sum_max": self.sum_max,
                "terms": dict(self.terms)}


_FB_SUBSETS = [
    ("X", "S"), ("V1",), ("V2",), ("Z",), ("Y1",), ("Y2",), ("V1", "V2"),
    ("X", "S", "V1"), ("X", "S", "V2"), ("X", "S", "V1", "V2"),
    ("V1", "Y2"), ("V2", "Y1"), ("V1", "Z"), ("V2", "Z"), ("V1", "V2", "Z"),
    ("V1", "V2", "Y2"), ("V2", "Y2"), ("V1", "V2", "Y1"), ("V1", "Y1"),
]


def _table(joint: JointPMF) -> EntropyTable:
    return EntropyTable(joint, _FB_SUBSETS)


def eval_inner_fb(joint: JointPMF) -> FbInnerPoint:
    """Closed-form feedback bounds for one joint over (S, X, Y1, Y2, Z, V1, V2).

    Each single-user bound is ``I(XS;Vj) - max(I(Vj;Y_other), I(Vj;Z))``,
    which is the same as the minimum of the two differences.
    """
    _check_joint(joint)
    t = _table(joint)
    xs = ("X", "S")
    terms = {
        "I(XS;V1)": t.I(xs, ("V1",)), "I(V1;Y2)": t.I(("V1",), ("Y2",)),
        "I(V1;Z)": t.I(("V1",), ("Z",)),
        "I(XS;V2)": t.I(xs, ("V2",)), "I(V2;Y1)": t.I(("V2",), ("Y1",)),
        "I(V2;Z)": t.I(("V2",), ("Z",)),
        "I(XS;V1V2)": t.I(xs, ("V1", "V2")), "I(V1V2;Z)": t.I(("V1", "V2"), ("Z",)),
    }
    r1 = terms["I(XS;V1)"] - max(terms["I(V1;Y2)"], terms["I(V1;Z)"])
    r2 = terms["I(XS;V2)"] - max(terms["I(V2;Y1)"], terms["I(V2;Z)"])
    s = terms["I(XS;V1V2)"] - terms["I(V1V2;Z)"]
    return FbInnerPoint(positive_part(r1), positive_part(r2), positive_part(s), terms)


# ------------------------------------------------------- linear systems

_TERM_RE = re.compile(r"^\s*([-+]?[0-9./]+)\s*\*\s*([A-Za-z_][A-Za-z0-9_]*)\s*$")


def _fmt(q: Fraction) -> str:
    """Exact decimal when the denominator allows one, ``p/q`` otherwise."""
    d = q.denominator
    twos = fives = 0
    while d % 2 == 0:
        d //= 2
        twos += 1
    while d % 5 == 0:
        d //= 5
        fives += 1
    if d != 1:
        return f"{q.numerator}/{q.denominator}"
    digits = max(twos, fives)
    scaled = q * 10 ** digits
    sign = "-" if scaled < 0 else ""
    n = abs(scaled.numerator)
    if digits == 0:
        return f"{sign}{n}"
    whole, frac = divmod(n, 10 ** digits)
    return f"{sign}{whole}.{frac:0{digits}d}"


Inequality = tuple[tuple[Fraction, ...], Fraction]


@dataclass(frozen=True)
class LinearInequalitySystem:
    """Inequalities ``coeffs . vars <= constant`` with exact rational entries.

    ``infeasible`` is set when elimination produced a contradiction
    (``0 <= negative``); the offending rows are kept in ``contradictions``.
    """

    variables: tuple[str, ...]
    inequalities: tuple[Inequality, ...]
    infeasible: bool = False
    contradictions: tuple[Inequality, ...] = ()
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        n = len(self.variables)
        if len(set(self.variables)) != n:
            raise ValueError("duplicate variable names")
        rows = []
        for coeffs, const in self.inequalities:
            if len(coeffs) != n:
                raise ValueError(f"inequality has {len(coeffs)} coefficients, expected {n}")
            row = tuple(Fraction(c) for c in coeffs), Fraction(const)
            rows.append(row)
        object.__setattr__(self, "inequalities", tuple(rows))

    def __len__(self) -> int:
        return len(self.inequalities)

    def is_feasible_point(self, point: Sequence[float], tol: float = MEMBERSHIP_TOL) -> bool:
        """Membership of a full-dimensional point; always False when infeasible."""
        if self.infeasible:
            return False
        x = np.asarray(point, dtype=float)
        if not self.inequalities:
            return True
        A, b = self.as_arrays()
        return bool(np.all(A @ x <= b + tol))

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        A = np.array([[float(c) for c in co] for co, _ in self.inequalities], dtype=float)
        b = np.array([float(c) for _, c in self.inequalities], dtype=float)
        return A.reshape(len(self.inequalities), len(self.variables)), b

    def to_text(self) -> str:
        """One ``c1*R1 + c2*R2 + ... <= b`` line per inequality."""
        lines = []
        for coeffs, const in self.inequalities:
            lhs = " + ".join(f"{_fmt(c)}*{v}" for c, v in zip(coeffs, self.variables))
            lines.append(f"{lhs} <= {_fmt(const)}")
        if self.infeasible:
            lines.append("# infeasible")
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_text(cls, text: str, variables: Sequence[str] = FB_VARIABLES
                  ) -> "LinearInequalitySystem":
        variables = tuple(variables)
        pos = {v: i for i, v in enumerate(variables)}
        rows = []
        infeasible = False
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                infeasible |= line == "# infeasible"
                continue
            try:
                lhs, rhs = line.split("<=")
                coeffs = [Fraction(0)] * len(variables)
                for part in lhs.split(" + "):
                    m = _TERM_RE.match(part)
                    if not m:
                        raise ValueError(f"bad term {part!r}")
                    coeffs[pos[m.group(2)]] += Fraction(m.group(1))
                rows.append((tuple(coeffs), Fraction(rhs.strip())))
            except (ValueError, KeyError, ZeroDivisionError) as exc:
                raise ValueError(f"line {lineno}: cannot parse {raw!r}: {exc}") from None
        return cls(variables, tuple(rows), infeasible)


def _normalize(coeffs: tuple[Fraction, ...], const: Fraction) -> Inequality:
    scale = max((abs(c) for c in coeffs), default=Fraction(0))
    if scale == 0:
        return coeffs, const
    return tuple(c / scale for c in coeffs), const / scale


def _tidy(rows: Iterable[Inequality]) -> tuple[list[Inequality], list[Inequality]]:
    """Drop trivially true rows, keep the tightest of parallel rows.

    Returns the kept rows in first-seen order and any contradictions.
    """
    best: dict[tuple[Fraction, ...], Fraction] = {}
    order: list[tuple[Fraction, ...]] = []
    bad: list[Inequality] = []
    for coeffs, const in rows:
        coeffs, const = _normalize(coeffs, const)
        if all(c == 0 for c in coeffs):
            if const < 0:
                bad.append((coeffs, const))
            continue
        if coeffs not in best:
            order.append(coeffs)
            best[coeffs] = const
        elif const < best[coeffs]:
            best[coeffs] = const
    return [(c, best[c]) for c in order], bad


def fm_eliminate(system: LinearInequalitySystem, drop: Iterable[str]) -> LinearInequalitySystem:
    """Exact Fourier-Motzkin projection that removes the ``drop`` variables.

    Rows with a positive and a negative coefficient on the eliminated
    variable are combined pairwise; rows without it pass through.
    Contradictions are flagged in ``infeasible`` rather than dropped.
    """
    drop = list(drop)
    unknown = [v for v in drop if v not in system.variables]
    if unknown:
        raise ValueError(f"cannot eliminate unknown variables {unknown}")
    variables = list(system.variables)
    rows, bad = _tidy(system.inequalities)
    bad = list(system.contradictions) + bad
    for v in drop:
        k = variables.index(v)
        pos, neg, keep = [], [], []
        for coeffs, const in rows:
            (pos if coeffs[k] > 0 else neg if coeffs[k] < 0 else keep).append((coeffs, const))
        combined = list(keep)
        for cp, bp in pos:
            for cn, bn in neg:
                a, b = cp[k], -cn[k]
                combined.append((tuple(x / a + y / b for x, y in zip(cp, cn)), bp / a + bn / b))
        rows = [(c[:k] + c[k + 1:], b) for c, b in combined]
        variables.pop(k)
        rows, more = _tidy(rows)
        bad.extend(more)
    meta = dict(system.metadata)
    meta["eliminated"] = list(meta.get("eliminated", [])) + drop
    return LinearInequalitySystem(tuple(variables), tuple(rows), system.infeasible or bool(bad),
                                  tuple(bad), meta)


# -------------------------------------------------------- rate system

@dataclass(frozen=True)
class FbEntropies:
    """The conditional entropies that appear as constants in the rate system."""

    h_v1_xs: float
    h_v2_xs: float
    h_v1v2_xs: float
    h_v1_z: float
    h_v2_z: float
    h_v1v2_z: float
    h_v1_v2y2: float
    h_v2_v1y1: float
    h_v1_y2: float
    h_v2_y1: float


def fb_entropies(joint: JointPMF) -> FbEntropies:
    _check_joint(joint)
    t = _table(joint)
    H = t.H
    return FbEntropies(
        h_v1_xs=H("X", "S", "V1") - H("X", "S"),
        h_v2_xs=H("X", "S", "V2") - H("X", "S"),
        h_v1v2_xs=H("X", "S", "V1", "V2") - H("X", "S"),
        h_v1_z=H("V1", "Z") - H("Z"),
        h_v2_z=H("V2", "Z") - H("Z"),
        h_v1v2_z=H("V1", "V2", "Z") - H("Z"),
        h_v1_v2y2=H("V1", "V2", "Y2") - H("V2", "Y2"),
        h_v2_v1y1=H("V1", "V2", "Y1") - H("V1", "Y1"),
        h_v1_y2=H("V1", "Y2") - H("Y2"),
        h_v2_y1=H("V2", "Y1") - H("Y1"),
    )


def build_fb_constraints(joint: JointPMF, literal: bool = False) -> LinearInequalitySystem:
    """Rate system over ``(R1, R2, Rp1, Rp2)`` for one joint.

    Rows, in order: reconciliation lower bounds on ``Rp``, secrecy upper
    bounds against ``Z``, decoding bounds against the other receiver, and
    non-negativity.  ``literal=True`` uses the second decoding row as it
    is printed (``R1 + Rp1 <= H(V2|V1,Y1)``) instead of the symmetric
    ``R2 + Rp2 <= H(V2|V1,Y1)``.
    """
    e = fb_entropies(joint)
    q = to_rational
    F = Fraction
    one, zero = F(1), F(0)
    rows = [
        ((zero, zero, -one, zero), -q(e.h_v1_xs)),
        ((zero, zero, zero, -one), -q(e.h_v2_xs)),
        ((zero, zero, -one, -one), -q(e.h_v1v2_xs)),
        ((one, zero, one, zero), q(e.h_v1_z)),
        ((zero, one, zero, one), q(e.h_v2_z)),
        ((one, one, one, one), q(e.h_v1v2_z)),
        ((one, zero, one, zero), q(e.h_v1_v2y2)),
        (((one, zero, one, zero) if literal else (zero, one, zero, one)), q(e.h_v2_v1y1)),
    ]
    for k in range(4):
        c = [zero] * 4
        c[k] = -one
        rows.append((tuple(c), zero))
    meta = {"reading": "literal" if literal else "symmetric",
            "second_decoding_row": LITERAL_SECOND_LINE if literal else SYMMETRIC_SECOND_LINE,
            "printed_second_decoding_row": LITERAL_SECOND_LINE}
    return LinearInequalitySystem(FB_VARIABLES, tuple(rows), metadata=meta)


def project_fb_region(joint: JointPMF, literal: bool = False) -> LinearInequalitySystem:
    """The rate system with the public rates eliminated, over ``(R1, R2)``."""
    return fm_eliminate(build_fb_constraints(joint, literal), ["Rp1", "Rp2"])


# ------------------------------------------------------------ comparison

@dataclass(frozen=True)
class EquivalenceReport:
    """Point-by-point comparison of the projected and closed-form regions."""

    agree: bool
    grid_step: float
    n_points: int
    disagreements: list
    n_disagreements: int
    identity_residuals: tuple[float, float]
    identity_ok: bool
    closed_form: FbInnerPoint
    projected: str
    projected_infeasible: bool
    projected_empty: bool
    conditional_dependence: float
    clipped: tuple[bool, bool, bool]
    metadata: dict

    def to_dict(self) -> dict:
        return {
            "agree": self.agree, "grid_step": self.grid_step, "n_points": self.n_points,
            "n_disagreements": self.n_disagreements,
            "disagreements": [list(p) for p in self.disagreements],
            "identity_residuals": list(self.identity_residuals),
            "identity_ok": self.identity_ok, "closed_form": self.closed_form.to_dict(),
            "projected": self.projected, "projected_infeasible": self.projected_infeasible,
            "projected_empty": self.projected_empty,
            "conditional_dependence": self.conditional_dependence,
            "clipped": list(self.clipped), "metadata": dict(self.metadata),
        }


def verify_fm_matches_closed_form(joint: JointPMF, grid_step: float = 0.01,
                                  tol: float = MEMBERSHIP_TOL, literal: bool = False,
                                  max_listed: int = 20) -> EquivalenceReport:
    """Compare FM-projected and closed-form membership on a rate grid.

    The grid covers ``[0, top]^2`` where ``top`` clears both regions by a
    few steps.  Also reports ``H(V1|V2,Y2) - H(V1|Y2)`` and its mirror,
    the identity that links the decoding rows to the closed form, and
    ``I(V1;V2|X,S)``, which the sum-rate comparison depends on.

    A single-user bound that is negative before ``[.]^+`` leaves the
    closed form with the segment on the other axis while the projected
    system is empty; ``clipped`` and ``projected_empty`` expose that case.
    """
    closed = eval_inner_fb(joint)
    proj = project_fb_region(joint, literal)
    e = fb_entropies(joint)
    resid = (e.h_v1_v2y2 - e.h_v1_y2, e.h_v2_v1y1 - e.h_v2_y1)
    t = closed.terms
    raw = (t["I(XS;V1)"] - max(t["I(V1;Y2)"], t["I(V1;Z)"]),
           t["I(XS;V2)"] - max(t["I(V2;Y1)"], t["I(V2;Z)"]),
           t["I(XS;V1V2)"] - t["I(V1V2;Z)"])
    top = max(closed.r1_max, closed.r2_max, closed.sum_max, 0.0)
    if proj.inequalities and not proj.infeasible:
        A, b = proj.as_arrays()
        for k in range(2):
            # upper ends of the projected region along each axis
            rows = A[:, k] > 0
            if rows.any():
                top = max(top, float(np.max(b[rows] / A[rows, k])))
    m = int(np.ceil(top / grid_step)) + 3
    ticks = np.arange(m + 1) * grid_step
    g1, g2 = np.meshgrid(ticks, ticks, indexing="ij")
    pts = np.stack([g1.ravel(), g2.ravel()], axis=1)
    cf = ((pts[:, 0] <= closed.r1_max + tol) & (pts[:, 1] <= closed.r2_max + tol)
          & (pts.sum(axis=1) <= closed.sum_max + tol))
    if proj.infeasible:
        fm = np.zeros(len(pts), dtype=bool)
    elif proj.inequalities:
        A, b = proj.as_arrays()
        fm = np.all(pts @ A.T <= b + tol, axis=1)
    else:
        fm = np.ones(len(pts), dtype=bool)
    diff = np.flatnonzero(cf != fm)
    listed = [(round(float(pts[i, 0]), 10), round(float(pts[i, 1]), 10), bool(cf[i]), bool(fm[i]))
              for i in diff[:max_listed]]
    dep = e.h_v1_xs + e.h_v2_xs - e.h_v1v2_xs
    # eliminating the remaining rates too decides emptiness exactly
    empty = fm_eliminate(proj, list(proj.variables)).infeasible
    meta = dict(proj.metadata)
    return EquivalenceReport(
        agree=len(diff) == 0, grid_step=grid_step, n_points=len(pts), disagreements=listed,
        n_disagreements=int(len(diff)), identity_residuals=resid,
        identity_ok=max(abs(r) for r in resid) <= 1e-10, closed_form=closed,
        projected=proj.to_text(), projected_infeasible=proj.infeasible,
        projected_empty=empty, conditional_dependence=float(dep), clipped=tuple(bool(r < 0) for r in raw),
        metadata=meta)


__all__ = [
    "EquivalenceReport", "FB_VARIABLES", "FbEntropies", "FbInnerPoint", "LinearInequalitySystem",
    "build_fb_constraints", "eval_inner_fb", "fb_entropies", "fm_eliminate", "project_fb_region",
    "to_rational", "verify_fm_matches_closed_form",
]
