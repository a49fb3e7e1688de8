"""Exact finite-alphabet distributions over named variables.

All information measures are in bits and use the conventions
``0 log 0 = 0`` and ``0 log(0/0) = 0``.  Distributions are dense
``numpy`` tensors with one axis per variable, in declaration order.
"""
from __future__ import annotations

import string
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import kernels

MAX_CELLS = 10**7
NORM_TOL = 1e-12


class PMFError(ValueError):
    """Raised for malformed distributions or bad variable references."""


@dataclass(frozen=True)
class Variable:
    name: str
    card: int

    def __post_init__(self):
        if int(self.card) < 1:
            raise PMFError(f"variable {self.name!r} needs cardinality >= 1, got {self.card}")


@dataclass
class ValidationResult:
    ok: bool
    violations: list[str] = field(default_factory=list)

    def __bool__(self):
        return self.ok


def _as_names(vars_: Iterable[str] | str) -> tuple[str, ...]:
    if isinstance(vars_, str):
        return (vars_,)
    out = []
    for v in vars_:
        out.append(v.name if isinstance(v, Variable) else str(v))
    return tuple(out)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class JointPMF:
    """Joint probability table over ``variables``.

    The constructor only checks that the table shape matches the declared
    cardinalities; use :func:`validate` for the full diagnostic, or
    :meth:`from_table` to build a checked, normalized instance.
    """

    variables: tuple[Variable, ...]
    mass: np.ndarray

    def __post_init__(self):
        variables = tuple(self.variables)
        names = [v.name for v in variables]
        if len(set(names)) != len(names):
            raise PMFError(f"duplicate variable names in {names}")
        shape = tuple(v.card for v in variables)
        if int(np.prod(shape, dtype=np.int64)) > MAX_CELLS:
            raise PMFError(f"alphabet product {shape} exceeds {MAX_CELLS} cells")
        object.__setattr__(self, "variables", variables)
        object.__setattr__(self, "mass", _readonly(self.mass))

    @classmethod
    def from_table(cls, variables: Sequence[Variable | tuple[str, int]], table,
                   normalize: bool = False) -> "JointPMF":
        vs = tuple(v if isinstance(v, Variable) else Variable(*v) for v in variables)
        mass = np.asarray(table, dtype=float)
        shape = tuple(v.card for v in vs)
        if mass.shape != shape:
            mass = mass.reshape(shape)
        if normalize:
            total = mass.sum()
            if total <= 0:
                raise PMFError("cannot normalize a table with no positive mass")
            mass = mass / total
        pmf = cls(vs, mass)
        res = validate(pmf)
        if not res.ok:
            raise PMFError("; ".join(res.violations))
        return pmf

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(v.card for v in self.variables)

    def axis(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise PMFError(f"unknown variable {name!r}; have {self.names}") from None

    def axes(self, names: Iterable[str]) -> tuple[int, ...]:
        return tuple(self.axis(n) for n in _as_names(names))

    def var(self, name: str) -> Variable:
        return self.variables[self.axis(name)]

    def transpose(self, order: Sequence[str]) -> "JointPMF":
        """Same distribution with axes reordered to ``order``."""
        order = _as_names(order)
        if sorted(order) != sorted(self.names):
            raise PMFError(f"order {order} is not a permutation of {self.names}")
        axes = self.axes(order)
        return JointPMF(tuple(self.variables[a] for a in axes), np.transpose(self.mass, axes))


@dataclass(frozen=True, eq=False)
class ConditionalPMF:
    """Kernel p(target | given) stored with axes ``given + target``.

    ``defined`` flags the conditioning cells that carry a real row; the
    remaining cells (zero conditioning mass) are unconstrained and ignored
    by every check.
    """

    target: tuple[Variable, ...]
    given: tuple[Variable, ...]
    table: np.ndarray
    defined: np.ndarray | None = None

    def __post_init__(self):
        target, given = tuple(self.target), tuple(self.given)
        tn = {v.name for v in target}
        gn = {v.name for v in given}
        if tn & gn:
            raise PMFError(f"target and given overlap: {sorted(tn & gn)}")
        shape = tuple(v.card for v in given) + tuple(v.card for v in target)
        table = np.asarray(self.table, dtype=float)
        if table.shape != shape:
            try:
                table = table.reshape(shape)
            except ValueError:
                raise PMFError(f"kernel table shape {table.shape} does not match {shape}") from None
        defined = self.defined
        if defined is None:
            defined = np.ones(tuple(v.card for v in given), dtype=bool)
        defined = np.asarray(defined, dtype=bool).reshape(tuple(v.card for v in given))
        defined.setflags(write=False)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "given", given)
        object.__setattr__(self, "table", _readonly(table))
        object.__setattr__(self, "defined", defined)

    @classmethod
    def from_table(cls, target, given, table) -> "ConditionalPMF":
        tv = tuple(v if isinstance(v, Variable) else Variable(*v) for v in target)
        gv = tuple(v if isinstance(v, Variable) else Variable(*v) for v in given)
        k = cls(tv, gv, table)
        bad = kernel_violations(k)
        if bad:
            raise PMFError("; ".join(bad))
        return k

    @property
    def target_names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.target)

    @property
    def given_names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.given)

    def row(self, *given_values) -> np.ndarray:
        return self.table[tuple(given_values)]


def kernel_violations(k: ConditionalPMF, tol: float = NORM_TOL) -> list[str]:
    """Row-normalization problems of a kernel, one message per bad cell."""
    out = []
    if np.any(k.table < 0):
        out.append("negative mass in kernel")
    nt = len(k.target)
    sums = k.table.reshape(k.defined.shape + (-1,)).sum(axis=-1) if nt else np.ones(k.defined.shape)
    bad = np.argwhere(k.defined & (np.abs(sums - 1.0) > tol))
    for cell in bad[:10]:
        cell = tuple(int(c) for c in cell)
        out.append(f"row {dict(zip(k.given_names, cell))} sums to {sums[cell]:.12g} != 1")
    return out


def validate(pmf: JointPMF, tol: float = NORM_TOL) -> ValidationResult:
    """Diagnose a joint table; never raises."""
    violations = []
    shape = tuple(v.card for v in pmf.variables)
    mass = np.asarray(pmf.mass)
    if mass.shape != shape:
        violations.append(f"shape mismatch: table {mass.shape} vs declared {shape}")
        return ValidationResult(False, violations)
    if not np.all(np.isfinite(mass)):
        violations.append("non-finite mass")
    if np.any(mass < 0):
        violations.append(f"negative mass (min {mass.min():.6g})")
    total = float(mass.sum())
    if abs(total - 1.0) > tol:
        violations.append(f"mass sum {total:.12g} != 1")
    return ValidationResult(not violations, violations)


def marginalize(pmf: JointPMF, keep: Iterable[str]) -> JointPMF:
    keep = _as_names(keep)
    axes = pmf.axes(keep)
    drop = tuple(a for a in range(len(pmf.variables)) if a not in axes)
    m = pmf.mass.sum(axis=drop) if drop else pmf.mass
    # sum keeps remaining axes in original order
    kept_sorted = sorted(axes)
    m = np.transpose(m, [kept_sorted.index(a) for a in axes])
    return JointPMF(tuple(pmf.variables[a] for a in axes), m)


def condition(pmf: JointPMF, target: Iterable[str], given: Iterable[str]) -> ConditionalPMF:
    target, given = _as_names(target), _as_names(given)
    if set(target) & set(given):
        raise PMFError(f"target and given overlap: {sorted(set(target) & set(given))}")
    if not target:
        raise PMFError("empty target set")
    joint = marginalize(pmf, given + target).mass
    ng = len(given)
    pg = joint.reshape(joint.shape[:ng] + (-1,)).sum(axis=-1)
    defined = pg > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        table = joint / pg.reshape(pg.shape + (1,) * len(target))
    table = np.where(defined.reshape(defined.shape + (1,) * len(target)), table, 0.0)
    # unconstrained rows get a uniform placeholder so the table is a kernel everywhere
    tcard = int(np.prod([pmf.var(t).card for t in target]))
    table = np.where(defined.reshape(defined.shape + (1,) * len(target)), table, 1.0 / tcard)
    return ConditionalPMF(tuple(pmf.var(t) for t in target), tuple(pmf.var(g) for g in given),
                          table, defined)


def compose(factors: Sequence[ConditionalPMF], root: JointPMF) -> JointPMF:
    """Chain-rule product ``root * f1 * f2 * ...``.

    Each factor may condition on root variables and on targets of earlier
    factors.  New variables are appended in factor order.
    """
    variables = list(root.variables)
    mass = np.asarray(root.mass)
    letters = string.ascii_letters
    for f in factors:
        names = [v.name for v in variables]
        for g in f.given:
            if g.name not in names:
                raise PMFError(f"dangling conditioning variable {g.name!r}")
            if variables[names.index(g.name)].card != g.card:
                raise PMFError(f"cardinality mismatch for {g.name!r}")
        for t in f.target:
            if t.name in names:
                raise PMFError(f"duplicate target {t.name!r}")
        if len(variables) + len(f.target) > len(letters):
            raise PMFError("too many variables for composition")
        cur = letters[: len(variables)]
        new = letters[len(variables): len(variables) + len(f.target)]
        fsub = "".join(cur[names.index(g.name)] for g in f.given) + new
        mass = np.einsum(f"{cur},{fsub}->{cur}{new}", mass, f.table)
        variables.extend(f.target)
    return JointPMF(tuple(variables), mass)


def _entropy_of(pmf: JointPMF, names: tuple[str, ...]) -> float:
    if not names:
        return 0.0
    return float(kernels.marginal_entropies(pmf.mass, [pmf.axes(names)])[0])


def entropy(pmf: JointPMF, vars: Iterable[str], given: Iterable[str] = ()) -> float:
    """H(vars | given) in bits."""
    vars, given = _as_names(vars), _as_names(given)
    if not vars:
        raise PMFError("entropy needs a nonempty variable set")
    if set(vars) & set(given):
        raise PMFError("vars and given overlap")
    axes_all = pmf.axes(vars + given)
    if given:
        h = kernels.marginal_entropies(pmf.mass, [axes_all, pmf.axes(given)])
        val = float(h[0] - h[1])
    else:
        val = float(kernels.marginal_entropies(pmf.mass, [axes_all])[0])
    return 0.0 if -1e-12 < val < 0 else val


def mutual_information(pmf: JointPMF, a: Iterable[str], b: Iterable[str],
                       given: Iterable[str] = ()) -> float:
    """I(a; b | given) in bits."""
    a, b, given = _as_names(a), _as_names(b), _as_names(given)
    if not a or not b:
        raise PMFError("mutual information needs nonempty argument sets")
    if set(a) & set(b) or set(a) & set(given) or set(b) & set(given):
        raise PMFError("argument sets must be pairwise disjoint")
    masks = [pmf.axes(a + given), pmf.axes(b + given), pmf.axes(a + b + given)]
    if given:
        masks.append(pmf.axes(given))
    h = kernels.marginal_entropies(pmf.mass, masks)
    val = float(h[0] + h[1] - h[2] - (h[3] if given else 0.0))
    return 0.0 if -1e-12 < val < 0 else val


class EntropyTable:
    """Batched entropy lookups on one joint.

    Collects every marginal an evaluator needs and computes them through a
    single cached reduction plan; this is where the region evaluators and
    optimizers spend their time.
    """

    __slots__ = ("_h",)

    def __init__(self, pmf: JointPMF, subsets: Iterable[Iterable[str]]):
        subsets = [tuple(s) for s in subsets]
        vals = entropies_by_name(pmf.names, pmf.mass, subsets)
        self._h = {frozenset(k): float(v) for k, v in zip(subsets, vals)}
        self._h[frozenset()] = 0.0

    def H(self, *names: str) -> float:
        return self._h[frozenset(names)]

    def I(self, a: Sequence[str], b: Sequence[str], given: Sequence[str] = ()) -> float:
        h = self._h
        return (h[frozenset((*a, *given))] + h[frozenset((*b, *given))]
                - h[frozenset((*a, *b, *given))] - h[frozenset(given)])


_MASK_CACHE: dict = {}


def entropies_by_name(names: tuple[str, ...], mass: np.ndarray, subsets) -> np.ndarray:
    """Marginal entropies of ``mass`` (axes named ``names``) for name subsets."""
    key = (names, tuple(subsets))
    masks = _MASK_CACHE.get(key)
    if masks is None:
        pos = {n: i for i, n in enumerate(names)}
        try:
            masks = tuple(tuple(sorted(pos[n] for n in s)) for s in subsets)
        except KeyError as exc:
            raise PMFError(f"unknown variable {exc.args[0]!r}; have {names}") from None
        if len(_MASK_CACHE) > 4096:
            _MASK_CACHE.clear()
        _MASK_CACHE[key] = masks
    return kernels.marginal_entropies(mass, masks)


def random_joint(rng: np.random.Generator, cards: Sequence[int],
                 names: Sequence[str] | None = None, alpha: float = 1.0) -> JointPMF:
    """Dirichlet-random joint, used by tests and benchmarks."""
    names = names or [f"V{i}" for i in range(len(cards))]
    size = int(np.prod(cards))
    mass = rng.dirichlet(np.full(size, alpha)).reshape(tuple(cards))
    return JointPMF(tuple(Variable(n, c) for n, c in zip(names, cards)), mass)
