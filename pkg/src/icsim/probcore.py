"""Finite probability substrate: joint sources, information densities, spectra.

All logarithms are base 2 and all densities are measured in bits.  Spectra are
finite atom lists sorted by value; tail queries follow the one-sided
conventions

    lower eps-tail:  sup { lam : Pr[D > lam] > eps }
    upper eps-tail:  inf { lam : Pr[D > lam] < eps }

evaluated exactly on the atom grid.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    MismatchedSupport,
    OutOfRange,
    ZeroMassAtom,
)

#: absolute tolerance for "sums to one" checks
NORM_TOL = 1e-9
#: atoms whose values agree within this tolerance are merged
MERGE_TOL = 1e-12
#: tolerance used when comparing tail masses against a threshold
TAIL_TOL = 1e-12

LOG2 = math.log(2.0)


def _log2(p: float) -> float:
    if p <= 0.0:
        raise ZeroMassAtom("density requested at a zero-probability point")
    return math.log2(p)


# ---------------------------------------------------------------------------
# distributions and sources
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FiniteDistribution:
    """A probability mass function on an explicit finite universe."""

    symbols: tuple
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "probs", probs)
        if len(self.symbols) != probs.shape[0]:
            raise MismatchedSupport("symbol list and probability vector disagree")
        if np.any(probs < -NORM_TOL):
            raise OutOfRange("negative probability mass")
        if abs(float(probs.sum()) - 1.0) > NORM_TOL:
            raise OutOfRange("probabilities do not sum to one")
        if len(set(self.symbols)) != len(self.symbols):
            raise MismatchedSupport("duplicate symbols in universe")

    @cached_property
    def index(self) -> dict:
        return {s: i for i, s in enumerate(self.symbols)}

    def prob(self, symbol) -> float:
        return float(self.probs[self.index[symbol]])

    @classmethod
    def from_counts(cls, counts: dict) -> "FiniteDistribution":
        symbols = tuple(sorted(counts, key=repr))
        total = float(sum(counts.values()))
        probs = np.array([counts[s] / total for s in symbols])
        return cls(symbols, probs)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "FiniteDistribution":
        symbols = tuple(sorted(mapping, key=repr))
        probs = np.array([float(mapping[s]) for s in symbols])
        return cls(symbols, probs)


def tv_distance(p: FiniteDistribution, q: FiniteDistribution) -> float:
    """Total variation distance between two pmfs on the same universe."""
    if set(p.symbols) != set(q.symbols):
        raise MismatchedSupport("total variation needs a common support universe")
    qv = np.array([q.prob(s) for s in p.symbols])
    return 0.5 * float(np.abs(p.probs - qv).sum())


@dataclass(frozen=True)
class JointSource:
    """A joint pmf P_XY on a pair of finite alphabets.

    ``mass[i, j]`` is the probability of ``(x_alphabet[i], y_alphabet[j])``.
    """

    x_alphabet: tuple
    y_alphabet: tuple
    mass: np.ndarray

    def __post_init__(self):
        mass = np.asarray(self.mass, dtype=float)
        object.__setattr__(self, "mass", mass)
        if mass.shape != (len(self.x_alphabet), len(self.y_alphabet)):
            raise MismatchedSupport("mass table shape does not match alphabets")
        if np.any(mass < 0):
            raise OutOfRange("negative probability mass")
        if abs(float(mass.sum()) - 1.0) > NORM_TOL:
            raise OutOfRange("joint mass does not sum to one")

    @cached_property
    def x_index(self) -> dict:
        return {s: i for i, s in enumerate(self.x_alphabet)}

    @cached_property
    def y_index(self) -> dict:
        return {s: i for i, s in enumerate(self.y_alphabet)}

    @cached_property
    def p_x(self) -> np.ndarray:
        return self.mass.sum(axis=1)

    @cached_property
    def p_y(self) -> np.ndarray:
        return self.mass.sum(axis=0)

    @cached_property
    def p_x_given_y(self) -> np.ndarray:
        """Column-conditional table, entry (i, j) = P(x_i | y_j)."""
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(self.p_y > 0, self.mass / self.p_y, 0.0)
        return out

    @cached_property
    def p_y_given_x(self) -> np.ndarray:
        """Row-conditional table, entry (i, j) = P(y_j | x_i)."""
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(self.p_x[:, None] > 0, self.mass / self.p_x[:, None], 0.0)
        return out

    def prob(self, x, y) -> float:
        return float(self.mass[self.x_index[x], self.y_index[y]])

    @cached_property
    def _flat_cum(self) -> np.ndarray:
        return np.cumsum(self.mass.ravel())

    def sample(self, rng: np.random.Generator, size: int | None = None):
        """Draw (x, y) pairs; returns index pairs, not symbols."""
        u = rng.random(size) if size is not None else rng.random()
        idx = np.searchsorted(self._flat_cum, u, side="right")
        idx = np.minimum(idx, self.mass.size - 1)
        return np.unravel_index(idx, self.mass.shape)

    @classmethod
    def from_json(cls, doc: str | dict) -> "JointSource":
        """Build a source from a JSON document.

        Expected keys: ``x_alphabet``, ``y_alphabet`` and a row-major ``mass``
        list of lists.
        """
        if isinstance(doc, str):
            doc = json.loads(doc)
        def _freeze(sym):
            return tuple(sym) if isinstance(sym, list) else sym
        return cls(
            x_alphabet=tuple(_freeze(s) for s in doc["x_alphabet"]),
            y_alphabet=tuple(_freeze(s) for s in doc["y_alphabet"]),
            mass=np.array(doc["mass"], dtype=float),
        )

    def to_json(self) -> dict:
        return {
            "x_alphabet": list(self.x_alphabet),
            "y_alphabet": list(self.y_alphabet),
            "mass": self.mass.tolist(),
        }


def dsbs_source(q: float) -> JointSource:
    """Doubly symmetric binary source: X uniform, Y = X flipped w.p. q."""
    if not 0.0 <= q <= 1.0:
        raise OutOfRange("crossover probability must lie in [0, 1]")
    mass = np.array([[(1 - q) / 2, q / 2], [q / 2, (1 - q) / 2]])
    return JointSource((0, 1), (0, 1), mass)


def product_source(base: JointSource, n: int) -> JointSource:
    """n-fold iid product of a joint source; alphabets become tuples."""
    if n < 1:
        raise OutOfRange("product power must be at least 1")
    xs = [(s,) for s in base.x_alphabet]
    ys = [(s,) for s in base.y_alphabet]
    mass = base.mass.copy()
    for _ in range(n - 1):
        xs = [u + (s,) for u in xs for s in base.x_alphabet]
        ys = [v + (s,) for v in ys for s in base.y_alphabet]
        mass = np.kron(mass, base.mass)
    return JointSource(tuple(xs), tuple(ys), mass)


# ---------------------------------------------------------------------------
# densities
# ---------------------------------------------------------------------------

DENSITY_KINDS = (
    "joint",          # h(x, y)
    "cond_x_given_y",  # h(x | y)
    "cond_y_given_x",  # h(y | x)
    "sum",            # h(x | y) + h(y | x)
    "mutual",         # i(x ^ y) = h(x) - h(x | y)
)


def entropy_density(source: JointSource, kind: str, x, y) -> float:
    """Pointwise entropy density of ``(x, y)`` under the source, in bits."""
    i, j = source.x_index[x], source.y_index[y]
    pxy = float(source.mass[i, j])
    if pxy <= 0.0:
        raise ZeroMassAtom(f"({x!r}, {y!r}) has zero probability")
    if kind == "joint":
        return -_log2(pxy)
    if kind == "cond_x_given_y":
        return -_log2(float(source.p_x_given_y[i, j]))
    if kind == "cond_y_given_x":
        return -_log2(float(source.p_y_given_x[i, j]))
    if kind == "sum":
        return (-_log2(float(source.p_x_given_y[i, j]))
                - _log2(float(source.p_y_given_x[i, j])))
    if kind == "mutual":
        return _log2(float(source.p_x_given_y[i, j])) - _log2(float(source.p_x[i]))
    raise OutOfRange(f"unknown density kind {kind!r}")


def ic_density(law, tau, x, y) -> float:
    """Information complexity density of a transcript at an input pair.

    ``law`` is any object exposing ``transcript_index``, ``p_tau_given_xy``,
    ``p_tau_given_x``, ``p_tau_given_y`` and a ``source``.
    """
    t = law.transcript_index[tau]
    i, j = law.source.x_index[x], law.source.y_index[y]
    pxy = float(law.p_tau_given_xy[t, i, j])
    if pxy <= 0.0 or float(law.source.mass[i, j]) <= 0.0:
        raise ZeroMassAtom("transcript has zero probability at this input pair")
    px = float(law.p_tau_given_x[t, i])
    py = float(law.p_tau_given_y[t, j])
    return math.log2(pxy / px) + math.log2(pxy / py)


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MomentSummary:
    mean: float
    variance: float
    third_central: float


@dataclass(frozen=True)
class SpectrumTable:
    """A finite information spectrum: sorted atom values with probabilities."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)
        if values.shape != probs.shape or values.ndim != 1:
            raise MismatchedSupport("spectrum arrays must be equal-length vectors")
        if values.size == 0:
            raise OutOfRange("a spectrum needs at least one atom")
        if np.any(np.diff(values) <= 0):
            raise OutOfRange("spectrum values must be strictly increasing")
        if np.any(probs < 0):
            raise OutOfRange("negative spectrum mass")
        if abs(float(probs.sum()) - 1.0) > NORM_TOL:
            raise OutOfRange("spectrum mass does not sum to one")

    @classmethod
    def from_atoms(cls, values: Iterable[float], probs: Iterable[float],
                   merge_tol: float = MERGE_TOL) -> "SpectrumTable":
        """Sort atoms, merge values that coincide within ``merge_tol``."""
        pairs = sorted(zip(values, probs))
        merged_v: list[float] = []
        merged_p: list[float] = []
        for v, p in pairs:
            if p < 0:
                raise OutOfRange("negative spectrum mass")
            if merged_v and v - merged_v[-1] <= merge_tol:
                merged_p[-1] += p
            else:
                merged_v.append(v)
                merged_p.append(p)
        return cls(np.array(merged_v), np.array(merged_p))

    @cached_property
    def _tail_after(self) -> np.ndarray:
        """Entry i holds Pr[D > values[i]]."""
        rev = np.cumsum(self.probs[::-1])[::-1]
        return np.concatenate([rev[1:], [0.0]])

    def tail_prob(self, lam: float) -> float:
        """Pr[D > lam]."""
        return float(self.probs[self.values > lam].sum())

    def eps_tail(self, eps: float, side: str) -> float:
        """One-sided eps-tail of the spectrum.

        For an empty upper query (no lambda qualifies) returns ``inf``; the
        lower tail always resolves to an atom, falling back to the smallest
        atom when the tail is empty.
        """
        if not 0.0 <= eps < 1.0:
            raise OutOfRange("eps must lie in [0, 1)")
        tails = self._tail_after
        if side == "lower":
            idx = np.nonzero(tails <= eps + TAIL_TOL)[0]
            return float(self.values[idx[0]])
        if side == "upper":
            idx = np.nonzero(tails < eps - TAIL_TOL)[0]
            if idx.size == 0:
                return math.inf
            return float(self.values[idx[0]])
        raise OutOfRange(f"unknown side {side!r}")

    def sup_tail_at_least(self, level: float) -> float:
        """sup { lam : Pr[D > lam] >= level }, the weak-inequality variant."""
        if level <= 0.0:
            raise OutOfRange("level must be positive")
        tails = self._tail_after
        idx = np.nonzero(tails < level - TAIL_TOL)[0]
        if idx.size == 0:
            return math.inf
        return float(self.values[idx[0]])

    def moments(self) -> MomentSummary:
        mean = float(np.dot(self.values, self.probs))
        d = self.values - mean
        var = float(np.dot(d * d, self.probs))
        third = float(np.dot(d * d * d, self.probs))
        return MomentSummary(mean, var, third)

    def convolve(self, other: "SpectrumTable",
                 merge_tol: float = 1e-9) -> "SpectrumTable":
        """Spectrum of the sum of two independent densities."""
        v = (self.values[:, None] + other.values[None, :]).ravel()
        p = (self.probs[:, None] * other.probs[None, :]).ravel()
        return SpectrumTable.from_atoms(v, p, merge_tol=merge_tol)

    def convolve_n(self, n: int, merge_tol: float = 1e-9) -> "SpectrumTable":
        """Exact n-fold self-convolution (iid sum of n copies)."""
        if n < 1:
            raise OutOfRange("convolution power must be at least 1")
        out = self
        for _ in range(n - 1):
            out = out.convolve(self, merge_tol=merge_tol)
        return out

    def scale(self, c: float) -> "SpectrumTable":
        if c <= 0:
            raise OutOfRange("scale factor must be positive")
        return SpectrumTable(self.values * c, self.probs.copy())

    def mix(self, other: "SpectrumTable", p: float) -> "SpectrumTable":
        """Mixture: this spectrum with weight p, the other with 1 - p."""
        if not 0.0 <= p <= 1.0:
            raise OutOfRange("mixture weight must lie in [0, 1]")
        return SpectrumTable.from_atoms(
            np.concatenate([self.values, other.values]),
            np.concatenate([self.probs * p, other.probs * (1 - p)]),
        )

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return rng.choice(self.values, size=size, p=self.probs)

    def to_csv(self, path=None) -> str:
        """Write ``value,prob`` rows; returns the CSV text."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["value", "prob"])
        for v, p in zip(self.values, self.probs):
            writer.writerow([repr(float(v)), repr(float(p))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def spectrum(obj, selector: str, **kw) -> SpectrumTable:
    """Information spectrum of a source or a transcript law.

    For a :class:`JointSource` the selector is one of the entropy-density
    kinds.  Any other object is asked for its own ``spectrum`` method, which
    covers transcript laws and region-aggregated protocol descriptions.
    """
    if isinstance(obj, JointSource):
        if selector not in DENSITY_KINDS:
            raise OutOfRange(f"unknown density kind {selector!r}")
        vals, probs = [], []
        for i, x in enumerate(obj.x_alphabet):
            for j, y in enumerate(obj.y_alphabet):
                p = float(obj.mass[i, j])
                if p <= 0.0:
                    continue
                vals.append(entropy_density(obj, selector, x, y))
                probs.append(p)
        return SpectrumTable.from_atoms(vals, probs)
    return obj.spectrum(selector, **kw)


def moments(spec: SpectrumTable) -> MomentSummary:
    return spec.moments()


def eps_tail(spec: SpectrumTable, eps: float, side: str) -> float:
    return spec.eps_tail(eps, side)


# ---------------------------------------------------------------------------
# slicing and the Gaussian tail inverse
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SliceConfig:
    """Partition of a density range into equal slices of width ``delta``.

    Slice i (1-based) covers [lambda_min + (i-1) delta, lambda_min + i delta),
    clipped at ``lambda_max``; everything outside [lambda_min, lambda_max)
    is the tail slice 0.
    """

    lambda_min: float
    lambda_max: float
    delta: float
    gamma: float

    def __post_init__(self):
        if not self.lambda_max > self.lambda_min:
            raise OutOfRange("lambda_max must exceed lambda_min")
        if not self.delta > 0:
            raise OutOfRange("slice width must be positive")
        if self.gamma < 0:
            raise OutOfRange("gamma must be nonnegative")

    @property
    def n_slices(self) -> int:
        return int(math.ceil((self.lambda_max - self.lambda_min) / self.delta - 1e-12))

    def slice_of(self, value: float) -> int:
        """Slice index of a density value; 0 is the tail slice."""
        if value < self.lambda_min or value >= self.lambda_max:
            return 0
        i = int((value - self.lambda_min) // self.delta) + 1
        return min(i, self.n_slices)

    def slice_floor(self, i: int) -> float:
        if not 1 <= i <= self.n_slices:
            raise OutOfRange("slice index out of range")
        return self.lambda_min + (i - 1) * self.delta

    def tail_mass(self, spec: SpectrumTable) -> float:
        """Probability that the spectrum falls in the tail slice."""
        mask = (spec.values < self.lambda_min) | (spec.values >= self.lambda_max)
        return float(spec.probs[mask].sum())


def auto_slice_config(spec: SpectrumTable, gamma: float = 4.0,
                      sigmas: float = 3.0) -> SliceConfig:
    """Slice configuration centred on the spectrum mean.

    Covers mean +- ``sigmas`` standard deviations clipped to the atom range,
    with integer slice width about the square root of the span.
    """
    ms = spec.moments()
    sd = math.sqrt(max(ms.variance, 0.0))
    lo = max(float(spec.values[0]), ms.mean - sigmas * sd)
    hi = min(float(spec.values[-1]), ms.mean + sigmas * sd)
    # half-open slices: nudge the ceiling so the top atom is covered
    hi = hi + 1e-9
    span = hi - lo
    delta = max(1, int(math.ceil(math.sqrt(span))))
    return SliceConfig(lambda_min=lo, lambda_max=hi, delta=float(delta),
                       gamma=gamma)


def q_func(x: float) -> float:
    """Standard normal upper tail probability."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def q_inv(eps: float, tol: float = 1e-10) -> float:
    """Inverse of the standard normal tail, by bisection on erfc."""
    if not 0.0 < eps < 1.0:
        raise OutOfRange("q_inv needs eps strictly inside (0, 1)")
    lo, hi = -40.0, 40.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if q_func(mid) > eps:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
