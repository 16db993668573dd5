"""Regression data for sparse DDE identification.

Delayed views of a sampled series, finite-difference derivative estimates and
the delay-augmented candidate library.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "TimeSeries",
    "DelayedView",
    "HillTerm",
    "LibrarySpec",
    "Factor",
    "Term",
    "DesignMatrix",
    "delayed_samples",
    "estimate_derivatives",
    "build_library",
    "column_count",
    "evaluate_term",
]


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly sampled trajectory; rows may start at negative times (history)."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, float)
        v = np.asarray(self.values, float)
        if v.ndim == 1:
            v = v[:, None]
        if t.ndim != 1 or len(t) < 2:
            raise ValueError("a time series needs at least two samples")
        if v.shape[0] != len(t):
            raise ValueError("values row count must equal the number of times")
        steps = np.diff(t)
        if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
            raise ValueError("times must be strictly increasing and uniformly spaced")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def dt(self) -> float:
        return float((self.times[-1] - self.times[0]) / (len(self.times) - 1))

    @property
    def origin_time(self) -> float:
        return float(self.times[0])

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def select(self, columns: Sequence[int]) -> "TimeSeries":
        return TimeSeries(self.times, self.values[:, list(columns)])


@dataclass(frozen=True)
class DelayedView:
    delay: float
    values: np.ndarray
    valid_mask: np.ndarray


def delayed_samples(series: TimeSeries, delay: float) -> DelayedView:
    """Values of ``series`` at ``t_i - delay`` for every sample time ``t_i``.

    Integer multiples of the sampling step are served by an exact row shift;
    other delays use linear interpolation between neighbouring samples. Rows
    whose delayed time precedes the first sample are marked invalid and hold NaN.
    """
    if not delay > 0:
        raise ValueError(f"delay must be positive, got {delay}")
    m, dt = series.m, series.dt
    values = np.full_like(series.values, np.nan)
    shift = delay / dt
    j = round(shift)
    if abs(shift - j) <= 1e-9 * max(1.0, shift):
        if j >= m:
            raise ValueError(f"delay {delay} leaves no valid rows")
        values[j:] = series.values[: m - j]
        mask = np.arange(m) >= j
    else:
        pos = np.arange(m) - shift
        lo = np.floor(pos).astype(int)
        mask = lo >= 0
        if not mask.any():
            raise ValueError(f"delay {delay} leaves no valid rows")
        lo_v = lo[mask]
        w = (pos[mask] - lo_v)[:, None]
        values[mask] = (1.0 - w) * series.values[lo_v] + w * series.values[lo_v + 1]
    return DelayedView(float(delay), values, mask)


def estimate_derivatives(series: TimeSeries) -> np.ndarray:
    """Second-order finite differences: central inside, one-sided at both ends."""
    if series.m < 3:
        raise ValueError("need at least three samples to estimate derivatives")
    return np.gradient(series.values, series.dt, axis=0, edge_order=2)


# Library =====================================================================

@dataclass(frozen=True)
class HillTerm:
    """Hill response ``1 / (1 + x_var(t - tau_slot)**alpha)``.

    ``alpha`` is either a number or the name of an entry in the parameter
    record passed to :func:`build_library`.
    """

    slot: int = 1
    alpha: float | str = "alpha"
    variable: int = 0


@dataclass(frozen=True)
class LibrarySpec:
    """Candidate functions for the augmented library.

    Polynomial products of total degree ``<= poly_degree`` are formed over the
    augmented variables: current states, the ``delayed_variables`` of every
    delay slot (all states by default), then one variable per Hill term. Trig
    columns apply to current and delayed states and do not enter products.
    """

    poly_degree: int = 2
    hill_terms: tuple[HillTerm, ...] = ()
    trig_terms: tuple[str, ...] = ()
    include_constant: bool = True
    delayed_variables: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.poly_degree < 0:
            raise ValueError("poly_degree must be nonnegative")
        object.__setattr__(self, "hill_terms", tuple(self.hill_terms))
        object.__setattr__(self, "trig_terms", tuple(self.trig_terms))
        if self.delayed_variables is not None:
            object.__setattr__(self, "delayed_variables", tuple(int(v) for v in self.delayed_variables))
        for fn in self.trig_terms:
            if fn not in ("sin", "cos"):
                raise ValueError(f"unsupported trig function {fn!r}")
        for h in self.hill_terms:
            # alpha = 0 is tolerated: the column degenerates to the constant 1/2
            if not isinstance(h.alpha, str) and h.alpha < 0:
                raise ValueError("Hill exponents must be nonnegative")
        if self.poly_degree == 0 and not self.include_constant and not self.trig_terms:
            raise ValueError("library has no terms")

    def to_dict(self) -> dict:
        return {
            "poly_degree": self.poly_degree,
            "hill_terms": [{"slot": h.slot, "alpha": h.alpha, "variable": h.variable} for h in self.hill_terms],
            "trig_terms": list(self.trig_terms),
            "include_constant": self.include_constant,
            "delayed_variables": None if self.delayed_variables is None else list(self.delayed_variables),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LibrarySpec":
        return cls(
            poly_degree=int(d.get("poly_degree", 2)),
            hill_terms=tuple(HillTerm(**h) for h in d.get("hill_terms", ())),
            trig_terms=tuple(d.get("trig_terms", ())),
            include_constant=bool(d.get("include_constant", True)),
            delayed_variables=d.get("delayed_variables"),
        )


@dataclass(frozen=True, order=True)
class Factor:
    """``base ** power`` where base is ``x_var(t - tau_slot)`` or its Hill response."""

    var: int
    slot: int
    power: int = 1
    hill: float | None = None

    def base(self, current: np.ndarray, delayed: Sequence[np.ndarray]) -> np.ndarray:
        src = current if self.slot == 0 else delayed[self.slot - 1]
        x = src[..., self.var]
        if self.hill is not None:
            x = 1.0 / (1.0 + x ** self.hill)
        return x


@dataclass(frozen=True)
class Term:
    """One library column: a product of factors, optionally wrapped in sin/cos."""

    factors: tuple[Factor, ...] = ()
    func: str = "poly"

    @property
    def degree(self) -> int:
        return sum(f.power for f in self.factors)

    def describe(self, names: Sequence[str], delays: Sequence[float] = (), decimals: int = 2) -> str:
        if not self.factors:
            return "1"
        parts = []
        for f in self.factors:
            if f.slot == 0:
                arg = f"{names[f.var]}(t)"
            elif f.slot <= len(delays):
                arg = f"{names[f.var]}(t-{delays[f.slot - 1]:.{decimals}f})"
            else:
                arg = f"{names[f.var]}(t-tau{f.slot})"
            if f.hill is not None:
                arg = f"1/(1+{arg}^{_num(f.hill)})"
            if f.power != 1:
                arg = f"{arg}^{f.power}" if f.hill is None else f"({arg})^{f.power}"
            parts.append(arg)
        body = "·".join(parts)
        return body if self.func == "poly" else f"{self.func}({body})"

    def to_dict(self) -> dict:
        return {"func": self.func,
                "factors": [{"var": f.var, "slot": f.slot, "power": f.power, "hill": f.hill} for f in self.factors]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Term":
        func = d.get("func", "poly")
        if func not in ("poly", "sin", "cos"):
            raise ValueError(f"unknown term class {func!r}")
        return cls(tuple(Factor(int(f["var"]), int(f["slot"]), int(f.get("power", 1)), f.get("hill"))
                         for f in d["factors"]), func)


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else f"{v:g}"


def evaluate_term(term: Term, current: np.ndarray, delayed: Sequence[np.ndarray]) -> np.ndarray:
    """Evaluate ``term`` on current states ``(..., n)`` and per-slot delayed states."""
    out = np.ones(np.shape(current)[:-1])
    for f in term.factors:
        out = out * f.base(current, delayed) ** f.power
    if term.func == "sin":
        return np.sin(out)
    if term.func == "cos":
        return np.cos(out)
    return out


@dataclass(frozen=True)
class DesignMatrix:
    """Library matrix ``Theta`` with one labelled term per column."""

    columns: np.ndarray
    terms: tuple[Term, ...]
    row_mask: np.ndarray
    var_names: tuple[str, ...] = ()
    delays: tuple[float, ...] = ()
    params: Mapping[str, float] = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.columns.shape

    def labels(self, decimals: int = 2) -> list[str]:
        return [t.describe(self.var_names, self.delays, decimals) for t in self.terms]

    def restrict(self, rows: np.ndarray) -> "DesignMatrix":
        """Keep only ``rows`` (boolean mask or index array)."""
        return DesignMatrix(self.columns[rows], self.terms, self.row_mask[rows],
                            self.var_names, self.delays, dict(self.params))

    def to_csv(self, path, times: np.ndarray | None = None) -> None:
        header = (["t"] if times is not None else []) + self.labels()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in np.flatnonzero(self.row_mask):
                row = ([times[i]] if times is not None else []) + list(self.columns[i])
                w.writerow([format(v, ".17g") for v in row])


def _augmented_factors(spec: LibrarySpec, n: int, k: int, params: Mapping[str, float]) -> list[Factor]:
    delayed_vars = tuple(range(n)) if spec.delayed_variables is None else spec.delayed_variables
    if any(v < 0 or v >= n for v in delayed_vars):
        raise ValueError(f"delayed_variables {delayed_vars} out of range for n={n}")
    out = [Factor(v, 0) for v in range(n)]
    for slot in range(1, k + 1):
        out += [Factor(v, slot) for v in delayed_vars]
    for h in spec.hill_terms:
        alpha = h.alpha
        if isinstance(alpha, str):
            if alpha not in params:
                raise ValueError(f"Hill exponent parameter {alpha!r} not supplied")
            alpha = params[alpha]
        if not 0 <= h.slot <= k:
            raise ValueError(f"Hill term refers to delay slot {h.slot} but only {k} delays given")
        out.append(Factor(h.variable, h.slot, 1, float(alpha)))
    return out


def _library_terms(spec: LibrarySpec, n: int, k: int, params: Mapping[str, float]) -> list[Term]:
    aug = _augmented_factors(spec, n, k, params)
    terms = []
    start = 0 if spec.include_constant else 1
    for degree in range(start, spec.poly_degree + 1):
        # combinations_with_replacement yields graded-lex order within a degree
        for combo in itertools.combinations_with_replacement(range(len(aug)), degree):
            factors = []
            for idx, group in itertools.groupby(combo):
                a = aug[idx]
                factors.append(Factor(a.var, a.slot, len(list(group)), a.hill))
            terms.append(Term(tuple(factors)))
    plain = [a for a in aug if a.hill is None]
    for fn in spec.trig_terms:
        terms += [Term((a,), fn) for a in plain]
    return terms


def column_count(spec: LibrarySpec, n: int, k: int) -> int:
    """Number of columns :func:`build_library` emits for ``n`` states and ``k`` delays."""
    if n < 1 or k < 0:
        raise ValueError("need n >= 1 and k >= 0")
    nd = n if spec.delayed_variables is None else len(spec.delayed_variables)
    plain = n + k * nd
    v = plain + len(spec.hill_terms)
    count = math.comb(v + spec.poly_degree, spec.poly_degree)
    if not spec.include_constant:
        count -= 1
    return count + len(spec.trig_terms) * plain


def build_library(spec: LibrarySpec, current: TimeSeries, delayed: Sequence[DelayedView] = (),
                  extra_params: Mapping[str, float] | None = None,
                  var_names: Sequence[str] | None = None) -> DesignMatrix:
    """Evaluate every candidate term on the current and delayed samples.

    Rows invalid in any delayed view are excluded through ``row_mask``.

    Raises
    ------
    ValueError
        If the views do not match the series, or fewer valid rows than columns remain.
    """
    params = dict(extra_params or {})
    m, n = current.values.shape
    for view in delayed:
        if view.values.shape != (m, n):
            raise ValueError("delayed view shape does not match the current series")
    mask = np.ones(m, bool)
    for view in delayed:
        mask &= view.valid_mask
    terms = _library_terms(spec, n, len(delayed), params)
    cur = current.values
    lagged = [v.values for v in delayed]
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        cols = np.column_stack([evaluate_term(t, cur, lagged) for t in terms])
    if mask.sum() < len(terms):
        raise ValueError(f"only {mask.sum()} valid rows for {len(terms)} library columns")
    if var_names is None:
        var_names = ("x",) if n == 1 else tuple(f"x{j + 1}" for j in range(n))
    return DesignMatrix(cols, tuple(terms), mask, tuple(var_names),
                        tuple(v.delay for v in delayed), params)
