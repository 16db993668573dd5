"""Sequential thresholded least squares and what to do with the fitted model."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dde_sim import DelaySystem
from .features import DesignMatrix, Term, evaluate_term

__all__ = [
    "StlsConfig",
    "SparseModel",
    "stls_fit",
    "reconstruction_error",
    "model_to_system",
    "format_model",
    "model_to_json",
    "model_from_json",
]


@dataclass(frozen=True)
class StlsConfig:
    threshold: float = 0.1
    max_iterations: int = 20
    rcond: float = 1e-12
    normalize: bool = False

    def __post_init__(self):
        if self.threshold < 0:
            raise ValueError("threshold must be nonnegative")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.rcond < 0:
            raise ValueError("rcond must be nonnegative")


@dataclass
class SparseModel:
    """Coefficient matrix ``Xi`` (one row per library term, one column per state)."""

    coefficients: np.ndarray
    terms: tuple[Term, ...]
    delays: tuple[float, ...] = ()
    params: Mapping[str, float] = field(default_factory=dict)
    fit_error: float = 0.0
    threshold: float = 0.0
    degenerate: tuple[int, ...] = ()
    var_names: tuple[str, ...] = ()

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, float)
        if self.coefficients.ndim == 1:
            self.coefficients = self.coefficients[:, None]
        if self.coefficients.shape[0] != len(self.terms):
            raise ValueError("coefficient rows must align with terms")
        self.terms = tuple(self.terms)
        self.delays = tuple(float(d) for d in self.delays)
        if not self.var_names:
            n = self.coefficients.shape[1]
            self.var_names = ("x",) if n == 1 else tuple(f"x{j + 1}" for j in range(n))

    @property
    def n(self) -> int:
        return self.coefficients.shape[1]

    def nonzero(self, column: int = 0) -> dict[str, float]:
        """Map of term label to coefficient for the nonzero entries of one equation."""
        return {t.describe(self.var_names, self.delays): float(c)
                for t, c in zip(self.terms, self.coefficients[:, column]) if c != 0.0}


def _lstsq(a, b, rcond):
    return np.linalg.lstsq(a, b, rcond=rcond)[0]


def _stls_column(a: np.ndarray, b: np.ndarray, cfg: StlsConfig) -> np.ndarray:
    q = a.shape[1]
    xi = np.zeros(q)
    active = np.ones(q, bool)
    xi[active] = _lstsq(a, b, cfg.rcond)
    for _ in range(cfg.max_iterations):
        keep = active & (np.abs(xi) >= cfg.threshold)
        if keep.sum() == active.sum():
            break
        active = keep
        xi[:] = 0.0
        if not active.any():
            break
        xi[active] = _lstsq(a[:, active], b, cfg.rcond)
    else:
        # iteration cap hit without a stable support: enforce the threshold
        xi[np.abs(xi) < cfg.threshold] = 0.0
    return xi


def stls_fit(design: DesignMatrix, derivatives: np.ndarray, config: StlsConfig | None = None) -> SparseModel:
    """Solve ``X' = Theta Xi`` column by column with hard thresholding.

    Each output column alternates an ordinary least-squares solve on the
    active support with zeroing of coefficients below ``config.threshold``,
    until the support no longer changes.

    Parameters
    ----------
    design : DesignMatrix
        Library; only rows in ``design.row_mask`` are used.
    derivatives : (m, n) ndarray
        Target derivatives, row-aligned with ``design.columns``.
    config : StlsConfig, optional

    Returns
    -------
    SparseModel
        ``degenerate`` lists the equations whose support emptied out while the
        target was nonzero.
    """
    cfg = config or StlsConfig()
    y = np.asarray(derivatives, float)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] != design.columns.shape[0]:
        raise ValueError("derivative rows do not match the design matrix")
    rows = design.row_mask
    theta = design.columns[rows]
    target = y[rows]
    if theta.shape[0] < theta.shape[1]:
        raise ValueError("fewer valid rows than library columns")
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(target))):
        raise FloatingPointError("non-finite entries in the regression data")

    scale = np.ones(theta.shape[1])
    if cfg.normalize:
        scale = np.linalg.norm(theta, axis=0)
        scale[scale == 0] = 1.0
    a = theta / scale
    xi = np.column_stack([_stls_column(a, target[:, j], cfg) for j in range(target.shape[1])]) / scale[:, None]

    degenerate = tuple(j for j in range(xi.shape[1])
                       if not xi[:, j].any() and np.linalg.norm(target[:, j]) > 0)
    resid = np.linalg.norm(target - theta @ xi)
    return SparseModel(xi, design.terms, design.delays, dict(design.params), float(resid),
                       cfg.threshold, degenerate, design.var_names)


def reconstruction_error(model: SparseModel, design: DesignMatrix, derivatives: np.ndarray) -> float:
    """Frobenius norm of ``X' - Theta Xi`` over the valid rows of ``design``."""
    y = np.asarray(derivatives, float)
    if y.ndim == 1:
        y = y[:, None]
    rows = design.row_mask
    return float(np.linalg.norm(y[rows] - design.columns[rows] @ model.coefficients))


def model_to_system(model: SparseModel) -> DelaySystem:
    """Wrap a fitted model as an executable :class:`DelaySystem`.

    Delay slots are reordered internally so the system's delays increase.
    """
    for t in model.terms:
        if t.func not in ("poly", "sin", "cos"):
            raise ValueError(f"unknown term class {t.func!r}")
    delays = np.asarray(model.delays, float)
    if len(set(delays.tolist())) != len(delays):
        raise ValueError(f"model delays must be distinct, got {model.delays}")
    order = np.argsort(delays)
    slot_pos = np.empty(len(delays), int)
    slot_pos[order] = np.arange(len(delays))
    used = [(t, model.coefficients[i]) for i, t in enumerate(model.terms) if np.any(model.coefficients[i])]

    def rhs(x, xd, params):
        lagged = [xd[..., slot_pos[s], :] for s in range(len(slot_pos))]
        out = np.zeros(np.shape(x)[:-1] + (model.n,))
        for term, coef in used:
            out = out + evaluate_term(term, x, lagged)[..., None] * coef
        return out

    return DelaySystem(model.n, tuple(delays[order]), rhs, dict(model.params), "identified")


def _coef(v: float, decimals: int) -> str:
    return f"{abs(v):.{decimals}f}"


def format_model(model: SparseModel, decimals: int = 3, names: Sequence[str] | None = None,
                 delay_decimals: int = 2) -> str:
    """Render one ``name'(t) = ...`` line per equation, zero terms omitted."""
    names = tuple(names) if names is not None else model.var_names
    lines = []
    for j in range(model.n):
        parts = []
        for term, c in zip(model.terms, model.coefficients[:, j]):
            if c == 0.0:
                continue
            label = term.describe(names, model.delays, delay_decimals)
            body = _coef(c, decimals) if label == "1" else f"{_coef(c, decimals)}·{label}"
            if not parts:
                parts.append(("-" if c < 0 else "") + body)
            else:
                parts.append(("- " if c < 0 else "+ ") + body)
        lines.append(f"{names[j]}'(t) = " + (" ".join(parts) if parts else "0"))
    return "\n".join(lines)


def model_to_dict(model: SparseModel) -> dict:
    return {
        "labels": [t.describe(model.var_names, model.delays) for t in model.terms],
        "terms": [t.to_dict() for t in model.terms],
        "coefficients": model.coefficients.tolist(),
        "delays": list(model.delays),
        "params": {k: float(v) for k, v in model.params.items()},
        "fit_error": model.fit_error,
        "threshold": model.threshold,
        "degenerate": list(model.degenerate),
        "var_names": list(model.var_names),
    }


def model_from_dict(d: Mapping) -> SparseModel:
    return SparseModel(
        np.array(d["coefficients"], float),
        tuple(Term.from_dict(t) for t in d["terms"]),
        tuple(d.get("delays", ())),
        dict(d.get("params", {})),
        float(d.get("fit_error", 0.0)),
        float(d.get("threshold", 0.0)),
        tuple(d.get("degenerate", ())),
        tuple(d.get("var_names", ())),
    )


def model_to_json(model: SparseModel) -> str:
    return json.dumps(model_to_dict(model), indent=2)


def model_from_json(text: str) -> SparseModel:
    return model_from_dict(json.loads(text))
