"""End-to-end identification experiments on the benchmark DDEs.

An :class:`ExperimentConfig` fixes the data (benchmark, sampling, train/test
split), the library, the unknown delays/parameters with their candidate axes,
and the search settings. :func:`run_experiment` generates the data once, runs
the requested searches and validates each identified model by re-simulating
it over the test interval.
"""

from __future__ import annotations

import dataclasses
import datetime as _dt
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import __version__
from .dde_sim import (HistorySegment, IntegrationDiverged, Trajectory, benchmark,
                      constant_history_samples, integrate)
from .features import (DesignMatrix, HillTerm, LibrarySpec, TimeSeries, build_library,
                       delayed_samples, estimate_derivatives)
from .optimizer import (BoConfig, CandidateGrid, EvaluationLog, SearchResult, axis_range,
                        bo_minimize, grid_minimize, reduction_percentage)
from .sindy import (SparseModel, StlsConfig, format_model, model_to_dict, model_to_system,
                    stls_fit)

__all__ = [
    "Unknown",
    "ExperimentConfig",
    "DiscoveryProblem",
    "RunRecord",
    "ExperimentReport",
    "run_experiment",
    "preset",
    "PRESETS",
    "write_report",
    "read_report",
    "ConfigError",
]

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class Unknown:
    """A searched quantity: a delay (fills the next delay slot) or a named parameter."""

    name: str
    values: Sequence[float]
    kind: str = "delay"
    true_value: float | None = None
    exclude_below: float | None = None

    def __post_init__(self):
        if self.kind not in ("delay", "param"):
            raise ConfigError(f"unknown kind {self.kind!r} for {self.name}")
        self.values = [float(v) for v in self.values]
        if not self.values:
            raise ConfigError(f"unknown {self.name!r} has an empty axis")


@dataclass
class ExperimentConfig:
    name: str
    system: str
    params: dict[str, float]
    unknowns: list[Unknown]
    library: LibrarySpec = field(default_factory=LibrarySpec)
    history: list[float] | None = None
    step: float = 1e-3
    t_end: float = 30.0
    dt: float = 0.01
    train: tuple[float, float] = (0.0, 10.0)
    test: tuple[float, float] = (10.0, 30.0)
    observed: list[int] | None = None
    var_names: list[str] | None = None
    greater_than: list[tuple[int, int]] = field(default_factory=list)
    stls: StlsConfig = field(default_factory=StlsConfig)
    bo: BoConfig | None = None
    runs: int = 10
    seed: int = 0
    mode: str = "both"
    derivative_source: str = "exact"
    success_tolerance: float = 1e-6

    def __post_init__(self):
        self.train = tuple(float(v) for v in self.train)
        self.test = tuple(float(v) for v in self.test)
        self.greater_than = [tuple(int(i) for i in p) for p in self.greater_than]
        self.validate()

    def validate(self) -> None:
        if self.mode not in ("bo", "grid", "both"):
            raise ConfigError(f"mode must be bo, grid or both, not {self.mode!r}")
        if self.derivative_source not in ("exact", "numeric"):
            raise ConfigError("derivative_source must be 'exact' or 'numeric'")
        if self.runs < 1:
            raise ConfigError("runs must be positive")
        (a, b), (c, d) = self.train, self.test
        if not (0 <= a < b <= self.t_end and 0 <= c < d <= self.t_end):
            raise ConfigError("train and test intervals must lie inside [0, t_end]")
        if b > c and a < d:
            raise ConfigError("train and test intervals overlap")
        if not self.unknowns:
            raise ConfigError("at least one unknown is required")
        for i, j in self.greater_than:
            if not (0 <= i < len(self.unknowns) and 0 <= j < len(self.unknowns)):
                raise ConfigError(f"constraint ({i}, {j}) refers to a missing unknown")

    @property
    def delay_unknowns(self) -> list[Unknown]:
        return [u for u in self.unknowns if u.kind == "delay"]

    def bo_config(self, seed: int) -> BoConfig:
        base = self.bo or BoConfig.defaults_for(len(self.unknowns))
        return dataclasses.replace(base, seed=seed)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "system": self.system,
            "params": dict(self.params),
            "history": self.history,
            "step": self.step,
            "t_end": self.t_end,
            "dt": self.dt,
            "train": list(self.train),
            "test": list(self.test),
            "observed": self.observed,
            "var_names": self.var_names,
            "library": self.library.to_dict(),
            "unknowns": [dataclasses.asdict(u) for u in self.unknowns],
            "greater_than": [list(p) for p in self.greater_than],
            "stls": dataclasses.asdict(self.stls),
            "bo": None if self.bo is None else dataclasses.asdict(self.bo),
            "runs": self.runs,
            "seed": self.seed,
            "mode": self.mode,
            "derivative_source": self.derivative_source,
            "success_tolerance": self.success_tolerance,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ExperimentConfig":
        d = dict(d)
        try:
            d["library"] = LibrarySpec.from_dict(d.get("library", {}))
            d["unknowns"] = [Unknown(**u) for u in d["unknowns"]]
            d["stls"] = StlsConfig(**d.get("stls", {}))
            d["bo"] = None if d.get("bo") is None else BoConfig(**d["bo"])
            return cls(**d)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"invalid experiment configuration: {exc}") from exc

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc


# Data and objective ==========================================================

class DiscoveryProblem:
    """Synthetic data for one configuration plus the objective over candidates.

    The series carries constant-history samples on ``[-max candidate delay, 0)``
    so that every training row stays valid for every candidate delay.
    """

    def __init__(self, config: ExperimentConfig):
        self.config = config
        cfg = config
        delays = [u.values[-1] for u in cfg.delay_unknowns]
        span = max(delays + [_true_delay_span(cfg)])
        try:
            self.system, self.history = benchmark(cfg.system, cfg.params, cfg.history, span)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self.trajectory = integrate(self.system, self.history, cfg.t_end, cfg.step, cfg.dt)
        hist_t, hist_x = constant_history_samples(self.history, cfg.dt, span)
        self.observed = list(range(self.system.dim)) if cfg.observed is None else list(cfg.observed)
        n = len(self.observed)
        names = cfg.var_names or (["x"] if n == 1 else [f"x{j + 1}" for j in range(n)])
        self.var_names = tuple(names)
        times = np.concatenate([hist_t, self.trajectory.times])
        values = np.vstack([hist_x, self.trajectory.states])[:, self.observed]
        self.series = TimeSeries(times, values)

        tol = 1e-9 * cfg.dt
        self.train_rows = (times >= cfg.train[0] - tol) & (times <= cfg.train[1] + tol)
        self.test_rows = (self.trajectory.times >= cfg.test[0] - tol) & (self.trajectory.times <= cfg.test[1] + tol)
        if cfg.derivative_source == "exact":
            exact = np.vstack([np.zeros_like(hist_x), self.trajectory.derivatives])[:, self.observed]
            self.derivatives = exact
        else:
            # differentiate only data up to the end of training
            upto = times <= cfg.train[1] + tol
            est = np.full_like(values, np.nan)
            est[upto] = estimate_derivatives(TimeSeries(times[upto], values[upto]))
            self.derivatives = est
        self.train_derivatives = self.derivatives[self.train_rows]
        self._cache: dict[tuple, float] = {}

    def grid(self) -> CandidateGrid:
        cfg = self.config
        cutoffs = [u.exclude_below for u in cfg.unknowns]
        return CandidateGrid([u.values for u in cfg.unknowns], [u.name for u in cfg.unknowns],
                             cfg.greater_than, None,
                             cutoffs if any(c is not None for c in cutoffs) else None)

    def split(self, candidate: Sequence[float]) -> tuple[list[float], dict[str, float]]:
        delays, params = [], {}
        for u, v in zip(self.config.unknowns, candidate):
            if u.kind == "delay":
                delays.append(float(v))
            else:
                params[u.name] = float(v)
        return delays, params

    def design(self, candidate: Sequence[float]) -> DesignMatrix:
        delays, params = self.split(candidate)
        views = [delayed_samples(self.series, d) for d in delays]
        full = build_library(self.config.library, self.series, views, params, self.var_names)
        return full.restrict(self.train_rows)

    def fit(self, candidate: Sequence[float]) -> SparseModel:
        return stls_fit(self.design(candidate), self.train_derivatives, self.config.stls)

    def objective(self, candidate: Sequence[float]) -> float:
        """Reconstruction error of the sparse fit at ``candidate`` (memoized)."""
        key = tuple(float(v) for v in candidate)
        if key not in self._cache:
            self._cache[key] = self.fit(key).fit_error
        return self._cache[key]

    def true_candidate(self) -> tuple[float, ...] | None:
        vals = [u.true_value for u in self.config.unknowns]
        return None if any(v is None for v in vals) else tuple(vals)

    def simulate_model(self, model: SparseModel) -> Trajectory:
        cfg = self.config
        system = model_to_system(model)
        hist = HistorySegment.constant(self.history.value[self.observed], max(system.max_delay, cfg.step))
        return integrate(system, hist, cfg.t_end, cfg.step, cfg.dt)

    def validate(self, model: SparseModel) -> tuple[float, Trajectory | None]:
        """Max absolute deviation from the true trajectory on the test interval."""
        try:
            sim = self.simulate_model(model)
        except (IntegrationDiverged, ValueError, FloatingPointError) as exc:
            log.info("validation simulation failed: %s", exc)
            return math.inf, None
        truth = self.trajectory.states[:, self.observed]
        err = np.abs(sim.states - truth)[self.test_rows]
        return float(err.max()), sim


def _true_delay_span(cfg: ExperimentConfig) -> float:
    return max((float(v) for k, v in cfg.params.items() if k.startswith("tau")), default=0.0)


# Runs and reports ============================================================

@dataclass
class RunRecord:
    strategy: str
    seed: int | None
    argmin: tuple[float, ...] | None = None
    min_value: float | None = None
    calls: int = 0
    grid_size: int = 0
    reduction: float | None = None
    success: bool = False
    validation_error: float | None = None
    model: dict | None = None
    equations: str | None = None
    error: str | None = None
    log: EvaluationLog | None = field(default=None, repr=False)
    simulation: Trajectory | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "seed": self.seed,
            "argmin": None if self.argmin is None else list(self.argmin),
            "min_value": self.min_value,
            "calls": self.calls,
            "grid_size": self.grid_size,
            "reduction": self.reduction,
            "success": self.success,
            "validation_error": _json_float(self.validation_error),
            "model": self.model,
            "equations": self.equations,
            "error": self.error,
        }


def _json_float(v):
    if v is None or math.isfinite(v):
        return v
    return "inf" if v > 0 else "-inf"


def aggregate(runs: Sequence[Mapping]) -> dict:
    """Per-strategy means and success counts, from per-run dictionaries."""
    out = {}
    for strategy in sorted({r["strategy"] for r in runs}):
        rs = [r for r in runs if r["strategy"] == strategy]
        ok = [r for r in rs if r["error"] is None]
        out[strategy] = {
            "runs": len(rs),
            "failed": len(rs) - len(ok),
            "success_count": sum(bool(r["success"]) for r in rs),
            "mean_calls": float(np.mean([r["calls"] for r in ok])) if ok else None,
            "mean_reduction": float(np.mean([r["reduction"] for r in ok])) if ok else None,
            "grid_size": rs[0]["grid_size"],
        }
    return out


@dataclass
class ExperimentReport:
    config: dict
    runs: list[RunRecord]
    aggregates: dict
    provenance: dict
    true_trajectory: Trajectory | None = field(default=None, repr=False)
    observed: list[int] = field(default_factory=list, repr=False)

    def runs_for(self, strategy: str) -> list[RunRecord]:
        return [r for r in self.runs if r.strategy == strategy]

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "runs": [r.to_dict() for r in self.runs],
            "aggregates": self.aggregates,
            "provenance": self.provenance,
        }


def _finish_run(problem: DiscoveryProblem, rec: RunRecord, result: SearchResult,
                validated: dict[tuple, tuple[SparseModel, float, Trajectory | None]]) -> None:
    cfg = problem.config
    rec.calls = result.calls
    rec.grid_size = result.grid_size
    if not math.isfinite(result.min_value):
        raise FloatingPointError(f"all {result.calls} objective evaluations failed")
    rec.argmin = result.argmin
    rec.min_value = result.min_value
    rec.calls = result.calls
    rec.grid_size = result.grid_size
    rec.reduction = reduction_percentage(result.calls, result.grid_size)
    rec.log = result.log
    truth = problem.true_candidate()
    if truth is not None:
        rec.success = all(abs(a - b) <= cfg.success_tolerance for a, b in zip(result.argmin, truth))
    if result.argmin not in validated:
        model = problem.fit(result.argmin)
        err, sim = problem.validate(model)
        validated[result.argmin] = (model, err, sim)
    model, err, sim = validated[result.argmin]
    rec.model = model_to_dict(model)
    rec.equations = format_model(model)
    rec.validation_error = err
    rec.simulation = sim


def run_experiment(config: ExperimentConfig, problem: DiscoveryProblem | None = None) -> ExperimentReport:
    """Generate data, search, refit at each optimum and validate.

    ``problem`` may be passed to reuse already generated data; it must have
    been built from an equivalent configuration.
    """
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    problem = problem or DiscoveryProblem(config)
    grid = problem.grid()
    validated: dict = {}
    runs: list[RunRecord] = []
    seeds = [config.seed + r for r in range(config.runs)]

    if config.mode in ("grid", "both"):
        rec = RunRecord("grid", None)
        try:
            _finish_run(problem, rec, grid_minimize(problem.objective, grid), validated)
        except Exception as exc:  # noqa: BLE001 - recorded in the report
            rec.error = f"{type(exc).__name__}: {exc}"
        runs.append(rec)
    if config.mode in ("bo", "both"):
        for seed in seeds:
            rec = RunRecord("bo", seed)
            try:
                result = bo_minimize(problem.objective, grid, config.bo_config(seed))
                _finish_run(problem, rec, result, validated)
            except Exception as exc:  # noqa: BLE001 - recorded in the report
                rec.error = f"{type(exc).__name__}: {exc}"
            runs.append(rec)

    dicts = [r.to_dict() for r in runs]
    provenance = {
        "package_version": __version__,
        "seeds": seeds if config.mode != "grid" else [],
        "feasible_grid_size": grid.feasible_size,
        "started": started,
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    return ExperimentReport(config.to_dict(), runs, aggregate(dicts), provenance,
                            problem.trajectory, problem.observed)


def write_report(report: ExperimentReport, path) -> Path:
    """Write ``report.json`` plus per-run evaluation logs and trajectory CSVs into ``path``."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        doc = report.to_dict()
        (out / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
        names = [u["name"] for u in report.config["unknowns"]]
        for i, rec in enumerate(report.runs):
            tag = f"{rec.strategy}_{i:02d}"
            if rec.log is not None:
                rec.log.to_csv(out / f"{tag}_log.csv", names)
            if rec.simulation is not None and report.true_trajectory is not None:
                _write_comparison(out / f"{tag}_trajectory.csv", report.true_trajectory,
                                  report.observed, rec.simulation)
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc}") from exc
    return out / "report.json"


def _write_comparison(path: Path, truth: Trajectory, observed: Sequence[int], sim: Trajectory) -> None:
    n = sim.dim
    header = ["t"] + [f"true_x{j + 1}" for j in range(n)] + [f"model_x{j + 1}" for j in range(n)]
    data = np.hstack([truth.times[:, None], truth.states[:, list(observed)], sim.states])
    lines = [",".join(header)] + [",".join(format(v, ".17g") for v in row) for row in data]
    path.write_text("\n".join(lines) + "\n")


def read_report(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return json.loads(path.read_text())


# Presets =====================================================================

_GRID_400 = dict(start=0.25, stop=4.24, step=0.01)


def _axis(start, stop, step):
    return axis_range(start, stop, step).tolist()


def _logistic(rho: float) -> ExperimentConfig:
    return ExperimentConfig(
        name=f"logistic_{rho:.1f}", system="logistic", params={"rho": rho, "tau": 1.0},
        unknowns=[Unknown("tau", _axis(**_GRID_400), "delay", 1.0)],
        library=LibrarySpec(poly_degree=2),
    )


def _sir() -> ExperimentConfig:
    return ExperimentConfig(
        name="sir", system="sir", params={"beta": 3.0, "mu": 1.0, "tau": 1.0},
        unknowns=[Unknown("tau", _axis(**_GRID_400), "delay", 1.0)],
        library=LibrarySpec(poly_degree=2, delayed_variables=(1,)),
        observed=[0, 1], var_names=["s", "i"],
    )


_MG_PARAMS = {"beta": 6.0, "gamma": 3.0, "alpha": 10.0, "tau": 1.0}


def _mackey_glass(tau_axis, alpha_axis=None) -> ExperimentConfig:
    unknowns = [Unknown("tau", tau_axis, "delay", 1.0)]
    if alpha_axis is None:
        hill = HillTerm(slot=1, alpha=10.0)
        name = "mackey_glass_tau"
    else:
        hill = HillTerm(slot=1, alpha="alpha")
        unknowns.append(Unknown("alpha", alpha_axis, "param", 10.0))
        name = "mackey_glass_tau_alpha"
    return ExperimentConfig(
        name=name, system="mackey_glass", params=dict(_MG_PARAMS), unknowns=unknowns,
        library=LibrarySpec(poly_degree=2, hill_terms=(hill,)),
        train=(0.0, 17.0), test=(17.0, 30.0),
    )


def _two_delay(start, stop, step) -> ExperimentConfig:
    axis = _axis(start, stop, step)
    return ExperimentConfig(
        name="two_delay", system="two_delay_cubic",
        params={"a": -1.0, "b": -0.5, "tau1": 1.0, "tau2": 0.5},
        unknowns=[Unknown("tau1", axis, "delay", 1.0), Unknown("tau2", axis, "delay", 0.5)],
        library=LibrarySpec(poly_degree=3), greater_than=[(0, 1)],
    )


def _named(cfg: ExperimentConfig, name: str) -> ExperimentConfig:
    cfg.name = name
    return cfg


PRESETS = {
    "logistic_1.8": lambda: _logistic(1.8),
    "logistic_3.0": lambda: _logistic(3.0),
    "sir": _sir,
    "mackey_glass_tau": lambda: _mackey_glass(_axis(0.25, 4.74, 0.01)),
    "mackey_glass_tau_alpha_coarse": lambda: _named(
        _mackey_glass(_axis(0.25, 4.75, 0.25), _axis(0, 12, 1)), "mackey_glass_tau_alpha_coarse"),
    "mackey_glass_tau_alpha_fine": lambda: _named(
        _mackey_glass(_axis(0.25, 4.75, 0.05), _axis(0, 12, 1)), "mackey_glass_tau_alpha_fine"),
    "two_delay_coarse": lambda: _named(_two_delay(0.25, 4.75, 0.25), "two_delay_coarse"),
    "two_delay_mid": lambda: _named(_two_delay(0.20, 4.20, 0.10), "two_delay_mid"),
    "two_delay_fine": lambda: _named(_two_delay(0.25, 3.25, 0.05), "two_delay_fine"),
}


def preset(name: str) -> ExperimentConfig:
    """Configuration of one of the reference experiments."""
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
