"""Fixed-step simulation of DDEs with constant discrete delays.

The integrator is classical RK4 driven by the method of steps: delayed states
are read from a cubic Hermite interpolant of the solution computed so far, or
from the initial history for query times before zero.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

__all__ = [
    "DelaySystem",
    "HistorySegment",
    "Trajectory",
    "IntegrationDiverged",
    "integrate",
    "benchmark",
    "exact_derivatives",
    "BENCHMARKS",
]

# rhs(x, delayed, params): x has shape (..., n), delayed has shape (..., k, n)
Rhs = Callable[[np.ndarray, np.ndarray, Mapping[str, float]], np.ndarray]


class IntegrationDiverged(RuntimeError):
    """Raised when the integrated state stops being finite."""

    def __init__(self, t_last: float):
        super().__init__(f"integration diverged after t={t_last:.6g}")
        self.t_last = t_last


@dataclass(frozen=True)
class DelaySystem:
    """Autonomous DDE ``x'(t) = f(x(t), x(t - tau_1), ..., x(t - tau_k))``.

    ``rhs`` must broadcast over leading axes: it receives the current state with
    shape ``(..., n)`` and the delayed states stacked as ``(..., k, n)``.
    """

    dim: int
    delays: tuple[float, ...]
    rhs: Rhs
    params: Mapping[str, float] = field(default_factory=dict)
    name: str = "dde"

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")
        d = tuple(float(v) for v in self.delays)
        if any(v <= 0 for v in d):
            raise ValueError(f"delays must be positive, got {d}")
        if any(b <= a for a, b in zip(d, d[1:])):
            raise ValueError(f"delays must be strictly increasing, got {d}")
        object.__setattr__(self, "delays", d)

    @property
    def max_delay(self) -> float:
        return max(self.delays) if self.delays else 0.0

    def __call__(self, x, delayed):
        return np.asarray(self.rhs(np.asarray(x, float), np.asarray(delayed, float), self.params), float)


@dataclass(frozen=True)
class HistorySegment:
    """Initial function on ``[-span, 0]``.

    Either constant (``value`` is a state vector) or sampled (``times`` and a
    ``value`` matrix with one row per time, linearly interpolated).
    """

    value: np.ndarray
    span: float
    times: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "value", np.atleast_1d(np.asarray(self.value, float)))
        if self.times is not None:
            t = np.asarray(self.times, float)
            if t.ndim != 1 or self.value.ndim != 2 or len(t) != len(self.value):
                raise ValueError("sampled history needs 1-D times and a matching (m, n) value matrix")
            if np.any(np.diff(t) <= 0):
                raise ValueError("history times must be strictly increasing")
            if t[0] > -self.span + 1e-12 or t[-1] < -1e-12:
                raise ValueError("history samples do not cover [-span, 0]")
            object.__setattr__(self, "times", t)

    @classmethod
    def constant(cls, value, span: float) -> "HistorySegment":
        return cls(np.atleast_1d(np.asarray(value, float)), float(span))

    @classmethod
    def sampled(cls, times, values) -> "HistorySegment":
        times = np.asarray(times, float)
        values = np.asarray(values, float)
        if values.ndim == 1:
            values = values[:, None]
        return cls(values, float(-times[0]), times)

    @property
    def kind(self) -> str:
        return "constant" if self.times is None else "sampled"

    @property
    def dim(self) -> int:
        return self.value.shape[-1]

    def __call__(self, t: float) -> np.ndarray:
        if t < -self.span * (1 + 1e-12) - 1e-12:
            raise ValueError(f"history queried at t={t}, outside [-{self.span}, 0]")
        if self.times is None:
            return self.value.copy()
        return np.array([np.interp(t, self.times, self.value[:, j]) for j in range(self.dim)])


@dataclass
class Trajectory:
    """Uniformly sampled solution: states ``X`` and optionally derivatives ``X'``."""

    times: np.ndarray
    states: np.ndarray
    derivatives: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        self.states = np.asarray(self.states, float)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if self.states.shape[0] != len(self.times):
            raise ValueError("states row count must equal the number of times")
        if self.derivatives is not None:
            self.derivatives = np.asarray(self.derivatives, float).reshape(self.states.shape)
        if len(self.times) > 1:
            dt = np.diff(self.times)
            if np.any(dt <= 0) or not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
                raise ValueError("trajectory times must be strictly increasing and uniformly spaced")

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def to_csv(self, path) -> None:
        """Write ``t,x1..xn[,dx1..dxn]`` with 17 significant digits."""
        n = self.dim
        header = ["t"] + [f"x{j + 1}" for j in range(n)]
        blocks = [self.times[:, None], self.states]
        if self.derivatives is not None:
            header += [f"dx{j + 1}" for j in range(n)]
            blocks.append(self.derivatives)
        data = np.hstack(blocks)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in data:
                w.writerow([format(v, ".17g") for v in row])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        if header[0] != "t":
            raise ValueError(f"{path}: first column must be 't'")
        xcols = [i for i, h in enumerate(header) if h.startswith("x")]
        dcols = [i for i, h in enumerate(header) if h.startswith("dx")]
        deriv = body[:, dcols] if dcols else None
        return cls(body[:, 0], body[:, xcols], deriv)


def _hermite(y0, y1, m0, m1, theta, h):
    t2 = theta * theta
    t3 = t2 * theta
    return ((2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + theta) * h * m0
            + (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * h * m1)


def integrate(system: DelaySystem, history: HistorySegment, t_end: float, step: float = 1e-3,
              sample_dt: float | None = None) -> Trajectory:
    """Integrate ``system`` from ``history`` over ``[0, t_end]``.

    Parameters
    ----------
    system : DelaySystem
    history : HistorySegment
        Initial function; its span must cover the largest delay.
    t_end : float
        Final time; must be a multiple of ``step``.
    step : float
        RK4 step, not larger than the smallest delay.
    sample_dt : float, optional
        Output spacing (an integer multiple of ``step``). Defaults to ``step``.

    Returns
    -------
    Trajectory
        Samples at ``0, sample_dt, ..., t_end`` with exact right-hand side
        evaluations as derivatives.
    """
    if step <= 0 or t_end <= 0:
        raise ValueError("step and t_end must be positive")
    if system.delays and step > min(system.delays) * (1 + 1e-12):
        raise ValueError(f"step {step} exceeds the smallest delay {min(system.delays)}")
    if history.span < system.max_delay * (1 - 1e-12):
        raise ValueError(f"history span {history.span} does not cover delay {system.max_delay}")
    if history.dim != system.dim:
        raise ValueError("history dimension does not match the system")
    n_steps = int(round(t_end / step))
    if not math.isclose(n_steps * step, t_end, rel_tol=1e-9):
        raise ValueError("t_end must be an integer multiple of step")
    stride = 1
    if sample_dt is not None:
        stride = int(round(sample_dt / step))
        if stride < 1 or not math.isclose(stride * step, sample_dt, rel_tol=1e-9):
            raise ValueError("sample_dt must be an integer multiple of step")
        if n_steps % stride:
            raise ValueError("t_end must be an integer multiple of sample_dt")

    n = system.dim
    delays = np.asarray(system.delays)
    k = len(delays)
    X = np.empty((n_steps + 1, n))
    F = np.empty((n_steps + 1, n))
    params = system.params
    rhs = system.rhs
    hist_cache: dict[float, np.ndarray] = {}

    def past(q: float, done: int) -> np.ndarray:
        # state at q <= t_done, from history or the Hermite interpolant
        if q <= 0.0:
            if history.times is None:
                return history.value
            if q not in hist_cache:
                hist_cache[q] = history(q)
            return hist_cache[q]
        pos = q / step
        i = int(pos)
        if i >= done:
            i = done - 1
        theta = pos - i
        return _hermite(X[i], X[i + 1], F[i], F[i + 1], theta, step)

    def lagged(t: float, done: int) -> np.ndarray:
        out = np.empty((k, n))
        for j in range(k):
            out[j] = past(t - delays[j], done)
        return out

    # overflow is detected below and reported as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        X[0] = history(0.0)
        F[0] = rhs(X[0], lagged(0.0, 0), params)
        h = step
        for i in range(n_steps):
            t = i * h
            x = X[i]
            k1 = F[i]
            mid = lagged(t + 0.5 * h, i)
            k2 = rhs(x + 0.5 * h * k1, mid, params)
            k3 = rhs(x + 0.5 * h * k2, mid, params)
            end = lagged(t + h, i)
            k4 = rhs(x + h * k3, end, params)
            x_new = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(x_new)):
                raise IntegrationDiverged(t)
            X[i + 1] = x_new
            f_new = rhs(x_new, end, params)
            if not np.all(np.isfinite(f_new)):
                raise IntegrationDiverged(t + h)
            F[i + 1] = f_new

    idx = np.arange(0, n_steps + 1, stride)
    times = idx * h
    return Trajectory(times, X[idx].copy(), F[idx].copy())


# Benchmarks ==================================================================

def _logistic(x, xd, p):
    return p["rho"] * x * (1.0 - xd[..., 0, :])


def _sir(x, xd, p):
    s, i = x[..., 0], x[..., 1]
    i_lag = xd[..., 0, 1]
    infection = p["beta"] * s * i
    recovery = p["mu"] * i_lag
    return np.stack([-infection, infection - recovery, recovery], axis=-1)


def _mackey_glass(x, xd, p):
    lag = xd[..., 0, :]
    return p["beta"] * lag / (1.0 + lag ** p["alpha"]) - p["gamma"] * x


def _two_delay_cubic(x, xd, p):
    # slots are sorted by delay; "long" is tau1, the squared argument
    long_slot = 1 if p["tau1"] > p["tau2"] else 0
    return p["a"] * xd[..., long_slot, :] ** 2 + p["b"] * xd[..., 1 - long_slot, :] ** 3


BENCHMARKS = {
    "logistic": dict(rhs=_logistic, dim=1, required=("rho", "tau"), delays=("tau",),
                     history=(0.1,)),
    "sir": dict(rhs=_sir, dim=3, required=("beta", "mu", "tau"), delays=("tau",),
                history=(0.9, 0.1, 0.0)),
    "mackey_glass": dict(rhs=_mackey_glass, dim=1, required=("beta", "gamma", "alpha", "tau"),
                         delays=("tau",), history=(0.1,)),
    "two_delay_cubic": dict(rhs=_two_delay_cubic, dim=1, required=("a", "b", "tau1", "tau2"),
                            delays=("tau1", "tau2"), history=(1.2,)),
}

_POSITIVE = {"rho", "beta", "mu", "gamma", "alpha", "tau", "tau1", "tau2"}


def benchmark(name: str, params: Mapping[str, float], history=None,
              history_span: float | None = None) -> tuple[DelaySystem, HistorySegment]:
    """Build one of the four test systems and its constant initial function.

    ``history`` overrides the default constant value; ``history_span`` extends
    the history interval beyond the largest delay.
    """
    try:
        spec = BENCHMARKS[name]
    except KeyError:
        raise ValueError(f"unknown benchmark {name!r}; expected one of {sorted(BENCHMARKS)}") from None
    missing = [p for p in spec["required"] if p not in params]
    if missing:
        raise ValueError(f"benchmark {name!r} is missing parameters {missing}")
    p = {key: float(v) for key, v in params.items()}
    bad = [key for key in spec["required"] if key in _POSITIVE and p[key] <= 0]
    if bad:
        raise ValueError(f"parameters {bad} must be positive")
    delays = tuple(sorted(p[d] for d in spec["delays"]))
    if len(set(delays)) != len(delays):
        raise ValueError("delays must be distinct")
    system = DelaySystem(spec["dim"], delays, spec["rhs"], p, name)
    value = spec["history"] if history is None else history
    span = max(delays) if history_span is None else max(history_span, max(delays))
    return system, HistorySegment.constant(value, span)


def _state_at(q: np.ndarray, traj: Trajectory, history: HistorySegment) -> np.ndarray:
    t0, dt = traj.times[0], traj.dt
    out = np.empty((len(q), traj.dim))
    t_last = traj.times[-1]
    if np.any(q > t_last + 1e-9 * dt):
        raise ValueError("delayed query beyond the end of the trajectory")
    before = q < t0 - 1e-9 * dt
    for r in np.flatnonzero(before):
        out[r] = history(q[r])
    inside = ~before
    pos = (q[inside] - t0) / dt
    near = np.rint(pos)
    hit = np.abs(pos - near) <= 1e-9 * np.maximum(1.0, np.abs(pos))
    i = np.where(hit, near, np.floor(pos)).astype(int)
    i = np.clip(i, 0, len(traj.times) - 1)
    theta = np.where(hit, 0.0, pos - i)[:, None]
    j = np.minimum(i + 1, len(traj.times) - 1)
    if traj.derivatives is not None:
        vals = _hermite(traj.states[i], traj.states[j], traj.derivatives[i], traj.derivatives[j], theta, dt)
    else:
        vals = (1 - theta) * traj.states[i] + theta * traj.states[j]
    vals[hit] = traj.states[i[hit]]
    out[inside] = vals
    return out


def exact_derivatives(system: DelaySystem, traj: Trajectory, history: HistorySegment) -> np.ndarray:
    """Evaluate the true right-hand side at every trajectory sample.

    Delayed states come from the trajectory itself (exact row on grid hits,
    Hermite or linear interpolation otherwise) or from ``history`` for times
    before the first sample.
    """
    t = traj.times
    if len(system.delays) and t[0] - system.max_delay < -history.span - 1e-9:
        raise ValueError("delayed query precedes the history segment")
    lagged = np.stack([_state_at(t - d, traj, history) for d in system.delays], axis=1) \
        if system.delays else np.empty((len(t), 0, traj.dim))
    return np.asarray(system.rhs(traj.states, lagged, system.params), float)


def write_trajectory(traj: Trajectory, path) -> Path:
    path = Path(path)
    traj.to_csv(path)
    return path


def read_trajectory(path) -> Trajectory:
    return Trajectory.from_csv(path)


def constant_history_samples(history: HistorySegment, dt: float, span: float) -> tuple[np.ndarray, np.ndarray]:
    """History values on the grid ``-j*dt`` for ``j = J..1`` with ``J*dt >= span``."""
    count = int(math.ceil(span / dt - 1e-9))
    times = -np.arange(count, 0, -1) * dt
    values = np.array([history(t) for t in times]).reshape(count, history.dim)
    return times, values
