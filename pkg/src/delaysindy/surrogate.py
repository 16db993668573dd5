"""Noise-free Gaussian-process regression with the squared-exponential kernel."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.spatial.distance

__all__ = [
    "KernelParams",
    "ObservationSet",
    "GpPosterior",
    "GpFitError",
    "kernel_matrix",
    "fit",
    "predict",
    "log_marginal_likelihood",
    "select_hyperparams",
]


class GpFitError(np.linalg.LinAlgError):
    """Kernel matrix is not numerically positive definite."""

    def __init__(self, smallest_pivot: float):
        super().__init__(f"Cholesky factorization failed (smallest eigenvalue {smallest_pivot:.3e}); "
                         "increase the jitter")
        self.smallest_pivot = smallest_pivot


@dataclass(frozen=True)
class KernelParams:
    signal_sigma: float = 1.0
    length_scale: float = 1.0
    jitter: float = 1e-8

    def __post_init__(self):
        if not self.signal_sigma > 0 or not self.length_scale > 0:
            raise ValueError("signal_sigma and length_scale must be positive")
        if self.jitter < 0:
            raise ValueError("jitter must be nonnegative")


@dataclass(frozen=True)
class ObservationSet:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.inputs, float)
        if y.ndim == 1:
            y = y[:, None]
        u = np.asarray(self.targets, float).ravel()
        if len(u) < 1 or y.shape[0] != len(u):
            raise ValueError("need at least one observation with matching inputs and targets")
        if len(u) > 1:
            d2 = scipy.spatial.distance.pdist(y, "sqeuclidean")
            if d2.min() <= 1e-24:
                raise ValueError("duplicate observation inputs")
        object.__setattr__(self, "inputs", y)
        object.__setattr__(self, "targets", u)


@dataclass(frozen=True)
class GpPosterior:
    params: KernelParams
    factor: np.ndarray
    alpha: np.ndarray
    inputs: np.ndarray
    targets: np.ndarray


def kernel_matrix(a, b, params: KernelParams) -> np.ndarray:
    """``sigma**2 * exp(-|a_i - b_j|**2 / (2 l**2))`` for all pairs of rows."""
    a = np.atleast_2d(np.asarray(a, float))
    b = np.atleast_2d(np.asarray(b, float))
    if a.shape[1] != b.shape[1]:
        raise ValueError("inputs must share the column count")
    d2 = scipy.spatial.distance.cdist(a, b, "sqeuclidean")
    return params.signal_sigma ** 2 * np.exp(-0.5 * d2 / params.length_scale ** 2)


REFINEMENT_STEPS = 2


def _factorize(obs: ObservationSet, params: KernelParams, kernel: np.ndarray | None = None) -> np.ndarray:
    k = kernel_matrix(obs.inputs, obs.inputs, params) if kernel is None else kernel.copy()
    k[np.diag_indices_from(k)] += params.jitter * params.signal_sigma ** 2
    try:
        return scipy.linalg.cholesky(k, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise GpFitError(float(np.linalg.eigvalsh(k).min())) from None


def fit(obs: ObservationSet, params: KernelParams) -> GpPosterior:
    """Factor ``K(Y, Y) + jitter*sigma**2*I`` once and cache ``alpha ~ K^-1 u``.

    The jitter only stabilizes the factorization: ``alpha`` is polished by a
    few steps of iterative refinement against the unjittered kernel, so the
    posterior mean interpolates the observations as a noise-free model should.
    """
    k = kernel_matrix(obs.inputs, obs.inputs, params)
    lower = _factorize(obs, params, k)
    alpha = scipy.linalg.cho_solve((lower, True), obs.targets, check_finite=False)
    for _ in range(REFINEMENT_STEPS):
        alpha = alpha + scipy.linalg.cho_solve((lower, True), obs.targets - k @ alpha, check_finite=False)
    return GpPosterior(params, lower, alpha, obs.inputs.copy(), obs.targets.copy())


def predict(post: GpPosterior, queries) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and standard deviation at each query row."""
    q = np.atleast_2d(np.asarray(queries, float))
    if q.shape[1] != post.inputs.shape[1]:
        raise ValueError("query dimension does not match the training inputs")
    ks = kernel_matrix(q, post.inputs, post.params)
    mean = ks @ post.alpha
    v = scipy.linalg.solve_triangular(post.factor, ks.T, lower=True, check_finite=False)
    var = post.params.signal_sigma ** 2 - (v * v).sum(0)
    return mean, np.sqrt(np.maximum(var, 0.0))


def log_marginal_likelihood(obs: ObservationSet, params: KernelParams) -> float:
    lower = _factorize(obs, params)
    alpha = scipy.linalg.cho_solve((lower, True), obs.targets, check_finite=False)
    n = len(obs.targets)
    return float(-0.5 * obs.targets @ alpha - np.log(np.diag(lower)).sum() - 0.5 * n * math.log(2 * math.pi))


def select_hyperparams(obs: ObservationSet, sigma_grid: Sequence[float], ell_grid: Sequence[float],
                       jitter: float = 1e-8) -> KernelParams:
    """Grid search over ``(sigma, l)`` maximizing the log marginal likelihood.

    Ties go to the larger length scale, then the smaller sigma.
    """
    if not len(sigma_grid) or not len(ell_grid):
        raise ValueError("hyperparameter grids must be nonempty")
    best = None
    for ell in sorted(ell_grid, reverse=True):
        for sigma in sorted(sigma_grid):
            params = KernelParams(float(sigma), float(ell), jitter)
            try:
                lml = log_marginal_likelihood(obs, params)
            except GpFitError:
                continue
            if best is None or lml > best[0]:
                best = (lml, params)
    if best is None:
        raise GpFitError(float("nan"))
    return best[1]
