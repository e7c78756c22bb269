"""Gaussian-process regression surrogate with a Matern 5/2 ARD kernel.

Inputs are expected in the unit cube (see :meth:`SearchSpace.normalize`), so
the hyper-parameter box bounds below are scale free. The mean is a constant
equal to the sample mean of the targets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

logger = logging.getLogger(__name__)

SQRT5 = np.sqrt(5.0)
LOG_2PI = np.log(2.0 * np.pi)

AMPLITUDE_BOUNDS = (1e-4, 1e2)
LENGTHSCALE_BOUNDS = (1e-2, 1e1)
NOISE_BOUNDS = (1e-8, 1.0)
JITTER_START = 1e-10
JITTER_MAX = 1e-4

N_STARTS = 8
LOCAL_ITERS = 40
N_REFINED = 2


class GPFitError(RuntimeError):
    """Covariance stayed non positive-definite after the maximum jitter."""


@dataclass(frozen=True)
class KernelHyper:
    amplitude2: float
    lengthscales: np.ndarray
    noise2: float

    def __post_init__(self) -> None:
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if not self.amplitude2 > 0:
            raise ValueError("amplitude2 must be positive")
        if np.any(ls <= 0):
            raise ValueError("lengthscales must be positive")
        if self.noise2 < 0:
            raise ValueError("noise2 must be nonnegative")

    @property
    def dim(self) -> int:
        return len(self.lengthscales)

    def to_log_vector(self) -> np.ndarray:
        return np.concatenate(
            [[np.log(self.amplitude2)], np.log(self.lengthscales), [np.log(self.noise2)]]
        )

    @classmethod
    def from_log_vector(cls, theta: np.ndarray) -> "KernelHyper":
        return cls(float(np.exp(theta[0])), np.exp(theta[1:-1]), float(np.exp(theta[-1])))

    @classmethod
    def unit(cls, dim: int) -> "KernelHyper":
        return cls(1.0, np.ones(dim), NOISE_BOUNDS[0])


@dataclass(frozen=True)
class GPState:
    X: np.ndarray
    y: np.ndarray
    hyper: KernelHyper
    chol: np.ndarray
    alpha: np.ndarray
    mean: float
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return len(self.y)


def _scaled_sq_dist(X1: np.ndarray, X2: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    A = X1 / lengthscales
    B = X2 / lengthscales
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d2, 0.0)


def matern52(r: np.ndarray, amplitude2: float) -> np.ndarray:
    sr = SQRT5 * r
    return amplitude2 * (1.0 + sr + sr * sr / 3.0) * np.exp(-sr)


def kernel_matrix(X1: np.ndarray, X2: np.ndarray, hyper: KernelHyper) -> np.ndarray:
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    if X1.shape[1] != hyper.dim or X2.shape[1] != hyper.dim:
        raise ValueError(
            f"input dimension {X1.shape[1]}/{X2.shape[1]} does not match {hyper.dim} lengthscales"
        )
    r = np.sqrt(_scaled_sq_dist(X1, X2, hyper.lengthscales))
    return matern52(r, hyper.amplitude2)


def kernel_eval(x1: np.ndarray, x2: np.ndarray, hyper: KernelHyper) -> float:
    """Matern 5/2 covariance between two unit-cube points."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x1.shape != (hyper.dim,) or x2.shape != (hyper.dim,):
        raise ValueError("point dimension does not match lengthscales")
    r = np.sqrt(np.sum(((x1 - x2) / hyper.lengthscales) ** 2))
    return float(matern52(r, hyper.amplitude2))


def _jittered_cholesky(K: np.ndarray) -> tuple[np.ndarray, float]:
    jitter = JITTER_START
    eye = np.eye(len(K))
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            return cholesky(K + jitter * eye, lower=True, check_finite=False), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise GPFitError(f"covariance not positive definite with jitter up to {JITTER_MAX:g}")


def gp_fit(X: np.ndarray, y: np.ndarray, hyper: KernelHyper) -> GPState:
    """Factorize ``K + noise2 * I`` for training inputs ``X`` and targets ``y``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if len(y) < 1 or len(X) != len(y):
        raise ValueError("need n >= 1 matching rows of X and entries of y")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite")
    K = kernel_matrix(X, X, hyper)
    K[np.diag_indices_from(K)] += hyper.noise2
    chol, jitter = _jittered_cholesky(K)
    mean = float(np.mean(y))
    alpha = cho_solve((chol, True), y - mean, check_finite=False)
    return GPState(X=X, y=y, hyper=hyper, chol=chol, alpha=alpha, mean=mean, jitter=jitter)


def gp_posterior_batch(state: GPState, Xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance at each row of ``Xs``."""
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    Ks = kernel_matrix(Xs, state.X, state.hyper)
    mu = state.mean + Ks @ state.alpha
    v = solve_triangular(state.chol, Ks.T, lower=True, check_finite=False)
    var = state.hyper.amplitude2 - np.sum(v * v, axis=0)
    return mu, np.maximum(var, 0.0)


def gp_posterior(state: GPState, x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.shape != (state.hyper.dim,):
        raise ValueError("query dimension does not match the fitted GP")
    mu, var = gp_posterior_batch(state, x[None, :])
    return float(mu[0]), float(var[0])


def log_marginal_likelihood(state: GPState) -> float:
    r = state.y - state.mean
    return float(
        -0.5 * r @ state.alpha
        - np.sum(np.log(np.diag(state.chol)))
        - 0.5 * state.n * LOG_2PI
    )


def _nlml_and_grad(theta: np.ndarray, X: np.ndarray, r: np.ndarray, diff2: np.ndarray):
    """Negative log marginal likelihood and its gradient w.r.t. log hyper-parameters.

    ``diff2`` holds per-dimension squared differences, shape ``(d, n, n)``.
    """
    amp = np.exp(theta[0])
    ls2 = np.exp(2.0 * theta[1:-1])
    noise = np.exp(theta[-1])
    n = len(r)
    scaled = diff2 / ls2[:, None, None]
    rr = np.sqrt(scaled.sum(0))
    sr = SQRT5 * rr
    e = np.exp(-sr)
    K = amp * (1.0 + sr + sr * sr / 3.0) * e
    K[np.diag_indices(n)] += noise
    try:
        L, _ = _jittered_cholesky(K)
    except GPFitError:
        return np.inf, np.zeros_like(theta)
    alpha = cho_solve((L, True), r, check_finite=False)
    nlml = 0.5 * r @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * n * LOG_2PI
    W = np.outer(alpha, alpha) - cho_solve((L, True), np.eye(n), check_finite=False)
    grad = np.empty_like(theta)
    Kf = K.copy()
    Kf[np.diag_indices(n)] -= noise
    grad[0] = -0.5 * np.sum(W * Kf)
    # d k / d log(l_i) = amp * 5/3 * (1 + sqrt5 r) exp(-sqrt5 r) * (delta_i / l_i)^2
    common = amp * (5.0 / 3.0) * (1.0 + sr) * e
    grad[1:-1] = -0.5 * np.einsum("ij,dij->d", W * common, scaled)
    grad[-1] = -0.5 * noise * np.trace(W)
    return float(nlml), grad


def optimize_hypers(X: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> KernelHyper:
    """Point estimate of kernel hyper-parameters by maximizing the marginal likelihood.

    Eight starts (one data-driven, seven log-uniform in the box) are scored,
    the best ``N_REFINED`` are refined with a fixed number of L-BFGS-B steps,
    and the best of everything seen is returned. Deterministic given ``rng``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n, d = X.shape
    if n < 2:
        raise ValueError("hyper-parameter selection needs at least two observations")
    r = y - y.mean()
    diff2 = (X.T[:, :, None] - X.T[:, None, :]) ** 2

    lo = np.log([AMPLITUDE_BOUNDS[0]] + [LENGTHSCALE_BOUNDS[0]] * d + [NOISE_BOUNDS[0]])
    hi = np.log([AMPLITUDE_BOUNDS[1]] + [LENGTHSCALE_BOUNDS[1]] * d + [NOISE_BOUNDS[1]])

    var = float(np.var(y))
    first = np.concatenate(
        [[np.log(max(var, AMPLITUDE_BOUNDS[0]))], np.full(d, np.log(0.3)), [np.log(max(1e-3 * var, NOISE_BOUNDS[0]))]]
    )
    starts = [np.clip(first, lo, hi)]
    starts += list(lo + rng.random((N_STARTS - 1, len(lo))) * (hi - lo))

    scored = [(_nlml_and_grad(t, X, r, diff2)[0], i, t) for i, t in enumerate(starts)]
    best_val, _, best = min(scored, key=lambda s: (s[0], s[1]))

    for val, _, t in sorted(scored, key=lambda s: (s[0], s[1]))[:N_REFINED]:
        if not np.isfinite(val):
            continue
        res = minimize(
            _nlml_and_grad,
            t,
            args=(X, r, diff2),
            jac=True,
            method="L-BFGS-B",
            bounds=list(zip(lo, hi)),
            options={"maxiter": LOCAL_ITERS},
        )
        if np.isfinite(res.fun) and res.fun < best_val:
            best_val, best = float(res.fun), np.clip(res.x, lo, hi)

    if not np.isfinite(best_val):
        logger.warning("all hyper-parameter starts failed; using unit hyper-parameters")
        return KernelHyper.unit(d)
    return KernelHyper.from_log_vector(best)
