"""Exact Gaussian-process regression with Matérn ARD kernels.

Targets are standardized to zero mean and unit variance before fitting; the
prior mean is zero in standardized units. Predictions are returned in the
original units.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

log = logging.getLogger(__name__)

JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
NOISE_FLOOR = 1e-8

LOG_LENGTHSCALE_BOUNDS = (np.log(1e-2), np.log(1e3))
LOG_SIGNAL_BOUNDS = (np.log(1e-3), np.log(1e3))
LOG_NOISE_BOUNDS = (np.log(NOISE_FLOOR), np.log(10.0))


class GPNumericalError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    lengthscales: np.ndarray
    signal_var: float = 1.0
    nu: float = 2.5

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if self.nu not in (1.5, 2.5):
            raise ValueError("Matérn smoothness must be 3/2 or 5/2")
        if np.any(ls <= 0) or self.signal_var <= 0:
            raise ValueError("kernel hyperparameters must be positive")

    def to_dict(self) -> dict:
        return {
            "nu": self.nu,
            "lengthscales": self.lengthscales.tolist(),
            "signal_var": float(self.signal_var),
        }


def _matern_of_r(r, nu, signal_var):
    if nu == 2.5:
        s5r = np.sqrt(5.0) * r
        return signal_var * (1.0 + s5r + 5.0 * r * r / 3.0) * np.exp(-s5r)
    s3r = np.sqrt(3.0) * r
    return signal_var * (1.0 + s3r) * np.exp(-s3r)


def _scaled_sqdist(X1, X2, lengthscales):
    A = X1 / lengthscales
    B = X2 / lengthscales
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d2, 0.0)


def kernel_matrix(spec: KernelSpec, X1, X2) -> np.ndarray:
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    r = np.sqrt(_scaled_sqdist(X1, X2, spec.lengthscales))
    return _matern_of_r(r, spec.nu, spec.signal_var)


def kernel_eval(spec: KernelSpec, a, b) -> float:
    return float(kernel_matrix(spec, np.atleast_2d(a), np.atleast_2d(b))[0, 0])


def _cholesky_with_jitter(K):
    n = K.shape[0]
    for jitter in JITTER_LADDER:
        try:
            return np.linalg.cholesky(K + jitter * np.eye(n)), jitter
        except np.linalg.LinAlgError:
            continue
    raise GPNumericalError("kernel matrix is not positive definite even with maximal jitter")


class GPModel:
    """Posterior of a zero-mean GP conditioned on ``(X, y)``.

    Parameters
    ----------
    X : (n, d) array
        Training inputs.
    y : (n,) array
        Targets in observation units.
    kernel : KernelSpec
        Covariance function, in standardized target units.
    noise_var : float
        Observation noise variance in standardized units.
    standardize : bool
        If False, targets are used as given (zero prior mean in raw units).
    """

    def __init__(self, X, y, kernel: KernelSpec, noise_var: float, standardize: bool = True):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[0] != y.size or y.size < 1:
            raise ValueError("X and y must have the same, nonzero number of rows")
        if not np.all(np.isfinite(y)):
            raise ValueError("targets must be finite")
        if kernel.lengthscales.size not in (1, X.shape[1]):
            raise ValueError("lengthscale count does not match input dimension")
        self.X = X
        self.y = y
        self.kernel = kernel
        self.noise_var = float(noise_var)
        if standardize:
            self.y_mean = float(y.mean())
            std = float(y.std())
            self.y_scale = std if std > 1e-12 * max(1.0, abs(self.y_mean)) else 1.0
        else:
            self.y_mean, self.y_scale = 0.0, 1.0
        self.gamma = (y - self.y_mean) / self.y_scale
        K = kernel_matrix(kernel, X, X) + self.noise_var * np.eye(y.size)
        self.L, self.jitter = _cholesky_with_jitter(K)
        self.alpha = cho_solve((self.L, True), self.gamma)

    @property
    def prior_var(self) -> float:
        return self.kernel.signal_var * self.y_scale**2

    def predict_standardized(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        Ks = kernel_matrix(self.kernel, Xq, self.X)
        mean = Ks @ self.alpha
        v = solve_triangular(self.L, Ks.T, lower=True)
        var = self.kernel.signal_var - (v * v).sum(0)
        return mean, np.maximum(var, 0.0)

    def predict(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance at the rows of ``Xq`` in observation units."""
        mean, var = self.predict_standardized(Xq)
        return self.y_mean + self.y_scale * mean, var * self.y_scale**2

    def log_marginal_likelihood(self) -> float:
        n = self.gamma.size
        return float(
            -0.5 * self.gamma @ self.alpha
            - np.log(np.diag(self.L)).sum()
            - 0.5 * n * np.log(2.0 * np.pi)
        )

    def hyperparameters(self) -> dict:
        return {**self.kernel.to_dict(), "noise_var": self.noise_var,
                "y_mean": self.y_mean, "y_scale": self.y_scale}


def posterior(model: GPModel, xq) -> tuple[float, float]:
    mean, var = model.predict(np.atleast_2d(xq))
    return float(mean[0]), float(var[0])


def log_marginal_likelihood(model: GPModel) -> float:
    return model.log_marginal_likelihood()


def _neg_lml_and_grad(params, X, gamma, nu):
    """Negative log evidence and its gradient w.r.t. log-hyperparameters."""
    n, d = X.shape
    log_ls = params[:d]
    sf2 = np.exp(params[d])
    sn2 = np.exp(params[d + 1])
    ls = np.exp(log_ls)
    Xs = X / ls
    diff2 = (Xs[:, None, :] - Xs[None, :, :]) ** 2  # (n, n, d)
    r = np.sqrt(diff2.sum(-1))
    K0 = _matern_of_r(r, nu, sf2)
    K = K0 + sn2 * np.eye(n)
    try:
        L, jitter = _cholesky_with_jitter(K)
    except GPNumericalError:
        return 1e25, np.zeros_like(params)
    alpha = cho_solve((L, True), gamma)
    nlml = 0.5 * gamma @ alpha + np.log(np.diag(L)).sum() + 0.5 * n * np.log(2.0 * np.pi)
    Kinv = cho_solve((L, True), np.eye(n))
    Wm = np.outer(alpha, alpha) - Kinv  # d(lml)/dK = 0.5 * Wm
    if nu == 2.5:
        s5r = np.sqrt(5.0) * r
        radial = sf2 * (5.0 / 3.0) * (1.0 + s5r) * np.exp(-s5r)
    else:
        radial = sf2 * 3.0 * np.exp(-np.sqrt(3.0) * r)
    grad = np.empty_like(params)
    # dK/dlog(l_j) = radial * (x_j - x'_j)^2 / l_j^2
    grad[:d] = -0.5 * np.einsum("ab,abj->j", Wm * radial, diff2)
    grad[d] = -0.5 * np.sum(Wm * K0)
    grad[d + 1] = -0.5 * sn2 * np.trace(Wm)
    return nlml, grad


def _pack(spec: KernelSpec, noise_var: float, d: int) -> np.ndarray:
    ls = np.broadcast_to(spec.lengthscales, (d,))
    return np.concatenate([np.log(ls), [np.log(spec.signal_var), np.log(max(noise_var, NOISE_FLOOR))]])


def _unpack(params, d, nu) -> tuple[KernelSpec, float]:
    return KernelSpec(np.exp(params[:d]), float(np.exp(params[d])), nu), float(np.exp(params[d + 1]))


def fit_hyperparameters(
    X,
    y,
    nu: float = 2.5,
    restarts: int = 8,
    rng: np.random.Generator | None = None,
    previous: tuple[KernelSpec, float] | None = None,
    standardize: bool = True,
    maxiter: int = 200,
) -> tuple[KernelSpec, float]:
    """Maximize the log evidence over log-hyperparameters by multi-start L-BFGS-B.

    Start points are drawn log-uniformly (lengthscales in [0.1, 10], signal
    variance in [0.01, 100], noise variance in [1e-6, 0.1]). ``previous``, if
    given, is used as an extra start and as the fallback if every start fails.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least two observations to fit hyperparameters")
    rng = np.random.default_rng() if rng is None else rng
    gamma = GPModel(X, y, KernelSpec(np.ones(d), 1.0, nu), 1.0, standardize).gamma

    starts = []
    for _ in range(restarts):
        starts.append(np.concatenate([
            rng.uniform(np.log(1e-1), np.log(1e1), d),
            [rng.uniform(np.log(1e-2), np.log(1e2)), rng.uniform(np.log(1e-6), np.log(1e-1))],
        ]))
    if previous is not None:
        starts.append(_pack(previous[0], previous[1], d))
    bounds = [LOG_LENGTHSCALE_BOUNDS] * d + [LOG_SIGNAL_BOUNDS, LOG_NOISE_BOUNDS]
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])

    best_x, best_f = None, np.inf
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for x0 in starts:
            x0 = np.clip(x0, lo, hi)
            f0, _ = _neg_lml_and_grad(x0, X, gamma, nu)
            try:
                res = minimize(_neg_lml_and_grad, x0, args=(X, gamma, nu), jac=True,
                               method="L-BFGS-B", bounds=bounds, options={"maxiter": maxiter})
                xr, fr = res.x, res.fun
            except (ValueError, np.linalg.LinAlgError):
                xr, fr = x0, f0
            if not np.isfinite(fr) or fr > f0:
                xr, fr = x0, f0
            if np.isfinite(fr) and fr < 1e25 and fr < best_f:
                best_x, best_f = xr, fr
    if best_x is None:
        if previous is None:
            raise GPNumericalError("hyperparameter fitting failed from every start")
        warnings.warn("hyperparameter fitting failed; keeping previous values", RuntimeWarning)
        return previous
    return _unpack(best_x, d, nu)


def fit_gp(X, y, nu=2.5, restarts=8, rng=None, previous=None, standardize=True) -> GPModel:
    spec, noise = fit_hyperparameters(X, y, nu, restarts, rng, previous, standardize)
    return GPModel(X, y, spec, noise, standardize)
