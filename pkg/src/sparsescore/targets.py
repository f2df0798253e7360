"""Analytic target densities with exact smoothed scores.

Every experiment in this package measures a trained model against one of
three target families, all with diagonal structure so that the density
perturbed by Gaussian noise of scale ``sigma_t`` stays closed-form:

* :class:`Gaussian` — diagonal Gaussian; smoothing adds ``sigma_t^2`` to
  each variance.
* :class:`GaussianMixture` — mixture of diagonal Gaussians; the smoothed
  score is a responsibility-weighted sum, evaluated in log space.
* :class:`GaussianUniformProduct` — independent product of Gaussian
  coordinates and boxed-uniform coordinates; the smoothed uniform score
  is a ratio of normal pdf and cdf differences with a far-tail
  asymptotic branch.

All oracle evaluations are pure functions of immutable parameters;
sampling takes the caller's generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr

_LOG_2PI = math.log(2.0 * math.pi)


def conditional_score(x_t, x0, sigma_t: float):
    """Score of the Gaussian perturbation kernel, ``-(x_t - x0)/sigma_t^2``.

    This is the regression target of denoising score matching.
    """
    if sigma_t <= 0.0:
        raise ValueError("sigma_t must be > 0")
    return -(np.asarray(x_t, dtype=float) - np.asarray(x0, dtype=float)) / sigma_t**2


def _as_batch(x, dim: int):
    """Coerce ``x`` to shape (n, dim); report whether it arrived flat."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != dim:
            raise ValueError(f"point has length {arr.shape[0]}, expected {dim}")
        return arr[None, :], True
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"expected shape (n, {dim}), got {arr.shape}")
    return arr, False


class TargetDensity:
    """Shared interface of the analytic targets.

    Subclasses provide exact i.i.d. samples, the normalized log-density
    of the ``sigma_t``-smoothed marginal, and its gradient.
    """

    dim: int
    kind: str

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def log_density(self, x, sigma_t: float):
        raise NotImplementedError

    def true_score(self, x, sigma_t: float):
        raise NotImplementedError

    def second_moment(self) -> float:
        """E ||X||^2 under the unperturbed density."""
        raise NotImplementedError


@dataclass(frozen=True)
class Gaussian(TargetDensity):
    """Diagonal Gaussian target.

    Attributes:
        mean: Mean vector, shape (d,).
        var: Per-coordinate variances, shape (d,), all > 0.
    """

    mean: np.ndarray
    var: np.ndarray
    kind: str = "gaussian"

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.atleast_1d(np.asarray(self.var, dtype=float))
        if mean.shape != var.shape:
            raise ValueError("mean and var must have the same length")
        if np.any(var <= 0.0):
            raise ValueError("all variances must be > 0")
        mean.setflags(write=False)
        var.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise ValueError("n must be >= 1")
        return self.mean + rng.standard_normal((n, self.dim)) * np.sqrt(self.var)

    def log_density(self, x, sigma_t: float):
        if sigma_t < 0.0:
            raise ValueError("sigma_t must be >= 0")
        xb, flat = _as_batch(x, self.dim)
        v = self.var + sigma_t**2
        ll = -0.5 * np.sum((xb - self.mean) ** 2 / v + np.log(v) + _LOG_2PI, axis=1)
        return float(ll[0]) if flat else ll

    def true_score(self, x, sigma_t: float):
        if sigma_t < 0.0:
            raise ValueError("sigma_t must be >= 0")
        xb, flat = _as_batch(x, self.dim)
        score = -(xb - self.mean) / (self.var + sigma_t**2)
        return score[0] if flat else score

    def second_moment(self) -> float:
        return float(np.sum(self.mean**2 + self.var))


@dataclass(frozen=True)
class GaussianMixture(TargetDensity):
    """Mixture of diagonal Gaussians.

    Attributes:
        weights: Component weights, shape (K,), positive, summing to 1.
        means: Component means, shape (K, d).
        variances: Component variances, shape (K, d), all > 0.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    kind: str = "gaussian_mixture"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        var = np.atleast_2d(np.asarray(self.variances, dtype=float))
        if w.ndim != 1 or mu.shape[0] != w.shape[0] or var.shape != mu.shape:
            raise ValueError("weights, means, variances have inconsistent shapes")
        if np.any(w <= 0.0):
            raise ValueError("mixture weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights sum to {w.sum()}, expected 1")
        if np.any(var <= 0.0):
            raise ValueError("all variances must be > 0")
        for a in (w, mu, var):
            a.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise ValueError("n must be >= 1")
        comp = rng.choice(self.weights.shape[0], size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[comp] + z * np.sqrt(self.variances[comp])

    def _component_logpdf(self, xb: np.ndarray, sigma_t: float) -> np.ndarray:
        """Per-component log densities, shape (n, K)."""
        v = self.variances + sigma_t**2  # (K, d)
        diff = xb[:, None, :] - self.means[None, :, :]  # (n, K, d)
        return -0.5 * np.sum(diff**2 / v + np.log(v) + _LOG_2PI, axis=2)

    def log_density(self, x, sigma_t: float):
        if sigma_t < 0.0:
            raise ValueError("sigma_t must be >= 0")
        xb, flat = _as_batch(x, self.dim)
        lp = self._component_logpdf(xb, sigma_t) + np.log(self.weights)
        m = np.max(lp, axis=1, keepdims=True)
        ll = (m + np.log(np.sum(np.exp(lp - m), axis=1, keepdims=True)))[:, 0]
        return float(ll[0]) if flat else ll

    def true_score(self, x, sigma_t: float):
        if sigma_t < 0.0:
            raise ValueError("sigma_t must be >= 0")
        xb, flat = _as_batch(x, self.dim)
        lp = self._component_logpdf(xb, sigma_t) + np.log(self.weights)
        m = np.max(lp, axis=1, keepdims=True)
        resp = np.exp(lp - m)
        resp /= np.sum(resp, axis=1, keepdims=True)  # (n, K)
        v = self.variances + sigma_t**2
        comp_score = -(xb[:, None, :] - self.means[None, :, :]) / v  # (n, K, d)
        score = np.sum(resp[:, :, None] * comp_score, axis=1)
        return score[0] if flat else score

    def second_moment(self) -> float:
        per_comp = np.sum(self.means**2 + self.variances, axis=1)
        return float(np.dot(self.weights, per_comp))


def _uniform_smoothed_logpdf(y: np.ndarray, a: float, b: float, sigma: float):
    """log of Uniform(a, b) convolved with N(0, sigma^2), elementwise."""
    beta = (b - y) / sigma
    alpha = (a - y) / sigma
    # Phi(beta) - Phi(alpha), in log space; mirror the tail so the larger
    # cdf value is always the well-conditioned one.
    mirror = beta + alpha < 0.0  # both arguments lean negative: use right tail
    hi = np.where(mirror, log_ndtr(beta), log_ndtr(-alpha))
    lo = np.where(mirror, log_ndtr(alpha), log_ndtr(-beta))
    log_mass = hi + np.log1p(-np.exp(np.minimum(lo - hi, -1e-300)))
    return log_mass - math.log(b - a)


def _uniform_smoothed_score(y: np.ndarray, a: float, b: float, sigma: float):
    """Score of the smoothed uniform coordinate, elementwise in ``y``."""
    beta = (b - y) / sigma
    alpha = (a - y) / sigma
    la = -0.5 * alpha**2
    lb = -0.5 * beta**2
    log_mass = _uniform_smoothed_logpdf(y, a, b, sigma) + math.log(b - a)
    # numerator phi(alpha) - phi(beta): positive iff |alpha| < |beta|
    hi = np.maximum(la, lb)
    diff = -np.abs(la - lb)
    with np.errstate(divide="ignore"):  # diff == 0 at the symmetry point
        log_num = hi + np.log1p(-np.exp(np.minimum(diff, -1e-300))) - 0.5 * _LOG_2PI
    sign = np.where(la >= lb, 1.0, -1.0)
    sign = np.where(la == lb, 0.0, sign)
    score = sign * np.exp(log_num - log_mass) / sigma
    # Far outside the box the pdf/cdf ratio loses relative precision;
    # switch to the Mills-ratio expansion around the nearest edge.
    z_hi = (y - b) / sigma
    far_hi = z_hi > 8.0
    if np.any(far_hi):
        score = np.where(far_hi, -(y - b) / sigma**2 - 1.0 / np.maximum(y - b, 1e-300), score)
    z_lo = (a - y) / sigma
    far_lo = z_lo > 8.0
    if np.any(far_lo):
        score = np.where(far_lo, -(y - a) / sigma**2 - 1.0 / np.minimum(y - a, -1e-300), score)
    return score


@dataclass(frozen=True)
class GaussianUniformProduct(TargetDensity):
    """Independent product of Gaussian and boxed-uniform coordinates.

    Attributes:
        dim: Total number of coordinates.
        gaussian_idx: Sorted indices of the Gaussian coordinates.
        mean: Means of the Gaussian coordinates, shape (len(gaussian_idx),).
        var: Variances of the Gaussian coordinates, same shape.
        bounds: One (a, b) interval per non-Gaussian coordinate, a < b,
            listed in increasing coordinate order.
    """

    dim: int
    gaussian_idx: tuple
    mean: np.ndarray
    var: np.ndarray
    bounds: tuple
    kind: str = "gaussian_uniform_product"

    def __post_init__(self):
        g_idx = tuple(sorted(int(i) for i in self.gaussian_idx))
        if any(not 0 <= i < self.dim for i in g_idx) or len(set(g_idx)) != len(g_idx):
            raise ValueError("gaussian_idx must be distinct indices in [0, dim)")
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.atleast_1d(np.asarray(self.var, dtype=float))
        if mean.shape != (len(g_idx),) or var.shape != (len(g_idx),):
            raise ValueError("mean/var must match the number of Gaussian coordinates")
        if np.any(var <= 0.0):
            raise ValueError("all variances must be > 0")
        bounds = tuple((float(a), float(b)) for a, b in self.bounds)
        if len(bounds) != self.dim - len(g_idx):
            raise ValueError("need one (a, b) pair per uniform coordinate")
        if any(a >= b for a, b in bounds):
            raise ValueError("each interval needs a < b")
        mean.setflags(write=False)
        var.setflags(write=False)
        object.__setattr__(self, "gaussian_idx", g_idx)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)
        object.__setattr__(self, "bounds", bounds)

    @property
    def uniform_idx(self) -> tuple:
        return tuple(i for i in range(self.dim) if i not in set(self.gaussian_idx))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise ValueError("n must be >= 1")
        out = np.empty((n, self.dim))
        g = list(self.gaussian_idx)
        if g:
            out[:, g] = self.mean + rng.standard_normal((n, len(g))) * np.sqrt(self.var)
        for j, (a, b) in zip(self.uniform_idx, self.bounds):
            out[:, j] = rng.uniform(a, b, size=n)
        return out

    def log_density(self, x, sigma_t: float):
        if sigma_t <= 0.0:
            raise ValueError("sigma_t must be > 0 for uniform coordinates")
        xb, flat = _as_batch(x, self.dim)
        ll = np.zeros(xb.shape[0])
        g = list(self.gaussian_idx)
        if g:
            v = self.var + sigma_t**2
            ll += -0.5 * np.sum(
                (xb[:, g] - self.mean) ** 2 / v + np.log(v) + _LOG_2PI, axis=1
            )
        for j, (a, b) in zip(self.uniform_idx, self.bounds):
            ll += _uniform_smoothed_logpdf(xb[:, j], a, b, sigma_t)
        return float(ll[0]) if flat else ll

    def true_score(self, x, sigma_t: float):
        if sigma_t <= 0.0:
            raise ValueError("sigma_t must be > 0 for uniform coordinates")
        xb, flat = _as_batch(x, self.dim)
        score = np.zeros_like(xb)
        g = list(self.gaussian_idx)
        if g:
            score[:, g] = -(xb[:, g] - self.mean) / (self.var + sigma_t**2)
        for j, (a, b) in zip(self.uniform_idx, self.bounds):
            score[:, j] = _uniform_smoothed_score(xb[:, j], a, b, sigma_t)
        return score[0] if flat else score

    def second_moment(self) -> float:
        total = float(np.sum(self.mean**2 + self.var))
        for a, b in self.bounds:
            total += (a * a + a * b + b * b) / 3.0
        return total


def scale_pushforward(target: TargetDensity, c: float) -> TargetDensity:
    """Target of the scaled variable ``c * X`` for ``X ~ target``.

    Lets the discrete-chain marginal ``sqrt(abar) x0 + sqrt(1-abar) z``
    reuse the same smoothed oracles: it is the pushforward by
    ``sqrt(abar)`` perturbed at ``sigma = sqrt(1-abar)``.
    """
    if c <= 0.0:
        raise ValueError("scale must be > 0")
    if isinstance(target, Gaussian):
        return Gaussian(mean=c * target.mean, var=c**2 * target.var)
    if isinstance(target, GaussianMixture):
        return GaussianMixture(
            weights=target.weights, means=c * target.means, variances=c**2 * target.variances
        )
    if isinstance(target, GaussianUniformProduct):
        return GaussianUniformProduct(
            dim=target.dim,
            gaussian_idx=target.gaussian_idx,
            mean=c * target.mean,
            var=c**2 * target.var,
            bounds=tuple((c * a, c * b) for a, b in target.bounds),
        )
    raise TypeError(f"unsupported target type {type(target).__name__}")


def kl_gaussian_moments(samples: np.ndarray, target: Gaussian) -> float:
    """KL from a moment-matched diagonal Gaussian fit to ``target``.

    Fits mean and variance per coordinate and returns the closed-form
    ``KL(fit || target)`` in nats.

    Args:
        samples: Sample matrix, shape (n, d) with n > d.
        target: Diagonal Gaussian target.

    Raises:
        ValueError: If the fit degenerates (a variance below 1e-12) or
            the sample is too small.
    """
    if not isinstance(target, Gaussian):
        raise TypeError("moment-matched KL is only exact against a Gaussian target")
    s = np.asarray(samples, dtype=float)
    if s.ndim != 2 or s.shape[1] != target.dim:
        raise ValueError(f"expected samples of shape (n, {target.dim})")
    if s.shape[0] <= target.dim:
        raise ValueError("need more samples than dimensions")
    mu_hat = s.mean(axis=0)
    var_hat = s.var(axis=0)
    if np.any(var_hat < 1e-12):
        raise ValueError("degenerate sample: fitted variance below 1e-12")
    ratio = var_hat / target.var
    kl = 0.5 * np.sum(ratio + (mu_hat - target.mean) ** 2 / target.var - 1.0 - np.log(ratio))
    return float(kl)
