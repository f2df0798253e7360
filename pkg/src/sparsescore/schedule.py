"""Forward-process noise schedules.

Two kinds of schedule drive everything else:

* :class:`VESchedule` — the continuous variance-exploding perturbation
  kernel ``x_t = x_0 + sigma_t * z`` with ``sigma_t^2 = (sigma^{2t} - 1)
  / (2 ln sigma)``.  Used by training and Langevin sampling.
* :class:`DiscreteSchedule` — the discrete chain ``x_t = sqrt(1-beta_t)
  x_{t-1} + sqrt(beta_t) w_t`` with the constant rate ``beta_t =
  c log(T)/T``.  Used by the theory-audit diagnostics (reverse mean,
  tilting residual, bound audit terms).

Both are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class VESchedule:
    """Continuous variance-exploding noise curve.

    Attributes:
        sigma_max: Growth base ``sigma`` of the noise curve; must be > 1.
        eps: Smallest admissible time; training and sampling never
            evaluate the curve below this floor.
    """

    sigma_max: float
    eps: float = 1e-5

    def __post_init__(self):
        if self.sigma_max <= 1.0:
            raise ValueError(f"sigma_max must be > 1, got {self.sigma_max}")
        if not 0.0 < self.eps < 1.0:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")

    def sigma(self, t):
        """Noise standard deviation at time ``t``.

        Args:
            t: Scalar or array of times in (0, 1].

        Returns:
            ``sqrt((sigma_max^{2t} - 1) / (2 ln sigma_max))``, same shape
            as ``t``.

        Raises:
            ValueError: If any ``t`` is outside (0, 1].
        """
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr <= 0.0) or np.any(t_arr > 1.0):
            raise ValueError("t must lie in (0, 1]")
        two_log = 2.0 * math.log(self.sigma_max)
        # expm1 keeps precision for t -> 0 where sigma_max^{2t} -> 1.
        var = np.expm1(t_arr * two_log) / two_log
        out = np.sqrt(var)
        return float(out) if np.isscalar(t) or out.ndim == 0 else out


def ve_sigma(sched: VESchedule, t) -> float:
    """Functional alias for :meth:`VESchedule.sigma`."""
    return sched.sigma(t)


@dataclass(frozen=True)
class DiscreteSchedule:
    """Discrete forward chain with constant noise rate.

    Attributes:
        T: Number of steps.
        c: Schedule constant; the per-step rate is ``c log(T)/T``.
        beta: Per-step noise amounts, length ``T``.
        alpha: ``1 - beta``.
        alpha_bar: Cumulative products of ``alpha``, length ``T``.
    """

    T: int
    c: float
    beta: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)


def make_discrete(T: int, c: float = 1.0) -> DiscreteSchedule:
    """Build the constant-rate discrete schedule ``beta_t = c log(T)/T``.

    The constant schedule meets the step-size bound ``1 - alpha_t <=
    c log(T)/T`` with equality at every step.

    Args:
        T: Number of steps, at least 2.
        c: Positive schedule constant.

    Returns:
        A fully populated :class:`DiscreteSchedule`.

    Raises:
        ValueError: If the implied ``beta`` falls outside (0, 1).
    """
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if c <= 0.0:
        raise ValueError(f"c must be > 0, got {c}")
    beta_val = c * math.log(T) / T
    if not 0.0 < beta_val < 1.0:
        raise ValueError(
            f"c*log(T)/T = {beta_val:.6g} is outside (0, 1); pick a smaller c"
        )
    beta = np.full(T, beta_val)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    beta.setflags(write=False)
    alpha.setflags(write=False)
    alpha_bar.setflags(write=False)
    return DiscreteSchedule(T=T, c=c, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def alpha_bar_at(sched: DiscreteSchedule, t: int) -> float:
    """Cumulative retention product up to step ``t``; 1 for ``t = 0``.

    Args:
        sched: Discrete schedule.
        t: Step index in [0, T].

    Raises:
        IndexError: If ``t`` is outside [0, T].
    """
    if not 0 <= t <= sched.T:
        raise IndexError(f"t={t} outside [0, {sched.T}]")
    if t == 0:
        return 1.0
    return float(sched.alpha_bar[t - 1])
