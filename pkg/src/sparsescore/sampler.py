"""Annealed Langevin sampling over the descending linear time grid.

Chains start at ``sigma_1 * N(0, I)`` and follow ``x <- x + eta *
score(x, t) + sqrt(2 eta) z`` down the grid ``linspace(1, eps, T)``
with the fixed step ``eta = t[0] - t[1]``.  The score argument is any
``(x_batch, t) -> batch`` callable: a trained model's effective score
or an analytic oracle, which makes oracle-vs-model A/B runs trivial.

Each chain consumes its own generator substream keyed by (seed, chain
index), so results do not depend on batching or execution order, and
recording trajectories cannot perturb the chain.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .schedule import DiscreteSchedule, VESchedule


@dataclass
class SampleRun:
    """Outcome of one sampling run.

    Attributes:
        T: Number of grid points.
        eps: Grid floor.
        eta: Step size, ``grid[0] - grid[1]``.
        n: Number of chains.
        seed: Run seed.
        grid: The descending time grid, shape (T,).
        finals: Last state per chain, shape (n, d).
        trajectories: Optional (n, T+1, d) tensor including the init.
        diverged: (chain, step) pairs of chains frozen after turning
            non-finite.
    """

    T: int
    eps: float
    eta: float
    n: int
    seed: int
    grid: np.ndarray
    finals: np.ndarray
    trajectories: np.ndarray | None = None
    diverged: list = None

    def __post_init__(self):
        if self.diverged is None:
            self.diverged = []


def oracle_score(target, sched: VESchedule):
    """Wrap a target's exact smoothed score as a sampler score function."""

    def score(x, t):
        return target.true_score(x, sched.sigma(t))

    return score


def langevin_sample(
    score,
    sched: VESchedule,
    T: int,
    n: int,
    dim: int,
    seed: int,
    record: bool = False,
    temperature: float = 1.0,
) -> SampleRun:
    """Run ``n`` independent annealed Langevin chains.

    Args:
        score: Callable ``(x, t) -> array`` mapping a (n, d) state batch
            and scalar time to score vectors.
        sched: Noise schedule; fixes ``sigma_1`` and the grid floor.
        T: Number of grid points, >= 2.
        n: Number of chains.
        dim: State dimension d.
        seed: Run seed; chain i consumes the substream (seed, i).
        record: Keep the full (n, T+1, d) trajectory tensor.
        temperature: Scales the injected noise variance; 0 gives the
            deterministic (score-flow) diagnostic variant.

    Returns:
        A :class:`SampleRun`; chains that turn non-finite are frozen at
        their last state and listed in ``diverged``.
    """
    if T < 2:
        raise ValueError("T must be >= 2")
    if n < 1:
        raise ValueError("n must be >= 1")
    d = int(dim)
    grid = np.linspace(1.0, sched.eps, T)
    eta = float(grid[0] - grid[1])
    sigma_1 = sched.sigma(1.0)

    # Pre-draw every increment from per-chain substreams (init draw, then
    # one per grid point) so chunking cannot change the result.
    noise = np.empty((n, T + 1, d))
    for i in range(n):
        g = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, i))))
        noise[i] = g.standard_normal((T + 1, d))

    x = sigma_1 * noise[:, 0, :]
    alive = np.ones(n, dtype=bool)
    diverged: list = []
    traj = np.empty((n, T + 1, d)) if record else None
    if record:
        traj[:, 0, :] = x
    root_step = np.sqrt(2.0 * eta * temperature)
    for k, t in enumerate(grid):
        drift = eta * np.asarray(score(x, float(t)))
        x_new = x + drift + root_step * noise[:, k + 1, :]
        bad = alive & ~np.all(np.isfinite(x_new), axis=1)
        if np.any(bad):
            for idx in np.nonzero(bad)[0]:
                diverged.append((int(idx), k))
            alive &= ~bad
        x = np.where(alive[:, None], x_new, x)
        if record:
            traj[:, k + 1, :] = x
    return SampleRun(
        T=T,
        eps=sched.eps,
        eta=eta,
        n=n,
        seed=seed,
        grid=grid,
        finals=x,
        trajectories=traj,
        diverged=diverged,
    )


def reverse_mean(x_t, score_value, sched: DiscreteSchedule, t: int):
    """Mean of the one-step reverse transition in the discrete chain.

    ``(x_t + (1 - alpha_t) * score) / sqrt(alpha_t)`` for the 1-indexed
    step ``t``.
    """
    if not 1 <= t <= sched.T:
        raise IndexError(f"t={t} outside [1, {sched.T}]")
    alpha_t = sched.alpha[t - 1]
    x = np.asarray(x_t, dtype=float)
    s = np.asarray(score_value, dtype=float)
    return (x + (1.0 - alpha_t) * s) / np.sqrt(alpha_t)


def save_trajectories(run: SampleRun, path) -> None:
    """Write the trajectory tensor: one JSON header line, then raw
    little-endian float64 payload in C order."""
    if run.trajectories is None:
        raise ValueError("run has no recorded trajectories")
    header = {
        "dims": list(run.trajectories.shape),
        "dtype": "<f8",
        "seed": run.seed,
        "grid": run.grid.tolist(),
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8"))
        f.write(b"\n")
        f.write(np.ascontiguousarray(run.trajectories, dtype="<f8").tobytes())


def load_trajectories(path) -> tuple[np.ndarray, dict]:
    """Read a trajectory file back as (tensor, header)."""
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        payload = f.read()
    tensor = np.frombuffer(payload, dtype="<f8").reshape(header["dims"])
    return tensor, header
