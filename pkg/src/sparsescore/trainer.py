"""Minibatch training loop: Adam on (theta, kappa) with optional projection.

One step draws a time per row as ``U(0,1) (1 - eps) + eps`` and a fresh
standard normal per row, takes the exact gradient of the regularized
objective, applies a bias-corrected Adam update, then (when enabled)
projects the parameters back onto the l1 ball and clamps kappa away from
zero.  Everything is driven by a single seeded generator in a fixed draw
order (model init, then per epoch: permutation, then per batch: times,
noise), so one seed yields bit-identical checkpoints.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .objective import dsm_grad
from .schedule import VESchedule
from .scorenet import ScoreModel, init_model, project_l1


@dataclass(frozen=True)
class ArchConfig:
    """Network shape knobs (the ``net`` config section)."""

    hidden: tuple = (64, 64, 64)
    time_feat_dim: int = 16
    freq_scale: float = 30.0
    l1_radius: float = 1.0
    output_l1_cap: float = 1.0
    output_cap: bool = True


@dataclass(frozen=True)
class TrainConfig:
    """Training knobs (the ``train`` and ``objective`` config sections).

    Attributes:
        r: Scale-penalty weight, >= 0.
        epochs: Number of passes over the data.
        batch_size: Rows per step, >= 1.
        learning_rate: Adam step size.
        eps: Time floor for the per-row uniform draw, in (0, 0.01).
        seed: Seed of the run's generator.
        projection: Project parameters onto the l1 ball after each step.
        kappa_init: Initial scale.
        kappa_trainable: Whether Adam updates kappa.
        weighting: Loss weighting mode, "none" or "sigma2".
    """

    r: float = 0.0
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 0.001
    eps: float = 1e-5
    seed: int = 0
    projection: bool = False
    kappa_init: float = 1.0
    kappa_trainable: bool = True
    weighting: str = "none"

    def __post_init__(self):
        if self.r < 0.0:
            raise ValueError("r must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 < self.eps < 0.01:
            raise ValueError("eps must lie in (0, 0.01)")
        if self.kappa_init <= 0.0:
            raise ValueError("kappa_init must be > 0")


@dataclass
class StepRecord:
    epoch: int
    step: int
    fit_term: float
    reg_term: float
    total: float
    kappa: float


@dataclass
class TrainHistory:
    """Per-step loss records plus per-epoch kappa and wall-clock traces."""

    records: list = field(default_factory=list)
    kappa_per_epoch: list = field(default_factory=list)
    seconds_per_epoch: list = field(default_factory=list)

    def fit_curve(self) -> np.ndarray:
        return np.array([rec.fit_term for rec in self.records])


class TrainingDiverged(RuntimeError):
    """Raised when the loss turns non-finite; carries a diagnostic snapshot."""

    def __init__(self, step: int, batch_indices, kappa: float):
        self.step = step
        self.batch_indices = np.asarray(batch_indices)
        self.kappa = kappa
        super().__init__(
            f"non-finite loss at step {step} (kappa={kappa:.6g}, "
            f"batch of {len(self.batch_indices)} rows)"
        )


def adam_init(params: list) -> dict:
    """Fresh Adam state (first/second moment buffers and step counter)."""
    return {
        "t": 0,
        "m": [np.zeros_like(p) for p in params],
        "v": [np.zeros_like(p) for p in params],
    }


def adam_step(
    params: list,
    grads: list,
    state: dict,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps_adam: float = 1e-8,
) -> tuple[list, dict]:
    """One bias-corrected Adam update over a list of arrays.

    Returns the updated parameter list and state; the input arrays are
    not mutated.
    """
    state["t"] += 1
    t = state["t"]
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state["m"][i] = beta1 * state["m"][i] + (1.0 - beta1) * g
        state["v"][i] = beta2 * state["v"][i] + (1.0 - beta2) * g**2
        m_hat = state["m"][i] / (1.0 - beta1**t)
        v_hat = state["v"][i] / (1.0 - beta2**t)
        out.append(p - lr * m_hat / (np.sqrt(v_hat) + eps_adam))
    return out, state


def _flatten_grads(bundle, kappa_trainable: bool) -> list:
    flat = []
    for dw, db in bundle.d_weights:
        flat.extend((dw, db))
    if kappa_trainable:
        flat.append(np.asarray(bundle.d_kappa))
    return flat


def _model_params(model: ScoreModel, kappa_trainable: bool) -> list:
    flat = []
    for w, b in model.weights:
        flat.extend((w, b))
    if kappa_trainable:
        flat.append(np.asarray(model.kappa))
    return flat


def _install_params(model: ScoreModel, params: list, kappa_trainable: bool) -> None:
    n_layers = len(model.weights)
    model.weights = [(params[2 * i], params[2 * i + 1]) for i in range(n_layers)]
    if kappa_trainable:
        model.kappa = max(float(params[-1]), 1e-6)


def train(
    data: np.ndarray,
    cfg: TrainConfig,
    sched: VESchedule,
    arch: ArchConfig = ArchConfig(),
    callback=None,
) -> tuple[ScoreModel, TrainHistory]:
    """Run the full training loop on a data matrix.

    Args:
        data: Samples, shape (n, d) with n >= cfg.batch_size.
        cfg: Training configuration.
        sched: Continuous noise schedule.
        arch: Network architecture.
        callback: Optional ``callback(epoch, model)`` hook, invoked after
            each epoch (used for periodic checkpoints).

    Returns:
        The trained model and the step-level history.

    Raises:
        TrainingDiverged: On a non-finite loss value.
    """
    data = np.asarray(data, dtype=float)
    n, d = data.shape
    if n < cfg.batch_size:
        raise ValueError("need at least one full batch of data")
    rng = np.random.default_rng(cfg.seed)
    model = init_model(
        dim=d,
        hidden=arch.hidden,
        time_feat_dim=arch.time_feat_dim,
        freq_scale=arch.freq_scale,
        l1_radius=arch.l1_radius,
        output_l1_cap=arch.output_l1_cap,
        cap_enabled=arch.output_cap,
        kappa=cfg.kappa_init,
        rng=rng,
    )
    state = adam_init(_model_params(model, cfg.kappa_trainable))
    history = TrainHistory()
    n_batches = math.ceil(n / cfg.batch_size)
    step = 0
    for epoch in range(cfg.epochs):
        tic = time.perf_counter()
        perm = rng.permutation(n)
        for b_idx in range(n_batches):
            rows = perm[b_idx * cfg.batch_size : (b_idx + 1) * cfg.batch_size]
            x0 = data[rows]
            t_batch = rng.random(rows.size) * (1.0 - cfg.eps) + cfg.eps
            z = rng.standard_normal((rows.size, d))
            bundle, loss = dsm_grad(
                model, x0, t_batch, z, sched, cfg.r, weighting=cfg.weighting
            )
            if not np.isfinite(loss.total):
                raise TrainingDiverged(step, rows, model.kappa)
            params, state = adam_step(
                _model_params(model, cfg.kappa_trainable),
                _flatten_grads(bundle, cfg.kappa_trainable),
                state,
                cfg.learning_rate,
            )
            _install_params(model, params, cfg.kappa_trainable)
            if cfg.projection:
                model.weights = project_l1(model.weights, model.l1_radius)
            history.records.append(
                StepRecord(
                    epoch=epoch,
                    step=step,
                    fit_term=loss.fit_term,
                    reg_term=loss.reg_term,
                    total=loss.total,
                    kappa=model.kappa,
                )
            )
            step += 1
        history.kappa_per_epoch.append(model.kappa)
        history.seconds_per_epoch.append(time.perf_counter() - tic)
        if callback is not None:
            callback(epoch, model)
    return model, history
