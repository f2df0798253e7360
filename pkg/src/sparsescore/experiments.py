"""Experiment pipelines: the pieces the command-line entry points and the
acceptance suite both drive.

Each pipeline builds its objects from a resolved :class:`RunConfig`,
reports everything it measured as metric records, and leaves artifact
writing to the caller so that a pipeline can also run in-memory (the
composition contract: one sweep cell equals a manual train + sample +
eval chain).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .metrics import kl_knn, tilting_grid, tilting_residual
from .sampler import SampleRun, langevin_sample
from .schedule import DiscreteSchedule, VESchedule, make_discrete
from .targets import (
    Gaussian,
    GaussianMixture,
    GaussianUniformProduct,
    TargetDensity,
    kl_gaussian_moments,
)
from .trainer import ArchConfig, TrainConfig, TrainHistory, train
from .scorenet import ScoreModel


def build_target(cfg: RunConfig) -> TargetDensity:
    """Construct the analytic target from the ``target`` section."""
    kind = cfg["target.kind"]
    dim = cfg["target.dim"]
    if kind == "gaussian":
        mean = np.asarray(cfg["target.mean"], dtype=float)
        var = np.asarray(cfg["target.var"], dtype=float)
        if mean.size != dim or var.size != dim:
            raise ValueError("target.mean/target.var length must equal target.dim")
        return Gaussian(mean=mean, var=var)
    if kind == "gaussian_mixture":
        flat = np.asarray(cfg["target.mixture"], dtype=float)
        block = 1 + 2 * dim
        if flat.size == 0 or flat.size % block != 0:
            raise ValueError(
                "target.mixture must hold K blocks of (weight, mean*dim, var*dim)"
            )
        comp = flat.reshape(-1, block)
        return GaussianMixture(
            weights=comp[:, 0],
            means=comp[:, 1 : 1 + dim],
            variances=comp[:, 1 + dim :],
        )
    if kind == "gaussian_uniform_product":
        g_idx = tuple(cfg["target.gaussian_coords"])
        mean = np.asarray(cfg["target.mean"], dtype=float)[: len(g_idx)]
        var = np.asarray(cfg["target.var"], dtype=float)[: len(g_idx)]
        return GaussianUniformProduct(
            dim=dim, gaussian_idx=g_idx, mean=mean, var=var,
            bounds=tuple(cfg["target.uniform_bounds"]),
        )
    raise ValueError(f"unknown target.kind {kind!r}")


def build_ve(cfg: RunConfig) -> VESchedule:
    return VESchedule(sigma_max=cfg["schedule.sigma_max"], eps=cfg["schedule.eps"])


def build_discrete(cfg: RunConfig) -> DiscreteSchedule:
    return make_discrete(cfg["schedule.T"], cfg["schedule.c"])


def build_arch(cfg: RunConfig) -> ArchConfig:
    return ArchConfig(
        hidden=tuple(cfg["net.hidden"]),
        time_feat_dim=cfg["net.time_feat_dim"],
        freq_scale=cfg["net.freq_scale"],
        l1_radius=cfg["net.l1_radius"],
        output_l1_cap=cfg["net.output_l1_cap"],
        output_cap=cfg["constraint.output_cap"],
    )


def build_train_cfg(cfg: RunConfig, r: float | None = None, seed: int | None = None) -> TrainConfig:
    return TrainConfig(
        r=cfg["objective.r"] if r is None else r,
        epochs=cfg["train.epochs"],
        batch_size=cfg["train.batch_size"],
        learning_rate=cfg["train.learning_rate"],
        eps=cfg["schedule.eps"],
        seed=cfg["train.seed"] if seed is None else seed,
        projection=cfg["train.projection"],
        kappa_init=cfg["train.kappa_init"],
        kappa_trainable=cfg["train.kappa_trainable"],
        weighting=cfg["objective.weighting"],
    )


def displacement_stats(trajectories: np.ndarray) -> dict:
    """Per-axis mean absolute step size along sampled paths.

    The headline ratio compares the first axis against the sum of the
    others: small values mean the paths barely move off the sub-manifold
    spanned by the remaining axes.
    """
    steps = np.abs(np.diff(trajectories, axis=1))
    per_axis = steps.mean(axis=(0, 1))
    rest = float(per_axis[1:].sum())
    return {
        "per_axis": per_axis,
        "ratio_first_vs_rest": float(per_axis[0] / rest) if rest > 0 else math.inf,
    }


@dataclass
class TrainedRun:
    """A trained model plus everything measured about it."""

    r: float
    seed: int
    model: ScoreModel
    history: TrainHistory
    sample_run: SampleRun | None = None
    kl: float | None = None
    displacement: dict | None = None


def train_and_sample(
    cfg: RunConfig,
    target: TargetDensity,
    data: np.ndarray,
    r: float,
    seed: int,
    record: bool = False,
    chains: int | None = None,
    sample_seed: int | None = None,
) -> TrainedRun:
    """One full cell: train, sample, and measure KL against the target."""
    ve = build_ve(cfg)
    model, history = train(data, build_train_cfg(cfg, r=r, seed=seed), ve, build_arch(cfg))
    n_chains = cfg["sampler.chains"] if chains is None else chains
    run = langevin_sample(
        model.effective_score,
        ve,
        T=cfg["sampler.steps"],
        n=n_chains,
        dim=target.dim,
        seed=(1000 + seed) if sample_seed is None else sample_seed,
        record=record,
    )
    ok = np.all(np.isfinite(run.finals), axis=1)
    finals = run.finals[ok]
    if isinstance(target, Gaussian):
        kl = kl_gaussian_moments(finals, target)
    else:
        ref = target.sample(max(len(finals), 2000), np.random.default_rng(seed + 777_000))
        kl = kl_knn(ref, finals, k=cfg["metrics.knn_k"])
    out = TrainedRun(r=r, seed=seed, model=model, history=history, sample_run=run, kl=float(kl))
    if record:
        out.displacement = displacement_stats(run.trajectories)
    return out


@dataclass
class ToyResult:
    """Paired baseline/regularized runs of the 3D anisotropy experiment."""

    baseline: TrainedRun
    regularized: TrainedRun
    data: np.ndarray

    @property
    def ratio_gap(self) -> float:
        """Regularized minus baseline displacement ratio (negative when
        the regularized paths hug the sub-manifold more)."""
        return (
            self.regularized.displacement["ratio_first_vs_rest"]
            - self.baseline.displacement["ratio_first_vs_rest"]
        )


def toy_experiment(cfg: RunConfig, r_regularized: float | None = None) -> ToyResult:
    """Train the same data with and without the scale penalty and sample
    both with shared noise; the only difference between the runs is r."""
    target = build_target(cfg)
    data = target.sample(cfg["target.n"], np.random.default_rng(cfg["train.seed"] + 555_000))
    seed = cfg["train.seed"]
    sample_seed = 1000 + seed
    r_reg = cfg["objective.r"] if r_regularized is None else r_regularized
    base = train_and_sample(
        cfg, target, data, r=0.0, seed=seed, record=True, sample_seed=sample_seed
    )
    reg = train_and_sample(
        cfg, target, data, r=r_reg, seed=seed, record=True, sample_seed=sample_seed
    )
    return ToyResult(baseline=base, regularized=reg, data=data)


def product_target_for_sweep(cfg: RunConfig, s: int) -> GaussianUniformProduct:
    """d-dimensional target with s unit Gaussians and d-s boxed uniforms."""
    d = cfg["sweep.dim"]
    if not 1 <= s <= d:
        raise ValueError(f"s must lie in [1, {d}]")
    return GaussianUniformProduct(
        dim=d,
        gaussian_idx=tuple(range(s)),
        mean=np.zeros(s),
        var=np.ones(s),
        bounds=tuple((0.0, 1.0) for _ in range(d - s)),
    )


@dataclass
class SweepCell:
    s: int
    r: float
    seed: int
    kl: float | None
    kappa: float | None
    error: str | None = None


@dataclass
class SweepResult:
    cells: list = field(default_factory=list)

    def aggregate(self) -> dict:
        """(s, r) -> (mean KL, stderr over seeds) for successful cells."""
        table = {}
        keys = sorted({(c.s, c.r) for c in self.cells})
        for key in keys:
            vals = [c.kl for c in self.cells if (c.s, c.r) == key and c.kl is not None]
            if vals:
                arr = np.array(vals)
                se = arr.std(ddof=1) / math.sqrt(arr.size) if arr.size > 1 else 0.0
                table[key] = (float(arr.mean()), float(se))
        return table

    def dominance_rows(self, r_base: float, r_reg: float) -> list:
        """Per-s comparison rows: s, base mean/se, reg mean/se, winner."""
        agg = self.aggregate()
        rows = []
        for s in sorted({c.s for c in self.cells}):
            if (s, r_base) not in agg or (s, r_reg) not in agg:
                continue
            bm, bs = agg[(s, r_base)]
            rm, rs = agg[(s, r_reg)]
            rows.append({
                "s": s,
                "baseline_kl": bm, "baseline_se": bs,
                "regularized_kl": rm, "regularized_se": rs,
                "regularized_wins": rm < bm,
            })
        return rows


def sweep_experiment(cfg: RunConfig, progress=None) -> SweepResult:
    """Cartesian sweep over sparsity levels, tuning parameters, seeds.

    Individual cell failures are recorded in the result, not raised.
    """
    s_values = tuple(cfg["sweep.s_values"])
    r_values = tuple(cfg["sweep.r_values"])
    seeds = tuple(cfg["sweep.seeds"])
    if not s_values or not r_values or not seeds:
        raise ValueError("sweep grid must be nonempty (s_values, r_values, seeds)")
    result = SweepResult()
    for s in s_values:
        target = product_target_for_sweep(cfg, s)
        data = target.sample(cfg["target.n"], np.random.default_rng(7000 + s))
        for r in r_values:
            for seed in seeds:
                try:
                    run = train_and_sample(cfg, target, data, r=r, seed=seed)
                    cell = SweepCell(s=s, r=r, seed=seed, kl=run.kl, kappa=run.model.kappa)
                except Exception as exc:  # cell isolation: record, continue
                    cell = SweepCell(s=s, r=r, seed=seed, kl=None, kappa=None, error=str(exc))
                result.cells.append(cell)
                if progress is not None:
                    progress(cell)
    return result


def shrinkage_curve(cfg: RunConfig, r_values) -> list:
    """Final kappa per tuning parameter, all runs sharing one seed."""
    target = build_target(cfg)
    data = target.sample(cfg["target.n"], np.random.default_rng(cfg["train.seed"] + 555_000))
    ve = build_ve(cfg)
    out = []
    for r in r_values:
        model, _ = train(data, build_train_cfg(cfg, r=float(r)), ve, build_arch(cfg))
        out.append((float(r), float(model.kappa)))
    return out


def tilting_table(cfg: RunConfig, x_t: float = 0.9, score_shift: float = 0.0) -> list:
    """Tilting-factor residual for every step of the discrete schedule."""
    target = build_target(cfg)
    if not isinstance(target, Gaussian) or target.dim != 1:
        target = Gaussian(mean=np.zeros(1), var=np.ones(1))
    sched = build_discrete(cfg)
    rows = []
    for t in range(1, sched.T + 1):
        grid = tilting_grid(target, sched, t, x_t)
        rows.append((t, tilting_residual(target, sched, t, grid, x_t, score_shift=score_shift)))
    return rows
