"""Acceptance suite: one test per criterion, each printing a PASS line
with its headline numbers (run with ``pytest -v -s`` to see them).

Training-based criteria pin their seeds; every statistic here is
deterministic given those seeds, and the tolerances are the contract
values, not post-hoc calibrations.
"""

import math
import time

import numpy as np
import pytest

from sparsescore.config import resolve_config
from sparsescore.experiments import shrinkage_curve, sweep_experiment, toy_experiment
from sparsescore.metrics import sparsity_profile, tilting_grid, tilting_residual
from sparsescore.objective import dsm_grad, dsm_loss
from sparsescore.sampler import langevin_sample, oracle_score
from sparsescore.schedule import VESchedule, make_discrete
from sparsescore.scorenet import init_model, load_checkpoint, save_checkpoint
from sparsescore.targets import (
    Gaussian,
    GaussianMixture,
    GaussianUniformProduct,
    kl_gaussian_moments,
)
from sparsescore.trainer import ArchConfig, TrainConfig, train


def report(n, name, detail, elapsed):
    print(f"\n[ACCEPTANCE {n}] PASS {name}: {detail} ({elapsed:.1f}s)", flush=True)


# -------------------------------------------------------------------------
# 1. gradient correctness
# -------------------------------------------------------------------------


def _rand_model(rng):
    d = int(rng.integers(1, 6))
    width = int(rng.integers(4, 33))
    layers = int(rng.integers(1, 4))
    m = init_model(
        dim=d,
        hidden=(width,) * layers,
        time_feat_dim=2 * int(rng.integers(1, 5)),
        freq_scale=float(rng.uniform(1.0, 30.0)),
        cap_enabled=bool(rng.integers(0, 2)),
        kappa=float(rng.uniform(0.3, 4.0)),
        rng=np.random.default_rng(int(rng.integers(0, 2**31))),
    )
    if m.cap_enabled and rng.random() < 0.5:
        m.weights = [(4.0 * w, b) for w, b in m.weights]  # activate the cap branch
    return m, d


def _check_grad(value_fn, arrays_and_grads, kappa_box, d_kappa, h=1e-6, rtol=1e-5, n_entries=4, rng=None):
    for arr, grad in arrays_and_grads:
        idx_flat = rng.choice(arr.size, size=min(arr.size, n_entries), replace=False)
        for fi in idx_flat:
            idx = np.unravel_index(fi, arr.shape)
            old = arr[idx]
            arr[idx] = old + h
            f1 = value_fn()
            arr[idx] = old - h
            f0 = value_fn()
            arr[idx] = old
            fd = (f1 - f0) / (2 * h)
            if abs(fd) < 1e-7:
                continue
            assert abs(fd - grad[idx]) / abs(fd) <= rtol, (fd, grad[idx])
    model, = kappa_box
    k0 = model.kappa
    model.kappa = k0 + h
    f1 = value_fn()
    model.kappa = k0 - h
    f0 = value_fn()
    model.kappa = k0
    fd = (f1 - f0) / (2 * h)
    if abs(fd) >= 1e-7:
        assert abs(fd - d_kappa) / abs(fd) <= rtol


def test_criterion_1_gradient_correctness():
    tic = time.perf_counter()
    rng = np.random.default_rng(2024)
    sched = VESchedule(sigma_max=1.05)
    checked = 0
    for trial in range(50):
        m, d = _rand_model(rng)
        if trial % 2 == 0:
            x = rng.standard_normal(d)
            t = float(rng.uniform(0.05, 1.0))
            up = rng.standard_normal(d)
            bundle = m.backward(x, t, up)

            def value():
                return float(np.dot(up, m.kappa * m.forward(x, t)))

        else:
            b = int(rng.integers(2, 6))
            x0 = rng.standard_normal((b, d))
            tb = rng.uniform(0.05, 1.0, size=b)
            z = rng.standard_normal((b, d))
            r = float(rng.uniform(0.0, 0.01))
            bundle, _ = dsm_grad(m, x0, tb, z, sched, r)

            def value():
                return dsm_loss(m, x0, tb, z, sched, r).total

        pairs = []
        for li, (w, bv) in enumerate(m.weights):
            pairs.append((w, bundle.d_weights[li][0]))
            pairs.append((bv, bundle.d_weights[li][1]))
        _check_grad(value, pairs, [m], bundle.d_kappa, rng=rng)
        checked += 1
    elapsed = time.perf_counter() - tic
    assert checked == 50
    assert elapsed < 10.0
    report(1, "gradient correctness", "50 random configs, rel err <= 1e-5", elapsed)


# -------------------------------------------------------------------------
# 2. oracle correctness
# -------------------------------------------------------------------------


def test_criterion_2_oracle_correctness():
    tic = time.perf_counter()
    rng = np.random.default_rng(7)
    targets = [
        Gaussian(mean=np.zeros(3), var=np.array([0.08, 1.0, 1.0])),
        GaussianMixture(
            weights=np.array([0.3, 0.7]),
            means=np.array([[-1.5, 0.0], [1.0, 0.5]]),
            variances=np.array([[0.4, 1.2], [0.9, 0.2]]),
        ),
        GaussianUniformProduct(
            dim=3, gaussian_idx=(0,), mean=np.array([0.2]), var=np.array([0.7]),
            bounds=((0.0, 1.0), (-1.0, 0.5)),
        ),
    ]
    h = 1e-5
    for trial in range(100):
        target = targets[trial % 3]
        sigma_t = float(10 ** rng.uniform(-2, 0.3))
        x = target.sample(1, rng)[0] + sigma_t * rng.standard_normal(target.dim)
        exact = target.true_score(x, sigma_t)
        fd = np.zeros(target.dim)
        for i in range(target.dim):
            e = np.zeros(target.dim)
            e[i] = h
            fd[i] = (target.log_density(x + e, sigma_t) - target.log_density(x - e, sigma_t)) / (2 * h)
        denom = max(np.linalg.norm(fd), 1e-8)
        assert np.linalg.norm(exact - fd) / denom <= 1e-5
    elapsed = time.perf_counter() - tic
    assert elapsed < 5.0
    report(2, "oracle correctness", "100 triples over 3 target kinds, rel err <= 1e-5", elapsed)


# -------------------------------------------------------------------------
# 3. tilting-factor identity
# -------------------------------------------------------------------------


def test_criterion_3_tilting_identity():
    tic = time.perf_counter()
    target = Gaussian(mean=np.zeros(1), var=np.ones(1))
    sched = make_discrete(50, 1.0)
    x_t = 0.9
    worst_exact = 0.0
    worst_shifted = math.inf
    for t in range(1, 51):
        grid = tilting_grid(target, sched, t, x_t, n_points=41, span=4.0)
        exact = tilting_residual(target, sched, t, grid, x_t)
        shifted = tilting_residual(target, sched, t, grid, x_t, score_shift=0.1)
        worst_exact = max(worst_exact, exact)
        worst_shifted = min(worst_shifted, shifted)
        assert exact < 1e-8
        assert shifted > 0.01
    elapsed = time.perf_counter() - tic
    assert elapsed < 5.0
    report(
        3, "tilting identity",
        f"max exact residual {worst_exact:.2e}, min shifted residual {worst_shifted:.3f}",
        elapsed,
    )


# -------------------------------------------------------------------------
# 4. sampler fidelity
# -------------------------------------------------------------------------


def test_criterion_4_sampler_fidelity():
    tic = time.perf_counter()
    # near-unit growth base: the fixed-step chain's annealing lag is the
    # schedule's deterministic floor (KL -> ~0.040 as sigma_max -> 1)
    sched = VESchedule(sigma_max=1.01)
    target = Gaussian(mean=np.zeros(3), var=np.ones(3))
    seed = 13
    run = langevin_sample(oracle_score(target, sched), sched, T=200, n=5000, dim=3, seed=seed)
    kl = kl_gaussian_moments(run.finals, target)
    assert kl < 0.05

    zero = langevin_sample(lambda x, t: np.zeros_like(x), sched, T=200, n=5000, dim=3, seed=seed)
    expected = sched.sigma(1.0) ** 2 + 2 * zero.eta * 200
    rel = np.abs(zero.finals.var(axis=0) - expected) / expected
    assert np.all(rel < 0.03)
    elapsed = time.perf_counter() - tic
    assert elapsed < 60.0
    report(
        4, "sampler fidelity",
        f"oracle KL {kl:.4f} < 0.05; zero-score var rel err max {rel.max():.4f} < 3%",
        elapsed,
    )


# -------------------------------------------------------------------------
# 5. 3D toy reproduction
# -------------------------------------------------------------------------


TOY_OVERRIDES = {
    "target.kind": "gaussian",
    "target.dim": 3,
    "target.mean": (0.0, 0.0, 0.0),
    "target.var": (0.08, 1.0, 1.0),
    "target.n": 2000,
    "schedule.sigma_max": 1.05,
    "objective.r": 0.001,
    "train.epochs": 1500,
    "train.kappa_init": 10.0,
    "train.seed": 0,
    "sampler.steps": 60,
    "sampler.chains": 10000,
}


def test_criterion_5_toy_reproduction():
    tic = time.perf_counter()
    cfg = resolve_config("", dict(TOY_OVERRIDES))
    result = toy_experiment(cfg)
    ratio_base = result.baseline.displacement["ratio_first_vs_rest"]
    ratio_reg = result.regularized.displacement["ratio_first_vs_rest"]
    assert ratio_reg < ratio_base
    assert result.baseline.kl < 0.5
    assert result.regularized.kl < 0.5
    elapsed = time.perf_counter() - tic
    assert elapsed < 600.0
    report(
        5, "3D toy reproduction",
        f"ratio reg {ratio_reg:.5f} < base {ratio_base:.5f}; "
        f"KL base {result.baseline.kl:.3f}, reg {result.regularized.kl:.3f} < 0.5",
        elapsed,
    )


# -------------------------------------------------------------------------
# 6. Gaussian-Uniform dominance sweep
# -------------------------------------------------------------------------


SWEEP_OVERRIDES = {
    "sweep.dim": 8,
    "sweep.s_values": (1, 2, 4, 8),
    "sweep.r_values": (0.0, 0.001),
    "sweep.seeds": (0, 1, 2),
    "target.n": 2000,
    "schedule.sigma_max": 1.05,
    "train.epochs": 1500,
    "train.kappa_init": 10.0,
    "constraint.output_cap": True,
    "sampler.steps": 20,
    "sampler.chains": 6000,
}


def test_criterion_6_gaussian_uniform_dominance():
    tic = time.perf_counter()
    cfg = resolve_config("", dict(SWEEP_OVERRIDES))
    result = sweep_experiment(cfg)
    assert not any(c.error for c in result.cells)
    rows = result.dominance_rows(r_base=0.0, r_reg=0.001)
    assert [row["s"] for row in rows] == [1, 2, 4, 8]
    lines = []
    for row in rows:
        assert row["regularized_kl"] <= row["baseline_kl"] + row["baseline_se"], row
        if row["s"] in (1, 2):
            assert row["regularized_kl"] < row["baseline_kl"], row
        lines.append(
            f"s={row['s']}: reg {row['regularized_kl']:.3f} vs base "
            f"{row['baseline_kl']:.3f}+-{row['baseline_se']:.3f}"
        )
    elapsed = time.perf_counter() - tic
    assert elapsed < 1800.0
    report(6, "Gaussian-Uniform dominance", "; ".join(lines), elapsed)


# -------------------------------------------------------------------------
# 7. kappa shrinkage across tuning parameters
# -------------------------------------------------------------------------


def test_criterion_7_kappa_shrinkage():
    tic = time.perf_counter()
    cfg = resolve_config("", dict(TOY_OVERRIDES))
    curve = shrinkage_curve(cfg, [1e-4, 1e-3, 1e-2])
    kappas = [k for _, k in curve]
    assert kappas[0] >= kappas[1] >= kappas[2]
    elapsed = time.perf_counter() - tic
    assert elapsed < 900.0
    report(
        7, "kappa shrinkage",
        "kappa(r): " + ", ".join(f"{r:g} -> {k:.3f}" for r, k in curve),
        elapsed,
    )


# -------------------------------------------------------------------------
# 8. sparsity-profile properties
# -------------------------------------------------------------------------


def test_criterion_8_sparsity_profile():
    tic = time.perf_counter()
    target = Gaussian(mean=np.zeros(3), var=np.array([0.08, 1.0, 1.0]))
    sched = VESchedule(sigma_max=1.05)
    levels = [1, 2, 3]
    profiles = {
        bucket: sparsity_profile(target, levels, sched, bucket, n_mc=4000,
                                 rng=np.random.default_rng(31))
        for bucket in ("all", "early", "late")
    }
    for prof in profiles.values():
        assert np.all(np.diff(prof.errors) <= 1e-15)
        assert prof.errors[-1] == 0.0
    early, late = profiles["early"].errors, profiles["late"].errors
    assert np.all(early[:-1] <= late[:-1])
    elapsed = time.perf_counter() - tic
    assert elapsed < 120.0
    report(
        8, "sparsity profile",
        f"monotone, zero at s=d; early {np.round(early, 4).tolist()} <= late {np.round(late, 4).tolist()}",
        elapsed,
    )


# -------------------------------------------------------------------------
# 9. determinism and constraints
# -------------------------------------------------------------------------


def test_criterion_9_determinism_and_constraints(tmp_path):
    tic = time.perf_counter()
    target = Gaussian(mean=np.zeros(3), var=np.array([0.08, 1.0, 1.0]))
    data = target.sample(512, np.random.default_rng(99))
    sched = VESchedule(sigma_max=1.05)
    arch = ArchConfig(hidden=(32, 32), time_feat_dim=8)

    # bit-identical checkpoints from one seed
    cfg = TrainConfig(r=0.001, epochs=40, batch_size=128, seed=5, kappa_init=5.0)
    paths = []
    for i in range(2):
        model, _ = train(data, cfg, sched, arch)
        p = tmp_path / f"ck{i}.json"
        save_checkpoint(model, p)
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()

    # l1 projection invariant checked after every step (one step per epoch)
    norms = []
    proj_cfg = TrainConfig(r=0.001, epochs=50, batch_size=512, seed=5,
                           kappa_init=5.0, projection=True)
    model_proj, _ = train(data, proj_cfg, sched, arch,
                          callback=lambda e, m: norms.append(m.theta_l1()))
    assert len(norms) == 50
    assert all(v <= 1.0 + 1e-12 for v in norms)

    # output cap under fuzzing
    fuzz_model = load_checkpoint(paths[0])
    rng = np.random.default_rng(123)
    x = 5.0 * rng.standard_normal((10_000, 3))
    t = rng.random(10_000) * (1 - 1e-5) + 1e-5
    s = fuzz_model.forward(x, t)
    assert np.all(np.abs(s).sum(axis=1) <= fuzz_model.output_l1_cap + 1e-12)

    elapsed = time.perf_counter() - tic
    assert elapsed < 300.0
    report(
        9, "determinism and constraints",
        f"bit-identical checkpoints; max ||theta||_1 {max(norms):.6f} <= 1; "
        f"cap holds on 10^4 fuzzed inputs",
        elapsed,
    )
