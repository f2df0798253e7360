import math

import numpy as np
import pytest

from sparsescore.metrics import (
    bound_audit,
    kl_knn,
    score_error,
    sparsity_profile,
    tilting_grid,
    tilting_residual,
)
from sparsescore.sampler import oracle_score
from sparsescore.schedule import VESchedule, make_discrete
from sparsescore.targets import Gaussian, GaussianUniformProduct

SCHED = VESchedule(sigma_max=1.05)


def aniso_gaussian():
    return Gaussian(mean=np.zeros(3), var=np.array([0.08, 1.0, 1.0]))


# --- score error ---------------------------------------------------------


def test_score_error_zero_for_oracle():
    target = aniso_gaussian()
    err = score_error(
        oracle_score(target, SCHED), target, SCHED, n_t=10, n_x=50,
        rng=np.random.default_rng(0),
    )
    assert err == 0.0


def test_score_error_of_zero_score_matches_quadrature():
    # E||grad log q_t||^2 = sum_i 1/(v_i + sigma_t^2); integrate over t by
    # quadrature as the independent oracle
    target = Gaussian(mean=np.zeros(3), var=np.ones(3))
    ts = np.linspace(SCHED.eps, 1.0, 20001)
    expected = np.trapezoid(
        np.sum(1.0 / (1.0 + SCHED.sigma(ts)[:, None] ** 2 * np.ones(3)), axis=1), ts
    ) / (1.0 - SCHED.eps)
    err = score_error(
        lambda x, t: np.zeros_like(x), target, SCHED, n_t=400, n_x=200,
        rng=np.random.default_rng(1),
    )
    assert err == pytest.approx(expected, rel=0.05)


# --- sparsity profile -----------------------------------------------------


def test_sparsity_profile_monotone_and_zero_at_full():
    target = aniso_gaussian()
    prof = sparsity_profile(target, [1, 2, 3], SCHED, "all", 400, np.random.default_rng(2))
    assert prof.errors[0] >= prof.errors[1] >= prof.errors[2]
    assert prof.errors[2] == 0.0
    assert np.all(prof.errors >= 0.0)


def test_sparsity_profile_early_smaller_than_late():
    target = aniso_gaussian()
    early = sparsity_profile(target, [1, 2], SCHED, "early", 3000, np.random.default_rng(3))
    late = sparsity_profile(target, [1, 2], SCHED, "late", 3000, np.random.default_rng(3))
    assert np.all(early.errors <= late.errors)


def test_sparsity_profile_validation():
    target = aniso_gaussian()
    with pytest.raises(ValueError):
        sparsity_profile(target, [0], SCHED, "all", 10, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sparsity_profile(target, [1], SCHED, "noon", 10, np.random.default_rng(0))


# --- tilting residual ------------------------------------------------------


def test_tilting_identity_exact_scores():
    target = Gaussian(mean=np.array([0.4]), var=np.array([0.7]))
    sched = make_discrete(50, 1.0)
    for t in (1, 7, 25, 50):
        x_t = 0.9
        grid = tilting_grid(target, sched, t, x_t)
        assert grid.size == 41
        assert tilting_residual(target, sched, t, grid, x_t) < 1e-8


def test_tilting_identity_breaks_under_perturbation():
    target = Gaussian(mean=np.zeros(1), var=np.ones(1))
    sched = make_discrete(50, 1.0)
    grid = tilting_grid(target, sched, 10, 0.5)
    assert tilting_residual(target, sched, 10, grid, 0.5, score_shift=0.1) > 0.01


def test_tilting_degenerate_grid():
    target = Gaussian(mean=np.zeros(1), var=np.ones(1))
    sched = make_discrete(10, 1.0)
    assert tilting_residual(target, sched, 3, np.array([0.2, 0.2]), 0.1) == 0.0
    with pytest.raises(ValueError):
        tilting_residual(target, sched, 3, np.array([0.2]), 0.1)


# --- knn KL -----------------------------------------------------------------


def test_kl_knn_self_divergence_small():
    rng = np.random.default_rng(4)
    p = rng.standard_normal((10_000, 3))
    q = rng.standard_normal((10_000, 3))
    assert abs(kl_knn(p, q, k=5)) < 0.05


def test_kl_knn_gaussian_closed_form():
    rng = np.random.default_rng(5)
    p = rng.standard_normal((20_000, 1))
    q = rng.standard_normal((20_000, 1)) * math.sqrt(2.0)
    expected = 0.5 * (0.5 - 1 + math.log(2.0))  # KL(N(0,1) || N(0,2))
    assert kl_knn(p, q, k=5) == pytest.approx(expected, abs=0.03)


def test_kl_knn_disjoint_supports():
    rng = np.random.default_rng(6)
    p = rng.uniform(0, 1, size=(2000, 2))
    q = rng.uniform(10, 11, size=(2000, 2))
    assert kl_knn(p, q, k=5) > 2.0


def test_kl_knn_validation():
    with pytest.raises(ValueError):
        kl_knn(np.zeros((3, 1)), np.zeros((10, 1)), k=5)
    with pytest.raises(ValueError):
        kl_knn(np.zeros((10, 2)), np.zeros((10, 3)), k=2)


# --- bound audit -------------------------------------------------------------


def test_bound_audit_terms():
    target = Gaussian(mean=np.zeros(3), var=np.ones(3))
    disc = make_discrete(100, 1.0)
    audit = bound_audit(
        oracle_score(target, SCHED), target, SCHED, disc,
        r=0.001, s=3, n_mc=500, seed=0, kappa=1.0,
    )
    assert audit.M == pytest.approx(3.0)
    assert audit.init_term == pytest.approx(3e-4)
    assert audit.reverse_term == pytest.approx(max(1.0, 9 * (3 * audit.B) ** 2) / 100)
    # a perfect oracle leaves only the scale penalty
    assert audit.estimation_term == pytest.approx(0.001, rel=1e-9)
    assert audit.kl_measured >= 0.0
    assert np.isfinite(audit.kl_measured)
    assert len(audit.unresolved) == 2
    assert audit.B > 0.0


def test_bound_audit_knn_branch():
    target = GaussianUniformProduct(
        dim=2, gaussian_idx=(0,), mean=np.zeros(1), var=np.ones(1), bounds=((0.0, 1.0),)
    )
    disc = make_discrete(20, 1.0)
    audit = bound_audit(
        oracle_score(target, SCHED), target, SCHED, disc,
        r=0.0, n_mc=400, seed=1,
    )
    assert audit.s == 2
    assert audit.kl_measured >= 0.0
    assert audit.init_term > 0.0
