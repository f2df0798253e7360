import math

import numpy as np
import pytest

from sparsescore.schedule import VESchedule
from sparsescore.targets import Gaussian
from sparsescore.trainer import (
    ArchConfig,
    TrainConfig,
    TrainingDiverged,
    adam_init,
    adam_step,
    train,
)

SCHED = VESchedule(sigma_max=1.05)
SMALL_ARCH = ArchConfig(hidden=(16, 16), time_feat_dim=8)


def toy_data(n=256, seed=0):
    target = Gaussian(mean=np.zeros(2), var=np.array([0.5, 1.0]))
    return target.sample(n, np.random.default_rng(seed))


# --- adam ----------------------------------------------------------------


def test_adam_zero_gradient_keeps_params():
    params = [np.array([1.0, -2.0]), np.array(3.0)]
    state = adam_init(params)
    out, state = adam_step(params, [np.zeros(2), np.array(0.0)], state, lr=0.1)
    assert np.array_equal(out[0], params[0])
    assert out[1] == params[1]


def test_adam_first_step_is_signed_lr():
    g = np.array([0.3, -2.0, 1e-4])
    params = [np.zeros(3)]
    state = adam_init(params)
    out, _ = adam_step(params, [g], state, lr=0.01)
    expected = -0.01 * g / (np.abs(g) + 1e-8)
    assert np.allclose(out[0], expected, rtol=1e-6)


def test_adam_constant_gradient_step_approaches_lr():
    params = [np.array(0.0)]
    state = adam_init(params)
    prev = 0.0
    for _ in range(200):
        out, state = adam_step(params, [np.array(1.0)], state, lr=0.001)
        step = float(prev - out[0])
        prev = float(out[0])
        params = out
    assert step == pytest.approx(0.001, rel=1e-3)


# --- training loop -------------------------------------------------------


def base_cfg(**kw):
    defaults = dict(r=0.001, epochs=3, batch_size=64, learning_rate=1e-3,
                    seed=11, projection=False, kappa_init=2.0, kappa_trainable=True)
    defaults.update(kw)
    return TrainConfig(**defaults)


def test_training_is_bit_deterministic():
    data = toy_data()
    m1, h1 = train(data, base_cfg(), SCHED, SMALL_ARCH)
    m2, h2 = train(data, base_cfg(), SCHED, SMALL_ARCH)
    assert m1.kappa == m2.kappa
    for (w1, b1), (w2, b2) in zip(m1.weights, m2.weights):
        assert np.array_equal(w1, w2)
        assert np.array_equal(b1, b2)
    assert [r.total for r in h1.records] == [r.total for r in h2.records]


def test_history_record_count():
    data = toy_data(n=200)
    cfg = base_cfg(epochs=4, batch_size=64)
    _, hist = train(data, cfg, SCHED, SMALL_ARCH)
    assert len(hist.records) == 4 * math.ceil(200 / 64)
    assert len(hist.kappa_per_epoch) == 4
    assert len(hist.seconds_per_epoch) == 4


def test_projection_invariant_holds_every_epoch():
    data = toy_data()
    seen = []

    def check(epoch, model):
        seen.append(model.theta_l1())

    cfg = base_cfg(projection=True, epochs=4)
    model, _ = train(data, cfg, SCHED, SMALL_ARCH, callback=check)
    assert len(seen) == 4
    assert all(v <= 1.0 + 1e-12 for v in seen)
    assert model.theta_l1() <= 1.0 + 1e-12


def test_frozen_kappa_baseline_path():
    data = toy_data()
    cfg = base_cfg(r=0.0, kappa_trainable=False, kappa_init=1.0, epochs=2)
    model, hist = train(data, cfg, SCHED, SMALL_ARCH)
    assert model.kappa == 1.0
    assert all(rec.reg_term == 0.0 for rec in hist.records)
    assert all(rec.total == rec.fit_term for rec in hist.records)


def test_kappa_clamped_above_zero():
    data = toy_data()
    cfg = base_cfg(r=1e6, epochs=3, kappa_init=0.01)
    model, _ = train(data, cfg, SCHED, SMALL_ARCH)
    assert model.kappa >= 1e-6


def test_fit_term_decreases():
    data = toy_data(n=512, seed=3)
    cfg = base_cfg(epochs=60, kappa_init=3.0, seed=5)
    _, hist = train(data, cfg, SCHED, SMALL_ARCH)
    fit = hist.fit_curve()
    first = np.median(fit[: len(fit) // 10])
    last = np.median(fit[-len(fit) // 10 :])
    assert last < first


def test_non_finite_data_aborts_with_snapshot():
    data = toy_data()
    data[7, 0] = np.inf
    with pytest.raises(TrainingDiverged) as err:
        train(data, base_cfg(batch_size=256), SCHED, SMALL_ARCH)
    assert err.value.step == 0
    assert err.value.kappa > 0


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(r=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(eps=0.5)
    with pytest.raises(ValueError):
        TrainConfig(kappa_init=0.0)
    data = toy_data(n=10)
    with pytest.raises(ValueError):
        train(data, base_cfg(batch_size=64), SCHED, SMALL_ARCH)
