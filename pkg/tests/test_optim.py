import math

import numpy as np
import pytest

from vologan.optim import (ScheduleSpec, init_uniform, lr_at, nadam_state, nadam_step, sgd_momentum_step,
                           sgd_state)
from vologan.tensor import Tensor, precision

GEN = ScheduleSpec(0.0002)
DISC = ScheduleSpec(0.0001)


def scalar_nadam(w, grads, lr, b1=0.5, b2=0.99, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = b1 * m / (1 - b1 ** (t + 1)) + (1 - b1) * g / (1 - b1 ** t)
        w -= lr * m_hat / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return w


def test_nadam_scalar_oracle():
    with precision(64):
        w = Tensor(np.array([1.0]))
        state = nadam_state()
        nadam_step({"w": w}, {"w": np.array([1.0])}, state, 0.1)
    assert w.data[0] == pytest.approx(scalar_nadam(1.0, [1.0], 0.1), abs=1e-12)
    assert w.data[0] == pytest.approx(1 - 0.1 * (0.5 * 0.5 / 0.75 + 0.5 / 0.5) / (1 + 1e-8), abs=1e-12)


def test_nadam_several_steps_oracle():
    grads = [0.3, -1.2, 0.7, 2.0]
    with precision(64):
        w = Tensor(np.array([0.4]))
        state = nadam_state()
        for g in grads:
            nadam_step({"w": w}, {"w": np.array([g])}, state, 0.05)
    assert w.data[0] == pytest.approx(scalar_nadam(0.4, grads, 0.05), abs=1e-12)


def test_nadam_zero_grad_and_identical_slots():
    a, b, c = Tensor(np.array([2.0])), Tensor(np.array([5.0])), Tensor(np.array([5.0]))
    state = nadam_state()
    nadam_step({"a": a, "b": b, "c": c}, {"a": np.zeros(1), "b": np.ones(1), "c": np.ones(1)}, state, 0.1)
    assert a.data[0] == 2.0
    assert b.data[0] == c.data[0]


def test_nadam_non_finite_names_parameter():
    with pytest.raises(FloatingPointError, match="bad"):
        nadam_step({"bad": Tensor(np.zeros(2))}, {"bad": np.array([1.0, np.nan])}, nadam_state(), 0.1)


def test_sgd_examples():
    with precision(64):
        w = Tensor(np.array([1.0]))
        state = sgd_state()
        sgd_momentum_step({"w": w}, {"w": np.array([0.1])}, state, 0.1)
        assert state.slots["w"]["velocity"][0] == pytest.approx(0.1)
        assert w.data[0] == pytest.approx(0.99)
        sgd_momentum_step({"w": w}, {"w": np.array([0.1])}, state, 0.1)
        assert state.slots["w"]["velocity"][0] == pytest.approx(0.19)
        assert w.data[0] == pytest.approx(0.971)
    z = Tensor(np.array([3.0]))
    sgd_momentum_step({"z": z}, {"z": np.zeros(1)}, sgd_state(), 0.1)
    assert z.data[0] == 3.0


def test_lr_must_be_positive():
    with pytest.raises(ValueError):
        sgd_momentum_step({}, {}, sgd_state(), 0.0)


@pytest.mark.parametrize("spec", [GEN, DISC])
def test_schedule_closed_form(spec):
    for e in range(80):
        if e < 10:
            want = spec.target_lr * (e + 1) / 10
        else:
            want = spec.target_lr * 0.5 * (1 + math.cos(math.pi * (e - 10) / 70))
        assert lr_at(spec, e) == want
    assert lr_at(spec, 9) == spec.target_lr
    assert lr_at(spec, 10) == spec.target_lr
    assert lr_at(spec, 79) < 1e-3 * spec.target_lr


def test_schedule_monotone_pieces():
    vals = [lr_at(GEN, e) for e in range(80)]
    assert all(a <= b for a, b in zip(vals[:10], vals[1:11]))
    assert all(a >= b for a, b in zip(vals[10:], vals[11:]))


def test_schedule_errors():
    with pytest.raises(ValueError):
        lr_at(GEN, 80)
    with pytest.raises(ValueError):
        lr_at(GEN, -1)
    with pytest.raises(ValueError):
        ScheduleSpec(0.1, warmup_epochs=10, total_epochs=10)


def test_init_uniform_bounds_and_moments(rng):
    w = init_uniform((100_000,), 300, 300, rng)
    assert np.all(np.abs(w) < 0.1)
    assert abs(w.mean()) < 0.005
    assert w.var() == pytest.approx(0.01 / 3, rel=0.05)


def test_init_uniform_rejects_bad_fans(rng):
    with pytest.raises(ValueError):
        init_uniform((2,), 0, 3, rng)
