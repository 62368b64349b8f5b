import math

import numpy as np
import pytest

from longscape import core as C
from longscape.config import GeneratorConfig, LossWeights, TrainSchedule
from longscape.critic import init_critics
from longscape.layers import ParamStore
from longscape.losses import adam_step, cosine_mask, generator_objective, lr_at, masked_rec_loss, n_cir

TINY = GeneratorConfig.scaled(0.25)


# -- cosine mask ---------------------------------------------------------------------------------


def test_mask_anchor_values():
    m = cosine_mask(128, 256)
    pred = m.weights[128:]
    assert pred[0] == 1.0
    assert abs(pred[64] - 0.5) <= 1e-12
    assert pred[127] <= 2e-4
    assert pred[127] == pytest.approx((1 + math.cos(127 * math.pi / 128)) / 2, abs=1e-15)


def test_mask_shape_and_order():
    m = cosine_mask(128, 256)
    assert m.border == 128 and m.weights.size == 256
    assert np.all(m.weights[:128] == 1.0)
    assert np.all(np.diff(m.weights) <= 0)
    assert m.weights.min() >= 0 and m.weights.max() <= 1
    with pytest.raises(ValueError):
        m.weights[0] = 3.0


def test_mask_errors():
    with pytest.raises(ValueError, match="exceeds"):
        cosine_mask(300, 256)
    with pytest.raises(ValueError):
        cosine_mask(0, 256)


# -- reconstruction loss -----------------------------------------------------------------------------


def test_rec_loss_zero_for_perfect_prediction(rng):
    x = rng.standard_normal((2, 3, 4, 8))
    assert masked_rec_loss(C.Tensor(x), C.Tensor(x), cosine_mask(4, 8)).item() == 0.0


def test_rec_loss_uniform_offset():
    x = np.zeros((2, 3, 4, 8))
    ones = cosine_mask(1, 8)
    object.__setattr__(ones, "weights", np.ones(8))
    assert masked_rec_loss(C.Tensor(x + 0.3), C.Tensor(x), ones).item() == pytest.approx(0.09, abs=1e-15)


def test_rec_loss_matches_loops(rng):
    x, y = rng.standard_normal((2, 2, 3, 5, 12))
    m = cosine_mask(6, 12)
    acc, n = 0.0, 0
    for b in range(2):
        for c in range(3):
            for i in range(5):
                for j in range(12):
                    acc += m.weights[j] * (x[b, c, i, j] - y[b, c, i, j]) ** 2
                    n += 1
    assert abs(masked_rec_loss(C.Tensor(x), C.Tensor(y), m).item() - acc / n) <= 1e-10


def test_rec_loss_shape_errors(rng):
    with pytest.raises(ValueError, match="shape mismatch"):
        masked_rec_loss(C.Tensor(np.zeros((1, 3, 4, 8))), C.Tensor(np.zeros((1, 3, 4, 6))), cosine_mask(4, 8))
    with pytest.raises(ValueError, match="mask width"):
        masked_rec_loss(C.Tensor(np.zeros((1, 3, 4, 6))), C.Tensor(np.zeros((1, 3, 4, 6))), cosine_mask(4, 8))


# -- generator objective -----------------------------------------------------------------------------


def _pair(rng):
    return C.Tensor(rng.uniform(-1, 1, (2, 3, 32, 64))), C.Tensor(rng.uniform(-1, 1, (2, 3, 32, 64)))


def test_objective_without_adversary_is_reconstruction(rng):
    x, y = _pair(rng)
    total, parts = generator_objective(x, y, None, LossWeights(1.0, 0.0), TINY)
    assert total.item() == parts["rec"].item()
    assert "adv" not in parts


def test_objective_perfect_reconstruction_constant_critic(rng):
    x, _ = _pair(rng)
    p = init_critics(TINY, 0, np.float64)
    for n, t in p.items():
        t.data[...] = 0.5 if n.endswith("head.bias") else 0.0
    total, _ = generator_objective(x, x, p, LossWeights(), TINY)
    assert total.item() == pytest.approx(0.002 * -0.5, abs=1e-15)


def test_objective_recomposes(rng):
    x, y = _pair(rng)
    p = init_critics(TINY, 1, np.float64)
    total, parts = generator_objective(x, y, p, LossWeights(), TINY)
    assert abs(total.item() - (0.998 * parts["rec"].item() + 0.002 * parts["adv"].item())) <= 1e-7


def test_objective_gradient_is_linear_in_weights(rng):
    x, y = _pair(rng)
    y = C.Tensor(y.data, requires_grad=True)
    p = init_critics(TINY, 1, np.float64)

    def g(lr, la):
        with C.Tape():
            total, _ = generator_objective(x, y, p, LossWeights(lr, la), TINY)
        return C.grad(total, [y])[0].data

    rec, adv = g(1.0, 0.0), g(0.0, 1.0)
    np.testing.assert_allclose(g(0.998, 0.002), 0.998 * rec + 0.002 * adv, rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(g(2.0, 0.0), 2 * rec, rtol=1e-12, atol=0)


# -- Adam -----------------------------------------------------------------------------------------


def _store(values, dtype=np.float64):
    s = ParamStore(dtype)
    for n, v in values.items():
        s.add(n, v)
    return s


def test_adam_zero_gradient_keeps_params():
    s = _store({"w": np.array([1.0, -2.0])})
    s.m["w"][...] = [0.4, 0.1]
    s.v["w"][...] = [0.2, 0.3]
    adam_step(s, {"w": np.zeros(2)}, TrainSchedule())
    assert np.all(s.m["w"] == [0.2, 0.05])
    assert np.allclose(s.v["w"], [0.18, 0.27], rtol=0, atol=1e-16)
    # the step uses decayed moments only; parameters move unless both are zero
    z = _store({"w": np.array([1.0, -2.0])})
    adam_step(z, {"w": np.zeros(2)}, TrainSchedule())
    assert np.all(z["w"].data == [1.0, -2.0]) and z.step == 1


def test_adam_first_step_size():
    s = _store({"w": np.array([0.5])})
    adam_step(s, {"w": np.array([1.0])}, TrainSchedule(), lr=1e-4)
    assert abs((0.5 - s["w"].data[0]) - 1e-4) <= 1e-6
    assert abs((0.5 - s["w"].data[0]) - 1e-4 / (1 + 1e-8)) <= 1e-15


def test_adam_matches_reference_loop(rng):
    w0 = rng.standard_normal(5)
    s = _store({"w": w0})
    grads = [rng.standard_normal(5) for _ in range(6)]
    w, m, v = w0.copy(), np.zeros(5), np.zeros(5)
    for t, g in enumerate(grads, 1):
        adam_step(s, {"w": g}, TrainSchedule(), lr=1e-3)
        m = 0.5 * m + 0.5 * g
        v = 0.9 * v + 0.1 * g * g
        w = w - 1e-3 * (m / (1 - 0.5**t)) / (np.sqrt(v / (1 - 0.9**t)) + 1e-8)
    np.testing.assert_allclose(s["w"].data, w, rtol=1e-13, atol=0)
    assert s.step == 6


def test_adam_is_deterministic_and_order_free(rng):
    vals = {"a": rng.standard_normal(3), "b": rng.standard_normal((2, 2))}
    grads = {"a": rng.standard_normal(3), "b": rng.standard_normal((2, 2))}
    s1, s2 = _store(vals), _store(dict(reversed(list(vals.items()))))
    adam_step(s1, grads, TrainSchedule())
    adam_step(s2, dict(reversed(list(grads.items()))), TrainSchedule())
    for n in vals:
        assert np.array_equal(s1[n].data, s2[n].data)


def test_adam_missing_gradient():
    s = _store({"a": np.zeros(1), "b": np.zeros(1)})
    with pytest.raises(KeyError, match="'b'"):
        adam_step(s, {"a": np.zeros(1)}, TrainSchedule())


# -- schedule rules -----------------------------------------------------------------------------------


def test_lr_examples():
    assert lr_at(0) == 1e-4 and lr_at(999) == 1e-4
    assert lr_at(1000) == 1e-5 and lr_at(1001) == 1e-5


def test_n_cir_examples():
    assert n_cir(10) == 30 and n_cir(500) == 30 and n_cir(1000) == 30 and n_cir(123) == 5
    assert n_cir(29) == 30 and n_cir(30) == 5
    with pytest.raises(ValueError):
        n_cir(0)


def test_schedule_rules_exhaustive():
    for it in range(1, 2001):
        assert n_cir(it) == (30 if it < 30 or it % 500 == 0 else 5)
        assert lr_at(it) == (1e-4 if it < 1000 else 1e-5)
