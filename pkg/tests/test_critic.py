import numpy as np
import pytest

from longscape import core as C
from longscape.config import CriticConfig, GeneratorConfig
from longscape.critic import (
    critic_forward,
    critic_loss,
    critic_losses,
    generator_adv_loss,
    gradient_penalty,
    init_critics,
    make_critic,
)

TINY = GeneratorConfig.scaled(0.25)


def per_sample_sum(x):
    return C.sum(x, axis=tuple(range(1, x.ndim)))


@pytest.fixture
def critics():
    return init_critics(TINY, 0, np.float64)


def constant_critics(bias):
    p = init_critics(TINY, 0, np.float64)
    for n, t in p.items():
        t.data[...] = bias if n.endswith("head.bias") else 0.0
    return p


def batch(rng, b=2, s=32):
    full_r, full_f = rng.uniform(-1, 1, (2, b, 3, s, 2 * s))
    return C.Tensor(full_r), C.Tensor(full_f), C.Tensor(full_r[..., s:]), C.Tensor(full_f[..., s:])


# -- architecture -----------------------------------------------------------------------------


def test_full_scale_heads():
    p = init_critics(GeneratorConfig(), 0)
    g = critic_forward(C.Tensor(np.zeros((1, 3, 128, 256), np.float32)), p.scope("global"), CriticConfig(128, 256))
    loc = critic_forward(C.Tensor(np.zeros((2, 3, 128, 128), np.float32)), p.scope("local"), CriticConfig(128, 128))
    assert g.shape == (1, 1) and loc.shape == (2, 1)


def test_layers_stop_at_two_by_two():
    assert CriticConfig(128, 256).layer_channels == (64, 128, 256, 512, 1024)
    assert CriticConfig(128, 256).head_hw == (4, 8)
    small = CriticConfig.for_generator(TINY, "local")
    assert small.head_hw == (2, 2) and len(small.layer_channels) == 4


def test_constant_critic_returns_bias(rng):
    p = constant_critics(0.7)
    for x in (rng.uniform(-1, 1, (3, 3, 32, 64)), np.zeros((3, 3, 32, 64))):
        assert np.all(make_critic(p, TINY, "global")(C.Tensor(x)).data == 0.7)


def test_wrong_shape_is_rejected(critics):
    with pytest.raises(ValueError, match="critic expects"):
        make_critic(critics, TINY, "local")(C.Tensor(np.zeros((1, 3, 32, 64))))
    with pytest.raises(ValueError, match="global"):
        CriticConfig.for_generator(TINY, "middle")


def test_bias_shift_moves_scores_not_distance(critics, rng):
    real, fake, _, _ = batch(rng)
    d = make_critic(critics, TINY, "global")
    before = d(real).data, C.sub(C.mean(d(fake)), C.mean(d(real))).data
    critics["global.head.bias"].data[...] += 0.25
    after = d(real).data, C.sub(C.mean(d(fake)), C.mean(d(real))).data
    np.testing.assert_allclose(after[0], before[0] + 0.25, rtol=0, atol=1e-12)
    np.testing.assert_allclose(after[1], before[1], rtol=0, atol=1e-12)


# -- gradient penalty ---------------------------------------------------------------------------


def test_penalty_sum_critic():
    x = C.Tensor(np.ones((3, 1, 2, 2)))
    with C.Tape():
        gp = gradient_penalty(x, C.Tensor(np.zeros((3, 1, 2, 2))), per_sample_sum, 10.0, seed=0)
    assert gp.item() == pytest.approx(10.0, abs=1e-12)


def test_penalty_first_element_critic(rng):
    x = C.Tensor(rng.standard_normal((3, 1, 2, 2)))
    with C.Tape():
        gp = gradient_penalty(x, x, lambda t: C.reshape(C.slice_axis(C.reshape(t, (3, 4)), 1, 0, 1), (3,)), 10.0, seed=0)
    assert gp.item() == 0.0


def test_penalty_linear_critic(rng):
    for seed in range(10):
        r = np.random.default_rng(seed)
        w = r.standard_normal(12)
        critic = lambda t: C.matmul(C.reshape(t, (t.shape[0], 12)), C.constant(w[:, None]))
        real, fake = C.Tensor(r.standard_normal((4, 3, 2, 2))), C.Tensor(r.standard_normal((4, 3, 2, 2)))
        with C.Tape():
            gp = gradient_penalty(real, fake, critic, 10.0, seed=seed)
        assert abs(gp.item() - 10 * (np.linalg.norm(w) - 1) ** 2) <= 1e-6


def test_penalty_swap_symmetry(critics, rng):
    real, fake, _, _ = batch(rng)
    d = make_critic(critics, TINY, "global")
    u = rng.uniform(size=2)
    with C.Tape():
        a = gradient_penalty(real, fake, d, 10.0, u=u)
        b = gradient_penalty(fake, real, d, 10.0, u=1 - u)
    assert abs(a.item() - b.item()) <= 1e-9 * max(1.0, abs(a.item()))


def test_penalty_is_seeded(critics, rng):
    real, fake, _, _ = batch(rng)
    d = make_critic(critics, TINY, "global")
    with C.Tape():
        vals = [gradient_penalty(real, fake, d, 10.0, seed=s).item() for s in (3, 3, 4)]
    assert vals[0] == vals[1] != vals[2]


def test_penalty_batch_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        gradient_penalty(C.Tensor(np.zeros((2, 3))), C.Tensor(np.zeros((3, 3))), per_sample_sum, 10.0)


# -- mixed critic objective ---------------------------------------------------------------------


def test_constant_critic_total_is_lambda_gp(rng):
    p = constant_critics(1.3)
    with C.Tape():
        total, parts = critic_losses(*batch(rng), p, TINY, 0.9, 10.0, seed=1)
    assert parts["wdist_global"].item() == 0.0 and parts["wdist_local"].item() == 0.0
    assert total.item() == 10.0


def test_beta_one_is_global_part(critics, rng):
    with C.Tape():
        total, parts = critic_losses(*batch(rng), critics, TINY, 1.0, 10.0, seed=1)
    assert total.item() == parts["global"].item()


def test_total_recomposes(critics, rng):
    real, fake, real_r, fake_r = batch(rng)
    with C.Tape():
        total, parts = critic_losses(real, fake, real_r, fake_r, critics, TINY, 0.9, 10.0, seed=5)
        g = make_critic(critics, TINY, "global")
        loc = make_critic(critics, TINY, "local")
        wg = np.mean(g(fake).data) - np.mean(g(real).data)
        wl = np.mean(loc(fake_r).data) - np.mean(loc(real_r).data)
        gpg = gradient_penalty(real, fake, g, 10.0, seed=[5, 0]).item()
        gpl = gradient_penalty(real_r, fake_r, loc, 10.0, seed=[5, 1]).item()
    assert abs(total.item() - (0.9 * (wg + gpg) + 0.1 * (wl + gpl))) <= 1e-6


def test_beta_mixing_is_linear(critics, rng):
    args = batch(rng)
    with C.Tape():
        t = {b: critic_losses(*args, critics, TINY, b, 10.0, seed=2)[0].item() for b in (0.0, 0.3, 1.0)}
    assert abs(t[0.3] - (0.3 * t[1.0] + 0.7 * t[0.0])) <= 1e-9 * max(1.0, abs(t[0.3]))


def test_critic_losses_shape_mismatch(critics, rng):
    real, fake, real_r, _ = batch(rng)
    with pytest.raises(ValueError, match="equal shapes"):
        critic_losses(real, fake, real_r, C.Tensor(np.zeros((1, 3, 32, 32))), critics, TINY, 0.9, 10.0)


def test_single_critic_loss_parts(critics, rng):
    real, fake, _, _ = batch(rng)
    with C.Tape():
        total, parts = critic_loss(real, fake, make_critic(critics, TINY, "global"), 10.0, seed=0)
    assert total.item() == pytest.approx(parts["wdist"].item() + parts["gp"].item(), abs=1e-12)


# -- generator side -------------------------------------------------------------------------------


def test_adv_loss_of_constant_critic(rng):
    _, fake, _, fake_r = batch(rng)
    assert generator_adv_loss(fake, fake_r, constant_critics(0.4), TINY, 0.9).item() == pytest.approx(-0.4, abs=1e-15)


def test_adv_loss_recomposes(critics, rng):
    _, fake, _, fake_r = batch(rng)
    got = generator_adv_loss(fake, fake_r, critics, TINY, 0.9).item()
    mg = make_critic(critics, TINY, "global")(fake).data.mean()
    ml = make_critic(critics, TINY, "local")(fake_r).data.mean()
    assert abs(got - -(0.9 * mg + 0.1 * ml)) <= 1e-7


def test_adv_loss_beta_zero_ignores_global(critics, rng):
    _, fake, _, fake_r = batch(rng)
    with C.Tape():
        loss = generator_adv_loss(fake, fake_r, critics, TINY, 0.0)
    grads = C.backward(loss, critics.items())
    assert all(np.all(g.data == 0) for n, g in grads.items() if n.startswith("global."))
    assert any(np.any(g.data != 0) for n, g in grads.items() if n.startswith("local."))
