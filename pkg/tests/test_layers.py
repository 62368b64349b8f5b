import numpy as np
import pytest

from longscape import core as C
from longscape.layers import (
    LstmState,
    ParamStore,
    bottleneck_resblock,
    init_conv,
    init_lstm,
    init_resblock,
    lstm_cell,
    lstm_layer,
    zero_state,
)

from gradcheck import block_check

SEEDS = range(20)


def resblock_store(cin, cout, stride, seed, dtype=np.float64):
    store = ParamStore(dtype)
    init_resblock(store.scope("blk"), cin, cout, stride, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1000)
    for name, t in store.items():
        if "norm" in name:  # move affine params off their trivial init
            t.data[...] = rng.normal(1.0 if name.endswith("gamma") else 0.0, 0.3, t.shape)
        if name.endswith("bias"):
            t.data[...] = rng.normal(0, 0.1, t.shape)
    return store


def lstm_store(i, h, seed):
    store = ParamStore(np.float64)
    init_lstm(store.scope("lstm"), i, h, np.random.default_rng(seed))
    return store


# -- parameter store -----------------------------------------------------------------------


def test_store_rejects_duplicates_and_keeps_order():
    s = ParamStore()
    s.add("b", np.zeros(2))
    s.add("a", np.zeros(3))
    assert s.names() == ["b", "a"]
    with pytest.raises(KeyError, match="duplicate"):
        s.add("a", np.zeros(1))
    with pytest.raises(KeyError, match="no parameter"):
        s["zzz"]


def test_store_slots_share_shapes():
    s = resblock_store(8, 16, 2, 0)
    for name, t in s.items():
        assert s.m[name].shape == s.v[name].shape == s.grads[name].shape == t.shape


def test_scope_prefixes_names():
    s = ParamStore()
    sc = s.scope("enc").scope("conv1")
    sc.add("weight", np.ones(2))
    assert "enc.conv1.weight" in s
    assert sc["weight"] is s["enc.conv1.weight"]


def test_copy_is_deep():
    s = resblock_store(4, 8, 1, 0)
    c = s.copy()
    next(iter(c.items()))[1].data[...] += 1.0
    name = s.names()[0]
    assert not np.array_equal(s[name].data, c[name].data)


# -- initialization ------------------------------------------------------------------------


def test_init_is_deterministic():
    a, b = resblock_store(8, 16, 2, 5), resblock_store(8, 16, 2, 5)
    for (na, ta), (nb, tb) in zip(a.items(), b.items()):
        assert na == nb and np.array_equal(ta.data, tb.data)


def test_conv_init_scale():
    s = ParamStore(np.float64)
    init_conv(s.scope("c"), 64, 3, 4, 4, np.random.default_rng(0))
    w = s["c.weight"].data
    assert w.size == 3072
    target = np.sqrt(2 / 48)
    assert abs(w.std() - target) <= 0.2 * target
    assert np.all(s["c.bias"].data == 0)


def test_lstm_forget_bias_is_one():
    s = lstm_store(5, 7, 0)
    b = s["lstm.bias"].data
    assert np.all(b[7:14] == 1.0)
    assert np.all(b[:7] == 0.0) and np.all(b[14:] == 0.0)


# -- residual block ------------------------------------------------------------------------


def test_resblock_zero_branch_is_identity(rng):
    s = resblock_store(8, 8, 1, 0)
    for name, t in s.items():
        if "conv" in name:
            t.data[...] = 0.0
    x = C.Tensor(rng.standard_normal((2, 8, 5, 5)))
    out = bottleneck_resblock(x, s.scope("blk"), stride=1)
    assert np.array_equal(out.data, x.data)


def test_resblock_downsampling_shape():
    s = resblock_store(128, 256, 2, 0, np.float32)
    x = C.Tensor(np.zeros((1, 128, 32, 32), np.float32))
    out = bottleneck_resblock(x, s.scope("blk"), stride=2, out_channels=256)
    assert out.shape == (1, 256, 16, 16)


def test_resblock_shape_errors():
    s = resblock_store(8, 16, 2, 0)
    with pytest.raises(ValueError, match="input channels"):
        bottleneck_resblock(C.Tensor(np.zeros((1, 4, 4, 4))), s.scope("blk"), stride=2)
    with pytest.raises(ValueError, match="expected 32"):
        bottleneck_resblock(C.Tensor(np.zeros((1, 8, 4, 4))), s.scope("blk"), stride=2, out_channels=32)


@pytest.mark.parametrize("cin,cout,stride,act", [(8, 8, 1, "leaky"), (8, 16, 2, "leaky"), (8, 8, 1, "relu")])
def test_resblock_gradients(cin, cout, stride, act):
    worst = 0.0
    for seed in SEEDS:
        s = resblock_store(cin, cout, stride, seed)
        x = np.random.default_rng(seed).standard_normal((1, cin, 4, 4))
        worst = max(worst, block_check(lambda t: bottleneck_resblock(t, s.scope("blk"), stride, act=act), s, [x], seed))
    assert worst <= 1e-5


# -- LSTM ------------------------------------------------------------------------------------


def test_lstm_zero_weights_give_zero_outputs(rng):
    s = lstm_store(3, 4, 0)
    for _, t in s.items():
        t.data[...] = 0.0
    seq = [C.Tensor(rng.standard_normal((2, 3))) for _ in range(5)]
    outs, final = lstm_layer(seq, s.scope("lstm"))
    assert all(np.all(o.data == 0.0) for o in outs)
    assert np.all(final.cell.data == 0.0)


def test_lstm_saturated_forget_gate_keeps_cell(rng):
    H = 4
    s = lstm_store(3, H, 0)
    for _, t in s.items():
        t.data[...] = 0.0
    s["lstm.bias"].data[H : 2 * H] = 10.0
    c = rng.uniform(-3, 3, (2, H))
    state = LstmState(C.Tensor(rng.standard_normal((2, H))), C.Tensor(c))
    new = lstm_cell(C.Tensor(rng.standard_normal((2, 3))), state, s.scope("lstm"))
    assert np.abs(new.cell.data - c).max() <= 1e-3


def test_lstm_layer_equals_manual_steps(rng):
    s = lstm_store(3, 5, 1)
    seq = [C.Tensor(rng.standard_normal((2, 3))) for _ in range(4)]
    outs, final = lstm_layer(seq, s.scope("lstm"))
    state = zero_state(2, 5, np.float64)
    for x, o in zip(seq, outs):
        state = lstm_cell(x, state, s.scope("lstm"))
        assert np.array_equal(state.hidden.data, o.data)
    assert np.array_equal(state.cell.data, final.cell.data)


def test_lstm_errors(rng):
    s = lstm_store(3, 5, 1)
    with pytest.raises(ValueError, match="non-empty"):
        lstm_layer([], s.scope("lstm"))
    with pytest.raises(ValueError, match="share one shape"):
        lstm_layer([C.Tensor(np.zeros((2, 3))), C.Tensor(np.zeros((1, 3)))], s.scope("lstm"))


def test_lstm_bptt_gradients():
    worst = 0.0
    for seed in SEEDS:
        s = lstm_store(3, 4, seed)
        r = np.random.default_rng(seed)
        xs = [r.standard_normal((2, 3)) for _ in range(3)]
        h0, c0 = r.standard_normal((2, 4)), r.standard_normal((2, 4))

        def run(a, b, c, h, cell):
            outs, final = lstm_layer([a, b, c], s.scope("lstm"), LstmState(h, cell))
            return C.concat(outs + [final.cell], axis=1)

        worst = max(worst, block_check(run, s, xs + [h0, c0], seed))
    assert worst <= 1e-5
