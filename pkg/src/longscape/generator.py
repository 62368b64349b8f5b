"""Outpainting generator: residual encoder, recurrent content transfer, and a
decoder that fuses encoder features into the input-aligned half of every level.

Parameter names are flat dotted paths inside one :class:`ParamStore`.
"""
from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np

from . import core as C
from .config import GeneratorConfig
from .core import Tensor
from .layers import (
    ParamScope,
    ParamStore,
    bottleneck_resblock,
    conv,
    init_conv,
    init_conv_transpose,
    init_lstm,
    init_norm,
    init_resblock,
    lstm_cell,
    lstm_layer,
    norm_act,
)

ENC_ACT = "leaky"
DEC_ACT = "relu"


class ShapeError(ValueError):
    pass


class SkipSet(NamedTuple):
    """Encoder features reused by the decoder, shallowest first, plus the latent."""

    conv1: Tensor
    conv2: Tensor
    stage0: Tensor
    stage1: Tensor
    rct_in: Tensor


def architecture_rows(cfg: GeneratorConfig) -> list[tuple[str, tuple[int, int, int], str]]:
    """(layer, output C x H x W, setting) for every row of the layer table."""
    c0, c1, c2, c3, c4 = cfg.channels
    s = cfg.input_size
    e1, e2, e3, e4, lat = s // 2, s // 4, s // 8, s // 16, s // 32
    n0, n1, n2 = cfg.encoder_blocks
    m0, m1, m2 = cfg.decoder_blocks
    r0, r1, r2 = cfg.grb_dilations
    return [
        ("Conv", (c0, e1, e1), "4x4, stride=2"),
        ("Conv", (c1, e2, e2), "4x4, stride=2"),
        (f"ResBlock x{n0}", (c2, e3, e3), "stride of first block=2"),
        (f"ResBlock x{n1}", (c3, e4, e4), "stride of first block=2"),
        (f"ResBlock x{n2}", (c4, lat, lat), "stride of first block=2"),
        ("RCT", (c4, lat, cfg.rct_pred_len), "None"),
        ("SHC+GRB", (c4, lat, 2 * lat), f"dilated rate={r0}"),
        (f"ResBlock x{m0}", (c4, lat, 2 * lat), "None"),
        ("Trans-Conv", (c3, e4, 2 * e4), "4x4, stride=2"),
        ("SHC+GRB", (c3, e4, 2 * e4), f"dilated rate={r1}"),
        (f"ResBlock x{m1}", (c3, e4, 2 * e4), "None"),
        ("Trans-Conv", (c2, e3, 2 * e3), "4x4, stride=2"),
        ("SHC+GRB", (c2, e3, 2 * e3), f"dilated rate={r2}"),
        (f"ResBlock x{m2}", (c2, e3, 2 * e3), "None"),
        ("Trans-Conv", (c1, e2, 2 * e2), "4x4, stride=2"),
        ("SHC", (c1, e2, 2 * e2), "None"),
        ("Trans-Conv", (c0, e1, 2 * e1), "4x4, stride=2"),
        ("SHC", (c0, e1, 2 * e1), "None"),
        ("Trans-Conv", (3, s, 2 * s), "4x4, stride=2"),
    ]


# -- parameters -----------------------------------------------------------------------------


def init_generator(cfg: GeneratorConfig, seed: int, dtype=np.float32) -> ParamStore:
    rng = np.random.default_rng(seed)
    store = ParamStore(dtype)
    c0, c1, c2, c3, c4 = cfg.channels

    enc = store.scope("enc")
    init_conv(enc.scope("conv1"), c0, 3, 4, 4, rng)
    init_norm(enc.scope("norm2"), c0)
    init_conv(enc.scope("conv2"), c1, c0, 4, 4, rng)
    stage_io = [(c1, c2), (c2, c3), (c3, c4)]
    for k, ((cin, cout), n) in enumerate(zip(stage_io, cfg.encoder_blocks)):
        for b in range(n):
            init_resblock(enc.scope(f"stage{k}.block{b}"), cin if b == 0 else cout, cout, 2 if b == 0 else 1, rng)

    init_rct(store.scope("rct"), cfg, rng)

    dec = store.scope("dec")
    level_ch = [c4, c3, c2]
    for k, n in enumerate(cfg.decoder_blocks):
        ch = level_ch[k]
        if k > 0:
            init_shc(dec.scope(f"shc{k}"), ch, rng)
        init_grb(dec.scope(f"grb{k}"), ch, rng)
        for b in range(n):
            init_resblock(dec.scope(f"stage{k}.block{b}"), ch, ch, 1, rng)
    up_io = [(c4, c3), (c3, c2), (c2, c1), (c1, c0), (c0, 3)]
    for k, (cin, cout) in enumerate(up_io):
        init_norm(dec.scope(f"up{k}.norm"), cin)
        init_conv_transpose(dec.scope(f"up{k}"), cin, cout, 4, 4, rng)
    init_shc(dec.scope("shc3"), c1, rng)
    init_shc(dec.scope("shc4"), c0, rng)
    return store


def init_rct(scope: ParamScope, cfg: GeneratorConfig, rng: np.random.Generator) -> None:
    c4, cr, hidden = cfg.channels[4], cfg.rct_channels, cfg.rct_hidden
    init_norm(scope.scope("norm"), c4)
    init_conv(scope.scope("reduce"), cr, c4, 1, 1, rng)
    init_lstm(scope.scope("lstm0"), hidden, hidden, rng)
    init_lstm(scope.scope("lstm1"), hidden, hidden, rng)
    init_conv(scope.scope("expand"), c4, cr, 1, 1, rng)


def init_shc(scope: ParamScope, ch: int, rng: np.random.Generator) -> None:
    half = max(1, ch // 2)
    init_norm(scope.scope("norm1"), 2 * ch)
    init_conv(scope.scope("conv1"), half, 2 * ch, 1, 1, rng)
    init_norm(scope.scope("norm2"), half)
    init_conv(scope.scope("conv2"), half, half, 3, 3, rng)
    init_norm(scope.scope("norm3"), half)
    init_conv(scope.scope("conv3"), ch, half, 1, 1, rng)


def init_grb(scope: ParamScope, ch: int, rng: np.random.Generator) -> None:
    init_norm(scope.scope("norm1"), ch)
    init_conv(scope.scope("conv1"), ch, ch, 1, 7, rng)
    init_norm(scope.scope("norm2"), ch)
    init_conv(scope.scope("conv2"), ch, ch, 3, 1, rng)


# -- blocks -----------------------------------------------------------------------------------


def encode(image: Tensor, params: ParamStore, cfg: GeneratorConfig, trace: Optional[list] = None) -> tuple[Tensor, SkipSet]:
    s = cfg.input_size
    if image.ndim != 4 or image.shape[1:] != (3, s, s):
        raise ShapeError(f"encoder expects Bx3x{s}x{s} input, got {image.shape}")
    enc = params.scope("enc")
    e1 = conv(enc.scope("conv1"), image, stride=2, padding=1)
    _emit(trace, e1)
    e2 = conv(enc.scope("conv2"), norm_act(enc.scope("norm2"), e1, ENC_ACT), stride=2, padding=1)
    _emit(trace, e2)
    h = e2
    stages = []
    for k, n in enumerate(cfg.encoder_blocks):
        for b in range(n):
            h = bottleneck_resblock(h, enc.scope(f"stage{k}.block{b}"), stride=2 if b == 0 else 1, act=ENC_ACT)
        stages.append(h)
        _emit(trace, h)
    return h, SkipSet(e1, e2, stages[0], stages[1], h)


def rct_forward(latent: Tensor, params: ParamScope, pred_len: int) -> Tensor:
    """Column-wise recurrent transfer from the latent to ``pred_len`` predicted columns."""
    if pred_len < 1:
        raise ValueError("pred_len must be >= 1")
    c_in = params["reduce.weight"].shape[1]
    hidden = params["lstm0.wh"].shape[0]
    if latent.ndim != 4 or latent.shape[1] != c_in:
        raise ShapeError(f"RCT expects Bx{c_in}xHxW latent, got {latent.shape}")
    h = conv(params.scope("reduce"), norm_act(params.scope("norm"), latent, ENC_ACT))
    B, cr, rows, cols = h.shape
    if cr * rows != hidden:
        raise ShapeError(f"RCT column size {cr}x{rows} does not match LSTM width {hidden}")
    seq = [C.reshape(C.slice_axis(h, 3, j, j + 1), (B, cr * rows)) for j in range(cols)]
    l0, l1 = params.scope("lstm0"), params.scope("lstm1")
    out0, s0 = lstm_layer(seq, l0)
    out1, s1 = lstm_layer(out0, l1)
    y = out1[-1]
    preds = []
    for _ in range(pred_len):
        s0 = lstm_cell(y, s0, l0)
        s1 = lstm_cell(s0.hidden, s1, l1)
        y = s1.hidden
        preds.append(C.reshape(y, (B, cr, rows, 1)))
    return conv(params.scope("expand"), C.concat(preds, axis=3))


def shc_first(rct_out: Tensor, rct_in: Tensor) -> Tensor:
    if rct_out.shape != rct_in.shape:
        raise ShapeError(f"first skip connection needs equal shapes, got {rct_in.shape} and {rct_out.shape}")
    return C.concat([rct_in, rct_out], axis=3)


def shc_forward(dec_feat: Tensor, enc_feat: Tensor, params: ParamScope, act: str = DEC_ACT) -> Tensor:
    """Fuse ``enc_feat`` into the left half of ``dec_feat``; the right half passes through."""
    B, c, h, w = dec_feat.shape
    if w % 2:
        raise ShapeError(f"decoder width {w} is odd")
    if enc_feat.shape != (B, c, h, w // 2):
        raise ShapeError(f"encoder feature {enc_feat.shape} does not match decoder half {(B, c, h, w // 2)}")
    left = C.slice_axis(dec_feat, 3, 0, w // 2)
    right = C.slice_axis(dec_feat, 3, w // 2, w)
    z = C.concat([left, enc_feat], axis=1)
    z = conv(params.scope("conv1"), norm_act(params.scope("norm1"), z, act))
    z = conv(params.scope("conv2"), norm_act(params.scope("norm2"), z, act), padding=1)
    z = conv(params.scope("conv3"), norm_act(params.scope("norm3"), z, act))
    return C.concat([C.add(z, enc_feat), right], axis=3)


def grb_forward(x: Tensor, params: ParamScope, rate: int, act: str = DEC_ACT) -> Tensor:
    """Residual 1x7 (horizontally dilated) then 3x1 convolution."""
    if rate < 1:
        raise ValueError("dilation rate must be >= 1")
    h = conv(params.scope("conv1"), norm_act(params.scope("norm1"), x, act), dilation=(1, rate), padding=(0, 3 * rate))
    h = conv(params.scope("conv2"), norm_act(params.scope("norm2"), h, act), padding=(1, 0))
    return C.add(x, h)


def _upsample(x: Tensor, params: ParamScope) -> Tensor:
    h = norm_act(params.scope("norm"), x, DEC_ACT)
    return C.conv_transpose2d(h, params["weight"], params["bias"], stride=2, padding=1)


def _emit(trace, t: Tensor) -> None:
    if trace is not None:
        trace.append(t.shape[1:])


# -- full network -------------------------------------------------------------------------------


def generator_forward(image: Tensor, params: ParamStore, cfg: GeneratorConfig, trace: Optional[list] = None) -> Tensor:
    """Bx3xSxS input -> Bx3xSx2S output in [-1, 1]; the right half is the prediction."""
    if cfg.rct_pred_len != cfg.latent_size:
        raise ShapeError(
            f"one-step generation needs rct_pred_len == latent width ({cfg.latent_size}), got {cfg.rct_pred_len}"
        )
    rows = architecture_rows(cfg)
    shapes: list = []

    def check(t: Tensor) -> Tensor:
        i = len(shapes)
        shapes.append(t.shape[1:])
        label, expected, _ = rows[i]
        if t.shape[1:] != expected:
            raise ShapeError(f"layer row {i + 1} ({label}): expected CxHxW {expected}, got {t.shape[1:]}")
        return t

    latent, skips = encode(image, params, cfg, trace=shapes)
    for i, shp in enumerate(shapes):
        if shp != rows[i][1]:
            raise ShapeError(f"layer row {i + 1} ({rows[i][0]}): expected CxHxW {rows[i][1]}, got {shp}")

    dec = params.scope("dec")
    h = check(rct_forward(latent, params.scope("rct"), cfg.rct_pred_len))
    enc_levels = [None, skips.stage1, skips.stage0]
    for k, n in enumerate(cfg.decoder_blocks):
        if k == 0:
            h = shc_first(h, skips.rct_in)
        else:
            h = check(_upsample(h, dec.scope(f"up{k - 1}")))
            h = shc_forward(h, enc_levels[k], dec.scope(f"shc{k}"))
        h = check(grb_forward(h, dec.scope(f"grb{k}"), cfg.grb_dilations[k]))
        for b in range(n):
            h = bottleneck_resblock(h, dec.scope(f"stage{k}.block{b}"), act=DEC_ACT)
        h = check(h)
    h = check(_upsample(h, dec.scope("up2")))
    h = check(shc_forward(h, skips.conv2, dec.scope("shc3")))
    h = check(_upsample(h, dec.scope("up3")))
    h = check(shc_forward(h, skips.conv1, dec.scope("shc4")))
    out = check(C.tanh(_upsample(h, dec.scope("up4"))))
    if trace is not None:
        trace.extend(zip([r[0] for r in rows], shapes))
    return out


def generate_multistep(image, params: ParamStore, cfg: GeneratorConfig, steps_right: int, steps_left: int = 0) -> np.ndarray:
    """Recursive outpainting to both sides of a 3xSxS image; returns 3 x S x S(1+R+L).

    Each rightward step feeds the previous predicted half back in; leftward
    steps run the same model on horizontally flipped tiles.
    """
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeError(f"expected a 3xHxW image, got {arr.shape}")
    if arr.shape[1] != arr.shape[2]:
        raise ShapeError(f"multi-step generation needs a square input, got {arr.shape[1]}x{arr.shape[2]}")
    if steps_right < 0 or steps_left < 0:
        raise ValueError("step counts must be non-negative")
    s = arr.shape[1]
    arr = arr.astype(params.dtype, copy=False)

    def predict(tile: np.ndarray) -> np.ndarray:
        with C.no_record():
            out = generator_forward(C.constant(tile[None]), params, cfg)
        return out.data[0, :, :, s:]

    tiles = [arr]
    cur = arr
    for _ in range(steps_right):
        cur = predict(cur)
        tiles.append(cur)
    cur = arr
    for _ in range(steps_left):
        cur = predict(cur[:, :, ::-1].copy())[:, :, ::-1]
        tiles.insert(0, cur)
    return np.ascontiguousarray(np.concatenate(tiles, axis=2))
