"""Parameter storage and the reusable building blocks of both networks."""
from __future__ import annotations

from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np

from . import core as C
from .core import Tensor

LEAKY_SLOPE = 0.2
NORM_EPS = 1e-5


class ParamStore:
    """Ordered name -> parameter map with Adam moment slots.

    Insertion order is the canonical order (checkpoints and optimizer updates
    follow it).
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._values: dict[str, Tensor] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self._values:
            raise KeyError(f"duplicate parameter name {name!r}")
        arr = np.array(value, dtype=self.dtype, order="C")
        t = Tensor._wrap(arr)
        t.requires_grad = True
        self._values[name] = t
        self.grads[name] = np.zeros_like(arr)
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        return t

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._values[name]
        except KeyError:
            raise KeyError(f"no parameter named {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def names(self) -> list[str]:
        return list(self._values)

    def items(self):
        return self._values.items()

    def scope(self, prefix: str) -> "ParamScope":
        return ParamScope(self, prefix)

    def num_params(self, prefix: str = "") -> int:
        return int(sum(t.size for n, t in self._values.items() if n.startswith(prefix)))

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore(dtype)
        for name, t in self._values.items():
            out.add(name, t.data)
            out.m[name] = self.m[name].astype(dtype)
            out.v[name] = self.v[name].astype(dtype)
        out.step = self.step
        return out

    def copy(self) -> "ParamStore":
        return self.astype(self.dtype)


class ParamScope:
    """Prefixed view into a :class:`ParamStore`."""

    def __init__(self, store: ParamStore, prefix: str):
        self.store = store
        self.prefix = prefix

    def _key(self, name: str) -> str:
        return f"{self.prefix}.{name}" if self.prefix else name

    def __getitem__(self, name: str) -> Tensor:
        return self.store[self._key(name)]

    def __contains__(self, name: str) -> bool:
        return self._key(name) in self.store

    def add(self, name: str, value) -> Tensor:
        return self.store.add(self._key(name), value)

    def scope(self, name: str) -> "ParamScope":
        return ParamScope(self.store, self._key(name))


# -- initialization ---------------------------------------------------------------------


def init_conv(scope: ParamScope, out_ch: int, in_ch: int, kh: int, kw: int, rng: np.random.Generator) -> None:
    std = np.sqrt(2.0 / (in_ch * kh * kw))
    scope.add("weight", rng.normal(0.0, std, size=(out_ch, in_ch, kh, kw)))
    scope.add("bias", np.zeros(out_ch))


def init_conv_transpose(scope: ParamScope, in_ch: int, out_ch: int, kh: int, kw: int, rng: np.random.Generator) -> None:
    std = np.sqrt(2.0 / (in_ch * kh * kw))
    scope.add("weight", rng.normal(0.0, std, size=(in_ch, out_ch, kh, kw)))
    scope.add("bias", np.zeros(out_ch))


def init_linear(scope: ParamScope, in_features: int, out_features: int, rng: np.random.Generator) -> None:
    std = np.sqrt(2.0 / in_features)
    scope.add("weight", rng.normal(0.0, std, size=(in_features, out_features)))
    scope.add("bias", np.zeros(out_features))


def init_norm(scope: ParamScope, channels: int) -> None:
    scope.add("gamma", np.ones(channels))
    scope.add("beta", np.zeros(channels))


def init_lstm(scope: ParamScope, input_size: int, hidden: int, rng: np.random.Generator) -> None:
    """Gate blocks are laid out [input, forget, candidate, output] along the last axis."""
    k = 1.0 / np.sqrt(hidden)
    scope.add("wx", rng.uniform(-k, k, size=(input_size, 4 * hidden)))
    scope.add("wh", rng.uniform(-k, k, size=(hidden, 4 * hidden)))
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0
    scope.add("bias", b)


def init_resblock(scope: ParamScope, in_ch: int, out_ch: int, stride: int, rng: np.random.Generator) -> None:
    mid = out_ch // 4
    init_norm(scope.scope("norm1"), in_ch)
    init_conv(scope.scope("conv1"), mid, in_ch, 1, 1, rng)
    init_norm(scope.scope("norm2"), mid)
    init_conv(scope.scope("conv2"), mid, mid, 3, 3, rng)
    init_norm(scope.scope("norm3"), mid)
    init_conv(scope.scope("conv3"), out_ch, mid, 1, 1, rng)
    if stride != 1 or in_ch != out_ch:
        init_conv(scope.scope("shortcut"), out_ch, in_ch, 1, 1, rng)


# -- forward pieces ------------------------------------------------------------------------


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return C.relu(x)
    if kind == "leaky":
        return C.leaky_relu(x, LEAKY_SLOPE)
    raise ValueError(f"unknown activation {kind!r}")


def conv(scope: ParamScope, x: Tensor, stride=1, dilation=1, padding=0) -> Tensor:
    return C.conv2d(x, scope["weight"], scope["bias"], stride=stride, dilation=dilation, padding=padding)


def norm_act(scope: ParamScope, x: Tensor, act: str) -> Tensor:
    return activation(C.instance_norm(x, scope["gamma"], scope["beta"], NORM_EPS), act)


def bottleneck_resblock(x: Tensor, params: ParamScope, stride: int = 1, out_channels: Optional[int] = None, act: str = "leaky") -> Tensor:
    """Pre-activation bottleneck: 1x1 reduce, 3x3 (strided), 1x1 expand, plus shortcut."""
    w3 = params["conv3.weight"]
    if out_channels is not None and w3.shape[0] != out_channels:
        raise ValueError(f"resblock parameters produce {w3.shape[0]} channels, expected {out_channels}")
    if x.shape[1] != params["conv1.weight"].shape[1]:
        raise ValueError(
            f"resblock expects {params['conv1.weight'].shape[1]} input channels, got {x.shape[1]}"
        )
    h = conv(params.scope("conv1"), norm_act(params.scope("norm1"), x, act))
    h = conv(params.scope("conv2"), norm_act(params.scope("norm2"), h, act), stride=stride, padding=1)
    h = conv(params.scope("conv3"), norm_act(params.scope("norm3"), h, act))
    if "shortcut.weight" in params:
        skip = conv(params.scope("shortcut"), x, stride=stride)
    elif stride != 1:
        raise ValueError("strided resblock needs a projection shortcut")
    else:
        skip = x
    return C.add(h, skip)


class LstmState(NamedTuple):
    hidden: Tensor
    cell: Tensor


def zero_state(batch: int, hidden: int, dtype=np.float32) -> LstmState:
    z = np.zeros((batch, hidden), dtype=dtype)
    return LstmState(C.constant(z), C.constant(z.copy()))


def lstm_cell(x: Tensor, state: LstmState, params: ParamScope) -> LstmState:
    H = params["wh"].shape[0]
    z = C.add(C.add(C.matmul(x, params["wx"]), C.matmul(state.hidden, params["wh"])), params["bias"])
    i = C.sigmoid(C.slice_axis(z, 1, 0, H))
    f = C.sigmoid(C.slice_axis(z, 1, H, 2 * H))
    g = C.tanh(C.slice_axis(z, 1, 2 * H, 3 * H))
    o = C.sigmoid(C.slice_axis(z, 1, 3 * H, 4 * H))
    cell = C.add(C.mul(f, state.cell), C.mul(i, g))
    return LstmState(C.mul(o, C.tanh(cell)), cell)


def lstm_layer(seq: Sequence[Tensor], params: ParamScope, init: Optional[LstmState] = None) -> tuple[list[Tensor], LstmState]:
    if not seq:
        raise ValueError("lstm_layer needs a non-empty sequence")
    shape = seq[0].shape
    if any(s.shape != shape for s in seq):
        raise ValueError("all sequence elements must share one shape")
    if init is None:
        init = zero_state(shape[0], params["wh"].shape[0], seq[0].dtype)
    state = init
    outputs = []
    for x in seq:
        state = lstm_cell(x, state, params)
        outputs.append(state.hidden)
    return outputs, state
