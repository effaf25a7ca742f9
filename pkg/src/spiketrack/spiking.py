"""Integer-valued LIF neurons and the convolutional SNN blocks built on them.

Activations are rank-5 arrays ``(T, B, C, H, W)``. During training an I-LIF
neuron emits an integer in ``[0, D]`` per outer timestep; for spike-driven
inference that integer is unrolled into ``D`` binary virtual sub-steps. Every
convolution is linear in its input, so the two modes agree once the spike
counts are summed.

I-LIF dynamics per outer step (no leak, soft reset, membrane starts at zero
for every frame)::

    u <- u + x
    y  = clamp(round(u / theta), 0, D)
    u <- u - y * theta
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Iterator, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

D_MAX = 4
DEFAULT_TIMESTEPS = 2
THRESHOLD = 1.0


class SpikeMode(enum.Enum):
    INTEGER = "integer"
    BINARY = "binary"


class ShapeError(ValueError):
    pass


@dataclass
class SpikeTensor:
    """Activation tensor; in BINARY mode the leading axis has length ``T * d_max``."""

    data: np.ndarray
    mode: SpikeMode = SpikeMode.INTEGER
    d_max: int = D_MAX

    def __post_init__(self):
        if self.data.ndim != 5:
            raise ShapeError(f"expected (T, B, C, H, W), got shape {self.data.shape}")
        if self.mode is SpikeMode.BINARY and self.data.shape[0] % self.d_max:
            raise ShapeError("binary tensor step axis is not a multiple of d_max")

    @property
    def timesteps(self) -> int:
        if self.mode is SpikeMode.BINARY:
            return self.data.shape[0] // self.d_max
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


@dataclass
class ILIFState:
    membrane: np.ndarray
    threshold: float = THRESHOLD
    d_max: int = D_MAX
    # Reserved for a leaky variant; 1.0 means no leak.
    decay: float = 1.0

    @classmethod
    def zeros(cls, shape, threshold=THRESHOLD, d_max=D_MAX, dtype=np.float32) -> "ILIFState":
        return cls(np.zeros(shape, dtype=dtype), threshold, d_max)


def ilif_step(state: ILIFState, input_current: np.ndarray) -> tuple[np.ndarray, ILIFState]:
    x = np.asarray(input_current)
    if x.shape != state.membrane.shape:
        raise ShapeError(f"input {x.shape} does not match membrane {state.membrane.shape}")
    if state.threshold <= 0:
        raise ValueError("threshold must be positive")
    u = state.decay * state.membrane + x
    y = np.clip(np.round(u / state.threshold), 0, state.d_max).astype(u.dtype)
    return y, replace(state, membrane=u - y * state.threshold)


def ilif(x: np.ndarray, d_max: int = D_MAX, threshold: float = THRESHOLD,
         return_membrane: bool = False):
    """Run I-LIF over the leading (outer timestep) axis of ``x``.

    With ``return_membrane`` the pre-emission membrane ``u`` of every step is
    returned as well (what the surrogate gradient is evaluated on).
    """
    x = np.asarray(x)
    state = ILIFState.zeros(x.shape[1:], threshold, d_max, dtype=x.dtype)
    out = np.empty_like(x)
    mem = np.empty_like(x) if return_membrane else None
    for t in range(x.shape[0]):
        if mem is not None:
            mem[t] = state.membrane + x[t]
        out[t], state = ilif_step(state, x[t])
    if return_membrane:
        return out, mem
    return out


def surrogate_grad(u_over_theta: np.ndarray, window: float = 0.5, d_max: int = D_MAX) -> np.ndarray:
    """Straight-through gradient of the clamped rounding inside :func:`ilif_step`."""
    if window <= 0:
        raise ValueError("window must be positive")
    u = np.asarray(u_over_theta)
    return ((u >= -window) & (u <= d_max + window)).astype(u.dtype if u.dtype.kind == "f" else np.float64)


def expand_to_spikes(t: SpikeTensor) -> SpikeTensor:
    """Unroll integer activations into ``D`` binary virtual steps (ones first)."""
    if t.mode is not SpikeMode.INTEGER:
        raise ValueError("tensor is already in binary spike mode")
    v = t.data
    if np.any(v < 0) or np.any(v > t.d_max) or np.any(v != np.round(v)):
        raise ValueError(f"integer activations must lie in {{0..{t.d_max}}}")
    steps = np.arange(t.d_max).reshape((1, t.d_max) + (1,) * (v.ndim - 1))
    spikes = (steps < v[:, None]).astype(np.uint8)
    T = v.shape[0]
    return SpikeTensor(spikes.reshape((T * t.d_max,) + v.shape[1:]), SpikeMode.BINARY, t.d_max)


def collapse_spikes(t: SpikeTensor, dtype=np.float32) -> SpikeTensor:
    if t.mode is not SpikeMode.BINARY:
        raise ValueError("tensor is not in binary spike mode")
    T = t.timesteps
    counts = t.data.reshape((T, t.d_max) + t.data.shape[1:]).sum(axis=1, dtype=np.int64)
    return SpikeTensor(counts.astype(dtype), SpikeMode.INTEGER, t.d_max)


# --------------------------------------------------------------------------- convolution

def conv2d(x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray] = None,
           stride: int = 1, padding: int = 0, groups: int = 1) -> np.ndarray:
    """Cross-correlation on ``(N, C, H, W)`` input, PyTorch weight layout."""
    n, c, _, _ = x.shape
    o, cg, kh, kw = weight.shape
    if c != cg * groups or o % groups:
        raise ShapeError(f"conv weight {weight.shape} incompatible with input channels {c} "
                         f"and groups {groups}")
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    if groups == 1:
        out = np.einsum("nchwij,ocij->nohw", win, weight, optimize=True)
    elif groups == c and o == c and cg == 1:
        out = np.einsum("nchwij,cij->nchw", win, weight[:, 0], optimize=True)
    else:
        og = o // groups
        wg = weight.reshape(groups, og, cg, kh, kw)
        xg = win.reshape((n, groups, cg) + win.shape[2:])
        out = np.einsum("ngchwij,gocij->ngohw", xg, wg, optimize=True)
        out = out.reshape((n, o) + out.shape[3:])
    if bias is not None:
        out = out + bias.reshape(1, -1, 1, 1)
    return out.astype(np.result_type(x.dtype, weight.dtype), copy=False)


@dataclass
class BatchNorm:
    scale: np.ndarray
    shift: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5

    @classmethod
    def identity(cls, channels: int, dtype=np.float32) -> "BatchNorm":
        return cls(np.ones(channels, dtype), np.zeros(channels, dtype),
                   np.zeros(channels, dtype), np.ones(channels, dtype), eps=0.0)


KINDS = ("pointwise", "depthwise", "standard")


@dataclass
class ConvSpec:
    kind: str
    weight: np.ndarray
    bias: Optional[np.ndarray] = None
    stride: int = 1
    bn: Optional[BatchNorm] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown conv kind {self.kind!r}")
        if self.kind == "depthwise" and self.weight.shape[1] != 1:
            raise ShapeError("depthwise weights must have shape (C, 1, k, k)")
        if self.kind == "pointwise" and self.weight.shape[2:] != (1, 1):
            raise ShapeError("pointwise weights must be 1x1")

    @property
    def in_channels(self) -> int:
        return self.out_channels if self.kind == "depthwise" else self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def kernel(self) -> int:
        return self.weight.shape[-1]

    @property
    def groups(self) -> int:
        return self.out_channels if self.kind == "depthwise" else 1

    def fused(self) -> "ConvSpec":
        """Fold batch norm into weight and bias."""
        bias = self.bias if self.bias is not None else np.zeros(self.out_channels, self.weight.dtype)
        if self.bn is None:
            return ConvSpec(self.kind, self.weight, bias, self.stride)
        bn = self.bn
        g = bn.scale / np.sqrt(bn.var + bn.eps)
        w = self.weight * g.reshape(-1, 1, 1, 1)
        b = (bias - bn.mean) * g + bn.shift
        return ConvSpec(self.kind, w.astype(self.weight.dtype), b.astype(self.weight.dtype), self.stride)

    def apply(self, x: np.ndarray, padding: Optional[int] = None) -> np.ndarray:
        """Apply to ``(N, C, H, W)``; 'same' padding by default."""
        spec = self.fused()
        pad = self.kernel // 2 if padding is None else padding
        return conv2d(x, spec.weight, spec.bias, spec.stride, pad, self.groups)


def init_conv(rng: np.random.Generator, kind: str, c_in: int, c_out: int, k: int = 1,
              stride: int = 1, bn: bool = True, bias: bool = False, gain: float = 1.0,
              dtype=np.float32) -> ConvSpec:
    if kind == "depthwise":
        if c_in != c_out:
            raise ShapeError("depthwise conv needs in_channels == out_channels")
        shape = (c_out, 1, k, k)
        fan_in = k * k
    else:
        if kind == "pointwise":
            k = 1
        shape = (c_out, c_in, k, k)
        fan_in = c_in * k * k
    w = rng.normal(0.0, gain / np.sqrt(fan_in), size=shape).astype(dtype)
    b = np.zeros(c_out, dtype) if bias else None
    return ConvSpec(kind, w, b, stride, BatchNorm.identity(c_out, dtype) if bn else None)


def quantize_conv(spec: ConvSpec, frac_bits: int = 12, dtype=np.float64) -> ConvSpec:
    """Fold BN and round weights/bias onto a ``2**-frac_bits`` fixed-point grid.

    On such a grid every partial sum over binary or small-integer inputs is
    exactly representable in float64, so integer-mode and spike-mode
    accumulations agree bit for bit regardless of summation order.
    """
    f = spec.fused()
    q = float(2 ** frac_bits)
    return ConvSpec(spec.kind, (np.round(f.weight.astype(np.float64) * q) / q).astype(dtype),
                    (np.round(f.bias.astype(np.float64) * q) / q).astype(dtype), spec.stride)


def _over_time(fn, x: np.ndarray) -> np.ndarray:
    """Apply a per-frame map to ``(T, B, C, H, W)`` by folding T into the batch."""
    T, B = x.shape[:2]
    y = fn(x.reshape((T * B,) + x.shape[2:]))
    return y.reshape((T, B) + y.shape[1:])


def conv_time(spec: ConvSpec, x: np.ndarray) -> np.ndarray:
    return _over_time(spec.apply, x)


def conv_spikes(spec: ConvSpec, spikes: SpikeTensor) -> np.ndarray:
    """Pre-activations from binary input: per virtual step, weights only, summed, bias once."""
    if spikes.mode is not SpikeMode.BINARY:
        raise ValueError("conv_spikes expects a binary spike tensor")
    f = spec.fused()
    pad = spec.kernel // 2
    D = spikes.d_max
    T = spikes.timesteps
    x = spikes.data.astype(f.weight.dtype)
    acc = None
    for s in range(D):
        step = x[s::D]  # sub-step s of every outer step
        y = _over_time(lambda z: conv2d(z, f.weight, None, f.stride, pad, spec.groups), step)
        acc = y if acc is None else acc + y
    assert acc.shape[0] == T
    return acc + f.bias.reshape(1, 1, -1, 1, 1)


# --------------------------------------------------------------------------- blocks

@dataclass
class SepConvSpec:
    pw1: ConvSpec
    dw1: ConvSpec
    pw2: ConvSpec
    dw2: ConvSpec


@dataclass
class ChConv1Spec:
    conv1: ConvSpec
    conv2: ConvSpec


@dataclass
class RepConvSpec:
    pw1: ConvSpec
    dw: ConvSpec
    pw2: ConvSpec

    def apply(self, x: np.ndarray) -> np.ndarray:
        # Zero-pad the raw input so border pixels see pw1's bias, matching the fused conv.
        pad = self.dw.kernel // 2
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        a = self.pw1.apply(x, padding=0)
        d = self.dw.apply(a, padding=0)
        return self.pw2.apply(d, padding=0)


@dataclass
class ChConv2Spec:
    rep1: RepConvSpec
    rep2: RepConvSpec


def _chain(*specs: ConvSpec) -> None:
    for a, b in zip(specs, specs[1:]):
        if a.out_channels != b.in_channels:
            raise ShapeError(f"channel mismatch: {a.out_channels} -> {b.in_channels}")


def _as_data(y) -> np.ndarray:
    return y.data if isinstance(y, SpikeTensor) else np.asarray(y)


def sep_conv(y, spec: SepConvSpec, d_max: int = D_MAX) -> np.ndarray:
    """ILIF(DW2(PW2(DW1(ILIF(PW1(ILIF(Y))))))) over ``(T, B, C, H, W)``."""
    x = _as_data(y)
    _chain(spec.pw1, spec.dw1, spec.pw2, spec.dw2)
    if x.shape[2] != spec.pw1.in_channels:
        raise ShapeError("input channels do not match pw1")
    z = conv_time(spec.pw1, ilif(x, d_max))
    z = conv_time(spec.dw1, ilif(z, d_max))
    return ilif(conv_time(spec.dw2, conv_time(spec.pw2, z)), d_max)


def ch_conv1(y, spec: ChConv1Spec, d_max: int = D_MAX) -> np.ndarray:
    x = _as_data(y)
    _chain(spec.conv1, spec.conv2)
    if x.shape[2] != spec.conv1.in_channels:
        raise ShapeError("input channels do not match conv1")
    h = conv_time(spec.conv1, ilif(x, d_max))
    return conv_time(spec.conv2, ilif(h, d_max))


def repconv(spec, x: np.ndarray) -> np.ndarray:
    if isinstance(spec, ConvSpec):
        return conv_time(spec, x)
    return _over_time(spec.apply, x)


def ch_conv2(y, spec: ChConv2Spec, d_max: int = D_MAX) -> np.ndarray:
    x = _as_data(y)
    h = repconv(spec.rep1, ilif(x, d_max))
    return repconv(spec.rep2, ilif(h, d_max))


def repconv_fuse(spec) -> ConvSpec:
    """Collapse PW -> DW(k x k) -> PW into one standard k x k convolution.

    Already-fused standard convs are returned unchanged.
    """
    if isinstance(spec, ConvSpec):
        if spec.kind != "standard":
            raise ValueError("only a RepConv composite or a standard conv can be fused")
        return spec.fused()
    p1, k, p2 = spec.pw1.fused(), spec.dw.fused(), spec.pw2.fused()
    if p1.kind != "pointwise" or k.kind != "depthwise" or p2.kind != "pointwise":
        raise ValueError("RepConv expects pointwise -> depthwise -> pointwise")
    if p1.stride != 1 or p2.stride != 1:
        raise ValueError("pointwise stages of a RepConv must have stride 1")
    _chain(p1, k, p2)
    P1 = p1.weight[:, :, 0, 0].astype(np.float64)   # (M, I)
    K = k.weight[:, 0].astype(np.float64)           # (M, k, k)
    P2 = p2.weight[:, :, 0, 0].astype(np.float64)   # (O, M)
    w = np.einsum("om,mi,mxy->oixy", P2, P1, K)
    b = P2 @ (K.sum(axis=(1, 2)) * p1.bias + k.bias) + p2.bias
    dtype = spec.pw1.weight.dtype
    return ConvSpec("standard", w.astype(dtype), b.astype(dtype), k.stride)


def meta_block(y, token_mixer: SepConvSpec, channel_mixer, d_max: int = D_MAX) -> np.ndarray:
    """Y' = Y + SepConv(Y); Y'' = Y' + ChConv(Y')."""
    x = _as_data(y)
    x1 = x + sep_conv(x, token_mixer, d_max)
    if isinstance(channel_mixer, ChConv1Spec):
        return x1 + ch_conv1(x1, channel_mixer, d_max)
    return x1 + ch_conv2(x1, channel_mixer, d_max)


def init_sep_conv(rng, c: int, k: int = 7, expand: int = 2) -> SepConvSpec:
    m = c * expand
    return SepConvSpec(init_conv(rng, "pointwise", c, m), init_conv(rng, "depthwise", m, m, k),
                       init_conv(rng, "pointwise", m, c), init_conv(rng, "depthwise", c, c, k))


def init_ch_conv1(rng, c: int, r: int = 4, k: int = 3) -> ChConv1Spec:
    return ChConv1Spec(init_conv(rng, "standard", c, r * c, k), init_conv(rng, "standard", r * c, c, k))


def init_repconv(rng, c_in: int, c_out: int, c_mid: Optional[int] = None, k: int = 3) -> RepConvSpec:
    c_mid = c_mid or c_out
    return RepConvSpec(init_conv(rng, "pointwise", c_in, c_mid), init_conv(rng, "depthwise", c_mid, c_mid, k),
                       init_conv(rng, "pointwise", c_mid, c_out))


def init_ch_conv2(rng, c: int, r: int = 4) -> ChConv2Spec:
    return ChConv2Spec(init_repconv(rng, c, r * c), init_repconv(rng, r * c, c))


@dataclass
class SpikeNet:
    """Plain conv stack with I-LIF between layers, runnable in either activation mode.

    The first layer sees the real-valued (direct-coded) input; every later
    layer sees I-LIF output.
    """

    layers: list[ConvSpec]
    d_max: int = D_MAX

    def preactivations(self, x: np.ndarray, mode: SpikeMode = SpikeMode.INTEGER) -> list[np.ndarray]:
        pre = [conv_time(self.layers[0], x)]
        for spec in self.layers[1:]:
            act = SpikeTensor(ilif(pre[-1], self.d_max), SpikeMode.INTEGER, self.d_max)
            if mode is SpikeMode.INTEGER:
                pre.append(conv_time(spec, act.data))
            else:
                pre.append(conv_spikes(spec, expand_to_spikes(act)))
        return pre


def encode_direct(image: np.ndarray, timesteps: int = DEFAULT_TIMESTEPS) -> np.ndarray:
    """Repeat ``(B, C, H, W)`` input over the outer timestep axis."""
    image = np.asarray(image, dtype=np.float32)
    return np.broadcast_to(image, (timesteps,) + image.shape).copy()


# --------------------------------------------------------------------------- checkpoints

def flatten_params(obj: Any, prefix: str = "") -> dict[str, np.ndarray]:
    """Map a tree of dataclasses / lists / dicts to ``{"a.b.0.weight": array}``."""
    out: dict[str, np.ndarray] = {}

    def walk(o, path):
        if isinstance(o, np.ndarray):
            out[path] = o
        elif is_dataclass(o):
            for f in fields(o):
                walk(getattr(o, f.name), f"{path}.{f.name}" if path else f.name)
        elif isinstance(o, (list, tuple)):
            for i, v in enumerate(o):
                walk(v, f"{path}.{i}" if path else str(i))
        elif isinstance(o, dict):
            for k, v in o.items():
                walk(v, f"{path}.{k}" if path else str(k))

    walk(obj, prefix)
    return out


def load_params(obj: Any, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
    """Copy arrays back into an identically structured tree (in place)."""
    expected = flatten_params(obj, prefix)
    missing = set(expected) - set(arrays)
    if missing:
        raise KeyError(f"checkpoint is missing {sorted(missing)[:5]}")
    for key, dst in expected.items():
        src = arrays[key]
        if src.shape != dst.shape:
            raise ShapeError(f"{key}: checkpoint shape {src.shape} != model shape {dst.shape}")
        dst[...] = src


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: Optional[dict] = None) -> None:
    """Write an ``.npz`` keyed by layer path; ``meta`` is stored as JSON under ``__meta__``."""
    payload = dict(arrays)
    if "__meta__" in payload:
        raise ValueError("'__meta__' is reserved")
    payload["__meta__"] = np.frombuffer(json.dumps(meta or {}).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(Path(path), allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
        meta = json.loads(bytes(z["__meta__"]).decode()) if "__meta__" in z.files else {}
    return arrays, meta
