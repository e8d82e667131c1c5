"""The asymmetric super-resolution network.

Seventeen asymmetric layers (parallel 3x1, 3x3 and 1x3 convolutions summed,
then ReLU) extract features; a memory block sums every pre-activation layer
output and upsamples it with a sub-pixel head, while a second head upsamples
the first layer's activation; a five-layer enhancement block fuses the two
upsampled paths and reconstructs RGB.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .autodiff import EAGER
from .tensor import ConvKernel, ShapeError

N_AB_LAYERS = 17
IN_CHANNELS = 3
MODES = ("fixed-scale", "blind", "blind-noise")
ALL_SCALES = (2, 3, 4)
HEAD_FACTORS = {2: (2,), 3: (3,), 4: (2, 2)}
ASYM_TAPS = 3 * 1 + 3 * 3 + 1 * 3


class UnsupportedScaleError(ValueError):
    pass


@dataclass(frozen=True)
class AcnetConfig:
    channels: int = 64
    scales: tuple[int, ...] = (2,)
    mode: str = "fixed-scale"
    noise_sigma_range: tuple[float, float] = (0.0, 0.0)
    loss_reduction: str = "per_pixel"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(sorted(int(s) for s in self.scales)))
        object.__setattr__(self, "noise_sigma_range", tuple(float(s) for s in self.noise_sigma_range))
        if not self.scales:
            raise ValueError("at least one scale is required")
        bad = [s for s in self.scales if s not in ALL_SCALES]
        if bad:
            raise UnsupportedScaleError(f"unsupported scales {bad}; choose from {ALL_SCALES}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "fixed-scale" and len(self.scales) != 1:
            raise ValueError("fixed-scale mode takes exactly one scale")
        if self.mode != "fixed-scale" and self.scales != ALL_SCALES:
            raise ValueError(f"{self.mode} mode carries all heads {ALL_SCALES}")
        lo, hi = self.noise_sigma_range
        if lo < 0 or hi < lo:
            raise ValueError(f"bad noise sigma range {self.noise_sigma_range}")
        if self.channels < 1:
            raise ValueError("channels must be positive")

    @classmethod
    def blind_noise(cls, channels: int = 64, seed: int = 0, **kw) -> "AcnetConfig":
        return cls(channels=channels, scales=ALL_SCALES, mode="blind-noise",
                   noise_sigma_range=(0.0, 55.0), seed=seed, **kw)

    def to_dict(self) -> dict:
        return {
            "channels": self.channels,
            "scales": list(self.scales),
            "mode": self.mode,
            "noise_sigma_range": list(self.noise_sigma_range),
            "loss_reduction": self.loss_reduction,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AcnetConfig":
        return cls(
            channels=int(d["channels"]),
            scales=tuple(d["scales"]),
            mode=d["mode"],
            noise_sigma_range=tuple(d["noise_sigma_range"]),
            loss_reduction=d.get("loss_reduction", "per_pixel"),
            seed=int(d.get("seed", 0)),
        )


@dataclass
class AsymmetricLayer:
    k31: ConvKernel
    k33: ConvKernel
    k13: ConvKernel

    def __post_init__(self):
        shapes = {(k.in_channels, k.out_channels) for k in (self.k31, self.k33, self.k13)}
        if len(shapes) != 1:
            raise ShapeError(f"asymmetric branches disagree on channels: {shapes}")
        if (self.k31.weight.shape[2:], self.k33.weight.shape[2:], self.k13.weight.shape[2:]) != (
            (3, 1), (3, 3), (1, 3)
        ):
            raise ShapeError("asymmetric layer needs 3x1, 3x3 and 1x3 kernels")

    def kernels(self) -> Iterator[tuple[str, ConvKernel]]:
        yield "k31", self.k31
        yield "k33", self.k33
        yield "k13", self.k13

    @classmethod
    def zeros(cls, in_c: int, out_c: int, dtype=np.float32) -> "AsymmetricLayer":
        return cls(
            ConvKernel.zeros(out_c, in_c, 3, 1, dtype),
            ConvKernel.zeros(out_c, in_c, 3, 3, dtype),
            ConvKernel.zeros(out_c, in_c, 1, 3, dtype),
        )


@dataclass
class SubPixelHead:
    """Chain of (3x3 conv to ``c * r * r`` channels, pixel shuffle by ``r``)."""

    stages: list[tuple[ConvKernel, int]]

    def __post_init__(self):
        for k, r in self.stages:
            if k.out_channels != k.in_channels * r * r:
                raise ShapeError(f"stage conv {k.in_channels}->{k.out_channels} cannot shuffle by {r}")

    @property
    def scale(self) -> int:
        return math.prod(r for _, r in self.stages)

    @classmethod
    def zeros(cls, channels: int, scale: int, dtype=np.float32) -> "SubPixelHead":
        return cls([(ConvKernel.zeros(channels * r * r, channels, 3, 3, dtype), r)
                    for r in HEAD_FACTORS[scale]])


@dataclass
class HeadPair:
    main: SubPixelHead
    skip: SubPixelHead


HFFEB_NAMES = ("a1", "a2", "b1", "b2", "t1", "t2", "t3")


@dataclass
class HffebParams:
    a1: ConvKernel
    a2: ConvKernel
    b1: ConvKernel
    b2: ConvKernel
    t1: ConvKernel
    t2: ConvKernel
    t3: ConvKernel

    def __post_init__(self):
        if self.t3.out_channels != IN_CHANNELS:
            raise ShapeError(f"reconstruction conv must emit {IN_CHANNELS} channels")

    def kernels(self) -> Iterator[tuple[str, ConvKernel]]:
        for name in HFFEB_NAMES:
            yield name, getattr(self, name)

    @classmethod
    def zeros(cls, channels: int, dtype=np.float32) -> "HffebParams":
        ks = {n: ConvKernel.zeros(channels, channels, 3, 3, dtype) for n in HFFEB_NAMES[:-1]}
        return cls(**ks, t3=ConvKernel.zeros(IN_CHANNELS, channels, 3, 3, dtype))


@dataclass
class AcnetModel:
    ab: list  # AsymmetricLayer, or ConvKernel once fused
    heads: dict[int, HeadPair]
    hffeb: HffebParams
    config: AcnetConfig = field(default_factory=AcnetConfig)

    def __post_init__(self):
        if len(self.ab) != N_AB_LAYERS:
            raise ValueError(f"expected {N_AB_LAYERS} asymmetric layers, got {len(self.ab)}")
        if tuple(sorted(self.heads)) != self.config.scales:
            raise ValueError(f"heads {sorted(self.heads)} do not match scales {self.config.scales}")
        for s, pair in self.heads.items():
            if pair.main.scale != s or pair.skip.scale != s:
                raise ValueError(f"head for x{s} upsamples by the wrong factor")

    @property
    def fused(self) -> bool:
        return all(isinstance(layer, ConvKernel) for layer in self.ab)

    @property
    def dtype(self):
        return self.hffeb.t3.weight.dtype

    def named_kernels(self) -> Iterator[tuple[str, ConvKernel]]:
        for i, layer in enumerate(self.ab):
            if isinstance(layer, ConvKernel):
                yield f"ab.{i}.fused", layer
            else:
                for n, k in layer.kernels():
                    yield f"ab.{i}.{n}", k
        for s in sorted(self.heads):
            pair = self.heads[s]
            for role, head in (("main", pair.main), ("skip", pair.skip)):
                for j, (k, _) in enumerate(head.stages):
                    yield f"heads.x{s}.{role}.{j}", k
        for n, k in self.hffeb.kernels():
            yield f"hffeb.{n}", k

    def parameters(self) -> dict[str, np.ndarray]:
        """Name -> array; the arrays are the model's own storage (not copies)."""
        out = {}
        for name, k in self.named_kernels():
            out[f"{name}.weight"] = k.weight
            out[f"{name}.bias"] = k.bias
        return out

    def load_parameters(self, values: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(values)
        extra = set(values) - set(params)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing {sorted(missing)[:3]}, unexpected {sorted(extra)[:3]}")
        for name, p in params.items():
            v = np.asarray(values[name])
            if v.shape != p.shape:
                raise ShapeError(f"{name}: shape {v.shape} != {p.shape}")
            p[...] = v

    def copy(self) -> "AcnetModel":
        return self.astype(self.dtype)

    def astype(self, dtype) -> "AcnetModel":
        twin = build_model(self.config, fused=self.fused, dtype=dtype)
        twin.load_parameters(self.parameters())
        return twin


def build_model(config: AcnetConfig, fused: bool = False, dtype=np.float32) -> AcnetModel:
    """All-zero model with the layout ``config`` describes."""
    c = config.channels
    ab = []
    for i in range(N_AB_LAYERS):
        in_c = IN_CHANNELS if i == 0 else c
        if fused:
            ab.append(ConvKernel.zeros(c, in_c, 3, 3, dtype))
        else:
            ab.append(AsymmetricLayer.zeros(in_c, c, dtype))
    heads = {s: HeadPair(SubPixelHead.zeros(c, s, dtype), SubPixelHead.zeros(c, s, dtype))
             for s in config.scales}
    return AcnetModel(ab, heads, HffebParams.zeros(c, dtype), config)


def init_params(config: AcnetConfig, seed: int | None = None, fan_in: str = "layer") -> AcnetModel:
    """Weights uniform in +-sqrt(6 / fan_in), biases zero.

    With ``fan_in="layer"`` the three branches of an asymmetric layer share
    the fan-in of their sum (``in_c * 15`` taps), which keeps the activation
    scale steady through the 17 stacked layers. ``fan_in="kernel"`` counts
    each branch on its own (``in_c * kh * kw``); the branch sum then grows the
    activation variance roughly threefold per layer.
    """
    if fan_in not in ("layer", "kernel"):
        raise ValueError(f"unknown fan_in rule {fan_in!r}")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    model = build_model(config)
    for name, k in model.named_kernels():
        _, in_c, kh, kw = k.weight.shape
        taps = kh * kw
        if fan_in == "layer" and name.startswith("ab."):
            taps = ASYM_TAPS
        bound = math.sqrt(6.0 / (in_c * taps))
        k.weight[...] = rng.uniform(-bound, bound, size=k.weight.shape)
    return model


def ab_forward(x, ab, ops=EAGER):
    """Per-layer pre-activation sums and their ReLUs for every asymmetric layer."""
    conv_outs, act_outs = [], []
    h = x
    for i, layer in enumerate(ab):
        if isinstance(layer, ConvKernel):
            c = ops.conv2d(h, ops.kernel(f"ab.{i}.fused", layer))
        else:
            c = ops.conv_sum(h, [ops.kernel(f"ab.{i}.{n}", k) for n, k in layer.kernels()])
        h = ops.relu(c)
        conv_outs.append(c)
        act_outs.append(h)
    return conv_outs, act_outs


def _run_head(x, head: SubPixelHead, prefix: str, ops):
    for j, (k, r) in enumerate(head.stages):
        x = ops.pixel_shuffle(ops.conv2d(x, ops.kernel(f"{prefix}.{j}", k)), r)
    return x


def meb_forward(conv_outs, act_outs, head_main: SubPixelHead, head_skip: SubPixelHead, ops=EAGER):
    """Returns the upsampled merged features and the upsampled first-layer activation."""
    if head_main is None or head_skip is None:
        raise UnsupportedScaleError("no sub-pixel head for the requested scale")
    s = head_main.scale
    merged = ops.relu(ops.add_n(conv_outs))
    o2 = _run_head(merged, head_main, f"heads.x{s}.main", ops)
    o3 = _run_head(act_outs[0], head_skip, f"heads.x{s}.skip", ops)
    return o2, o3


def hffeb_forward(o2, o3, hffeb: HffebParams, ops=EAGER):
    if np.shape(getattr(o2, "value", o2)) != np.shape(getattr(o3, "value", o3)):
        raise ShapeError("enhancement block paths have different shapes")
    k = {n: ops.kernel(f"hffeb.{n}", kern) for n, kern in hffeb.kernels()}
    path_a = ops.conv2d(ops.relu(ops.conv2d(o2, k["a1"])), k["a2"])
    path_b = ops.conv2d(ops.relu(ops.conv2d(o3, k["b1"])), k["b2"])
    u = ops.relu(ops.add(path_b, path_a))
    u = ops.relu(ops.conv2d(u, k["t1"]))
    u = ops.relu(ops.conv2d(u, k["t2"]))
    return ops.conv2d(u, k["t3"])


def forward(model: AcnetModel, x, scale: int, ops=EAGER):
    """Super-resolve ``x`` (n, 3, h, w) to (n, 3, h*scale, w*scale)."""
    if scale not in model.heads:
        raise UnsupportedScaleError(f"model has no x{scale} head (scales {model.config.scales})")
    if ops is EAGER:
        x = np.asarray(x, dtype=model.dtype)
    conv_outs, act_outs = ab_forward(x, model.ab, ops)
    pair = model.heads[scale]
    o2, o3 = meb_forward(conv_outs, act_outs, pair.main, pair.skip, ops)
    return hffeb_forward(o2, o3, model.hffeb, ops)


def fuse_ab_layer(layer: AsymmetricLayer) -> ConvKernel:
    """Fold the 3x1 and 1x3 branches into the 3x3 kernel's centre column and row."""
    w = layer.k33.weight.copy()
    w[:, :, :, 1:2] += layer.k31.weight
    w[:, :, 1:2, :] += layer.k13.weight
    b = layer.k31.bias + layer.k33.bias + layer.k13.bias
    return ConvKernel(w, b)


def fuse_model(model: AcnetModel) -> AcnetModel:
    fused = model.copy()
    fused.ab = [layer if isinstance(layer, ConvKernel) else fuse_ab_layer(layer) for layer in fused.ab]
    return fused


def param_count(model: AcnetModel) -> int:
    return sum(p.size for p in model.parameters().values())

