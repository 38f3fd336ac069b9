"""Layer descriptions and a sequential network built from them."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import functional as F
from .tensor import Tensor

KINDS = ("conv2d", "dense", "relu", "sigmoid", "downsample2", "upsample2", "flatten", "unflatten")
INITS = ("he", "glorot", "zeros")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_features: int = 0
    out_features: int = 0
    kernel: int = 0
    stride: int = 1
    shape: tuple = field(default_factory=tuple)
    init: str = "he"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.init not in INITS:
            raise ValueError(f"unknown init {self.init!r}")
        if self.kind == "conv2d":
            if self.kernel < 1 or self.kernel % 2 == 0:
                raise ValueError(f"conv2d kernel must be odd and >= 1, got {self.kernel}")
            if self.stride not in (1, 2):
                raise ValueError("conv2d stride must be 1 or 2")
        if self.kind in ("conv2d", "dense") and (self.in_features < 1 or self.out_features < 1):
            raise ValueError(f"{self.kind} needs positive in/out features")

    @property
    def param_shapes(self):
        if self.kind == "conv2d":
            k = self.kernel
            return [(self.out_features, self.in_features, k, k), (self.out_features,)]
        if self.kind == "dense":
            return [(self.out_features, self.in_features), (self.out_features,)]
        return []

    def to_dict(self):
        d = asdict(self)
        d["shape"] = list(self.shape)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["shape"] = tuple(d.get("shape", ()))
        return cls(**d)


def conv(cin, cout, kernel=3, stride=1, init="he"):
    return LayerSpec("conv2d", cin, cout, kernel=kernel, stride=stride, init=init)


def dense(din, dout, init="he"):
    return LayerSpec("dense", din, dout, init=init)


RELU = LayerSpec("relu")
SIGMOID = LayerSpec("sigmoid")
FLATTEN = LayerSpec("flatten")
UPSAMPLE2 = LayerSpec("upsample2")
DOWNSAMPLE2 = LayerSpec("downsample2")


def unflatten(*shape):
    return LayerSpec("unflatten", shape=tuple(shape))


def count_parameters(specs):
    """Total number of trainable scalars in a layer sequence."""
    return sum(int(np.prod(s)) for spec in specs for s in spec.param_shapes)


def _init_weight(spec, shape, rng):
    if spec.init == "zeros":
        return np.zeros(shape)
    if spec.kind == "conv2d":
        rf = spec.kernel * spec.kernel
        fan_in, fan_out = spec.in_features * rf, spec.out_features * rf
    else:
        fan_in, fan_out = spec.in_features, spec.out_features
    if spec.init == "he":
        limit = np.sqrt(6.0 / fan_in)
    else:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Network:
    """A feed-forward chain of layers with its own parameter tensors."""

    def __init__(self, specs, rng=None, dtype=np.float32):
        self.specs = list(specs)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = []
        for i, spec in enumerate(self.specs):
            shapes = spec.param_shapes
            if not shapes:
                continue
            w = _init_weight(spec, shapes[0], rng)
            self.params.append(Tensor(w.astype(dtype), requires_grad=True, name=f"{i}.{spec.kind}.weight"))
            self.params.append(Tensor(np.zeros(shapes[1], dtype=dtype), requires_grad=True,
                                      name=f"{i}.{spec.kind}.bias"))

    def __call__(self, x):
        return self.forward(x)

    def forward(self, x):
        it = iter(self.params)
        for spec in self.specs:
            k = spec.kind
            if k == "conv2d":
                w, b = next(it), next(it)
                x = F.conv2d(x, w, b, stride=spec.stride)
            elif k == "dense":
                w, b = next(it), next(it)
                x = F.dense(x, w, b)
            elif k == "relu":
                x = F.relu(x)
            elif k == "sigmoid":
                x = F.sigmoid(x)
            elif k == "downsample2":
                x = F.downsample2(x)
            elif k == "upsample2":
                x = F.upsample2(x)
            elif k == "flatten":
                x = F.flatten(x)
            elif k == "unflatten":
                x = F.unflatten(x, spec.shape)
        return x

    def num_parameters(self):
        return count_parameters(self.specs)

    def astype(self, dtype):
        for p in self.params:
            p.data = p.data.astype(dtype)
        return self

    def zero_grad(self):
        for p in self.params:
            p.grad = None
