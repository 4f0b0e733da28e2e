"""Parameterized building blocks: convolutions, layer norm, channel/pixel
attention, the feature enhancing block, and residual blocks.

All trainable tensors live in one ParamRegistry keyed by hierarchical name,
so weight sharing between the left and right branches holds by construction:
both views run through the same layer objects.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import (
    DTYPES,
    Tensor,
    add,
    conv2d,
    gelu,
    global_avg_pool,
    layer_norm,
    mul,
    relu,
    sigmoid,
)


class ParamRegistry:
    """Ordered map from hierarchical name to trainable tensor."""

    def __init__(self, dtype: str = "f32"):
        if dtype not in DTYPES:
            raise ValueError(f"unknown dtype {dtype!r}")
        self.dtype = dtype
        self._params = {}
        self._kinds = {}

    def add(self, name: str, shape, kind: str) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.zeros(shape, dtype=DTYPES[self.dtype]), requires_grad=True)
        self._params[name] = t
        self._kinds[name] = kind
        return t

    def kind(self, name: str) -> str:
        return self._kinds[name]

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def num_values(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None


def init_parameters(registry: ParamRegistry, seed: int) -> ParamRegistry:
    """Fan-in uniform init for conv weights, zeros for biases and fusion
    gates, ones/zeros for layer-norm affine. Deterministic given seed."""
    rng = np.random.default_rng(seed)
    for name, t in registry.items():
        kind = registry.kind(name)
        if kind == "conv_weight":
            _, ci, kh, kw = t.shape
            bound = math.sqrt(1.0 / (ci * kh * kw))
            t.data[...] = rng.uniform(-bound, bound, size=t.shape)
        elif kind in ("bias", "ln_beta", "gate"):
            t.data[...] = 0.0
        elif kind == "ln_gamma":
            t.data[...] = 1.0
        else:
            raise ValueError(f"unknown parameter kind {kind!r} for {name!r}")
    return registry


class Conv2d:
    def __init__(self, reg: ParamRegistry, name: str, c_in: int, c_out: int, k: int = 3, stride: int = 1):
        self.stride = stride
        self.weight = reg.add(f"{name}.weight", (c_out, c_in, k, k), "conv_weight")
        self.bias = reg.add(f"{name}.bias", (c_out,), "bias")

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride)


class LayerNorm2d:
    """Normalization over the channel axis at each spatial location."""

    def __init__(self, reg: ParamRegistry, name: str, c: int, eps: float = 1e-5):
        self.eps = eps
        self.gamma = reg.add(f"{name}.gamma", (c,), "ln_gamma")
        self.beta = reg.add(f"{name}.beta", (c,), "ln_beta")

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, eps=self.eps)


class ChannelAttention:
    """Per-channel sigmoid gate computed from globally pooled features."""

    def __init__(self, reg: ParamRegistry, name: str, c: int, reduction: int = 4):
        cr = max(1, c // reduction)
        self.conv1 = Conv2d(reg, f"{name}.conv1", c, cr, k=1)
        self.conv2 = Conv2d(reg, f"{name}.conv2", cr, c, k=1)

    def __call__(self, x: Tensor) -> Tensor:
        g = sigmoid(self.conv2(relu(self.conv1(global_avg_pool(x)))))
        return mul(x, g)


class PixelAttention:
    """Per-pixel sigmoid gate broadcast across channels."""

    def __init__(self, reg: ParamRegistry, name: str, c: int, reduction: int = 4):
        cr = max(1, c // reduction)
        self.conv1 = Conv2d(reg, f"{name}.conv1", c, cr, k=1)
        self.conv2 = Conv2d(reg, f"{name}.conv2", cr, 1, k=1)

    def __call__(self, x: Tensor) -> Tensor:
        p = sigmoid(self.conv2(relu(self.conv1(x))))
        return mul(x, p)


class FeatureEnhancingBlock:
    """Conv/GeLU pre-processing with residual, then channel and pixel attention."""

    def __init__(self, reg: ParamRegistry, name: str, c: int, reduction: int = 4):
        self.conv_in = Conv2d(reg, f"{name}.conv_in", c, c, k=3)
        self.conv_out = Conv2d(reg, f"{name}.conv_out", c, c, k=3)
        self.ca = ChannelAttention(reg, f"{name}.ca", c, reduction)
        self.pa = PixelAttention(reg, f"{name}.pa", c, reduction)

    def __call__(self, x: Tensor) -> Tensor:
        r = self.conv_out(add(gelu(self.conv_in(x)), x))
        return self.pa(self.ca(r))


class ResidualBlock:
    def __init__(self, reg: ParamRegistry, name: str, c: int):
        self.conv1 = Conv2d(reg, f"{name}.conv1", c, c, k=3)
        self.conv2 = Conv2d(reg, f"{name}.conv2", c, c, k=3)

    def __call__(self, x: Tensor) -> Tensor:
        return add(self.conv2(relu(self.conv1(x))), x)
