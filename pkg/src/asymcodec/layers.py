"""Executable layers built from ``LayerSpec`` records."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .config import ATTENTION, CONV, PIXEL_SHUFFLE, RBU, RESIDUAL, TRANSPOSED, LayerSpec
from .errors import ConfigurationError
from .tensor import Parameter, Tensor, leaky_relu

SLOPE = 0.01
# the last conv of each residual branch starts small so stacked blocks stay near identity
BRANCH_GAIN = 0.1


def _he_uniform(rng: np.random.Generator, shape, fan_in: float) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    """Holds the parameters of one ``LayerSpec`` and evaluates it."""

    def __init__(self, spec: LayerSpec, prefix: str, rng: np.random.Generator) -> None:
        self.spec = spec
        self.prefix = prefix
        self.params: dict[str, Parameter] = {}
        self._init(rng)

    def _param(self, name: str, value: np.ndarray) -> Parameter:
        p = Parameter(value, name=f"{self.prefix}/{name}")
        self.params[name] = p
        return p

    def _conv(self, name: str, cout: int, cin: int, k: int, rng, gain: float = 1.0) -> None:
        self._param(f"{name}.weight", gain * _he_uniform(rng, (cout, cin, k, k), cin * k * k))
        self._param(f"{name}.bias", np.zeros(cout))

    def _init(self, rng: np.random.Generator) -> None:
        s = self.spec
        cin, cout, k = s.in_channels, s.out_channels, s.kernel
        if s.kind == CONV:
            self._conv("conv", cout, cin, k, rng)
        elif s.kind == RESIDUAL:
            self._conv("conv1", cout, cin, k, rng)
            self._conv("conv2", cout, cout, k, rng, BRANCH_GAIN)
        elif s.kind == RBU:
            self._conv("up", cout, cin, k, rng)
            self._conv("conv", cout, cout, k, rng, BRANCH_GAIN)
        elif s.kind == PIXEL_SHUFFLE:
            r = s.stride_or_scale
            self._conv("conv", cout * r * r, cin, k, rng)
        elif s.kind == TRANSPOSED:
            r = s.stride_or_scale
            self._param("deconv.weight", _he_uniform(rng, (cin, cout, k, k), cin * k * k / (r * r)))
            self._param("deconv.bias", np.zeros(cout))
        elif s.kind == ATTENTION:
            c, w = cin, s.window
            self._param("qkv.weight", rng.normal(0.0, 0.02, size=(c, 3 * c)))
            self._param("qkv.bias", np.zeros(3 * c))
            self._param("proj.weight", rng.normal(0.0, 0.02, size=(c, c)))
            self._param("proj.bias", np.zeros(c))
            self._param("rel_bias", np.zeros(((2 * w - 1) ** 2, s.heads)))
            self._conv("mlp1", 2 * c, c, 1, rng)
            self._conv("mlp2", c, 2 * c, 1, rng, BRANCH_GAIN)
        else:
            raise ConfigurationError(f"unknown layer kind {s.kind!r}")

    def parameters(self) -> Iterator[Parameter]:
        return iter(self.params.values())

    def __call__(self, x: Tensor) -> Tensor:
        s, p = self.spec, self.params
        pad = s.kernel // 2
        if s.kind == CONV:
            return F.conv2d(x, p["conv.weight"], p["conv.bias"], s.stride_or_scale, pad)
        if s.kind == RESIDUAL:
            h = leaky_relu(F.conv2d(x, p["conv1.weight"], p["conv1.bias"], 1, pad), SLOPE)
            h = leaky_relu(F.conv2d(h, p["conv2.weight"], p["conv2.bias"], 1, pad), SLOPE)
            return x + h
        if s.kind == RBU:
            u = F.upsample2x(x, "nearest-then-conv", p["up.weight"], p["up.bias"])
            return u + F.conv2d(leaky_relu(u, SLOPE), p["conv.weight"], p["conv.bias"], 1, pad)
        if s.kind == PIXEL_SHUFFLE:
            return F.upsample2x(x, "pixel-shuffle", p["conv.weight"], p["conv.bias"])
        if s.kind == TRANSPOSED:
            return F.upsample2x(x, "transposed-conv", p["deconv.weight"], p["deconv.bias"])
        # window attention block: attention and a pointwise MLP, both residual
        a = F.window_attention(
            x,
            p["qkv.weight"],
            p["qkv.bias"],
            p["proj.weight"],
            p["proj.bias"],
            p["rel_bias"],
            s.heads,
            s.window,
            s.shifted,
        )
        x = x + a
        h = leaky_relu(F.conv2d(x, p["mlp1.weight"], p["mlp1.bias"]), SLOPE)
        return x + F.conv2d(h, p["mlp2.weight"], p["mlp2.bias"])


_ACTIVATED = (CONV, PIXEL_SHUFFLE, TRANSPOSED)


class Sequential:
    """A layer list; plain conv-type layers get a leaky-ReLU unless they are last."""

    def __init__(self, specs, prefix: str, rng: np.random.Generator) -> None:
        self.specs = tuple(specs)
        self.layers = [Layer(s, f"{prefix}/layer{i}", rng) for i, s in enumerate(self.specs)]

    def parameters(self) -> Iterator[Parameter]:
        for layer in self.layers:
            yield from layer.parameters()

    def __call__(self, x: Tensor) -> Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i != last and layer.spec.kind in _ACTIVATED:
                x = leaky_relu(x, SLOPE)
        return x
