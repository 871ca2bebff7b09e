"""Configurable 2-D U-Net shared by the motion and segmentation networks.

Recipe per encoder level: two (conv3x3 + relu) then a 2x2 max-pool; a double
conv bottleneck; per decoder level a nearest x2 upsample followed by a 3x3
conv, concatenation with the skip, and two (conv3x3 + relu); a 1x1 head with
an optional sigmoid. No normalisation layers.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from . import ndgrad as nd
from .ndgrad import Tensor


@dataclass(frozen=True)
class UNetSpec:
    in_channels: int
    out_channels: int
    depth: int = 3
    base_channels: int = 16
    final_activation: str = "none"
    head_scale: float = 1.0  # multiplier on the head's initial weights; 0 gives an all-zero head

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"UNetSpec.depth must be >= 1, got {self.depth}")
        if self.in_channels < 1 or self.out_channels < 1 or self.base_channels < 1:
            raise ValueError("UNetSpec channel counts must be positive")
        if self.final_activation not in ("none", "sigmoid"):
            raise ValueError(f"final_activation must be 'none' or 'sigmoid', got {self.final_activation!r}")

    def channels(self, level: int) -> int:
        return self.base_channels * 2**level

    def to_dict(self) -> dict:
        return asdict(self)


def layer_shapes(spec: UNetSpec) -> list:
    """(name, C_out, C_in, k) for every conv in build order."""
    layers = []
    cin = spec.in_channels
    for k in range(spec.depth):
        c = spec.channels(k)
        layers += [(f"enc{k}.conv1", c, cin, 3), (f"enc{k}.conv2", c, c, 3)]
        cin = c
    c = spec.channels(spec.depth)
    layers += [("mid.conv1", c, cin, 3), ("mid.conv2", c, c, 3)]
    cin = c
    for k in reversed(range(spec.depth)):
        c = spec.channels(k)
        layers += [(f"dec{k}.up", c, cin, 3), (f"dec{k}.conv1", c, 2 * c, 3), (f"dec{k}.conv2", c, c, 3)]
        cin = c
    layers.append(("head", spec.out_channels, cin, 1))
    return layers


class UNet:
    def __init__(self, spec: UNetSpec, params: "OrderedDict[str, Tensor]"):
        self.spec = spec
        self.params = params

    def parameters(self) -> "OrderedDict[str, Tensor]":
        return self.params

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def __call__(self, batch) -> Tensor:
        return forward(self, batch)


def build(spec: UNetSpec, seed: int = 0) -> UNet:
    """Allocate a U-Net with He-uniform weights and zero biases."""
    rng = np.random.default_rng(seed)
    params = OrderedDict()
    for name, cout, cin, k in layer_shapes(spec):
        bound = np.sqrt(6.0 / (cin * k * k))
        w = rng.uniform(-bound, bound, size=(cout, cin, k, k))
        if name == "head":
            w = w * spec.head_scale
        params[f"{name}.w"] = Tensor(w, requires_grad=True)
        params[f"{name}.b"] = Tensor(np.zeros(cout), requires_grad=True)
    return UNet(spec, params)


def _conv(model: UNet, name: str, x: Tensor, relu: bool = True) -> Tensor:
    out = nd.conv2d(x, model.params[f"{name}.w"], model.params[f"{name}.b"])
    return nd.relu(out) if relu else out


def forward(model: UNet, batch) -> Tensor:
    """Run the network on an (N, C, H, W) batch."""
    spec = model.spec
    x = nd.as_tensor(batch)
    if x.ndim != 4:
        raise ValueError(f"U-Net input must be (N, C, H, W), got {x.shape}")
    if x.shape[1] != spec.in_channels:
        raise ValueError(f"U-Net expects {spec.in_channels} input channels, got {x.shape[1]}")
    factor = 2**spec.depth
    for axis, extent in (("H", x.shape[2]), ("W", x.shape[3])):
        if extent % factor:
            raise ValueError(f"U-Net input {axis}={extent} is not divisible by 2**depth = {factor}")

    skips = []
    for k in range(spec.depth):
        x = _conv(model, f"enc{k}.conv2", _conv(model, f"enc{k}.conv1", x))
        skips.append(x)
        x = nd.maxpool2x2(x)
    x = _conv(model, "mid.conv2", _conv(model, "mid.conv1", x))
    for k in reversed(range(spec.depth)):
        x = _conv(model, f"dec{k}.up", nd.upsample_nearest2x(x), relu=False)
        x = nd.concat([x, skips[k]], axis=1)
        x = _conv(model, f"dec{k}.conv2", _conv(model, f"dec{k}.conv1", x))
    out = _conv(model, "head", x, relu=False)
    if spec.final_activation == "sigmoid":
        out = nd.sigmoid(out)
    return out
