"""Coarse and fine convolutional trunks.

Each trunk is a stack of conv3x3 -> ReLU -> maxpool2x2 blocks.  The fine
trunk consumes the coarse trunk's output, so the fine feature path is a
strict composition through the shared coarse trunk and fine-branch
gradients reach the coarse parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers
from .errors import InvalidSpec, ShapeMismatch
from .tensor import Parameter, make_rng, uniform_init

COARSE = "coarse"
FINE = "fine"


@dataclass(frozen=True)
class TrunkConfig:
    """Input shape plus per-block channel widths for the two trunks."""

    input: tuple[int, int, int] = (1, 16, 16)
    cnet_blocks: tuple[int, ...] = (8,)
    fnet_blocks: tuple[int, ...] = (16,)

    def __post_init__(self):
        d0, h0, w0 = self.input
        depth = len(self.cnet_blocks) + len(self.fnet_blocks)
        if d0 < 1 or h0 < 1 or w0 < 1:
            raise InvalidSpec(f"bad input shape {self.input}")
        if not self.cnet_blocks or not self.fnet_blocks:
            raise InvalidSpec("both trunks need at least one block")
        if any(c < 1 for c in self.cnet_blocks + self.fnet_blocks):
            raise InvalidSpec("block widths must be >= 1")
        if h0 % (1 << depth) or w0 % (1 << depth):
            raise InvalidSpec(
                f"spatial extents {h0}x{w0} not divisible by 2^{depth} (one 2x pool per block)"
            )

    def coarse_shape(self) -> tuple[int, int, int]:
        d0, h0, w0 = self.input
        k = len(self.cnet_blocks)
        return (self.cnet_blocks[-1], h0 >> k, w0 >> k)

    def fine_shape(self) -> tuple[int, int, int]:
        _, hc, wc = self.coarse_shape()
        k = len(self.fnet_blocks)
        return (self.fnet_blocks[-1], hc >> k, wc >> k)

    def to_json_obj(self) -> dict:
        return {
            "input": list(self.input),
            "cnet_blocks": list(self.cnet_blocks),
            "fnet_blocks": list(self.fnet_blocks),
        }

    @staticmethod
    def from_json_obj(obj) -> "TrunkConfig":
        return TrunkConfig(
            input=tuple(obj["input"]),
            cnet_blocks=tuple(obj["cnet_blocks"]),
            fnet_blocks=tuple(obj["fnet_blocks"]),
        )


@dataclass
class FeatureMap:
    """A trunk output tensor tagged with the branch that produced it."""

    data: np.ndarray
    branch: str


class Trunk:
    """A stack of conv3x3 -> ReLU -> maxpool2x2 blocks."""

    def __init__(self, name: str, in_channels: int, widths, rng: np.random.Generator):
        self.name = name
        self.blocks: list[tuple[Parameter, Parameter]] = []
        c_in = in_channels
        for width in widths:
            weight = Parameter(uniform_init(rng, (width, c_in, 3, 3), fan_in=c_in * 9))
            bias = Parameter(np.zeros(width))
            self.blocks.append((weight, bias))
            c_in = width

    def named_parameters(self):
        for i, (weight, bias) in enumerate(self.blocks):
            yield f"{self.name}.block{i}.weight", weight
            yield f"{self.name}.block{i}.bias", bias

    def forward(self, x: np.ndarray):
        """Run all blocks; returns (output, cache) with per-block activations."""
        cache = []
        out = x
        for weight, bias in self.blocks:
            z = layers.conv2d_forward(out, weight.value, bias.value)
            a = layers.relu_forward(z)
            pooled = layers.maxpool2x2_forward(a)
            cache.append((out, z, a))
            out = pooled
        return out, cache

    def backward(self, cache, dout: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; returns gradient w.r.t. the input."""
        for (weight, bias), (x_in, z, a) in zip(reversed(self.blocks), reversed(cache)):
            da = layers.maxpool2x2_backward(a, dout)
            dz = layers.relu_backward(z, da)
            dout, dw, db = layers.conv2d_backward(x_in, weight.value, dz)
            weight.accumulate(dw)
            bias.accumulate(db)
        return dout


class Backbone:
    """The coarse trunk (C-Net) and the fine trunk (F-Net) as one unit."""

    def __init__(self, config: TrunkConfig, rng: np.random.Generator):
        self.config = config
        self.cnet = Trunk("cnet", config.input[0], config.cnet_blocks, rng)
        self.fnet = Trunk("fnet", config.coarse_shape()[0], config.fnet_blocks, rng)

    def _check_input(self, x: np.ndarray, expected: tuple[int, int, int], what: str):
        shape = x.shape[-3:]
        if x.ndim not in (3, 4) or tuple(shape) != expected:
            raise ShapeMismatch(f"{what} shape {x.shape} does not match configured {expected}")

    def cnet_forward(self, x: np.ndarray) -> FeatureMap:
        """Coarse feature maps from an input image (or batch)."""
        self._check_input(x, self.config.input, "input")
        out, _ = self.cnet.forward(x)
        return FeatureMap(out, COARSE)

    def fnet_forward(self, fmap: FeatureMap) -> FeatureMap:
        """Fine feature maps from coarse feature maps."""
        if fmap.branch != COARSE:
            raise ShapeMismatch(f"fnet_forward expects a coarse feature map, got {fmap.branch!r}")
        self._check_input(fmap.data, self.config.coarse_shape(), "coarse feature map")
        out, _ = self.fnet.forward(fmap.data)
        return FeatureMap(out, FINE)
