"""Per-frame feature maps: a small convolutional backbone and VFT ingestion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .errors import ConfigurationError, FormatError
from .nn import Module, he_weight
from .tensor import BatchNormState, Tensor
from .vft import read_vft, write_vft


@dataclass
class FeatureNodeSet:
    """Spatio-temporal feature nodes stored as ``[..., T, H, W, C]``.

    Node ``i`` (0-based) is frame ``t``, row ``h``, column ``w`` with
    ``i = (t * H + h) * W + w``.
    """

    maps: Tensor

    @property
    def T(self) -> int:
        return self.maps.shape[-4]

    @property
    def H(self) -> int:
        return self.maps.shape[-3]

    @property
    def W(self) -> int:
        return self.maps.shape[-2]

    @property
    def C(self) -> int:
        return self.maps.shape[-1]

    @property
    def K(self) -> int:
        return self.T * self.H * self.W

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.maps.shape[:-4]

    def index(self, t: int, h: int, w: int) -> int:
        return (t * self.H + h) * self.W + w

    def unindex(self, i: int) -> tuple[int, int, int]:
        w = i % self.W
        h = (i // self.W) % self.H
        t = i // (self.W * self.H)
        return t, h, w

    def nodes(self) -> Tensor:
        """Flatten to ``[..., K, C]`` in raster order."""
        return tt.reshape(self.maps, (*self.batch_shape, self.K, self.C))

    def frame(self, t: int) -> np.ndarray:
        return self.maps.data[..., t, :, :, :]


def save_feature_set(fset: FeatureNodeSet, path) -> None:
    if fset.maps.ndim != 4:
        raise FormatError(f"save_feature_set: expected 4 dims [T, H, W, C], got {fset.maps.shape}")
    write_vft(path, fset.maps.data)


def load_feature_set(path) -> FeatureNodeSet:
    return FeatureNodeSet(Tensor(read_vft(path, ndim=4)))


@dataclass
class BackboneConfig:
    height: int = 64
    width: int = 32
    widths: list[int] = field(default_factory=lambda: [16, 32])
    out_channels: int = 64
    blocks: int = 3

    def __post_init__(self):
        if len(self.widths) != self.blocks - 1:
            raise ConfigurationError(
                f"backbone: {self.blocks} blocks need {self.blocks - 1} intermediate widths, got {self.widths}"
            )
        f = 2 ** self.blocks
        if self.height % f or self.width % f:
            raise ConfigurationError(
                f"backbone: input {self.height}x{self.width} not divisible by 2^{self.blocks}"
            )

    @property
    def grid(self) -> tuple[int, int]:
        f = 2 ** self.blocks
        return self.height // f, self.width // f


class ConvBlock(Module):
    def __init__(self, c_in, c_out, rng, dtype):
        self.weight = he_weight(rng, (c_out, 3, 3, c_in), 9 * c_in, dtype)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True, dtype=dtype)
        self.bn = BatchNormState.create(c_out, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return tt.relu(tt.batch_norm(tt.conv3x3(x, self.weight, self.bias, stride=2), self.bn))


class Backbone(Module):
    """Stack of 3x3 stride-2 conv + BN + ReLU blocks applied frame by frame."""

    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator, dtype=tt.DEFAULT_DTYPE):
        self.cfg = cfg
        chans = [3, *cfg.widths, cfg.out_channels]
        self.blocks = [ConvBlock(chans[i], chans[i + 1], rng, dtype) for i in range(cfg.blocks)]

    def __call__(self, frames: Tensor) -> FeatureNodeSet:
        return backbone_forward(frames, self)


def backbone_forward(frames: Tensor, backbone: Backbone) -> FeatureNodeSet:
    """``frames`` is ``[..., T, h0, w0, 3]``; every frame shares the weights."""
    *lead, h0, w0, ch = frames.shape
    f = 2 ** backbone.cfg.blocks
    if h0 % f or w0 % f or ch != 3:
        raise ConfigurationError(f"backbone: input {h0}x{w0}x{ch} needs 3 channels and extents divisible by {f}")
    x = tt.reshape(frames, (-1, h0, w0, ch))
    with tt.mac_scope("backbone"):
        for block in backbone.blocks:
            x = block(x)
    _, h, w, c = x.shape
    return FeatureNodeSet(tt.reshape(x, (*lead, h, w, c)))
