"""Strided convolutional feature extractor producing the H x W x C map."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .numerics import Tensor


class ConfigError(ValueError):
    pass


@dataclass
class BackboneConfig:
    # (out_channels, stride) or (out_channels, stride, dilation) per conv layer
    stages: list[tuple[int, ...]] = field(default_factory=lambda: [(8, 2), (16, 2), (32, 2)])
    kernel: int = 3
    in_channels: int = 1

    def __post_init__(self):
        self.stages = [tuple(int(v) for v in st) for st in self.stages]
        for st in self.stages:
            if len(st) not in (2, 3) or min(st) < 1:
                raise ConfigError(f"backbone stage {list(st)}: expected [channels, stride] or "
                                  "[channels, stride, dilation] with positive entries")

    @property
    def total_stride(self) -> int:
        s = 1
        for stage in self.stages:
            s *= stage[1]
        return s

    @property
    def out_channels(self) -> int:
        return self.stages[-1][0]

    def feature_shape(self, img_h: int, img_w: int) -> tuple[int, int, int]:
        self.check_image(img_h, img_w)
        s = self.total_stride
        return img_h // s, img_w // s, self.out_channels

    def check_image(self, img_h: int, img_w: int) -> None:
        s = self.total_stride
        if img_h % s or img_w % s:
            raise ConfigError(f"image {img_h}x{img_w} not divisible by total backbone stride {s}")


def init_backbone(cfg: BackboneConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """He-uniform conv kernels, zero biases."""
    params = {}
    cin = cfg.in_channels
    for i, (cout, *_) in enumerate(cfg.stages):
        fan_in = cfg.kernel * cfg.kernel * cin
        lim = np.sqrt(6.0 / fan_in)
        params[f"conv{i}.w"] = Tensor(rng.uniform(-lim, lim, (cfg.kernel, cfg.kernel, cin, cout)), True, f"conv{i}.w")
        params[f"conv{i}.b"] = Tensor(np.zeros(cout), True, f"conv{i}.b")
        cin = cout
    return params


def extract_features(image, cfg: BackboneConfig, params: dict[str, Tensor]) -> Tensor:
    """Image (h, w) or batch (n, h, w) -> feature map (H, W, C) / (n, H, W, C)."""
    x = nx.as_tensor(image)
    h, w = x.shape[-2:]
    cfg.check_image(h, w)
    x = nx.reshape(x, x.shape + (1,))
    for i, (_, stride, *rest) in enumerate(cfg.stages):
        x = nx.conv2d(x, params[f"conv{i}.w"], stride, rest[0] if rest else 1)
        x = nx.relu(nx.add_bias(x, params[f"conv{i}.b"]))
    return x


def add_position_channels(feat: Tensor) -> Tensor:
    """Append one-hot row and column indicator channels (C -> C + H + W).

    Plain convolutions are translation-equivariant, so without these the
    attention scores cannot tell two identical glyphs at different slots apart.
    """
    *lead, h, w, _ = feat.shape
    rows = np.broadcast_to(np.eye(h)[:, None, :], (h, w, h))
    cols = np.broadcast_to(np.eye(w)[None, :, :], (h, w, w))
    pos = np.concatenate([rows, cols], axis=-1)
    pos = np.broadcast_to(pos, tuple(lead) + pos.shape)
    return nx.concat([feat, Tensor(pos)], axis=-1)


def flatten_features(feat: Tensor) -> Tensor:
    """(H, W, C) -> (H*W, C) in row-major spatial order; batch axis kept if present."""
    *lead, h, w, c = feat.shape
    return nx.reshape(feat, tuple(lead) + (h * w, c))


def unflatten_features(flat: Tensor, h: int, w: int) -> Tensor:
    *lead, k, c = flat.shape
    if k != h * w:
        raise nx.DimensionError(f"cannot unflatten {k} rows into {h}x{w}")
    return nx.reshape(flat, tuple(lead) + (h, w, c))
