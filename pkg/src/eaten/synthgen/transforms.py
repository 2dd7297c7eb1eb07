"""Geometric transformation and photometric noise applied after rendering."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage


@dataclass
class TransformSpec:
    rotation_deg: float = 5.0  # angle drawn uniformly from [-rotation_deg, +rotation_deg]
    rotation_prob: float = 1.0
    out_size: tuple[int, int] | None = None  # resize by the longer side, then pad
    elastic_prob: float = 0.3
    elastic_alpha: float = 2.0
    elastic_sigma: float = 4.0
    noise_prob: float = 0.5
    noise_sigma: float = 0.03
    blur_prob: float = 0.2
    blur_sigma: float = 0.5
    avg_blur_prob: float = 0.1
    avg_blur_size: int = 2
    sharpen_prob: float = 0.2
    sharpen_amount: float = 0.5
    brightness_prob: float = 0.5
    brightness_delta: float = 0.1

    def __post_init__(self):
        if self.out_size is not None:
            self.out_size = tuple(self.out_size)
        for k, v in asdict(self).items():
            if k.endswith("_prob") and not 0.0 <= v <= 1.0:
                raise ValueError(f"{k} must be in [0, 1], got {v}")
        if not 0.0 <= self.rotation_deg <= 5.0:
            raise ValueError("rotation range must lie within [-5, +5] degrees")

    @classmethod
    def disabled(cls) -> "TransformSpec":
        return cls(rotation_prob=0.0, elastic_prob=0.0, noise_prob=0.0, blur_prob=0.0,
                   avg_blur_prob=0.0, sharpen_prob=0.0, brightness_prob=0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["out_size"] is not None:
            d["out_size"] = list(d["out_size"])
        return d


def rotate(img: np.ndarray, angle: float) -> np.ndarray:
    return ndimage.rotate(img, angle, reshape=False, order=1, mode="nearest")


def resize_longer_side(img: np.ndarray, out_h: int, out_w: int, fill: float) -> np.ndarray:
    """Scale so the image fits (out_h, out_w) with its aspect ratio kept, pad the rest."""
    h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img
    s = min(out_h / h, out_w / w)
    scaled = ndimage.zoom(img, s, order=1)
    scaled = scaled[:out_h, :out_w]
    out = np.full((out_h, out_w), fill)
    out[:scaled.shape[0], :scaled.shape[1]] = scaled
    return out


def elastic(img: np.ndarray, alpha: float, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian-smoothed random displacement field, scaled to ``alpha`` pixels."""
    h, w = img.shape
    dy = ndimage.gaussian_filter(rng.uniform(-1, 1, (h, w)), sigma)
    dx = ndimage.gaussian_filter(rng.uniform(-1, 1, (h, w)), sigma)
    norm = max(np.abs(dy).max(), np.abs(dx).max(), 1e-12)
    dy, dx = alpha * dy / norm, alpha * dx / norm
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return ndimage.map_coordinates(img, [yy + dy, xx + dx], order=1, mode="nearest")


def transform_and_noise(img: np.ndarray, t: TransformSpec, rng: np.random.Generator) -> tuple[np.ndarray, dict]:
    """Rotation, optional resize and elastic warp, then the enabled noise ops; clamped to [0, 1]."""
    out = np.array(img, dtype=np.float64, copy=True)
    meta: dict = {"rotation": 0.0, "ops": []}
    fill = float(np.median(out))
    if rng.random() < t.rotation_prob:
        angle = float(rng.uniform(-t.rotation_deg, t.rotation_deg))
        out = rotate(out, angle)
        meta["rotation"] = angle
    if t.out_size is not None:
        out = resize_longer_side(out, *t.out_size, fill=fill)
    if rng.random() < t.elastic_prob:
        out = elastic(out, t.elastic_alpha, t.elastic_sigma, rng)
        meta["ops"].append(["elastic", t.elastic_alpha, t.elastic_sigma])
    if rng.random() < t.noise_prob:
        sigma = float(rng.uniform(0, t.noise_sigma))
        out = out + rng.normal(0.0, sigma, out.shape)
        meta["ops"].append(["gaussian_noise", sigma])
    if rng.random() < t.blur_prob:
        sigma = float(rng.uniform(0.2, t.blur_sigma))
        out = ndimage.gaussian_filter(out, sigma)
        meta["ops"].append(["blur", sigma])
    if rng.random() < t.avg_blur_prob:
        out = ndimage.uniform_filter(out, t.avg_blur_size)
        meta["ops"].append(["average_blur", t.avg_blur_size])
    if rng.random() < t.sharpen_prob:
        amount = float(rng.uniform(0, t.sharpen_amount))
        out = out + amount * (out - ndimage.gaussian_filter(out, 1.0))
        meta["ops"].append(["sharpen", amount])
    if rng.random() < t.brightness_prob:
        delta = float(rng.uniform(-t.brightness_delta, t.brightness_delta))
        out = out + delta
        meta["ops"].append(["brightness", delta])
    return np.clip(out, 0.0, 1.0), meta
