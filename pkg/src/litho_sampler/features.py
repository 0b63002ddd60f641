"""Feature tensors: block-wise DCT of the rasterized clip, coefficients in zig-zag order."""

from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np
from scipy.fft import dctn, idctn

from .config import FeatureConfig
from .errors import ConfigError, DomainError
from .layout import RectIndex, rasterize
from .models import Clip, Layout


@dataclass
class FeatureTensor:
    """grid_h x grid_w blocks, each holding its first C zig-zag DCT coefficients"""
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise DomainError(f"tensor must be 3-D, got shape {self.data.shape}", "features", "FeatureTensor")
        if self.data.shape[2] < 2:
            raise DomainError("a feature tensor needs at least 2 channels", "features", "FeatureTensor")
        if not np.all(np.isfinite(self.data)):
            raise DomainError("feature tensor holds non-finite values", "features", "FeatureTensor")

    @property
    def grid_h(self) -> int:
        return self.data.shape[0]

    @property
    def grid_w(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass
class FeatureVector:
    values: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    @classmethod
    def normalized(cls, raw: np.ndarray) -> "FeatureVector":
        """L2-normalize; the zero vector stays zero."""
        raw = np.asarray(raw, dtype=np.float64).ravel()
        n = np.linalg.norm(raw)
        return cls(raw / n if n > 0 else np.zeros_like(raw))


def dct2(block: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT-II of a square block."""
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 2 or block.shape[0] != block.shape[1]:
        raise DomainError(f"dct2 expects a square block, got shape {block.shape}", "features", "dct2")
    return dctn(block, type=2, norm="ortho")


def idct2(coeffs: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 2 or coeffs.shape[0] != coeffs.shape[1]:
        raise DomainError(f"idct2 expects a square block, got shape {coeffs.shape}", "features", "idct2")
    return idctn(coeffs, type=2, norm="ortho")


@lru_cache(maxsize=None)
def zigzag_order(b: int) -> Tuple[Tuple[int, int], ...]:
    """JPEG zig-zag traversal of a b x b block, starting at DC."""
    order: List[Tuple[int, int]] = []
    for s in range(2 * b - 1):
        lo, hi = max(0, s - b + 1), min(s, b - 1)
        rows = range(hi, lo - 1, -1) if s % 2 == 0 else range(lo, hi + 1)
        order.extend((r, s - r) for r in rows)
    return tuple(order)


def extract_tensor(bitmap: np.ndarray, grid: int, channels: int) -> FeatureTensor:
    """DCT every grid cell of the bitmap and keep the first `channels` zig-zag coefficients."""
    bitmap = np.asarray(bitmap, dtype=np.float64)
    if bitmap.ndim != 2 or bitmap.shape[0] != bitmap.shape[1]:
        raise ConfigError(f"bitmap must be square, got shape {bitmap.shape}", "features", "extract_tensor")
    side = bitmap.shape[0]
    if grid <= 0 or side % grid:
        raise ConfigError(f"bitmap side {side} is not divisible by grid {grid}", "features", "extract_tensor")
    bs = side // grid
    if not 2 <= channels <= bs * bs:
        raise ConfigError(
            f"channels={channels} must lie in [2, {bs * bs}] for {bs}x{bs} blocks", "features", "extract_tensor")

    # (g, bs, g, bs) -> (g, g, bs, bs): one block per grid cell
    blocks = bitmap.reshape(grid, bs, grid, bs).transpose(0, 2, 1, 3)
    coeffs = dctn(blocks, type=2, norm="ortho", axes=(2, 3))
    zz = zigzag_order(bs)[:channels]
    rows = np.fromiter((r for r, _ in zz), dtype=np.intp, count=channels)
    cols = np.fromiter((c for _, c in zz), dtype=np.intp, count=channels)
    return FeatureTensor(coeffs[:, :, rows, cols])


def channel_vector(t: FeatureTensor, c: int) -> FeatureVector:
    """Row-major flattening of one channel, L2-normalized."""
    if not 0 <= c < t.channels:
        raise DomainError(f"channel {c} out of range [0, {t.channels})", "features", "channel_vector")
    return FeatureVector.normalized(t.data[:, :, c])


def clip_pixel_nm(clip_nm: int, cfg: FeatureConfig) -> int:
    cells = cfg.grid * cfg.cell_pixels
    if clip_nm % cells:
        raise ConfigError(
            f"clip {clip_nm} nm does not split into {cfg.grid}x{cfg.grid} cells of {cfg.cell_pixels} px",
            "features", "extract_clip_tensor")
    return clip_nm // cells


def extract_clip_tensor(layout: Layout, clip: Clip, cfg: FeatureConfig, index: Optional[RectIndex] = None) -> FeatureTensor:
    """Rasterize cell_pixels x cell_pixels pixels per grid cell, then extract_tensor."""
    bitmap = rasterize(layout, clip, clip_pixel_nm(clip.clip_nm, cfg), index)
    return extract_tensor(bitmap, cfg.grid, cfg.channels)


def flatten_tensor(t: FeatureTensor, scale: float = 1.0) -> np.ndarray:
    """Classifier input: the whole tensor flattened row-major, divided by `scale`.

    With scale = cell_pixels a fully covered cell has DC 1.
    """
    return (t.data / scale).ravel()
