from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .config import logger
from .errors import ConfigError, DomainError
from .models import Clip, DefectMarker, Label, Layout, Rect


@dataclass(frozen=True)
class ClipGrid:
    """Dispatch geometry: cores tile [origin, origin + cols*core) x [origin, origin + rows*core)"""
    origin_x: int
    origin_y: int
    cols: int
    rows: int
    clip_nm: int
    core_nm: int
    stride_nm: int

    @property
    def margin_nm(self) -> int:
        return (self.clip_nm - self.core_nm) // 2

    @property
    def count(self) -> int:
        return self.cols * self.rows

    def clip_id(self, col: int, row: int) -> int:
        return row * self.cols + col

    def core_rect(self, col: int, row: int) -> Rect:
        x0 = self.origin_x + col * self.stride_nm
        y0 = self.origin_y + row * self.stride_nm
        return Rect(x0, y0, x0 + self.core_nm, y0 + self.core_nm)

    def tile_of(self, x: float, y: float) -> Optional[int]:
        """Id of the clip whose half-open core holds (x, y), None outside the tiling."""
        col = int((x - self.origin_x) // self.stride_nm)
        row = int((y - self.origin_y) // self.stride_nm)
        if 0 <= col < self.cols and 0 <= row < self.rows:
            return self.clip_id(col, row)
        return None

    def padded_bbox(self) -> Rect:
        """Region tiled by the cores (bbox rounded up to whole tiles)."""
        return Rect(self.origin_x, self.origin_y,
                    self.origin_x + self.cols * self.core_nm,
                    self.origin_y + self.rows * self.core_nm)


def make_grid(
    layout: Layout,
    clip_nm: int = 690,
    stride_nm: int = 230,
    core_nm: int = 230,
    min_margin_nm: int = 230,
) -> ClipGrid:
    if min(clip_nm, stride_nm, core_nm) <= 0:
        raise ConfigError("clip, stride and core must be positive", "layout", "dispatch")
    if core_nm != stride_nm:
        raise ConfigError(
            f"core_nm={core_nm} != stride_nm={stride_nm}: cores would not tile the layout",
            "layout", "dispatch")
    if clip_nm % stride_nm:
        raise ConfigError(f"stride {stride_nm} does not divide clip {clip_nm}", "layout", "dispatch")
    if clip_nm < core_nm or (clip_nm - core_nm) % 2:
        raise ConfigError(
            f"clip {clip_nm} minus core {core_nm} must be even and non-negative", "layout", "dispatch")
    if (clip_nm - core_nm) // 2 < min_margin_nm:
        raise ConfigError(
            f"margin {(clip_nm - core_nm) // 2} nm below isolation minimum {min_margin_nm} nm",
            "layout", "dispatch")
    bbox = layout.bbox
    cols = -(-bbox.width // stride_nm)
    rows = -(-bbox.height // stride_nm)
    return ClipGrid(bbox.x0, bbox.y0, cols, rows, clip_nm, core_nm, stride_nm)


def dispatch(
    layout: Layout,
    clip_nm: int = 690,
    stride_nm: int = 230,
    core_nm: int = 230,
    min_margin_nm: int = 230,
) -> List[Clip]:
    """Scan the layout with a sliding window whose cores tile the bbox exactly.

    Clip ids are row-major; edge windows reach into the empty padding.
    """
    grid = make_grid(layout, clip_nm, stride_nm, core_nm, min_margin_nm)
    margin = grid.margin_nm
    clips = []
    for row in range(grid.rows):
        for col in range(grid.cols):
            core = grid.core_rect(col, row)
            clips.append(Clip(id=grid.clip_id(col, row), window=core.expand(margin), core=core))
    logger.info(f"Dispatched {len(clips)} clips ({grid.cols}x{grid.rows}, clip {clip_nm} nm, core {core_nm} nm)")
    return clips


def label_clip(clip: Clip, defects: Iterable[DefectMarker]) -> Label:
    """Hotspot iff a defect lies in the half-open core (low edges in, high edges out)."""
    for d in defects:
        if clip.core.contains_point(d.x, d.y):
            return Label.HOTSPOT
    return Label.NON_HOTSPOT


def _bucket_points(defects: Sequence[DefectMarker], cell: int, ox: int, oy: int) -> Dict[Tuple[int, int], List[DefectMarker]]:
    buckets: Dict[Tuple[int, int], List[DefectMarker]] = defaultdict(list)
    for d in defects:
        buckets[((d.x - ox) // cell, (d.y - oy) // cell)].append(d)
    return buckets


def _cells_covering(rect: Rect, cell: int, ox: int, oy: int) -> Iterable[Tuple[int, int]]:
    for cx in range((rect.x0 - ox) // cell, (rect.x1 - 1 - ox) // cell + 1):
        for cy in range((rect.y0 - oy) // cell, (rect.y1 - 1 - oy) // cell + 1):
            yield cx, cy


def label_clips(layout: Layout, clips: List[Clip]) -> List[Clip]:
    """Label every clip in place from the layout's defects."""
    if not clips:
        return clips
    cell = clips[0].core_nm
    ox = min(c.core.x0 for c in clips)
    oy = min(c.core.y0 for c in clips)
    buckets = _bucket_points(layout.defects, cell, ox, oy)
    for clip in clips:
        nearby = [d for key in _cells_covering(clip.core, cell, ox, oy) for d in buckets.get(key, ())]
        clip.label = label_clip(clip, nearby)
    hotspots = sum(c.label is Label.HOTSPOT for c in clips)
    logger.info(f"Labeled {len(clips)} clips: {hotspots} hotspot, {len(clips) - hotspots} non-hotspot")
    return clips


class RectIndex:
    """Bucket index of layout rects for window queries"""

    def __init__(self, rects: Sequence[Rect], cell_nm: int, origin: Tuple[int, int] = (0, 0)):
        self.rects = list(rects)
        self.cell = cell_nm
        self.ox, self.oy = origin
        self._buckets: Dict[Tuple[int, int], List[int]] = defaultdict(list)
        for i, r in enumerate(self.rects):
            for key in _cells_covering(r, self.cell, self.ox, self.oy):
                self._buckets[key].append(i)

    @classmethod
    def for_layout(cls, layout: Layout, cell_nm: int = 230) -> "RectIndex":
        return cls(layout.rects, cell_nm, (layout.bbox.x0, layout.bbox.y0))

    def query(self, window: Rect) -> List[Rect]:
        hits = set()
        for key in _cells_covering(window, self.cell, self.ox, self.oy):
            hits.update(self._buckets.get(key, ()))
        return [self.rects[i] for i in sorted(hits) if self.rects[i].intersects(window)]


def rasterize(layout: Layout, clip: Clip, pixel_nm: int, index: Optional[RectIndex] = None) -> np.ndarray:
    """Binary grid of the clip window; a pixel is 1 iff its center lies in a rect.

    Row i covers y = window.y0 + (i + 0.5) * pixel_nm, column j the same along x.
    """
    side_nm = clip.window.width
    if pixel_nm <= 0 or side_nm % pixel_nm or clip.window.height != side_nm:
        raise ConfigError(
            f"pixel {pixel_nm} nm does not divide the {side_nm} nm square window", "layout", "rasterize",
            ids=[clip.id])
    n = side_nm // pixel_nm
    grid = np.zeros((n, n), dtype=np.uint8)
    rects = index.query(clip.window) if index is not None else [
        r for r in layout.rects if r.intersects(clip.window)]
    # Doubled coordinates keep pixel centers integral.
    steps = (2 * np.arange(n) + 1) * pixel_nm
    cx2 = 2 * clip.window.x0 + steps
    cy2 = 2 * clip.window.y0 + steps
    for r in rects:
        cols = (cx2 >= 2 * r.x0) & (cx2 < 2 * r.x1)
        rows = (cy2 >= 2 * r.y0) & (cy2 < 2 * r.y1)
        if cols.any() and rows.any():
            grid[np.ix_(rows, cols)] = 1
    return grid


def precut_pairs(
    clip_nm: int,
    items: Sequence[Tuple[int, Optional[str], Sequence[Sequence[int]]]],
    core_nm: Optional[int] = None,
) -> List[Tuple[Layout, Clip]]:
    """Turn pre-cut clips (clip-relative rects, given labels) into (layout, clip) pairs.

    Without a stated core size the whole window is the core.
    """
    core = core_nm if core_nm is not None else clip_nm
    if core > clip_nm or (clip_nm - core) % 2:
        raise ConfigError(f"core {core} does not center in clip {clip_nm}", "layout", "precut_pairs")
    margin = (clip_nm - core) // 2
    window = Rect(0, 0, clip_nm, clip_nm)
    pairs = []
    for clip_id, label, rects in items:
        try:
            shapes = [Rect(*r) for r in rects]
            layout = Layout(rects=shapes, bbox=window)
        except DomainError as e:
            raise DomainError(e.message, "layout", "precut_pairs", ids=[clip_id]) from e
        clip = Clip(
            id=clip_id,
            window=window,
            core=Rect(margin, margin, margin + core, margin + core),
            label=Label(label) if label is not None else None,
        )
        pairs.append((layout, clip))
    return pairs
