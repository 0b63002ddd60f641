from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

from .errors import DomainError


class DefectKind(str, Enum):
    EPE = "epe"
    BRIDGE = "bridge"
    NECK = "neck"
    SYNTHETIC = "synthetic"


class Label(str, Enum):
    HOTSPOT = "hotspot"
    NON_HOTSPOT = "non_hotspot"


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle in integer nm, half-open [x0, x1) x [y0, y1)"""
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise DomainError(f"degenerate rect {self.as_list()}", "layout", "Rect")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    def contains_point(self, x: float, y: float) -> bool:
        return self.x0 <= x < self.x1 and self.y0 <= y < self.y1

    def contains_rect(self, other: "Rect") -> bool:
        return (self.x0 <= other.x0 and other.x1 <= self.x1
                and self.y0 <= other.y0 and other.y1 <= self.y1)

    def intersects(self, other: "Rect") -> bool:
        return (self.x0 < other.x1 and other.x0 < self.x1
                and self.y0 < other.y1 and other.y0 < self.y1)

    def expand(self, margin: int) -> "Rect":
        return Rect(self.x0 - margin, self.y0 - margin, self.x1 + margin, self.y1 + margin)

    def as_list(self) -> List[int]:
        return [self.x0, self.y0, self.x1, self.y1]


@dataclass(frozen=True)
class DefectMarker:
    x: int
    y: int
    kind: DefectKind = DefectKind.SYNTHETIC


@dataclass
class Layout:
    """Rectilinear layout plus the ground-truth defect points"""
    rects: List[Rect]
    bbox: Rect
    defects: List[DefectMarker] = field(default_factory=list)

    def __post_init__(self):
        for r in self.rects:
            if not self.bbox.contains_rect(r):
                raise DomainError(f"rect {r.as_list()} outside bbox {self.bbox.as_list()}", "layout", "Layout")
        for d in self.defects:
            if not self.bbox.contains_point(d.x, d.y):
                raise DomainError(f"defect ({d.x}, {d.y}) outside bbox {self.bbox.as_list()}", "layout", "Layout")


@dataclass
class Clip:
    """A dispatch window with its centered core region"""
    id: int
    window: Rect
    core: Rect
    label: Optional[Label] = None

    @property
    def clip_nm(self) -> int:
        return self.window.width

    @property
    def core_nm(self) -> int:
        return self.core.width

    @property
    def margin_nm(self) -> int:
        return self.core.x0 - self.window.x0


@dataclass
class RunMetrics:
    """Hits, extras and litho-clip overhead of one run"""
    method: str
    seed: int
    hits: int
    total_hotspots: int
    extras: int
    litho_clips: int
    wall_time_ms: int = 0

    def __post_init__(self):
        if not 0 <= self.hits <= self.total_hotspots:
            raise DomainError(
                f"hits={self.hits} outside [0, {self.total_hotspots}]", "bench", "RunMetrics")

    @property
    def accuracy(self) -> float:
        # No hotspots means nothing was missed.
        if self.total_hotspots == 0:
            return 1.0
        return self.hits / self.total_hotspots

    def as_row(self, with_time: bool = True) -> dict:
        row = {
            "method": self.method,
            "seed": self.seed,
            "accuracy": self.accuracy,
            "hits": self.hits,
            "extras": self.extras,
            "litho_clips": self.litho_clips,
        }
        if with_time:
            row["wall_time_ms"] = self.wall_time_ms
        return row
