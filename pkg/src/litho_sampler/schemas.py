from dataclasses import MISSING, fields
from pydantic import BaseModel, ConfigDict, Field
from typing import Annotated, Any, List, Literal, Optional, Dict

from .config import BenchConfig, FeatureConfig, GeometryConfig, SamplerConfig, SynthConfig, TrainConfig

# [x0, y0, x1, y1] in integer nm
Quad = Annotated[List[int], Field(min_length=4, max_length=4)]
DefectKindName = Literal["epe", "bridge", "neck", "synthetic"]
LabelName = Literal["hotspot", "non_hotspot"]


def _default(cls: type, name: str) -> Any:
    """Default of a config dataclass field, so file sections cannot drift from it."""
    f = next(f for f in fields(cls) if f.name == name)
    if f.default_factory is not MISSING:
        return Field(default_factory=f.default_factory)
    return f.default

# --- Layout & clips ---

class DefectItem(BaseModel):
    x: int
    y: int
    kind: DefectKindName = "synthetic"

class LayoutFile(BaseModel):
    bbox: Quad
    rects: List[Quad] = Field(default_factory=list)
    defects: List[DefectItem] = Field(default_factory=list)

class ClipItem(BaseModel):
    id: int
    window: Quad
    core: Quad
    label: Optional[LabelName] = None

class ClipsFile(BaseModel):
    clip_nm: int
    stride_nm: int
    core_nm: int
    clips: List[ClipItem] = Field(default_factory=list)

# Pre-cut clip sets: rect coordinates are relative to the clip window.
class PrecutClipItem(BaseModel):
    id: int
    label: Optional[LabelName] = None
    rects: List[Quad] = Field(default_factory=list)

class PrecutClipsFile(BaseModel):
    clip_nm: int = Field(gt=0)
    core_nm: Optional[int] = None
    clips: List[PrecutClipItem] = Field(default_factory=list)

# --- Feature store sidecar ---

class FeatureSidecar(BaseModel):
    magic: str = "FTNS"
    count: int
    grid_h: int
    grid_w: int
    channels: int
    offsets: Dict[str, int] = Field(default_factory=dict)

# --- Sampling audit ---

class SelectionRecord(BaseModel):
    iteration: int
    selected_ids: List[int]
    f_relaxed: float
    f_rounded: float
    lambda_max: float
    gap_bound: float
    litho_total: int
    pool_remaining: Optional[int] = None
    discarded_total: Optional[int] = None
    seed: Optional[int] = None
    qp_converged: Optional[bool] = None

# --- Errors ---

class ErrorReport(BaseModel):
    kind: str
    module: str = ""
    operation: str = ""
    message: str
    ids: List[int] = Field(default_factory=list)

# --- Pipeline config file ---
# Section defaults come from the config dataclasses.

class GeometrySection(BaseModel):
    model_config = ConfigDict(extra="forbid")
    clip_nm: int = _default(GeometryConfig, "clip_nm")
    stride_nm: int = _default(GeometryConfig, "stride_nm")
    core_nm: int = _default(GeometryConfig, "core_nm")
    pixel_nm: int = _default(GeometryConfig, "pixel_nm")
    min_margin_nm: int = _default(GeometryConfig, "min_margin_nm")

class FeatureSection(BaseModel):
    model_config = ConfigDict(extra="forbid")
    grid: int = _default(FeatureConfig, "grid")
    cell_pixels: int = _default(FeatureConfig, "cell_pixels")
    channels: int = _default(FeatureConfig, "channels")
    init_channel: int = _default(FeatureConfig, "init_channel")

class TrainSection(BaseModel):
    model_config = ConfigDict(extra="forbid")
    alpha: float = _default(TrainConfig, "alpha")
    sigma: float = _default(TrainConfig, "sigma")
    batch_size: int = _default(TrainConfig, "batch_size")
    epochs_initial: int = _default(TrainConfig, "epochs_initial")
    epochs_update: int = _default(TrainConfig, "epochs_update")
    eps0: float = _default(TrainConfig, "eps0")
    total_bias_steps: Optional[int] = _default(TrainConfig, "total_bias_steps")
    hidden_dims: List[int] = _default(TrainConfig, "hidden_dims")
    replay_factor: int = _default(TrainConfig, "replay_factor")

class SamplerSection(BaseModel):
    model_config = ConfigDict(extra="forbid")
    n_query: int = _default(SamplerConfig, "n_query")
    k: int = _default(SamplerConfig, "k")
    pool_cap: Optional[int] = _default(SamplerConfig, "pool_cap")
    qp_tol: float = _default(SamplerConfig, "qp_tol")
    qp_max_iters: int = _default(SamplerConfig, "qp_max_iters")
    l0_size: Optional[int] = _default(SamplerConfig, "l0_size")
    max_swaps: Optional[int] = _default(SamplerConfig, "max_swaps")
    threshold: float = _default(SamplerConfig, "threshold")

class SynthSection(BaseModel):
    model_config = ConfigDict(extra="forbid")
    width_nm: int = _default(SynthConfig, "width_nm")
    height_nm: int = _default(SynthConfig, "height_nm")
    rect_density: float = _default(SynthConfig, "rect_density")
    motif_count: Optional[int] = _default(SynthConfig, "motif_count")
    motif_kind: str = _default(SynthConfig, "motif_kind")
    hotspot_rate_target: float = _default(SynthConfig, "hotspot_rate_target")
    core_nm: int = _default(SynthConfig, "core_nm")
    duplication_factor: int = _default(SynthConfig, "duplication_factor")

class PipelineConfigFile(BaseModel):
    model_config = ConfigDict(extra="forbid")
    layout: Optional[str] = None
    clips: Optional[str] = None
    out_dir: Optional[str] = None
    synthetic: bool = False
    seed: Optional[int] = None
    threads: Optional[int] = None
    geometry: GeometrySection = Field(default_factory=GeometrySection)
    features: FeatureSection = Field(default_factory=FeatureSection)
    train: TrainSection = Field(default_factory=TrainSection)
    sampler: SamplerSection = Field(default_factory=SamplerSection)
    synth: SynthSection = Field(default_factory=SynthSection)

class BenchConfigFile(BaseModel):
    model_config = ConfigDict(extra="forbid")
    seeds: List[int] = _default(BenchConfig, "seeds")
    methods: List[str] = _default(BenchConfig, "methods")
    sweep_clip_nm: List[int] = _default(BenchConfig, "sweep_clip_nm")
    geometry: GeometrySection = Field(default_factory=GeometrySection)
    features: FeatureSection = Field(default_factory=FeatureSection)
    train: TrainSection = Field(default_factory=TrainSection)
    sampler: SamplerSection = Field(default_factory=SamplerSection)
    synth: SynthSection = Field(default_factory=SynthSection)
