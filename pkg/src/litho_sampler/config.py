import os
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from .errors import ConfigError

# Load environment variables from .env if it exists
load_dotenv()


def _env_int(name: str, default: int) -> int:
    return int(os.getenv(name, str(default)))


@dataclass
class GeometryConfig:
    """Clip dispatch geometry in integer nanometers"""
    clip_nm: int = 690
    stride_nm: int = 230
    core_nm: int = 230
    pixel_nm: int = 10  # raster pitch used for exact-match hashing
    min_margin_nm: int = 230

    def __post_init__(self):
        if min(self.clip_nm, self.stride_nm, self.core_nm, self.pixel_nm) <= 0:
            raise ConfigError("geometry sizes must be positive", "config", "GeometryConfig")
        if self.core_nm != self.stride_nm:
            raise ConfigError(
                f"core_nm={self.core_nm} must equal stride_nm={self.stride_nm} so cores tile the layout",
                "config", "GeometryConfig")

    @property
    def margin_nm(self) -> int:
        return (self.clip_nm - self.core_nm) // 2


@dataclass
class FeatureConfig:
    """Feature tensor settings: grid x grid cells, cell_pixels^2 pixels per cell"""
    grid: int = 23
    cell_pixels: int = 10
    channels: int = 16
    init_channel: int = 1

    def __post_init__(self):
        if self.grid <= 0 or self.cell_pixels <= 0:
            raise ConfigError("grid and cell_pixels must be positive", "config", "FeatureConfig")
        if not 2 <= self.channels <= self.cell_pixels ** 2:
            raise ConfigError(
                f"channels={self.channels} must lie in [2, {self.cell_pixels ** 2}]",
                "config", "FeatureConfig")
        if not 0 <= self.init_channel < self.channels:
            raise ConfigError(
                f"init_channel={self.init_channel} out of range for {self.channels} channels",
                "config", "FeatureConfig")

    @property
    def input_dim(self) -> int:
        return self.grid * self.grid * self.channels


@dataclass
class TrainConfig:
    """Learner hyper-parameters (alpha, sigma and the label-bias schedule)"""
    alpha: float = 0.05
    sigma: float = 0.05
    batch_size: int = 32
    epochs_initial: int = 30
    epochs_update: int = 5
    eps0: float = 0.2
    total_bias_steps: Optional[int] = None  # None: length of the initial training phase
    seed: int = field(default_factory=lambda: _env_int("LITHO_SAMPLER_SEED", 1))
    hidden_dims: List[int] = field(default_factory=lambda: [64, 32])
    replay_factor: int = 4

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}", "config", "TrainConfig")
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}", "config", "TrainConfig")
        if not 0 <= self.eps0 < 0.5:
            raise ConfigError(f"eps0 must lie in [0, 0.5), got {self.eps0}", "config", "TrainConfig")
        if self.batch_size <= 0 or self.epochs_initial < 0 or self.epochs_update < 0:
            raise ConfigError("batch_size must be positive and epochs non-negative", "config", "TrainConfig")
        if not self.hidden_dims or any(h <= 0 for h in self.hidden_dims):
            raise ConfigError("at least one positive hidden layer is required", "config", "TrainConfig")
        if self.replay_factor < 0:
            raise ConfigError("replay_factor must be >= 0", "config", "TrainConfig")


@dataclass
class SamplerConfig:
    """Batch active sampling settings (filter size n, batch size k, QP solver limits)"""
    n_query: int = 90
    k: int = 60
    pool_cap: Optional[int] = 2000
    qp_tol: float = 1e-7
    qp_max_iters: int = 5000
    seed: int = field(default_factory=lambda: _env_int("LITHO_SAMPLER_SEED", 1))
    l0_size: Optional[int] = None  # None: one batch worth (k)
    max_swaps: Optional[int] = None  # initial selection only; None: k
    threshold: float = 0.5

    def __post_init__(self):
        if self.k <= 0 or self.n_query <= 0:
            raise ConfigError("k and n_query must be positive", "config", "SamplerConfig")
        if self.k > self.n_query:
            raise ConfigError(f"k={self.k} exceeds n_query={self.n_query}", "config", "SamplerConfig")
        if self.pool_cap is not None and self.pool_cap < self.n_query:
            raise ConfigError(
                f"pool_cap={self.pool_cap} is smaller than n_query={self.n_query}", "config", "SamplerConfig")
        if self.qp_tol <= 0 or self.qp_max_iters <= 0:
            raise ConfigError("qp_tol and qp_max_iters must be positive", "config", "SamplerConfig")
        if abs(self.k / self.n_query - 0.5) < 0.05:
            logger.warning(
                f"k/n = {self.k}/{self.n_query} sits near 0.5 where the rounding gap bound is largest")

    @property
    def initial_size(self) -> int:
        return self.l0_size if self.l0_size is not None else self.k

    @property
    def swap_limit(self) -> int:
        return self.max_swaps if self.max_swaps is not None else self.k


@dataclass
class SynthConfig:
    """Synthetic layout with planted hotspot motifs"""
    width_nm: int = 16100
    height_nm: int = 16100
    rect_density: float = 0.6
    motif_count: Optional[int] = None  # None: derived from hotspot_rate_target
    motif_kind: str = "min_space_pair"
    seed: int = field(default_factory=lambda: _env_int("LITHO_SAMPLER_SEED", 1))
    hotspot_rate_target: float = 0.05
    core_nm: int = 230
    duplication_factor: int = 1

    def __post_init__(self):
        if self.width_nm % self.core_nm or self.height_nm % self.core_nm:
            raise ConfigError(
                f"layout {self.width_nm}x{self.height_nm} is not a multiple of core {self.core_nm}",
                "config", "SynthConfig")
        if self.width_nm <= 0 or self.height_nm <= 0:
            raise ConfigError("layout dimensions must be positive", "config", "SynthConfig")
        if not 0 <= self.rect_density <= 1:
            raise ConfigError("rect_density must lie in [0, 1]", "config", "SynthConfig")
        if self.motif_kind not in ("min_space_pair", "pinch"):
            raise ConfigError(f"unknown motif_kind {self.motif_kind!r}", "config", "SynthConfig")
        if not 0 < self.hotspot_rate_target < 1:
            raise ConfigError("hotspot_rate_target must lie in (0, 1)", "config", "SynthConfig")
        if self.duplication_factor < 1:
            raise ConfigError("duplication_factor must be >= 1", "config", "SynthConfig")
        if self.motif_count is not None and self.motif_count < 0:
            raise ConfigError("motif_count must be >= 0", "config", "SynthConfig")

    @property
    def tiles(self) -> int:
        return (self.width_nm // self.core_nm) * (self.height_nm // self.core_nm)

    def resolved_motif_count(self) -> int:
        if self.motif_count is not None:
            return self.motif_count
        return int(round(self.hotspot_rate_target * self.tiles))


@dataclass
class BenchConfig:
    """Paired-seed experiment protocol"""
    seeds: List[int] = field(default_factory=lambda: list(range(1, 11)))
    methods: List[str] = field(default_factory=lambda: ["ours", "random", "greedy", "exact_match"])
    synth: SynthConfig = field(default_factory=SynthConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    # matching windows for the exact-match clip-size sweep
    sweep_clip_nm: List[int] = field(default_factory=lambda: [230, 250, 290, 350, 470, 690])

    def __post_init__(self):
        unknown = set(self.methods) - {"ours", "random", "greedy", "exact_match"}
        if unknown:
            raise ConfigError(f"unknown bench methods {sorted(unknown)}", "config", "BenchConfig")
        if not self.sweep_clip_nm or any(s <= 0 for s in self.sweep_clip_nm):
            raise ConfigError("sweep clip sizes must be positive", "config", "BenchConfig")


@dataclass
class PipelineConfig:
    """Everything one flow run needs"""
    layout_path: Optional[Path] = None
    clips_path: Optional[Path] = None
    out_dir: Path = field(default_factory=lambda: Path(os.getenv("LITHO_SAMPLER_OUT_DIR", "out")))
    synthetic: bool = False
    seed: int = field(default_factory=lambda: _env_int("LITHO_SAMPLER_SEED", 1))
    threads: int = 1
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self, precut_clip_nm: Optional[int] = None) -> "PipelineConfig":
        """Cross-field checks, run before any work starts.

        Pre-cut clip sets bring their own clip size; the dispatch geometry is
        then unused and only the feature grid is checked against that size.
        """
        g, f = self.geometry, self.features
        if self.sampler.k > self.sampler.n_query:
            raise ConfigError(
                f"k={self.sampler.k} exceeds n_query={self.sampler.n_query}", "config", "PipelineConfig")
        if self.threads <= 0:
            raise ConfigError("threads must be positive", "config", "PipelineConfig")
        if self.clips_path is not None:
            if precut_clip_nm is None:
                raise ConfigError("pre-cut clip size is unknown", "config", "PipelineConfig")
            if precut_clip_nm % (f.grid * f.cell_pixels):
                raise ConfigError(
                    f"pre-cut clip {precut_clip_nm} nm is not divisible into "
                    f"{f.grid}x{f.grid} cells of {f.cell_pixels} pixels",
                    "config", "PipelineConfig")
            return self
        if g.clip_nm % g.stride_nm:
            raise ConfigError(
                f"stride {g.stride_nm} does not divide clip {g.clip_nm}", "config", "PipelineConfig")
        if (g.clip_nm - g.core_nm) % 2 or g.clip_nm < g.core_nm:
            raise ConfigError(
                f"clip {g.clip_nm} minus core {g.core_nm} must be even and non-negative",
                "config", "PipelineConfig")
        if g.margin_nm < g.min_margin_nm:
            raise ConfigError(
                f"core-to-window margin {g.margin_nm} nm is below the isolation minimum {g.min_margin_nm} nm",
                "config", "PipelineConfig")
        if g.clip_nm % g.pixel_nm:
            raise ConfigError(f"pixel {g.pixel_nm} does not divide clip {g.clip_nm}", "config", "PipelineConfig")
        if g.clip_nm % (f.grid * f.cell_pixels):
            raise ConfigError(
                f"clip {g.clip_nm} nm is not divisible into {f.grid}x{f.grid} cells of {f.cell_pixels} pixels",
                "config", "PipelineConfig")
        if self.synthetic and self.synth.core_nm != g.core_nm:
            raise ConfigError("synthetic core_nm must match the dispatch core_nm", "config", "PipelineConfig")
        if not self.synthetic and self.layout_path is None:
            raise ConfigError("one of --synthetic, --layout or --clips is required", "config", "PipelineConfig")
        return self

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Funnel one run seed into every seeded component."""
        return replace(
            self,
            seed=seed,
            train=replace(self.train, seed=seed),
            sampler=replace(self.sampler, seed=seed),
            synth=replace(self.synth, seed=seed),
        )


def resolve_threads(flag: Optional[int] = None) -> int:
    """--threads wins, then LITHO_SAMPLER_THREADS, then 1."""
    if flag is not None:
        return flag
    return _env_int("LITHO_SAMPLER_THREADS", 1)


def setup_logging(level: int = logging.INFO) -> logging.Logger:
    logging.basicConfig(
        level=level,
        format='%(asctime)s [%(levelname)s] %(message)s',
        datefmt='%H:%M:%S'
    )
    return logging.getLogger("LithoSampler")


logger = setup_logging(getattr(logging, os.getenv("LITHO_SAMPLER_LOG_LEVEL", "INFO").upper(), logging.INFO))


def _sections(data) -> dict:
    try:
        return dict(
            geometry=GeometryConfig(**data.geometry.model_dump()),
            features=FeatureConfig(**data.features.model_dump()),
            train=TrainConfig(**data.train.model_dump()),
            sampler=SamplerConfig(**data.sampler.model_dump()),
            synth=SynthConfig(**data.synth.model_dump()),
        )
    except TypeError as e:
        raise ConfigError(str(e), "config", "load") from e


def pipeline_config_from_file(data) -> PipelineConfig:
    """Build a PipelineConfig from a validated PipelineConfigFile."""
    cfg = PipelineConfig(
        layout_path=Path(data.layout) if data.layout else None,
        clips_path=Path(data.clips) if data.clips else None,
        synthetic=data.synthetic,
        threads=resolve_threads(data.threads),
        **_sections(data),
    )
    if data.out_dir:
        cfg.out_dir = Path(data.out_dir)
    if data.seed is not None:
        cfg = cfg.with_seed(data.seed)
    return cfg


def bench_config_from_file(data) -> BenchConfig:
    sections = _sections(data)
    return BenchConfig(seeds=list(data.seeds), methods=list(data.methods),
                       sweep_clip_nm=list(data.sweep_clip_nm), **sections)
