from .cli import main, cmd_flow
from .config import (
    GeometryConfig,
    FeatureConfig,
    TrainConfig,
    SamplerConfig,
    SynthConfig,
    BenchConfig,
    PipelineConfig,
    setup_logging,
    logger,
)
from .errors import LithoSamplerError, ConfigError, DomainError, TrainingError, ConsistencyError, OracleError
from .models import Rect, DefectMarker, Layout, Clip, Label, RunMetrics
from .optics import LithoSystem, bessel_j, airy_intensity, encircled_energy, isolation_distance
from .layout import dispatch, label_clip, label_clips, rasterize
from .features import FeatureTensor, FeatureVector, dct2, extract_tensor, channel_vector
from .learner import MlpModel, init_model, predict_proba, bias_target, train_step, incremental_update, embed
from .sampler import (
    build_diversity,
    project_capped_simplex,
    pg_residual,
    spectrum_bounds,
    solve_relaxed,
    round_topk,
    uncertainty_filter,
    select_initial,
    batch_active_sampling,
)
from .bench import LithoOracle, generate_synthetic, generate_context_layout, evaluate, run_benchmark, clip_size_sweep
from .repository import ArtifactRepository

__all__ = [
    'main',
    'cmd_flow',
    'GeometryConfig',
    'FeatureConfig',
    'TrainConfig',
    'SamplerConfig',
    'SynthConfig',
    'BenchConfig',
    'PipelineConfig',
    'setup_logging',
    'logger',
    'LithoSamplerError',
    'ConfigError',
    'DomainError',
    'TrainingError',
    'ConsistencyError',
    'OracleError',
    'Rect',
    'DefectMarker',
    'Layout',
    'Clip',
    'Label',
    'RunMetrics',
    'LithoSystem',
    'bessel_j',
    'airy_intensity',
    'encircled_energy',
    'isolation_distance',
    'dispatch',
    'label_clip',
    'label_clips',
    'rasterize',
    'FeatureTensor',
    'FeatureVector',
    'dct2',
    'extract_tensor',
    'channel_vector',
    'MlpModel',
    'init_model',
    'predict_proba',
    'bias_target',
    'train_step',
    'incremental_update',
    'embed',
    'build_diversity',
    'project_capped_simplex',
    'pg_residual',
    'spectrum_bounds',
    'solve_relaxed',
    'round_topk',
    'uncertainty_filter',
    'select_initial',
    'batch_active_sampling',
    'LithoOracle',
    'generate_synthetic',
    'generate_context_layout',
    'evaluate',
    'run_benchmark',
    'clip_size_sweep',
    'ArtifactRepository',
]
