import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from .bench import (
    LithoOracle,
    clip_size_sweep,
    evaluate,
    generate_synthetic,
    learning_curve,
    prepare_instance,
    results_frame,
    run_benchmark,
    summarize_results,
)
from .config import (
    BenchConfig,
    FeatureConfig,
    GeometryConfig,
    PipelineConfig,
    SamplerConfig,
    TrainConfig,
    bench_config_from_file,
    logger,
    pipeline_config_from_file,
    resolve_threads,
)
from .errors import ConfigError, ConsistencyError, LithoSamplerError, exit_code_for
from .layout import dispatch, label_clips
from .models import Clip, Label, Layout
from .optics import LithoSystem, energy_report, encircled_fraction, isolation_distance, snap_to_grid
from .pipeline import build_bank, extract_features
from .repository import ArtifactRepository, read_json_model
from .sampler import batch_active_sampling
from .schemas import BenchConfigFile, ErrorReport, PipelineConfigFile


def _print_json(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


# --- optics ---

def cmd_optics_iso_distance(args) -> int:
    system = LithoSystem(wavelength_nm=args.wavelength, numerical_aperture=args.na)
    distance = isolation_distance(system)
    _print_json({
        "wavelength_nm": args.wavelength,
        "numerical_aperture": args.na,
        "isolation_distance_nm": distance,
        "grid_distance_nm": snap_to_grid(distance, args.grid),
    })
    return 0


def cmd_optics_energy(args) -> int:
    report = energy_report()
    if args.x is not None:
        report["x"] = args.x
        report["energy_x"] = encircled_fraction(args.x)
    _print_json(report)
    return 0


# --- module commands ---

def _geometry(args) -> GeometryConfig:
    return GeometryConfig(clip_nm=args.clip_nm, stride_nm=args.stride_nm, core_nm=args.core_nm,
                          min_margin_nm=args.min_margin_nm)


def cmd_dispatch(args) -> int:
    g = _geometry(args)
    layout = ArtifactRepository.read_layout(args.layout)
    clips = label_clips(layout, dispatch(layout, g.clip_nm, g.stride_nm, g.core_nm, g.min_margin_nm))
    repo = ArtifactRepository(Path(args.out).parent)
    repo.write_clips(clips, g.clip_nm, g.stride_nm, g.core_nm, Path(args.out).name)
    return 0


def _feature_config(args) -> FeatureConfig:
    return FeatureConfig(grid=args.grid, cell_pixels=args.cell_pixels, channels=args.channels,
                         init_channel=args.init_channel)


def cmd_extract(args) -> int:
    cfg = _feature_config(args)
    layout = ArtifactRepository.read_layout(args.layout)
    _, clips = ArtifactRepository.read_clips(args.clips)
    tensors = extract_features([(layout, c) for c in clips], cfg, resolve_threads(args.threads))
    ArtifactRepository(Path(args.out).parent).write_features([c.id for c in clips], tensors, Path(args.out).name)
    return 0


def cmd_sample(args) -> int:
    ids, tensors = ArtifactRepository.read_features(args.features)
    _, clips = ArtifactRepository.read_clips(args.clips)
    grid, channels = (tensors[0].grid_h, tensors[0].channels) if tensors else (1, 2)
    features = FeatureConfig(grid=grid, cell_pixels=args.cell_pixels, channels=channels,
                             init_channel=args.init_channel)
    sampler = SamplerConfig(n_query=args.n, k=args.k, pool_cap=args.pool_cap, seed=args.seed)
    train_cfg = TrainConfig(seed=args.seed)
    bank = build_bank(ids, tensors, features)
    oracle = LithoOracle.from_clips(clips)
    out = Path(args.out)
    repo = ArtifactRepository(out.parent)
    with repo.selection_log(out.name) as append:
        result = batch_active_sampling(bank, oracle, train_cfg, sampler, on_record=append)
    logger.info(f"Sampling done: {len(result.labeled)} labeled, {len(result.discarded)} discarded, "
                f"litho={result.litho_total}")
    return 0


# --- flow ---

def _load_inputs(cfg: PipelineConfig, repo: ArtifactRepository,
                 precut: Optional[List[Tuple[Layout, Clip]]] = None) -> List[Tuple[Layout, Clip]]:
    g = cfg.geometry
    if precut is not None:
        logger.info(f"Loaded {len(precut)} pre-cut clips from {cfg.clips_path}")
        return precut
    if cfg.synthetic:
        layout = generate_synthetic(cfg.synth)
        repo.write_layout(layout)
    else:
        layout = ArtifactRepository.read_layout(cfg.layout_path)
    clips = label_clips(layout, dispatch(layout, g.clip_nm, g.stride_nm, g.core_nm, g.min_margin_nm))
    repo.write_clips(clips, g.clip_nm, g.stride_nm, g.core_nm)
    return [(layout, c) for c in clips]


def cmd_flow(cfg: PipelineConfig) -> int:
    """Dispatch, extract, sample and train, detect, report."""
    logger.info(f"Starting flow (seed {cfg.seed}, threads {cfg.threads}, out {cfg.out_dir})...")
    # 0. Validation before any computation
    logger.info("Phase 0: Configuration Check")
    precut = ArtifactRepository.read_precut(cfg.clips_path) if cfg.clips_path is not None else None
    cfg.validate(precut[0].clip_nm if precut else None)

    # Every artifact is staged; out_dir only sees them once Phase 5 finishes.
    with ArtifactRepository.staged(cfg.out_dir) as repo:
        logger.info("Phase 1: Layout Dispatch")
        pairs = _load_inputs(cfg, repo, precut[1] if precut else None)
        clips = [c for _, c in pairs]

        logger.info("Phase 2: Feature Extraction")
        tensors = extract_features(pairs, cfg.features, cfg.threads)
        bank = build_bank([c.id for c in clips], tensors, cfg.features)

        logger.info("Phase 3: Batch Active Sampling")
        oracle = LithoOracle.from_clips(clips)
        with repo.selection_log() as append:
            result = batch_active_sampling(bank, oracle, cfg.train, cfg.sampler, on_record=append)

        logger.info("Phase 4: Hotspot Detection")
        metrics = evaluate(result.model, bank, result.discarded, result.labeled, oracle,
                           "ours", cfg.seed, cfg.sampler.threshold)
        labeled_hotspots = sum(l is Label.HOTSPOT for l in result.labeled.values())
        detected = metrics.hits - labeled_hotspots + metrics.extras
        if oracle.count != len(result.labeled) + detected:
            raise ConsistencyError(
                f"litho count {oracle.count} != {len(result.labeled)} labeled + {detected} detections",
                "cli", "cmd_flow")

        logger.info("Phase 5: Artifacts")
        repo.write_model(result.model)
        repo.write_csv(results_frame([metrics], with_time=False), "results.csv")
        repo.write_json({
            "seed": cfg.seed,
            "clips": len(clips),
            "initial_ids": result.initial_ids,
            "iterations": len(result.records),
            "labeled": len(result.labeled),
            "discarded": len(result.discarded),
            "litho_clips": metrics.litho_clips,
            "hits": metrics.hits,
            "total_hotspots": metrics.total_hotspots,
            "extras": metrics.extras,
            "accuracy": metrics.accuracy,
        }, "run.json")
    logger.info(f"✅ Flow complete: accuracy={metrics.accuracy:.4f} "
                f"({metrics.hits}/{metrics.total_hotspots}), extras={metrics.extras}, "
                f"litho={metrics.litho_clips}/{len(clips)}")
    return 0


def build_flow_config(args) -> PipelineConfig:
    if args.config:
        cfg = pipeline_config_from_file(read_json_model(args.config, PipelineConfigFile, "load_config"))
    else:
        cfg = PipelineConfig()
    if args.synthetic:
        cfg.synthetic = True
    if args.layout:
        cfg.layout_path = Path(args.layout)
    if args.clips:
        cfg.clips_path = Path(args.clips)
    if args.out:
        cfg.out_dir = Path(args.out)
    if args.threads is not None or not args.config:
        cfg.threads = resolve_threads(args.threads)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


# --- bench ---

def _bench_config(args) -> BenchConfig:
    if args.config:
        cfg = bench_config_from_file(read_json_model(args.config, BenchConfigFile, "load_config"))
    else:
        cfg = BenchConfig()
    if args.seeds:
        cfg.seeds = list(args.seeds)
    return cfg


def cmd_bench_run(args) -> int:
    cfg = _bench_config(args)
    df = run_benchmark(cfg, resolve_threads(args.threads))
    out = Path(args.out)
    ArtifactRepository(out.parent).write_csv(df, out.name)
    print(summarize_results(df).to_string(index=False))
    return 0


def cmd_bench_curve(args) -> int:
    cfg = _bench_config(args)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    inst = prepare_instance(replace(cfg.synth, seed=seed), cfg.geometry, cfg.features,
                            resolve_threads(args.threads))
    df = learning_curve(inst.bank, inst.oracle(), replace(cfg.train, seed=seed), replace(cfg.sampler, seed=seed))
    out = Path(args.out)
    ArtifactRepository(out.parent).write_csv(df, out.name)
    return 0


def cmd_bench_sweep(args) -> int:
    cfg = _bench_config(args)
    if args.clip_nm:
        cfg = replace(cfg, sweep_clip_nm=list(args.clip_nm))
    df = clip_size_sweep(cfg)
    out = Path(args.out)
    ArtifactRepository(out.parent).write_csv(df, out.name)
    print(df.to_string(index=False))
    return 0


# --- parser ---

class _Parser(argparse.ArgumentParser):
    """Usage errors surface as config errors (exit 3) with a JSON report."""

    def error(self, message: str):
        raise ConfigError(f"{self.prog}: {message}", "cli", "parse_args")

def _add_geometry_flags(p: argparse.ArgumentParser) -> None:
    g = GeometryConfig()
    p.add_argument("--clip-nm", type=int, default=g.clip_nm, help="clip window side (nm)")
    p.add_argument("--stride-nm", type=int, default=g.stride_nm, help="dispatch stride (nm)")
    p.add_argument("--core-nm", type=int, default=g.core_nm, help="core region side (nm)")
    p.add_argument("--min-margin-nm", type=int, default=g.min_margin_nm,
                   help="smallest allowed core-to-window margin (nm)")


def _add_feature_flags(p: argparse.ArgumentParser, full: bool = True) -> None:
    f = FeatureConfig()
    if full:
        p.add_argument("--grid", type=int, default=f.grid, help="grid cells per clip side")
        p.add_argument("--channels", type=int, default=f.channels, help="zig-zag DCT channels kept")
    p.add_argument("--cell-pixels", type=int, default=f.cell_pixels, help="pixels per grid cell side")
    p.add_argument("--init-channel", type=int, default=f.init_channel,
                   help="channel used for the initial diversity selection (0-based)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="litho-sampler",
        description="Layout pattern sampling and hotspot detection")
    sub = parser.add_subparsers(dest="command", required=True)

    optics = sub.add_parser("optics", help="lithography proximity formulas")
    optics_sub = optics.add_subparsers(dest="optics_command", required=True)
    iso = optics_sub.add_parser("iso-distance", help="isolation distance 6.05 lambda / NA")
    iso.add_argument("--lambda", dest="wavelength", type=float, default=13.5, help="wavelength (nm)")
    iso.add_argument("--na", type=float, default=0.35, help="numerical aperture")
    iso.add_argument("--grid", type=int, default=10, help="layout grid (nm) for the floored value")
    iso.set_defaults(func=cmd_optics_iso_distance)
    energy = optics_sub.add_parser("energy", help="encircled Airy energy")
    energy.add_argument("--x", type=float, help="also report the energy at this optical argument")
    energy.set_defaults(func=cmd_optics_energy)

    disp = sub.add_parser("dispatch", help="cut a layout into labeled clips")
    disp.add_argument("--layout", required=True, help="layout JSON")
    disp.add_argument("--out", required=True, help="clips JSON to write")
    _add_geometry_flags(disp)
    disp.set_defaults(func=cmd_dispatch)

    ext = sub.add_parser("extract", help="feature tensors for dispatched clips")
    ext.add_argument("--layout", required=True, help="layout JSON")
    ext.add_argument("--clips", required=True, help="clips JSON from dispatch")
    ext.add_argument("--out", required=True, help="feature store to write (sidecar goes next to it)")
    ext.add_argument("--threads", type=int, help="worker threads (default LITHO_SAMPLER_THREADS or 1)")
    _add_feature_flags(ext)
    ext.set_defaults(func=cmd_extract)

    smp = sub.add_parser("sample", help="batch active sampling over a feature store")
    smp.add_argument("--features", required=True, help="feature store from extract")
    smp.add_argument("--clips", required=True, help="labeled clips JSON (litho ground truth)")
    smp.add_argument("--k", type=int, default=60, help="clips labeled per iteration")
    smp.add_argument("--n", type=int, default=90, help="clips kept by the uncertainty filter")
    smp.add_argument("--pool-cap", type=int, default=2000, help="stochastic pool cap")
    smp.add_argument("--seed", type=int, default=1, help="run seed")
    smp.add_argument("--out", required=True, help="selection log (JSON lines)")
    _add_feature_flags(smp, full=False)
    smp.set_defaults(func=cmd_sample)

    flow = sub.add_parser("flow", help="full sampling and detection flow")
    flow.add_argument("--config", help="pipeline config JSON")
    flow.add_argument("--synthetic", action="store_true", help="generate a synthetic layout")
    flow.add_argument("--layout", help="layout JSON")
    flow.add_argument("--clips", help="pre-cut clips JSON")
    flow.add_argument("--seed", type=int, help="run seed")
    flow.add_argument("--out", help="output directory")
    flow.add_argument("--threads", type=int, help="worker threads (default LITHO_SAMPLER_THREADS or 1)")
    flow.set_defaults(func=lambda args: cmd_flow(build_flow_config(args)))

    bench = sub.add_parser("bench", help="synthetic benchmark experiments")
    bench_sub = bench.add_subparsers(dest="bench_command", required=True)
    run = bench_sub.add_parser("run", help="paired-seed method comparison")
    curve = bench_sub.add_parser("curve", help="accuracy against labeled samples")
    for p in (run, curve):
        p.add_argument("--config", help="bench config JSON")
        p.add_argument("--out", required=True, help="CSV to write")
        p.add_argument("--threads", type=int, help="worker threads (default LITHO_SAMPLER_THREADS or 1)")
    run.add_argument("--seeds", type=int, nargs="+", help="override the config's seeds")
    curve.add_argument("--seed", type=int, help="seed (default: first configured seed)")
    curve.add_argument("--seeds", type=int, nargs="+", help=argparse.SUPPRESS)
    run.set_defaults(func=cmd_bench_run)
    curve.set_defaults(func=cmd_bench_curve)

    sweep = bench_sub.add_parser("sweep", help="exact-match misses against clip size")
    sweep.add_argument("--config", help="bench config JSON")
    sweep.add_argument("--out", required=True, help="CSV to write")
    sweep.add_argument("--seeds", type=int, nargs="+", help="override the config's seeds")
    sweep.add_argument("--clip-nm", type=int, nargs="+", help="override the swept clip sizes (nm)")
    sweep.set_defaults(func=cmd_bench_sweep)
    return parser


def report_error(err: Exception) -> int:
    """Print a machine-readable error on stderr and return the exit code."""
    if isinstance(err, LithoSamplerError):
        report = ErrorReport(kind=err.kind, module=err.module, operation=err.operation,
                             message=err.message, ids=list(err.ids))
    elif isinstance(err, OSError):
        report = ErrorReport(kind="io", module="cli", operation="io", message=str(err))
    else:
        report = ErrorReport(kind="internal", module="cli", operation=type(err).__name__, message=str(err))
    print(report.model_dump_json(), file=sys.stderr)
    logger.error(f"❌ {report.kind} error in {report.module}.{report.operation}: {report.message}")
    return exit_code_for(report.kind)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except Exception as e:
        return report_error(e)


if __name__ == "__main__":
    sys.exit(main())
