"""Desk-scale experiment harness: synthetic layouts, a counting litho oracle,
baseline samplers and the hit/extra/litho metrics."""

import hashlib
import threading
import time
from dataclasses import dataclass, replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import pandera.pandas as pa

from .config import BenchConfig, GeometryConfig, SamplerConfig, SynthConfig, TrainConfig, logger
from .errors import ConfigError, DomainError, GenerationError, OracleError
from .layout import RectIndex, dispatch, label_clips, rasterize
from .learner import MlpModel, incremental_update, init_model, predict_proba, train
from .models import Clip, DefectKind, DefectMarker, Label, Layout, Rect, RunMetrics
from .optics import LithoSystem, isolation_distance
from .pipeline import build_bank, extract_features
from .sampler import ClipBank, SamplingResult, batch_active_sampling, select_initial

EDGE_CLEARANCE = 30
MIN_SPACE = 60


# --- Synthetic layouts ---

def _background_tile(rng: np.random.Generator, core: int) -> List[Tuple[int, int, int, int]]:
    """Parallel wires 40-60 nm wide, >= 60 nm apart, >= 30 nm from the tile edge."""
    lo, hi = EDGE_CLEARANCE, core - EDGE_CLEARANCE
    wires = []
    pos = lo + 10 * int(rng.integers(0, 4))
    while True:
        width = 10 * int(rng.integers(4, 7))
        if pos + width > hi:
            break
        start = lo + 10 * int(rng.integers(0, 5))
        end = hi - 10 * int(rng.integers(0, 5))
        wires.append((start, pos, end, pos + width))
        pos += width + MIN_SPACE + 10 * int(rng.integers(0, 3))
    if rng.random() < 0.5:
        wires = [(y0, x0, y1, x1) for x0, y0, x1, y1 in wires]
    return wires


def _motif_tile(rng: np.random.Generator, core: int, kind: str) -> Tuple[List[Tuple[int, int, int, int]], Tuple[int, int]]:
    """A planted hotspot pattern and the defect point at its center."""
    gap = 10 * int(rng.integers(1, 3))
    height = 10 * int(rng.integers(4, 7))
    center = core // 2 // 10 * 10
    mid = center - 10 * int(rng.integers(0, 2))
    y0 = center - height // 2 // 10 * 10
    if kind == "min_space_pair":
        # two bars facing each other across a sub-minimum gap
        rects = [(EDGE_CLEARANCE + 10, y0, mid, y0 + height),
                 (mid + gap, y0, core - EDGE_CLEARANCE - 10, y0 + height)]
        defect = (mid + gap // 2, y0 + height // 2)
    else:
        # a wire necked down to a sub-minimum width
        neck = gap
        top = y0 + (height - neck) // 2 // 10 * 10
        rects = [(EDGE_CLEARANCE, y0, mid - 20, y0 + height),
                 (mid - 20, top, mid + 20, top + neck),
                 (mid + 20, y0, core - EDGE_CLEARANCE, y0 + height)]
        defect = (mid, top + neck // 2)
    if rng.random() < 0.5:
        rects = [(b, a, d, c) for a, b, c, d in rects]
        defect = (defect[1], defect[0])
    return rects, defect


def generate_synthetic(cfg: SynthConfig) -> Layout:
    """Random wires tile by tile plus planted motifs, one defect per motif.

    With duplication_factor d the tile columns repeat with period ceil(cols / d),
    so repeated windows rasterize to identical bitmaps.
    """
    rng = np.random.default_rng(cfg.seed)
    core = cfg.core_nm
    cols, rows = cfg.width_nm // core, cfg.height_nm // core
    period = -(-cols // cfg.duplication_factor)
    base_tiles = period * rows
    motifs = cfg.resolved_motif_count()
    base_motifs = -(-motifs // cfg.duplication_factor) if cfg.duplication_factor > 1 else motifs
    if base_motifs > base_tiles:
        raise GenerationError(
            f"{motifs} motifs do not fit in {base_tiles} distinct tiles", "bench", "generate_synthetic")

    motif_tiles = set(int(t) for t in rng.choice(base_tiles, size=base_motifs, replace=False))
    base: Dict[Tuple[int, int], Tuple[List[Tuple[int, int, int, int]], Optional[Tuple[int, int]]]] = {}
    for row in range(rows):
        for col in range(period):
            if row * period + col in motif_tiles:
                rects, defect = _motif_tile(rng, core, cfg.motif_kind)
                base[(col, row)] = (rects, defect)
            elif rng.random() < cfg.rect_density:
                base[(col, row)] = (_background_tile(rng, core), None)
            else:
                base[(col, row)] = ([], None)

    rects: List[Rect] = []
    defects: List[DefectMarker] = []
    for row in range(rows):
        for col in range(cols):
            shapes, defect = base[(col % period, row)]
            ox, oy = col * core, row * core
            rects.extend(Rect(x0 + ox, y0 + oy, x1 + ox, y1 + oy) for x0, y0, x1, y1 in shapes)
            if defect is not None:
                defects.append(DefectMarker(defect[0] + ox, defect[1] + oy, DefectKind.SYNTHETIC))
    logger.info(f"Generated synthetic layout {cfg.width_nm}x{cfg.height_nm} nm: "
                f"{len(rects)} rects, {len(defects)} planted defects (seed {cfg.seed})")
    return Layout(rects=rects, bbox=Rect(0, 0, cfg.width_nm, cfg.height_nm), defects=defects)


def generate_context_layout(cfg: SynthConfig) -> Layout:
    """Bar ends whose hotspot status depends on the tile to their right.

    Every planted tile holds the same bar ending 10 nm before its right edge.
    Hotspot tiles face a second bar 10 nm past that edge (a 20 nm gap); twin
    tiles face an empty tile. Windows no wider than the core cannot tell the
    two apart.
    """
    rng = np.random.default_rng(cfg.seed)
    core = cfg.core_nm
    cols, rows = cfg.width_nm // core, cfg.height_nm // core
    slots = [(col, row) for row in range(rows) for col in range(0, cols - 1, 2)]
    motifs = cfg.resolved_motif_count()
    if core < 100 or 2 * motifs > len(slots):
        raise GenerationError(
            f"{motifs} hotspot/twin pairs do not fit in {len(slots)} slots of core {core}",
            "bench", "generate_context_layout")

    picked = [slots[int(i)] for i in rng.choice(len(slots), size=2 * motifs, replace=False)]
    mid = core // 2 // 10 * 10
    bar = (60, mid - 20, core - 10, mid + 20)
    facing = (10, mid - 20, core - 60, mid + 20)
    planted: Dict[Tuple[int, int], List[Tuple[int, int, int, int]]] = {}
    defects: List[DefectMarker] = []
    for n, (col, row) in enumerate(picked):
        planted[(col, row)] = [bar]
        planted[(col + 1, row)] = [facing] if n < motifs else []
        if n < motifs:
            defects.append(DefectMarker(col * core + core - 5, row * core + mid, DefectKind.SYNTHETIC))

    rects: List[Rect] = []
    for row in range(rows):
        for col in range(cols):
            if (col, row) in planted:
                shapes = planted[(col, row)]
            elif rng.random() < cfg.rect_density:
                shapes = _background_tile(rng, core)
            else:
                shapes = []
            ox, oy = col * core, row * core
            rects.extend(Rect(x0 + ox, y0 + oy, x1 + ox, y1 + oy) for x0, y0, x1, y1 in shapes)
    logger.info(f"Generated context layout {cfg.width_nm}x{cfg.height_nm} nm: "
                f"{motifs} hotspot tiles, {motifs} twins (seed {cfg.seed})")
    return Layout(rects=rects, bbox=Rect(0, 0, cfg.width_nm, cfg.height_nm), defects=defects)


# --- Oracle ---

class LithoOracle:
    """Stand-in for lithography simulation: returns ground truth, charging each clip once."""

    def __init__(self, truth: Dict[int, Label]):
        self._truth = {int(k): Label(v) for k, v in truth.items()}
        self._charged: Dict[int, Label] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_clips(cls, clips: Iterable[Clip]) -> "LithoOracle":
        truth = {}
        for c in clips:
            if c.label is None:
                raise OracleError(f"clip {c.id} has no ground-truth label", "bench", "LithoOracle", ids=[c.id])
            truth[c.id] = c.label
        return cls(truth)

    @property
    def count(self) -> int:
        return len(self._charged)

    @property
    def total_hotspots(self) -> int:
        return sum(l is Label.HOTSPOT for l in self._truth.values())

    def label(self, clip_id: int) -> Label:
        clip_id = int(clip_id)
        with self._lock:
            if clip_id not in self._charged:
                if clip_id not in self._truth:
                    raise OracleError(f"unknown clip id {clip_id}", "bench", "oracle_label", ids=[clip_id])
                self._charged[clip_id] = self._truth[clip_id]
            return self._charged[clip_id]

    def query(self, ids: Iterable[int]) -> List[Label]:
        return [self.label(i) for i in ids]

    def ground_truth(self, clip_id: int) -> Label:
        """Evaluation-only read; never charged."""
        try:
            return self._truth[int(clip_id)]
        except KeyError:
            raise OracleError(f"unknown clip id {clip_id}", "bench", "ground_truth", ids=[int(clip_id)]) from None

    def ids(self) -> List[int]:
        return sorted(self._truth)


# --- Metrics ---

def evaluate(
    model: MlpModel,
    bank: ClipBank,
    candidates: Iterable[int],
    labeled: Dict[int, Label],
    oracle: LithoOracle,
    method: str = "ours",
    seed: int = 0,
    threshold: float = 0.5,
) -> RunMetrics:
    """Detect hotspots among the candidate clips and verify every detection by litho.

    Hotspots already labeled during sampling count as hits.
    """
    candidates = sorted(int(i) for i in candidates)
    predicted: List[int] = []
    if candidates:
        p = np.atleast_1d(predict_proba(model, bank.inputs[bank.rows(candidates)]))
        predicted = [i for i, pi in zip(candidates, p) if pi >= threshold]
    verified = oracle.query(predicted)
    hits = sum(l is Label.HOTSPOT for l in labeled.values())
    hits += sum(l is Label.HOTSPOT for l in verified)
    extras = sum(l is Label.NON_HOTSPOT for l in verified)
    return RunMetrics(
        method=method,
        seed=seed,
        hits=hits,
        total_hotspots=oracle.total_hotspots,
        extras=extras,
        litho_clips=oracle.count,
    )


def run_ours(bank: ClipBank, oracle: LithoOracle, train_cfg: TrainConfig, cfg: SamplerConfig,
             on_record=None) -> Tuple[RunMetrics, SamplingResult]:
    result = batch_active_sampling(bank, oracle, train_cfg, cfg, on_record=on_record)
    metrics = evaluate(result.model, bank, result.discarded, result.labeled, oracle,
                       "ours", cfg.seed, cfg.threshold)
    if metrics.litho_clips < len(result.initial_ids):
        raise DomainError("litho count fell below the initial set size", "bench", "run_ours")
    return metrics, result


def run_random_baseline(bank: ClipBank, oracle: LithoOracle, budget: int,
                        train_cfg: TrainConfig, cfg: SamplerConfig) -> RunMetrics:
    """Label a uniform random subset, train once, detect on the rest."""
    if not 0 < budget <= len(bank):
        raise DomainError(f"budget {budget} outside [1, {len(bank)}]", "bench", "run_random_baseline")
    rng = np.random.default_rng(cfg.seed)
    picked = sorted(int(i) for i in rng.choice(bank.ids, size=budget, replace=False))
    labeled = dict(zip(picked, oracle.query(picked)))
    model = init_model(train_cfg, bank.inputs.shape[1])
    train(model, bank.inputs[bank.rows(picked)], [labeled[i] for i in picked],
          train_cfg.epochs_initial, train_cfg, rng)
    rest = set(int(i) for i in bank.ids) - set(picked)
    return evaluate(model, bank, rest, labeled, oracle, "random", cfg.seed, cfg.threshold)


def run_greedy_baseline(bank: ClipBank, oracle: LithoOracle, train_cfg: TrainConfig,
                        cfg: SamplerConfig, model: Optional[MlpModel] = None) -> RunMetrics:
    """Same L0 as the sampler; then keep labeling every clip predicted hotspot until none is."""
    rng = np.random.default_rng(cfg.seed)
    initial = select_initial(bank, cfg.initial_size, cfg, rng)
    order = list(initial.ids)
    labeled = dict(zip(order, oracle.query(order)))
    if model is None:
        model = init_model(train_cfg, bank.inputs.shape[1])
        train(model, bank.inputs[bank.rows(order)], [labeled[i] for i in order],
              train_cfg.epochs_initial, train_cfg, rng)
    pool = sorted(set(int(i) for i in bank.ids) - set(order))
    rounds = 0
    while pool:
        p = np.atleast_1d(predict_proba(model, bank.inputs[bank.rows(pool)]))
        batch = [i for i, pi in zip(pool, p) if pi >= cfg.threshold]
        if not batch:
            break
        rounds += 1
        old_rows = bank.rows(order)
        old_labels = [labeled[i] for i in order]
        new_labels = oracle.query(batch)
        labeled.update(zip(batch, new_labels))
        order.extend(batch)
        taken = set(batch)
        pool = [i for i in pool if i not in taken]
        incremental_update(model, bank.inputs[bank.rows(batch)], new_labels,
                           bank.inputs[old_rows], old_labels, train_cfg, rng)
    logger.info(f"Greedy baseline stopped after {rounds} rounds, {len(pool)} clips left unlabeled")
    return evaluate(model, bank, pool, labeled, oracle, "greedy", cfg.seed, cfg.threshold)


def bitmap_hash(bitmap: np.ndarray) -> str:
    payload = np.ascontiguousarray(bitmap, dtype=np.uint8)
    digest = hashlib.sha256(f"{payload.shape}".encode())
    digest.update(payload.tobytes())
    return digest.hexdigest()


def run_exact_match_baseline(pairs: Sequence[Tuple[Layout, Clip]], oracle: LithoOracle,
                             pixel_nm: int = 10, seed: int = 0) -> RunMetrics:
    """Cluster clips whose window bitmaps are identical; litho one representative per cluster."""
    groups: Dict[str, List[int]] = {}
    indexes: Dict[int, RectIndex] = {}
    for layout, clip in pairs:
        key = id(layout)
        if key not in indexes:
            indexes[key] = RectIndex.for_layout(layout, clip.core_nm)
        groups.setdefault(bitmap_hash(rasterize(layout, clip, pixel_nm, indexes[key])), []).append(clip.id)

    hits = extras = 0
    for members in groups.values():
        members.sort()
        label = oracle.label(members[0])
        if label is Label.HOTSPOT:
            for m in members:
                if oracle.ground_truth(m) is Label.HOTSPOT:
                    hits += 1
                else:
                    extras += 1
    logger.info(f"Exact match: {len(pairs)} clips in {len(groups)} groups")
    return RunMetrics("exact_match", seed, hits, oracle.total_hotspots, extras, oracle.count)


# --- Experiments ---

results_schema = pa.DataFrameSchema(
    {
        "method": pa.Column(str),
        "seed": pa.Column(int),
        "accuracy": pa.Column(float, pa.Check.in_range(0.0, 1.0)),
        "hits": pa.Column(int, pa.Check.ge(0)),
        "extras": pa.Column(int, pa.Check.ge(0)),
        "litho_clips": pa.Column(int, pa.Check.ge(0)),
        "wall_time_ms": pa.Column(int, pa.Check.ge(0), required=False),
    },
    strict=True,
    coerce=True,
)


def results_frame(metrics: Sequence[RunMetrics], with_time: bool = True) -> pd.DataFrame:
    columns = ["method", "seed", "accuracy", "hits", "extras", "litho_clips"]
    if with_time:
        columns.append("wall_time_ms")
    df = pd.DataFrame([m.as_row(with_time) for m in metrics], columns=columns)
    return results_schema.validate(df)


@dataclass
class BenchInstance:
    """One seeded synthetic layout, dispatched, labeled and feature-extracted"""
    layout: Layout
    clips: List[Clip]
    bank: ClipBank

    def oracle(self) -> LithoOracle:
        return LithoOracle.from_clips(self.clips)


def prepare_instance(synth: SynthConfig, geometry: GeometryConfig, features, threads: int = 1) -> BenchInstance:
    layout = generate_synthetic(synth)
    clips = dispatch(layout, geometry.clip_nm, geometry.stride_nm, geometry.core_nm, geometry.min_margin_nm)
    label_clips(layout, clips)
    tensors = extract_features([(layout, c) for c in clips], features, threads)
    return BenchInstance(layout, clips, build_bank([c.id for c in clips], tensors, features))


def _timed(fn: Callable[[], RunMetrics]) -> RunMetrics:
    start = time.perf_counter()
    metrics = fn()
    metrics.wall_time_ms = int(round((time.perf_counter() - start) * 1000))
    return metrics


def run_benchmark(cfg: BenchConfig, threads: int = 1) -> pd.DataFrame:
    """Paired-seed comparison: every method sees the same layout for a given seed."""
    rows: List[RunMetrics] = []
    for seed in cfg.seeds:
        logger.info(f"--- Seed {seed} ---")
        inst = prepare_instance(replace(cfg.synth, seed=seed), cfg.geometry, cfg.features, threads)
        train_cfg = replace(cfg.train, seed=seed)
        sampler_cfg = replace(cfg.sampler, seed=seed)
        ours_litho: Optional[int] = None
        for method in cfg.methods:
            oracle = inst.oracle()
            if method == "ours":
                m = _timed(lambda: run_ours(inst.bank, oracle, train_cfg, sampler_cfg)[0])
                ours_litho = m.litho_clips
            elif method == "random":
                # matched budget: what the sampler spent, else the sampler's initial set
                budget = ours_litho if ours_litho is not None else sampler_cfg.initial_size
                budget = min(max(budget, 1), len(inst.bank))
                m = _timed(lambda: run_random_baseline(inst.bank, oracle, budget, train_cfg, sampler_cfg))
            elif method == "greedy":
                m = _timed(lambda: run_greedy_baseline(inst.bank, oracle, train_cfg, sampler_cfg))
            else:
                pairs = [(inst.layout, c) for c in inst.clips]
                m = _timed(lambda: run_exact_match_baseline(pairs, oracle, cfg.geometry.pixel_nm, seed))
            logger.info(f"{method:<12} seed={seed} accuracy={m.accuracy:.4f} "
                        f"hits={m.hits}/{m.total_hotspots} extras={m.extras} litho={m.litho_clips}")
            rows.append(m)
    return results_frame(rows, with_time=True)


def learning_curve(bank: ClipBank, oracle: LithoOracle, train_cfg: TrainConfig,
                   cfg: SamplerConfig) -> pd.DataFrame:
    """(samples_labeled, accuracy) after every sampling iteration, judged on ground truth."""
    points: List[Dict[str, float]] = []
    all_ids = [int(i) for i in bank.ids]
    total = oracle.total_hotspots

    def snapshot(iteration: int, model: MlpModel, labeled: Dict[int, Label]) -> None:
        rest = [i for i in all_ids if i not in labeled]
        found = sum(l is Label.HOTSPOT for l in labeled.values())
        if rest:
            p = np.atleast_1d(predict_proba(model, bank.inputs[bank.rows(rest)]))
            found += sum(1 for i, pi in zip(rest, p)
                         if pi >= cfg.threshold and oracle.ground_truth(i) is Label.HOTSPOT)
        points.append({
            "iteration": iteration,
            "samples_labeled": len(labeled),
            "accuracy": found / total if total else 1.0,
        })

    batch_active_sampling(bank, oracle, train_cfg, cfg, on_iteration=snapshot)
    return pd.DataFrame(points, columns=["iteration", "samples_labeled", "accuracy"])


sweep_schema = pa.DataFrameSchema(
    {
        "seed": pa.Column(int),
        "clip_nm": pa.Column(int, pa.Check.gt(0)),
        "clip_over_isolation": pa.Column(float, pa.Check.gt(0.0)),
        "hotspots": pa.Column(int, pa.Check.ge(0)),
        "misses": pa.Column(int, pa.Check.ge(0)),
        "extras": pa.Column(int, pa.Check.ge(0)),
        "accuracy": pa.Column(float, pa.Check.in_range(0.0, 1.0)),
        "litho_clips": pa.Column(int, pa.Check.ge(0)),
    },
    strict=True,
    coerce=True,
)


def clip_size_sweep(cfg: BenchConfig, system: Optional[LithoSystem] = None) -> pd.DataFrame:
    """Exact-match misses as the matching window grows around a fixed core.

    Cores come from the normal dispatch; only the window used for the bitmap
    comparison changes. Labels never depend on the window.
    """
    system = system or LithoSystem(wavelength_nm=13.5, numerical_aperture=0.35)
    distance = isolation_distance(system)
    core = cfg.synth.core_nm
    for size in cfg.sweep_clip_nm:
        if size < core or (size - core) % 2 or size % cfg.geometry.pixel_nm:
            raise ConfigError(
                f"sweep clip {size} nm must center core {core} nm on the {cfg.geometry.pixel_nm} nm pixel grid",
                "bench", "clip_size_sweep")
    rows: List[Dict[str, float]] = []
    for seed in cfg.seeds:
        layout = generate_context_layout(replace(cfg.synth, seed=seed))
        g = cfg.geometry
        cores = label_clips(layout, dispatch(layout, g.clip_nm, g.stride_nm, g.core_nm, g.min_margin_nm))
        for size in sorted(cfg.sweep_clip_nm):
            margin = (size - core) // 2
            clips = [Clip(c.id, c.core.expand(margin), c.core, c.label) for c in cores]
            oracle = LithoOracle.from_clips(clips)
            metrics = run_exact_match_baseline([(layout, c) for c in clips], oracle, g.pixel_nm, seed)
            misses = metrics.total_hotspots - metrics.hits
            logger.info(f"Sweep seed={seed} clip={size} nm ({size / distance:.2f} D): "
                        f"misses={misses}/{metrics.total_hotspots} extras={metrics.extras}")
            rows.append({
                "seed": seed,
                "clip_nm": size,
                "clip_over_isolation": size / distance,
                "hotspots": metrics.total_hotspots,
                "misses": misses,
                "extras": metrics.extras,
                "accuracy": metrics.accuracy,
                "litho_clips": metrics.litho_clips,
            })
    return sweep_schema.validate(pd.DataFrame(rows, columns=list(sweep_schema.columns)))


def summarize_results(df: pd.DataFrame, reference: str = "ours") -> pd.DataFrame:
    """Per-method means plus accuracy and litho ratios against the reference method."""
    metrics = [c for c in ("accuracy", "hits", "extras", "litho_clips", "wall_time_ms") if c in df.columns]
    summary = df.groupby("method", sort=False)[metrics].mean()
    summary["runs"] = df.groupby("method", sort=False).size()
    if reference in summary.index:
        ref = summary.loc[reference]
        summary["accuracy_ratio"] = summary["accuracy"] / ref["accuracy"] if ref["accuracy"] else np.nan
        summary["litho_ratio"] = summary["litho_clips"] / ref["litho_clips"] if ref["litho_clips"] else np.nan
    return summary.reset_index()


def paired_wins(df: pd.DataFrame, a: str, b: str, metric: str = "accuracy") -> List[int]:
    """Seeds on which method a strictly beats method b."""
    wide = df.pivot_table(index="seed", columns="method", values=metric, aggfunc="first")
    if a not in wide.columns or b not in wide.columns:
        return []
    return [int(s) for s in wide.index[wide[a] > wide[b]]]
