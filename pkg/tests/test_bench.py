import time
import warnings

import numpy as np
import pandas as pd
import pytest

from conftest import make_bank
from litho_sampler import bench as bench_module
from litho_sampler.bench import (
    EDGE_CLEARANCE,
    LithoOracle,
    bitmap_hash,
    clip_size_sweep,
    evaluate,
    generate_context_layout,
    generate_synthetic,
    learning_curve,
    paired_wins,
    prepare_instance,
    results_frame,
    run_benchmark,
    run_exact_match_baseline,
    run_greedy_baseline,
    run_random_baseline,
    summarize_results,
)
from litho_sampler.config import BenchConfig, GeometryConfig, SamplerConfig, SynthConfig
from litho_sampler.errors import ConfigError, DomainError, GenerationError, OracleError
from litho_sampler.layout import dispatch, label_clips, precut_pairs
from litho_sampler.learner import MlpModel
from litho_sampler.models import Label, RunMetrics
from litho_sampler.repository import layout_to_file

HOT, NON = Label.HOTSPOT, Label.NON_HOTSPOT


def _labeled_clips(layout):
    return label_clips(layout, dispatch(layout))


def test_synthetic_without_motifs_has_no_hotspots():
    layout = generate_synthetic(SynthConfig(width_nm=2300, height_nm=2300, motif_count=0, seed=1))
    assert layout.defects == []
    assert all(c.label is NON for c in _labeled_clips(layout))


@pytest.mark.parametrize("kind", ["min_space_pair", "pinch"])
def test_synthetic_motifs_become_hotspots(kind):
    cfg = SynthConfig(width_nm=2300, height_nm=2300, motif_count=7, motif_kind=kind, seed=4)
    layout = generate_synthetic(cfg)
    clips = _labeled_clips(layout)
    assert len(layout.defects) == 7
    assert sum(c.label is HOT for c in clips) == 7


def test_synthetic_shapes_stay_inside_tiles():
    layout = generate_synthetic(SynthConfig(width_nm=2300, height_nm=2300, motif_count=10, seed=2))
    for r in layout.rects:
        tx, ty = r.x0 // 230, r.y0 // 230
        assert r.x0 - tx * 230 >= EDGE_CLEARANCE and r.y0 - ty * 230 >= EDGE_CLEARANCE
        assert (tx + 1) * 230 - r.x1 >= EDGE_CLEARANCE and (ty + 1) * 230 - r.y1 >= EDGE_CLEARANCE


def test_synthetic_replays_from_seed():
    cfg = SynthConfig(width_nm=1380, height_nm=1380, motif_count=3, seed=9)
    a = layout_to_file(generate_synthetic(cfg)).model_dump_json()
    b = layout_to_file(generate_synthetic(cfg)).model_dump_json()
    assert a == b


def test_synthetic_too_many_motifs():
    with pytest.raises(GenerationError):
        generate_synthetic(SynthConfig(width_nm=460, height_nm=460, motif_count=5))


def test_oracle_charges_each_clip_once():
    oracle = LithoOracle({0: HOT, 1: NON, 2: NON})
    assert oracle.count == 0
    assert oracle.query([1, 1, 0]) == [NON, NON, HOT]
    assert oracle.label(1) is NON
    assert oracle.count == 2
    assert oracle.ground_truth(2) is NON
    assert oracle.count == 2
    assert oracle.total_hotspots == 1
    with pytest.raises(OracleError):
        oracle.label(7)
    with pytest.raises(KeyError):
        oracle.ground_truth(7)


def test_oracle_needs_labels():
    clips = dispatch(generate_synthetic(SynthConfig(width_nm=460, height_nm=460, motif_count=0)))
    with pytest.raises(OracleError):
        LithoOracle.from_clips(clips)


def test_run_metrics_accuracy():
    assert RunMetrics("ours", 1, 0, 0, 0, 0).accuracy == 1.0
    assert RunMetrics("ours", 1, 3, 4, 1, 10).accuracy == 0.75
    with pytest.raises(DomainError):
        RunMetrics("ours", 1, 5, 4, 0, 10)


def _silent_model(dim, hot_bias):
    m = MlpModel.zeros([dim, 3, 2])
    m.biases[-1] = np.array([hot_bias, -hot_bias])
    return m


def test_evaluate_counts_labeled_hotspots():
    bank = make_bank(np.ones((5, 4)))
    oracle = LithoOracle({0: HOT, 1: NON, 2: HOT, 3: NON, 4: NON})
    labeled = dict(zip([0, 1], oracle.query([0, 1])))
    quiet = evaluate(_silent_model(4, -10.0), bank, [2, 3, 4], labeled, oracle)
    assert (quiet.hits, quiet.extras, quiet.litho_clips) == (1, 0, 2)
    assert quiet.accuracy == 0.5

    loud = evaluate(_silent_model(4, 10.0), bank, [2, 3, 4], labeled, oracle)
    assert (loud.hits, loud.extras, loud.litho_clips) == (2, 2, 5)


def test_greedy_baseline_extremes(small_train):
    truth = {i: NON for i in range(8)}
    truth[5] = HOT
    bank = make_bank(np.ones((8, 4)), np.eye(8)[:, :3] + 0.1)
    cfg = SamplerConfig(n_query=4, k=2, pool_cap=None, l0_size=2)

    quiet = run_greedy_baseline(bank, LithoOracle(truth), small_train, cfg, model=_silent_model(4, -10.0))
    assert quiet.litho_clips == 2

    loud = run_greedy_baseline(bank, LithoOracle(truth), small_train, cfg, model=_silent_model(4, 10.0))
    assert loud.litho_clips == 8
    assert loud.accuracy == 1.0


def test_random_baseline_budget(small_train):
    bank = make_bank(np.ones((6, 4)))
    oracle = LithoOracle({i: NON for i in range(6)})
    cfg = SamplerConfig(n_query=4, k=2, pool_cap=None)
    with pytest.raises(DomainError):
        run_random_baseline(bank, oracle, 0, small_train, cfg)
    m = run_random_baseline(bank, oracle, 3, small_train, cfg)
    assert m.litho_clips >= 3
    assert m.accuracy == 1.0


def test_bitmap_hash_depends_on_shape():
    assert bitmap_hash(np.zeros((2, 2))) == bitmap_hash(np.zeros((2, 2), dtype=np.uint8))
    assert bitmap_hash(np.zeros((2, 2))) != bitmap_hash(np.zeros((1, 4)))


def test_exact_match_identical_and_distinct_clips():
    same = precut_pairs(690, [(i, "hotspot", [[0, 0, 100, 100]]) for i in range(5)])
    m = run_exact_match_baseline(same, LithoOracle({i: HOT for i in range(5)}))
    assert (m.litho_clips, m.hits, m.extras) == (1, 5, 0)

    distinct = precut_pairs(690, [(i, "non_hotspot", [[10 * i, 0, 10 * i + 10, 10]]) for i in range(5)])
    m = run_exact_match_baseline(distinct, LithoOracle({i: NON for i in range(5)}))
    assert m.litho_clips == 5 and m.accuracy == 1.0


def test_exact_match_on_duplicated_layout():
    cfg = SynthConfig(width_nm=230 * 72, height_nm=230 * 4, duplication_factor=4, seed=3)
    layout = generate_synthetic(cfg)
    clips = _labeled_clips(layout)
    m = run_exact_match_baseline([(layout, c) for c in clips], LithoOracle.from_clips(clips))
    assert m.accuracy == 1.0
    assert m.extras == 0
    assert m.litho_clips <= 0.3 * len(clips)


def test_results_frame_and_summary():
    metrics = [
        RunMetrics("ours", 1, 9, 10, 2, 40, 5),
        RunMetrics("random", 1, 6, 10, 1, 40, 3),
        RunMetrics("ours", 2, 10, 10, 0, 50, 5),
        RunMetrics("random", 2, 10, 10, 0, 50, 3),
    ]
    df = results_frame(metrics)
    assert list(df.columns) == ["method", "seed", "accuracy", "hits", "extras", "litho_clips", "wall_time_ms"]
    assert "wall_time_ms" not in results_frame(metrics, with_time=False).columns

    summary = summarize_results(df).set_index("method")
    assert summary.loc["ours", "accuracy"] == pytest.approx(0.95)
    assert summary.loc["random", "accuracy_ratio"] == pytest.approx(0.8 / 0.95)
    assert summary.loc["random", "litho_ratio"] == pytest.approx(1.0)
    assert summary.loc["ours", "runs"] == 2
    assert paired_wins(df, "ours", "random") == [1]
    assert paired_wins(df, "ours", "greedy") == []


def _tiny_bench(small_features, small_train, small_sampler, methods=None):
    return BenchConfig(
        seeds=[1, 2],
        methods=methods or ["ours", "random", "greedy", "exact_match"],
        synth=SynthConfig(width_nm=1380, height_nm=1380, motif_count=4),
        geometry=GeometryConfig(),
        features=small_features,
        train=small_train,
        sampler=small_sampler,
    )


def test_run_benchmark_pairs_methods_by_seed(small_features, small_train, small_sampler):
    df = run_benchmark(_tiny_bench(small_features, small_train, small_sampler))
    assert len(df) == 8
    assert df["method"].tolist() == ["ours", "random", "greedy", "exact_match"] * 2
    assert df["seed"].tolist() == [1] * 4 + [2] * 4
    assert df["accuracy"].between(0.0, 1.0).all()
    ours = df[df["method"] == "ours"].set_index("seed")
    rand = df[df["method"] == "random"].set_index("seed")
    # the random baseline gets the sampler's litho budget up front
    assert (rand["litho_clips"] >= ours["litho_clips"]).all()


def test_learning_curve_grows(small_features, small_train, small_sampler):
    inst = prepare_instance(SynthConfig(width_nm=1380, height_nm=1380, motif_count=4, seed=3),
                            GeometryConfig(), small_features)
    curve = learning_curve(inst.bank, inst.oracle(), small_train, small_sampler)
    assert list(curve.columns) == ["iteration", "samples_labeled", "accuracy"]
    assert curve["iteration"].tolist() == list(range(len(curve)))
    assert curve["samples_labeled"].is_monotonic_increasing
    assert isinstance(curve, pd.DataFrame)


def _context_cfg(seed=1, motifs=4):
    return SynthConfig(width_nm=2760, height_nm=1380, motif_count=motifs, seed=seed)


def test_context_layout_pairs_hotspots_with_twins():
    layout = generate_context_layout(_context_cfg())
    clips = _labeled_clips(layout)
    assert len(layout.defects) == 4
    assert sum(c.label is HOT for c in clips) == 4
    facing = [r for r in layout.rects if r.width == 160 and r.height == 40 and r.x0 % 230 == 10]
    assert len(facing) == 4


def test_context_layout_rejects_too_many_pairs():
    with pytest.raises(GenerationError):
        generate_context_layout(SynthConfig(width_nm=460, height_nm=460, motif_count=2))


def test_clip_size_sweep_needs_context_beyond_the_core():
    cfg = BenchConfig(seeds=[1], synth=_context_cfg(), sweep_clip_nm=[690, 230, 290, 250])
    df = clip_size_sweep(cfg)
    assert df["clip_nm"].tolist() == [230, 250, 290, 690]
    assert (df["hotspots"] == 4).all()
    by_size = df.set_index("clip_nm")
    for size in (230, 250):
        assert by_size.loc[size, "misses"] + by_size.loc[size, "extras"] == 4
    for size in (290, 690):
        assert by_size.loc[size, "misses"] == 0
        assert by_size.loc[size, "extras"] == 0
        assert by_size.loc[size, "accuracy"] == 1.0
    assert by_size.loc[690, "clip_over_isolation"] == pytest.approx(690 / 233.357, rel=1e-4)
    assert df["litho_clips"].is_monotonic_increasing


def test_clip_size_sweep_rejects_off_grid_sizes():
    with pytest.raises(ConfigError):
        clip_size_sweep(BenchConfig(seeds=[1], synth=_context_cfg(), sweep_clip_nm=[235]))
    with pytest.raises(ConfigError):
        clip_size_sweep(BenchConfig(seeds=[1], synth=_context_cfg(), sweep_clip_nm=[210]))


@pytest.mark.slow
def test_full_benchmark_ranks_methods():
    start = time.perf_counter()
    df = run_benchmark(BenchConfig())
    elapsed = time.perf_counter() - start
    summary = summarize_results(df).set_index("method")
    assert summary.loc["ours", "accuracy"] >= 0.9
    assert summary.loc["ours", "litho_clips"] < 70 * 70
    assert summary.loc["ours", "accuracy"] >= summary.loc["random", "accuracy"] - 0.02
    assert summary.loc["ours", "accuracy"] > summary.loc["greedy", "accuracy"]
    # ten seeds, four methods, 4900 clips each
    assert elapsed < 600.0


def test_results_tables_use_the_pandas_schema_api():
    assert bench_module.pa.__name__ == "pandera.pandas"
    with warnings.catch_warnings():
        warnings.simplefilter("error", FutureWarning)
        df = results_frame([RunMetrics("ours", 1, 1, 1, 0, 3, 5)])
    assert df["accuracy"].tolist() == [1.0]
