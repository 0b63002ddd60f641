import json

import numpy as np
import pandas as pd
import pytest

from litho_sampler.config import TrainConfig
from litho_sampler.errors import ArtifactIOError, ConfigError
from litho_sampler.features import FeatureTensor
from litho_sampler.learner import init_model
from litho_sampler.models import DefectKind, DefectMarker, Label, Layout, Rect
from litho_sampler.layout import dispatch, label_clips
from litho_sampler.repository import (
    ArtifactRepository,
    atomic_write,
    decode_model,
    encode_features,
    encode_model,
)
from litho_sampler.schemas import SelectionRecord


@pytest.fixture
def repo(tmp_path):
    return ArtifactRepository(tmp_path)


def _record(i):
    return SelectionRecord(iteration=i, selected_ids=[i, i + 1], f_relaxed=0.5, f_rounded=1.0,
                           lambda_max=2.0, gap_bound=3.0, litho_total=2 * i)


def test_layout_file(repo):
    layout = Layout(rects=[Rect(0, 0, 50, 20)], bbox=Rect(0, 0, 460, 460),
                    defects=[DefectMarker(10, 10, DefectKind.BRIDGE)])
    path = repo.write_layout(layout)
    loaded = ArtifactRepository.read_layout(path)
    assert loaded.rects == layout.rects
    assert loaded.defects == layout.defects
    assert json.loads(path.read_text())["bbox"] == [0, 0, 460, 460]


def test_clips_file_keeps_labels(repo):
    layout = Layout(rects=[], bbox=Rect(0, 0, 460, 230), defects=[DefectMarker(300, 5)])
    clips = label_clips(layout, dispatch(layout))
    path = repo.write_clips(clips, 690, 230, 230)
    header, loaded = ArtifactRepository.read_clips(path)
    assert header.clip_nm == 690
    assert [c.label for c in loaded] == [Label.NON_HOTSPOT, Label.HOTSPOT]
    assert loaded[1].window == clips[1].window


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ArtifactIOError) as exc:
        ArtifactRepository.read_layout(tmp_path / "nope.json")
    assert exc.value.kind == "io"
    bad = tmp_path / "bad.json"
    bad.write_text('{"bbox": [0, 0, 10]}')
    with pytest.raises(ConfigError):
        ArtifactRepository.read_layout(bad)


def test_feature_store(repo, rng):
    tensors = [FeatureTensor(rng.normal(size=(3, 3, 4))) for _ in range(3)]
    path = repo.write_features([5, 2, 9], tensors)
    raw = path.read_bytes()
    assert raw[:4] == b"FTNS"
    assert np.frombuffer(raw, dtype="<u4", count=4, offset=4).tolist() == [3, 3, 3, 4]
    assert len(raw) == 20 + 3 * 36 * 4

    ids, loaded = ArtifactRepository.read_features(path)
    assert ids == [2, 5, 9]
    by_id = dict(zip([5, 2, 9], tensors))
    for i, t in zip(ids, loaded):
        assert np.allclose(t.data, by_id[i].data, atol=1e-6)


def test_feature_sidecar_offsets():
    tensors = [FeatureTensor(np.ones((2, 2, 2)) * v) for v in (1.0, 2.0)]
    _, sidecar = encode_features([7, 3], tensors)
    assert sidecar.offsets == {"3": 20, "7": 20 + 32}
    assert (sidecar.grid_h, sidecar.grid_w, sidecar.channels) == (2, 2, 2)


def test_model_checkpoint_is_deterministic(repo):
    m = init_model(TrainConfig(seed=4, hidden_dims=[5, 3]), 6)
    assert encode_model(m) == encode_model(init_model(TrainConfig(seed=4, hidden_dims=[5, 3]), 6))
    path = repo.write_model(m)
    loaded = ArtifactRepository.read_model(path)
    assert loaded.layer_dims == [6, 5, 3, 2]
    for a, b in zip(m.weights + m.biases, loaded.weights + loaded.biases):
        assert np.allclose(a, b, atol=1e-7)


def test_model_checkpoint_rejects_garbage():
    blob = encode_model(init_model(TrainConfig(seed=1, hidden_dims=[2]), 3))
    with pytest.raises(ConfigError):
        decode_model(blob + b"\x00")
    with pytest.raises(ConfigError):
        decode_model(b"NOPE" + blob[4:])


def test_atomic_write_keeps_old_file_on_failure(tmp_path):
    target = tmp_path / "results.csv"
    target.write_text("old")

    def boom(tmp):
        tmp.write_text("partial")
        raise OSError("disk full")

    with pytest.raises(ArtifactIOError):
        atomic_write(target, boom)
    assert target.read_text() == "old"
    assert [p.name for p in tmp_path.iterdir()] == ["results.csv"]


def test_selection_log_commits_on_success(repo, tmp_path):
    with repo.selection_log() as append:
        append(_record(1))
        append(_record(2))
        assert (tmp_path / "selection.jsonl.part").exists()
    records = ArtifactRepository.read_selection_log(tmp_path / "selection.jsonl")
    assert [r.iteration for r in records] == [1, 2]
    assert not (tmp_path / "selection.jsonl.part").exists()


def test_selection_log_discarded_on_failure(repo, tmp_path):
    with pytest.raises(RuntimeError):
        with repo.selection_log() as append:
            append(_record(1))
            raise RuntimeError("sampling failed")
    assert list(tmp_path.iterdir()) == []


def test_csv_round_trip(repo):
    df = pd.DataFrame({"method": ["ours"], "seed": [1], "accuracy": [0.5]})
    path = repo.write_csv(df, "results.csv")
    assert path.read_text() == "method,seed,accuracy\nours,1,0.5\n"
    assert ArtifactRepository.read_csv(path).equals(df)


@pytest.mark.parametrize("layout", [
    {"bbox": [0, 0, 100, 100], "defects": [{"x": 1, "y": 1, "kind": "scratch"}]},
    {"bbox": [0, 0, 100, 100], "rects": [[0, 0, 10]]},
    {"bbox": [0, 0, 100, 100], "rects": [[0, 0, 10, 10, 20]]},
    {"bbox": [0, 0, 100]},
    {"bbox": [0, 0, 100, 100], "rects": [[10, 10, 5, 20]]},
])
def test_malformed_layout_is_config_error(tmp_path, layout):
    path = tmp_path / "layout.json"
    path.write_text(json.dumps(layout))
    with pytest.raises(ConfigError):
        ArtifactRepository.read_layout(path)


def test_precut_clips_report_bad_rect_ids(tmp_path):
    path = tmp_path / "precut.json"
    path.write_text(json.dumps({"clip_nm": 100, "clips": [
        {"id": 0, "rects": [[0, 0, 10, 10]]},
        {"id": 7, "rects": [[50, 50, 40, 60]]},
    ]}))
    with pytest.raises(ConfigError) as exc:
        ArtifactRepository.read_precut(path)
    assert exc.value.ids == [7]


def test_precut_file_carries_clip_size(tmp_path):
    path = tmp_path / "precut.json"
    path.write_text(json.dumps({"clip_nm": 1200, "clips": [{"id": 3, "label": "hotspot", "rects": []}]}))
    data, pairs = ArtifactRepository.read_precut(path)
    assert data.clip_nm == 1200
    assert pairs[0][1].window == Rect(0, 0, 1200, 1200)
    assert pairs[0][1].label is Label.HOTSPOT


def test_staged_repository_commits_on_success(tmp_path):
    out = tmp_path / "run"
    with ArtifactRepository.staged(out) as staged:
        staged.write_json({"a": 1}, "run.json")
        assert not out.exists()
    assert json.loads((out / "run.json").read_text()) == {"a": 1}
    assert [p.name for p in tmp_path.iterdir()] == ["run"]


def test_staged_repository_discards_on_failure(tmp_path):
    out = tmp_path / "run"
    with pytest.raises(RuntimeError):
        with ArtifactRepository.staged(out) as staged:
            staged.write_json({"a": 1}, "run.json")
            raise RuntimeError("boom")
    assert list(tmp_path.iterdir()) == []
