import numpy as np
import pytest

from litho_sampler.errors import ConfigError, DomainError
from litho_sampler.layout import (
    RectIndex,
    dispatch,
    label_clip,
    label_clips,
    make_grid,
    precut_pairs,
    rasterize,
)
from litho_sampler.models import Clip, DefectMarker, Label, Layout, Rect


def _layout(w, h, rects=(), defects=()):
    return Layout(rects=list(rects), bbox=Rect(0, 0, w, h), defects=list(defects))


def test_dispatch_small_layout():
    clips = dispatch(_layout(690, 690))
    assert [c.id for c in clips] == list(range(9))
    assert clips[0].window == Rect(-230, -230, 460, 460)
    assert clips[0].core == Rect(0, 0, 230, 230)
    # row-major: id 1 is one stride to the right
    assert clips[1].core == Rect(230, 0, 460, 230)
    assert clips[3].core == Rect(0, 230, 230, 460)
    assert all(c.margin_nm == 230 for c in clips)


def test_dispatch_rounds_partial_tiles_up():
    clips = dispatch(_layout(700, 230))
    assert len(clips) == 4
    assert clips[-1].core == Rect(690, 0, 920, 230)


def test_cores_partition_random_layouts():
    rng = np.random.default_rng(7)
    for _ in range(50):
        w, h = (int(v) * 10 for v in rng.integers(1, 300, size=2))
        layout = _layout(w, h)
        clips = dispatch(layout)
        grid = make_grid(layout)
        padded = grid.padded_bbox()
        assert sum(c.core.area for c in clips) == padded.area
        assert padded.contains_rect(layout.bbox)

        cover = np.zeros((padded.height // 10, padded.width // 10), dtype=np.int32)
        for c in clips:
            assert c.window.contains_rect(c.core)
            cover[c.core.y0 // 10:c.core.y1 // 10, c.core.x0 // 10:c.core.x1 // 10] += 1
        assert np.all(cover == 1)

        for x, y in rng.integers(0, [w, h], size=(20, 2)):
            owner = grid.tile_of(int(x), int(y))
            assert clips[owner].core.contains_point(int(x), int(y))


@pytest.mark.parametrize("kwargs", [
    dict(core_nm=200),
    dict(clip_nm=700),
    dict(clip_nm=460, min_margin_nm=230),
    dict(clip_nm=0),
])
def test_dispatch_rejects_bad_geometry(kwargs):
    with pytest.raises(ConfigError):
        dispatch(_layout(690, 690), **kwargs)


def test_label_clip_half_open_core():
    clips = dispatch(_layout(460, 230))
    low_edge = DefectMarker(0, 0)
    shared_edge = DefectMarker(230, 100)
    assert label_clip(clips[0], [low_edge]) is Label.HOTSPOT
    assert label_clip(clips[0], [shared_edge]) is Label.NON_HOTSPOT
    assert label_clip(clips[1], [shared_edge]) is Label.HOTSPOT


def test_label_clips_matches_brute_force():
    rng = np.random.default_rng(3)
    defects = [DefectMarker(int(x), int(y)) for x, y in rng.integers(0, 2300, size=(40, 2))]
    layout = _layout(2300, 2300, defects=defects)
    clips = label_clips(layout, dispatch(layout))
    for c in clips:
        assert c.label is label_clip(c, defects)
    assert sum(c.label is Label.HOTSPOT for c in clips) <= len(defects)


def test_rect_and_layout_validation():
    with pytest.raises(DomainError):
        Rect(0, 0, 0, 10)
    with pytest.raises(DomainError):
        _layout(100, 100, rects=[Rect(50, 50, 150, 60)])
    with pytest.raises(DomainError):
        _layout(100, 100, defects=[DefectMarker(100, 10)])


def test_rasterize_samples_pixel_centers():
    clip = Clip(0, window=Rect(0, 0, 40, 40), core=Rect(0, 0, 40, 40))
    layout = _layout(40, 40, rects=[Rect(0, 0, 10, 10)])
    grid = rasterize(layout, clip, 10)
    assert grid.dtype == np.uint8
    assert grid.sum() == 1 and grid[0, 0] == 1

    # a rect ending exactly at a pixel center misses it, one past covers it
    assert rasterize(_layout(40, 40, rects=[Rect(0, 0, 5, 5)]), clip, 10).sum() == 0
    assert rasterize(_layout(40, 40, rects=[Rect(0, 0, 6, 6)]), clip, 10).sum() == 1

    # rows follow y
    tall = rasterize(_layout(40, 40, rects=[Rect(20, 0, 30, 40)]), clip, 10)
    assert tall[:, 2].tolist() == [1, 1, 1, 1]
    assert tall.sum() == 4


def test_rasterize_rejects_non_dividing_pixel():
    clip = Clip(0, window=Rect(0, 0, 40, 40), core=Rect(0, 0, 40, 40))
    with pytest.raises(ConfigError):
        rasterize(_layout(40, 40), clip, 15)


def test_rect_index_matches_linear_scan():
    rng = np.random.default_rng(11)
    rects = []
    for x, y, w, h in rng.integers(0, 200, size=(200, 4)):
        x0, y0 = int(x) * 10, int(y) * 10
        rects.append(Rect(x0, y0, x0 + 10 + int(w), y0 + 10 + int(h)))
    layout = Layout(rects=rects, bbox=Rect(0, 0, 2300, 2300))
    index = RectIndex.for_layout(layout)
    clips = dispatch(_layout(2300, 2300))
    for c in clips[::7]:
        expected = [r for r in rects if r.intersects(c.window)]
        assert sorted(index.query(c.window), key=Rect.as_list) == sorted(expected, key=Rect.as_list)
        assert np.array_equal(rasterize(layout, c, 10, index), rasterize(layout, c, 10))


def test_precut_pairs_default_core_is_window():
    pairs = precut_pairs(690, [(4, "hotspot", [[0, 0, 10, 10]]), (9, None, [])])
    (layout, clip), (_, second) = pairs
    assert clip.id == 4 and clip.label is Label.HOTSPOT
    assert clip.core == clip.window == Rect(0, 0, 690, 690)
    assert second.label is None
    assert layout.rects == [Rect(0, 0, 10, 10)]

    _, centered = precut_pairs(690, [(0, None, [])], core_nm=230)[0]
    assert centered.core == Rect(230, 230, 460, 460)


def test_precut_pairs_rejects_off_window_rect():
    with pytest.raises(DomainError) as exc:
        precut_pairs(690, [(3, None, [[680, 0, 700, 10]])])
    assert exc.value.ids == [3]
