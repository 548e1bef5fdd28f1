import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pdcr.errors import BoundsError, ShapeError
from pdcr.imaging import (
    Block,
    Image,
    Mask,
    PatchGrid,
    Rect,
    apply_intervention,
    dsc,
    load_image,
    load_mask,
    patches_overlapping,
    roi_dsc,
    save_image,
    save_mask,
)

from conftest import random_image

mask_arrays = arrays(np.bool_, (12, 16), elements=st.booleans())


# ---------------------------------------------------------------------------
# dsc
# ---------------------------------------------------------------------------

def test_dsc_identity():
    m = Mask(np.eye(8, dtype=bool))
    assert dsc(m, m) == 1.0


def test_dsc_disjoint_is_zero():
    a = np.zeros((4, 4), dtype=bool)
    b = np.zeros((4, 4), dtype=bool)
    a[0, :] = True
    b[2, :] = True
    assert dsc(Mask(a), Mask(b)) == 0.0


def test_dsc_direct_formula():
    # |a| = 4, |b| = 4, |a n b| = 2 -> 2*2 / (4+4)
    a = np.zeros((4, 4), dtype=bool)
    b = np.zeros((4, 4), dtype=bool)
    a[0, 0:4] = True
    b[0, 2:4] = True
    b[1, 0:2] = True
    assert dsc(Mask(a), Mask(b)) == 0.5


def test_dsc_both_empty_is_one():
    e = Mask(np.zeros((5, 5), dtype=bool))
    assert dsc(e, e) == 1.0


def test_dsc_shape_mismatch():
    with pytest.raises(ShapeError):
        dsc(Mask(np.zeros((4, 4), dtype=bool)), Mask(np.zeros((4, 5), dtype=bool)))


@given(mask_arrays, mask_arrays)
@settings(max_examples=100)
def test_dsc_symmetric_and_bounded(a, b):
    ma, mb = Mask(a), Mask(b)
    v = dsc(ma, mb)
    assert v == dsc(mb, ma)
    assert 0.0 <= v <= 1.0


# ---------------------------------------------------------------------------
# roi_dsc
# ---------------------------------------------------------------------------

def test_roi_dsc_identity():
    m = Mask(np.random.default_rng(0).random((64, 64)) < 0.4)
    assert roi_dsc(m, m, Rect(16, 16, 32, 32)) == 1.0


def test_roi_dsc_complement_inside_roi():
    ref = np.zeros((64, 64), dtype=bool)
    ref[16:32, 16:48] = True  # both classes present inside the roi
    pred = ref.copy()
    pred[16:48, 16:48] = ~ref[16:48, 16:48]
    assert roi_dsc(Mask(pred), Mask(ref), Rect(16, 16, 32, 32)) == 0.0


def test_roi_dsc_partial_overlap_value():
    # reference all-1 in a 32x32 roi; prediction covers 512 of them, no
    # false positives inside: 2*512 / (512 + 1024)
    ref = np.zeros((64, 64), dtype=bool)
    ref[0:32, 0:32] = True
    pred = np.zeros((64, 64), dtype=bool)
    pred[0:16, 0:32] = True
    assert roi_dsc(Mask(pred), Mask(ref), Rect(0, 0, 32, 32)) == pytest.approx(
        2 * 512 / (512 + 1024)
    )


def test_roi_dsc_out_of_bounds():
    m = Mask(np.zeros((32, 32), dtype=bool))
    with pytest.raises(BoundsError):
        roi_dsc(m, m, Rect(8, 8, 32, 32))


def test_roi_dsc_ignores_outside():
    rng = np.random.default_rng(3)
    ref = Mask(rng.random((64, 64)) < 0.5)
    pred_a = ref.data.copy()
    pred_b = ref.data.copy()
    pred_b[0:8, 0:8] = ~pred_b[0:8, 0:8]  # differs only outside the roi
    roi = Rect(32, 32, 16, 16)
    assert roi_dsc(Mask(pred_a), ref, roi) == roi_dsc(Mask(pred_b), ref, roi)


# ---------------------------------------------------------------------------
# grid / intervention
# ---------------------------------------------------------------------------

def test_grid_patch_count_256():
    grid = PatchGrid.for_image(256, 256, 8)
    assert grid.k == 1024


def test_grid_rect_bijection():
    grid = PatchGrid.for_image(40, 24, 8)
    rects = [grid.rect(i) for i in range(grid.k)]
    assert len({r.as_tuple() for r in rects}) == grid.k
    for r in rects:
        assert r.w == r.h == 8
        assert r.x % 8 == 0 and r.y % 8 == 0


def test_grid_requires_divisibility():
    with pytest.raises(ShapeError):
        PatchGrid.for_image(100, 64, 8)


def test_apply_intervention_identity():
    img = random_image(1)
    grid = PatchGrid.for_image(img.width, img.height, 8)
    r = grid.rect(5)
    own = Block(img.data[r.y : r.y + 8, r.x : r.x + 8, :].copy())
    out = apply_intervention(img, grid, 5, own)
    assert np.array_equal(out.data, img.data)


def test_apply_intervention_locality_and_purity():
    img = random_image(2)
    before = img.data.copy()
    grid = PatchGrid.for_image(img.width, img.height, 8)
    block = Block(np.full((8, 8, 1), 200, dtype=np.uint8))
    out = apply_intervention(img, grid, 9, block)
    assert np.array_equal(img.data, before)  # input untouched
    diff = out.data != img.data
    assert diff.sum() <= 8 * 8 * 1
    r = grid.rect(9)
    outside = np.ones_like(diff)
    outside[r.y : r.y + 8, r.x : r.x + 8, :] = False
    assert not diff[outside].any()


def test_apply_intervention_idempotent():
    img = random_image(3)
    grid = PatchGrid.for_image(img.width, img.height, 8)
    block = Block(np.full((8, 8, 1), 7, dtype=np.uint8))
    once = apply_intervention(img, grid, 14, block)
    twice = apply_intervention(once, grid, 14, block)
    assert np.array_equal(once.data, twice.data)


def test_apply_intervention_rejects_mismatched_block():
    img = random_image(4)
    grid = PatchGrid.for_image(img.width, img.height, 8)
    with pytest.raises(ShapeError):
        apply_intervention(img, grid, 0, Block(np.zeros((4, 4, 1), dtype=np.uint8)))
    with pytest.raises(BoundsError):
        apply_intervention(img, grid, grid.k, Block(np.zeros((8, 8, 1), dtype=np.uint8)))


# ---------------------------------------------------------------------------
# patches_overlapping
# ---------------------------------------------------------------------------

def brute_force_overlap(grid, roi):
    return frozenset(i for i in range(grid.k) if grid.rect(i).intersects(roi))


def test_overlap_single_aligned_patch():
    grid = PatchGrid.for_image(64, 64, 8)
    assert patches_overlapping(grid, Rect(16, 24, 8, 8)) == {3 * grid.cols + 2}


def test_overlap_aligned_32_roi():
    grid = PatchGrid.for_image(64, 64, 8)
    assert len(patches_overlapping(grid, Rect(8, 8, 32, 32))) == 16


def test_overlap_offset_roi_is_25():
    # 32x32 roi shifted 4px off the grid in both axes spans a 5x5 patch
    # footprint; the brute-force scan is the oracle.
    grid = PatchGrid.for_image(64, 64, 8)
    roi = Rect(4, 4, 32, 32)
    got = patches_overlapping(grid, roi)
    assert got == brute_force_overlap(grid, roi)
    assert len(got) == 25


@pytest.mark.parametrize("seed", range(20))
def test_overlap_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    grid = PatchGrid.for_image(80, 48, 8)
    w = int(rng.integers(1, 41))
    h = int(rng.integers(1, 41))
    roi = Rect(int(rng.integers(0, 80 - w + 1)), int(rng.integers(0, 48 - h + 1)), w, h)
    assert patches_overlapping(grid, roi) == brute_force_overlap(grid, roi)


# ---------------------------------------------------------------------------
# PNG round trips
# ---------------------------------------------------------------------------

def test_image_png_roundtrip_gray(tmp_path):
    img = random_image(11, 32, 24, channels=1)
    save_image(img, tmp_path / "g.png")
    again = load_image(tmp_path / "g.png")
    assert np.array_equal(again.data, img.data)


def test_image_png_roundtrip_rgb(tmp_path):
    img = random_image(12, 32, 24, channels=3)
    save_image(img, tmp_path / "c.png")
    again = load_image(tmp_path / "c.png")
    assert np.array_equal(again.data, img.data)


def test_mask_png_threshold(tmp_path):
    mask = Mask(np.random.default_rng(5).random((16, 16)) < 0.5)
    save_mask(mask, tmp_path / "m.png")
    again = load_mask(tmp_path / "m.png")
    assert np.array_equal(again.data, mask.data)
    # loader thresholds gray values at 128
    from PIL import Image as PILImage

    gray = np.full((4, 4), 127, dtype=np.uint8)
    gray[0, 0] = 128
    PILImage.fromarray(gray, mode="L").save(tmp_path / "gray.png")
    loaded = load_mask(tmp_path / "gray.png")
    assert loaded.data[0, 0] and loaded.data.sum() == 1


def test_type_invariants():
    with pytest.raises(ShapeError):
        Image(np.zeros((4, 4, 2), dtype=np.uint8))
    with pytest.raises(ShapeError):
        Mask(np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(BoundsError):
        Rect(0, 0, 0, 4)
    img = random_image(0)
    with pytest.raises(ValueError):
        img.data[0, 0, 0] = 1  # frozen buffer
