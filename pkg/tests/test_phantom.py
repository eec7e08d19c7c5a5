"""Phantom and coil-map invariants."""

import numpy as np
import pytest

from mpqmri.phantom import (
    B_VALUE,
    FREQ_CAP_HZ,
    TISSUE_TABLE,
    WM,
    make_coil_maps,
    make_phantom,
)


def test_shapes_and_determinism():
    gt = make_phantom((64, 64, 8), seed=7)
    for name in ("a_map", "b_map", "t1_map", "t2_map", "t2s_map",
                 "phi0_map", "freq_map"):
        assert getattr(gt, name).shape == (64, 64, 8)
    gt2 = make_phantom((64, 64, 8), seed=7)
    assert np.array_equal(gt.t1_map, gt2.t1_map)
    assert np.array_equal(gt.freq_map, gt2.freq_map)
    assert np.array_equal(gt.region_labels, gt2.region_labels)


def test_seed_changes_output():
    a = make_phantom((32, 32, 8), seed=1)
    b = make_phantom((32, 32, 8), seed=2)
    assert not np.array_equal(a.freq_map, b.freq_map)


def test_wm_voxels_match_tissue_table():
    gt = make_phantom((64, 64, 8), seed=7)
    sel = gt.region_labels == WM
    assert sel.any()
    t1, t2, t2s, a = TISSUE_TABLE[WM]
    assert np.all(gt.t1_map[sel] == t1)
    assert np.all(gt.t2_map[sel] == t2)
    assert np.all(gt.t2s_map[sel] == t2s)
    assert np.all(gt.a_map[sel] == a)
    assert np.all(gt.b_map[sel] == B_VALUE)


def test_background_is_zero_and_mask_consistent():
    gt = make_phantom((64, 64, 8), seed=7)
    out = ~gt.brain_mask
    for name in ("a_map", "b_map", "t1_map", "t2_map", "t2s_map",
                 "phi0_map", "freq_map"):
        assert np.all(getattr(gt, name)[out] == 0)


def test_relaxation_ordering_inside_mask():
    gt = make_phantom((64, 64, 8), seed=7)
    m = gt.brain_mask
    assert np.all(gt.t1_map[m] > gt.t2_map[m])
    assert np.all(gt.t2_map[m] >= gt.t2s_map[m])
    assert np.all(gt.t2s_map[m] > 0)
    assert np.all((gt.b_map >= 0) & (gt.b_map <= 1))


def test_freq_cap():
    gt = make_phantom((32, 32, 8), seed=3, freq_max_hz=40.0)
    assert np.abs(gt.freq_map).max() <= FREQ_CAP_HZ + 1e-12
    with pytest.raises(ValueError):
        make_phantom((32, 32, 8), seed=3, freq_max_hz=41.0)


def test_shape_validation():
    with pytest.raises(ValueError):
        make_phantom((4, 64, 8), seed=0)
    with pytest.raises(ValueError):
        make_phantom((64, 64), seed=0)


def test_single_coil_is_identity():
    gt = make_phantom((32, 32, 8), seed=5)
    coils = make_coil_maps((32, 32, 8), 1, seed=0)
    inside = coils.maps[gt.brain_mask]
    assert np.allclose(inside, 1.0, atol=1e-6)


def test_coil_rss_normalized():
    gt = make_phantom((64, 64, 8), seed=7)
    coils = make_coil_maps((64, 64, 8), 8, seed=11)
    rss = np.sqrt((np.abs(coils.maps) ** 2).sum(-1))
    assert np.allclose(rss[gt.brain_mask], 1.0, atol=1e-6)


def test_coil_smoothness():
    coils = make_coil_maps((64, 64, 8), 8, seed=11).maps
    for ax in range(3):
        d = np.abs(np.diff(coils, axis=ax))
        assert d.max() < 0.15


def test_coil_count_validation():
    with pytest.raises(ValueError):
        make_coil_maps((32, 32, 8), 0, seed=0)
