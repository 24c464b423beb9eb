import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glaucoscreen import geometry as G
from glaucoscreen.phantoms import circle_mask, ellipse_mask

SHAPE = (192, 192)
CENTER = (95.5, 95.5)


def concentric(R=64, r=32, shape=SHAPE, center=CENTER):
    return circle_mask(shape, center, R), circle_mask(shape, center, r)


# ------------------------------------------------------------ components


def test_largest_component_cases():
    assert not G.largest_component(np.zeros((4, 4), bool)).any()
    m = np.zeros((6, 6), bool)
    m[0:2, 0:2] = True
    m[3:6, 3:6] = True
    np.testing.assert_array_equal(G.largest_component(m), np.pad(np.ones((3, 3), bool), ((3, 0), (3, 0))))
    # diagonal neighbours are separate blobs under 4-connectivity
    d = np.eye(3, dtype=bool)
    assert G.largest_component(d).sum() == 1


def test_largest_component_tie_takes_first_in_scan_order():
    m = np.zeros((5, 5), bool)
    m[0, 3:5] = True
    m[4, 0:2] = True
    kept = G.largest_component(m)
    assert kept[0, 3] and not kept[4, 0]


# ----------------------------------------------------------- shape stats


def test_circle_area_and_axis():
    s = G.shape_stats(circle_mask(SHAPE, CENTER, 64))
    assert s.area == pytest.approx(np.pi * 64**2, rel=0.01)
    assert s.major_axis_len == pytest.approx(128, rel=0.01)
    assert s.centroid == pytest.approx(CENTER, abs=1e-9)


@pytest.mark.parametrize("angle", [0.0, 30.0, 77.0])
def test_ellipse_major_axis(angle):
    s = G.shape_stats(ellipse_mask(SHAPE, CENTER, (80, 40), angle))
    assert s.major_axis_len == pytest.approx(160, rel=0.01)


def test_empty_mask_stats():
    with pytest.raises(G.EmptyMaskError):
        G.shape_stats(np.zeros((3, 3), bool))


# --------------------------------------------------------------- rays


@pytest.mark.parametrize("theta", [0, 17, 45, 90, 133, 180, 271, 359])
def test_boundary_distance_on_circle(theta):
    d = G.boundary_distance_at_angle(circle_mask(SHAPE, CENTER, 64), CENTER, theta)
    assert abs(d - 64) <= 0.5 + 1e-9


def test_angle_convention():
    # a blob straight above the centre is hit at 0 degrees, one to the right at 90
    m = np.zeros((41, 41), bool)
    m[0:21, 20] = True
    assert G.boundary_distance_at_angle(m, (20, 20), 0) == pytest.approx(20, abs=0.5)
    assert G.boundary_distance_at_angle(m, (20, 20), 180) == pytest.approx(0, abs=0.5)
    m2 = np.zeros((41, 41), bool)
    m2[20, 20:36] = True
    assert G.boundary_distance_at_angle(m2, (20, 20), 90) == pytest.approx(15, abs=0.5)


def test_ray_miss_returns_none():
    m = np.zeros((40, 40), bool)
    m[0:5, 0:5] = True
    assert G.boundary_distance_at_angle(m, (30, 30), 90) is None


def test_annulus_uses_farthest_boundary():
    ring = circle_mask(SHAPE, CENTER, 60) & ~circle_mask(SHAPE, CENTER, 30)
    assert G.boundary_distance_at_angle(ring, CENTER, 45) == pytest.approx(60, abs=0.5)


def test_center_outside_image():
    with pytest.raises(ValueError):
        G.boundary_distance_at_angle(np.ones((5, 5), bool), (9, 2), 0)
    with pytest.raises(ValueError):
        G.boundary_distance_at_angle(np.ones((5, 5), bool), (2, 2), 360)


# ---------------------------------------------------------- rim profile


def test_concentric_rim_profile():
    disc, cup = concentric()
    p = G.rim_profile(disc, cup)
    assert p.t.shape == (360,)
    assert np.all(np.abs(p.t - 32) <= 1)
    assert np.all(np.abs(p.x - 0.25) <= 0.01)
    assert p.fallback_count == 0


def test_cup_equal_to_disc_has_no_rim():
    disc = circle_mask(SHAPE, CENTER, 50)
    p = G.rim_profile(disc, disc)
    np.testing.assert_allclose(p.t, 0, atol=1e-9)


def test_empty_cup_falls_back_to_disc_radius():
    disc = circle_mask(SHAPE, CENTER, 40)
    p = G.rim_profile(disc, np.zeros(SHAPE, bool))
    assert p.fallback_count == 360
    assert np.all(np.abs(p.t - 40) <= 0.5 + 1e-9)


def test_inferiorly_shifted_cup_thins_inferior_rim():
    disc = circle_mask(SHAPE, CENTER, 64)
    cup = circle_mask(SHAPE, (CENTER[0], CENTER[1] + 20), 32)
    p = G.rim_profile(disc, cup)
    assert 136 <= int(np.argmin(p.t)) <= 225
    q = G.quadrant_means(p)
    assert q.inferior < q.superior


def test_quadrants_partition_degrees():
    idx = np.concatenate(list(G.QUADRANTS.values()))
    assert sorted(idx.tolist()) == list(range(360))
    assert 0 in G.QUADRANTS["superior"] and 45 in G.QUADRANTS["superior"]
    assert 46 in G.QUADRANTS["temporal"] and 136 in G.QUADRANTS["inferior"]
    assert 315 in G.QUADRANTS["nasal"] and 316 in G.QUADRANTS["superior"]


def test_quadrant_means_of_indicator_profiles():
    for name, idx in G.QUADRANTS.items():
        x = np.zeros(360)
        x[idx] = 1.0
        q = G.quadrant_means(G.RimProfile(t=x, x=x, k=1.0, fallback_count=0, center=(0, 0)))
        assert getattr(q, name) == 1.0
        assert sum(getattr(q, other) for other in G.QUADRANTS if other != name) == 0.0


# ------------------------------------------------------------- features


def test_concentric_features():
    f = G.compute_features(*concentric())
    assert f.acdr == pytest.approx(0.25, abs=0.02)
    assert f.dcdr == pytest.approx(0.5, abs=0.02)
    assert f.i_distance == pytest.approx(0.25, abs=0.01)
    assert f.s_distance == pytest.approx(0.25, abs=0.01)
    np.testing.assert_array_equal(G.FeatureVector.from_array(f.as_array()).as_array(), f.as_array())


def test_empty_cup_features():
    f = G.compute_features(circle_mask(SHAPE, CENTER, 64), np.zeros(SHAPE, bool))
    assert (f.acdr, f.dcdr, f.cup_area) == (0.0, 0.0, 0.0)
    assert f.i_distance == pytest.approx(0.5, abs=0.01)
    assert f.s_distance == pytest.approx(0.5, abs=0.01)


def test_empty_disc_raises():
    with pytest.raises(G.EmptyMaskError):
        G.compute_features(np.zeros(SHAPE, bool), np.zeros(SHAPE, bool))


def test_stray_blob_is_ignored():
    disc, cup = concentric()
    noisy = cup.copy()
    noisy[2:4, 2:4] = True
    a = G.compute_features(disc, cup).as_array()
    b = G.compute_features(disc, noisy).as_array()
    np.testing.assert_array_equal(a, b)


RATIO_FEATURES = ("acdr", "dcdr", "s_distance", "i_distance")


def test_ratio_features_scale_invariant():
    small = G.compute_features(circle_mask((128, 128), (63.5, 63.5), 40),
                               ellipse_mask((128, 128), (63.5, 70), (22, 16), 20))
    big = G.compute_features(circle_mask((256, 256), (127.5, 127.5), 80),
                             ellipse_mask((256, 256), (127.5, 140.5), (44, 32), 20))
    for name in RATIO_FEATURES:
        assert getattr(big, name) == pytest.approx(getattr(small, name), rel=0.02), name


def _eye():
    disc = ellipse_mask(SHAPE, CENTER, (64, 58), 10)
    cup = ellipse_mask(SHAPE, (CENTER[0] + 9, CENTER[1] + 14), (30, 22), 35)
    return disc, cup


def test_hflip_swaps_nasal_and_temporal():
    disc, cup = _eye()
    a = G.quadrant_means(G.rim_profile(disc, cup))
    b = G.quadrant_means(G.rim_profile(disc[:, ::-1], cup[:, ::-1]))
    assert b.nasal == pytest.approx(a.temporal, rel=0.01)
    assert b.temporal == pytest.approx(a.nasal, rel=0.01)


def test_vflip_swaps_inferior_and_superior():
    disc, cup = _eye()
    a = G.compute_features(disc, cup)
    b = G.compute_features(disc[::-1], cup[::-1])
    assert b.i_distance == pytest.approx(a.s_distance, rel=0.01)
    assert b.s_distance == pytest.approx(a.i_distance, rel=0.01)
    assert b.acdr == a.acdr


@settings(max_examples=20, deadline=None)
@given(st.floats(20, 60), st.floats(0.1, 0.9), st.floats(-8, 8), st.floats(-8, 8))
def test_feature_bounds(radius, ratio, dx, dy):
    disc = circle_mask(SHAPE, CENTER, radius)
    cup = circle_mask(SHAPE, (CENTER[0] + dx * ratio, CENTER[1] + dy * ratio), radius * ratio) & disc
    f = G.compute_features(disc, cup)
    assert 0 <= f.acdr <= 1
    assert 0 <= f.dcdr <= 1 + 0.02
    assert f.cup_area <= f.disc_area
    # rim thickness cannot exceed the disc radius measured in disc diameters
    assert -0.01 <= f.i_distance <= 0.51 and -0.01 <= f.s_distance <= 0.51
