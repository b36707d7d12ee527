import numpy as np
import pytest

from salfuse import features as ft
from salfuse.segmentation import Segmentation, build_region_graph
from oracles import chi2_loops


def _two_region_image():
    img = np.zeros((32, 40, 3))
    img[:, :20] = (1.0, 0.0, 0.0)
    img[:, 20:] = (0.0, 0.0, 1.0)
    lab = np.zeros((32, 40), dtype=np.int64)
    lab[:, 20:] = 1
    return img, Segmentation(lab, 2)


class TestChiSquare:
    def test_identical(self):
        h = np.array([0.2, 0.3, 0.5])
        assert ft.chi_square(h, h) == 0.0

    def test_disjoint(self):
        assert ft.chi_square([1, 0], [0, 1]) == 4.0

    def test_random_against_loops(self, rng):
        a, b = rng.random(48), rng.random(48)
        a[3] = b[3] = 0.0
        assert ft.chi_square(a, b) == pytest.approx(chi2_loops(a, b), rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ft.chi_square([1, 0], [1, 0, 0])


class TestRegionStats:
    def test_constant_region_zero_variance(self):
        img, seg = _two_region_image()
        st = ft.region_stats(img, seg)
        np.testing.assert_allclose(st.var_lab, 0.0, atol=1e-12)

    def test_whole_image_region(self, rng):
        img = rng.random((20, 30, 3))
        st = ft.region_stats(img, Segmentation(np.zeros((20, 30), dtype=np.int64), 1))
        assert st.area_ratio[0] == 1.0
        np.testing.assert_allclose(st.centroid[0], (0.5, 0.5), atol=1e-12)
        assert st.border_contact[0] == 1.0

    def test_means_against_pixel_sums(self, rng):
        img = rng.random((24, 24, 3))
        lab = (np.arange(24)[None, :] >= 9).astype(np.int64).repeat(24, 0)
        st = ft.region_stats(img, Segmentation(lab, 2))
        for r in range(2):
            np.testing.assert_allclose(st.mean_rgb[r], img[lab == r].mean(axis=0), atol=1e-9)

    def test_histograms_normalised(self, rng):
        img = rng.random((30, 30, 3))
        lab = np.zeros((30, 30), dtype=np.int64)
        lab[10:20, 10:20] = 1
        st = ft.region_stats(img, Segmentation(lab, 2))
        for h in (st.hist_rgb, st.hist_lab, st.hist_hsv, st.hist_lbp):
            np.testing.assert_allclose(h.sum(axis=1), 1.0, atol=1e-6)
        assert st.hist_rgb.shape[1] == 48 and st.hist_lbp.shape[1] == 59
        assert st.tex_resp.shape[1] == 15

    def test_centred_blob_properties(self):
        img = np.full((50, 50, 3), 0.5)
        lab = np.zeros((50, 50), dtype=np.int64)
        lab[20:30, 15:40] = 1  # 250 px = 10% of 2500
        st = ft.region_stats(img, Segmentation(lab, 2))
        p = ft.property_block(1, st)
        assert p[4] == pytest.approx(0.1)
        assert p[9] == 0.0
        assert p[5] == pytest.approx(25 / 10)
        np.testing.assert_allclose(p[2:4], (25 / 50, 10 / 50))


class TestBlocks:
    def test_no_neighbours_zero(self, rng):
        img = rng.random((20, 20, 3))
        seg = Segmentation(np.zeros((20, 20), dtype=np.int64), 1)
        g = build_region_graph(seg)
        np.testing.assert_array_equal(ft.contrast_block(0, g, ft.region_stats(img, seg)), np.zeros(14))

    def test_single_neighbour_raw_distance(self):
        img, seg = _two_region_image()
        st = ft.region_stats(img, seg)
        g = build_region_graph(seg)
        raw = ft.pair_distances(st.take(0), st.take(1))[0]
        np.testing.assert_allclose(ft.contrast_block(0, g, st), raw)
        np.testing.assert_allclose(raw[:3], (1, 0, 1))

    def test_three_neighbours_weighted(self, rng):
        img = rng.random((30, 30, 3))
        lab = np.zeros((30, 30), dtype=np.int64)
        lab[:, 10:20] = 1
        lab[:10, 20:] = 2
        lab[10:, 20:] = 3
        seg = Segmentation(lab, 4)
        st, g = ft.region_stats(img, seg), build_region_graph(seg)
        areas = seg.areas()
        neigh = [0, 2, 3]
        want = sum(areas[n] * ft.pair_distances(st.take(1), st.take(n))[0] for n in neigh)
        want /= areas[neigh].sum()
        np.testing.assert_allclose(ft.contrast_block(1, g, st), want, atol=1e-12)

    def test_distances_symmetric(self, rng):
        img = rng.random((20, 20, 3))
        lab = (np.arange(20)[:, None] >= 7).astype(np.int64).repeat(20, 1)
        st = ft.region_stats(img, Segmentation(lab, 2))
        np.testing.assert_allclose(ft.pair_distances(st.take(0), st.take(1)),
                                   ft.pair_distances(st.take(1), st.take(0)))

    def test_background_identical_stats_zero(self, rng):
        img = rng.random((40, 40, 3))
        bg = ft.pseudo_background(img)
        np.testing.assert_allclose(ft.backgroundness_block(0, bg, bg), np.zeros(14), atol=1e-15)

    def test_red_region_blue_border(self):
        img = np.zeros((60, 60, 3))
        img[...] = (0, 0, 1)
        img[20:40, 20:40] = (1, 0, 0)
        lab = np.zeros((60, 60), dtype=np.int64)
        lab[20:40, 20:40] = 1
        st = ft.region_stats(img, Segmentation(lab, 2))
        b = ft.backgroundness_block(1, st, ft.pseudo_background(img))
        np.testing.assert_allclose(b[:3], (1, 0, 1), atol=1e-12)


class TestLevelFeatures:
    def test_shape_and_layout(self, rng):
        img = rng.random((30, 40, 3))
        lab = np.zeros((30, 40), dtype=np.int64)
        lab[5:25, 10:30] = 1
        seg = Segmentation(lab, 2)
        F = ft.level_features(img, seg)
        st, g = ft.region_stats(img, seg), build_region_graph(seg)
        bg = ft.pseudo_background(img)
        assert F.shape == (2, ft.FEATURE_DIM) == (2, 38)
        for r in range(2):
            np.testing.assert_allclose(F[r, :14], ft.contrast_block(r, g, st), atol=1e-12)
            np.testing.assert_allclose(F[r, 14:28], ft.backgroundness_block(r, st, bg), atol=1e-12)
            np.testing.assert_allclose(F[r, 28:], ft.property_block(r, st), atol=1e-12)
        assert len(ft.FEATURE_NAMES) == 38

    def test_relabel_invariance(self, rng):
        img = rng.random((30, 30, 3))
        lab = np.zeros((30, 30), dtype=np.int64)
        lab[:, 12:] = 1
        lab[18:, 12:] = 2
        perm = np.array([2, 0, 1])
        F = ft.level_features(img, Segmentation(lab, 3))
        G = ft.level_features(img, Segmentation(perm[lab], 3))
        np.testing.assert_allclose(G[perm], F, atol=1e-12)

    def test_csv_dump(self, tmp_path, rng):
        F = rng.random((3, 38))
        ft.save_features_csv(tmp_path / "f.csv", F)
        lines = (tmp_path / "f.csv").read_text().splitlines()
        assert lines[0].startswith("region,con_r") and len(lines) == 4
