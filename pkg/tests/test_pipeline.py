import numpy as np
import pytest
from PIL import Image

from foramkit.exceptions import ConfigError
from foramkit.geometry import mask_iou
from foramkit.pipeline import (ClassicalDetector, PipelineConfig, connected_components, detect,
                               extract_objects, gaussian_blur, gaussian_kernel, read_image,
                               threshold, to_grayscale)
from foramkit.synth import SceneConfig, generate_scene

from oracles import direct_convolve, flood_fill_labels, same_partition


class TestGrayscale:
    def test_white_black_green(self):
        assert to_grayscale(np.full((2, 2, 3), 255, np.uint8)).tolist() == [[1.0, 1.0], [1.0, 1.0]]
        assert to_grayscale(np.zeros((2, 2, 3), np.uint8)).max() == 0.0
        green = np.zeros((1, 1, 3), np.uint8)
        green[..., 1] = 255
        assert to_grayscale(green)[0, 0] == pytest.approx(0.587, abs=1e-12)

    def test_sixteen_bit(self):
        img = np.full((2, 3, 3), 65535, np.uint16)
        assert np.allclose(to_grayscale(img), 1.0)

    def test_bad_channels(self):
        with pytest.raises(ValueError):
            to_grayscale(np.zeros((2, 2, 4), np.uint8))

    def test_read_image_keeps_depth(self, tmp_path):
        arr = (np.arange(12, dtype=np.uint16) * 5000).reshape(3, 4)
        Image.fromarray(arr).save(tmp_path / "a.png")
        back = read_image(tmp_path / "a.png")
        assert back.dtype == np.uint16 and np.array_equal(back, arr)


class TestBlur:
    @pytest.mark.parametrize("sigma", [0.3, 0.5, 1.0, 2.0, 3.7, 10.0])
    def test_kernel_normalized(self, sigma):
        k = gaussian_kernel(sigma)
        assert abs(k.sum() - 1.0) <= 1e-9
        assert k.size == 2 * int(np.ceil(3 * sigma)) + 1
        assert np.allclose(k, k[::-1])

    def test_non_positive_sigma(self):
        for s in (0, -1, float("nan")):
            with pytest.raises(ConfigError):
                gaussian_blur(np.zeros((3, 3)), s)

    def test_constant_preserved(self):
        img = np.full((20, 17), 0.37)
        assert np.abs(gaussian_blur(img, 2.5) - 0.37).max() < 1e-12

    def test_impulse_matches_direct_convolution(self):
        img = np.zeros((41, 41))
        img[20, 20] = 1.0
        out = gaussian_blur(img, 2.0)
        assert np.abs(out - direct_convolve(img, 2.0)).max() <= 1e-6
        k = gaussian_kernel(2.0)
        np.testing.assert_allclose(out[14:27, 14:27], np.outer(k, k), atol=1e-12)

    def test_random_images_match_direct_convolution(self):
        rng = np.random.default_rng(5)
        for shape, sigma in [((12, 15), 1.0), ((9, 7), 1.7), ((5, 5), 3.0), ((1, 6), 0.8)]:
            img = rng.random(shape)
            assert np.abs(gaussian_blur(img, sigma) - direct_convolve(img, sigma)).max() <= 1e-6

    def test_step_edge_monotone(self):
        img = np.zeros((6, 20))
        img[:, 10:] = 1.0
        out = gaussian_blur(img, 0.5)
        assert (np.diff(out, axis=1) >= 0).all()
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert np.abs(out - direct_convolve(img, 0.5)).max() <= 1e-6

    def test_semigroup(self):
        y, x = np.mgrid[0:64, 0:64] / 64.0
        img = 0.5 + 0.2 * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)
        for s1, s2 in [(1.0, 1.0), (2.0, 1.5), (0.8, 2.5)]:
            twice = gaussian_blur(gaussian_blur(img, s1), s2)
            once = gaussian_blur(img, float(np.hypot(s1, s2)))
            assert np.abs(twice - once).max() <= 1e-3

    def test_output_in_unit_range(self):
        img = np.random.default_rng(0).random((30, 30))
        out = gaussian_blur(img, 1.3)
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestThreshold:
    def test_examples(self):
        pos = np.full((4, 4), 0.2)
        assert threshold(pos, 0.0, "light").all()
        assert not threshold(pos, 1.0, "light").any()
        grad = np.tile(np.linspace(0, 1, 11)[:, None], (1, 3))
        expected = np.array([v > 0.5 for v in np.linspace(0, 1, 11)])[:, None].repeat(3, 1)
        assert np.array_equal(threshold(grad, 0.5), expected)
        assert np.array_equal(threshold(grad, 0.5, "dark"), grad < 0.5)

    def test_bad_polarity(self):
        with pytest.raises(ConfigError):
            threshold(np.zeros((2, 2)), 0.5, "grey")


class TestConnectedComponents:
    def test_empty(self):
        assert connected_components(np.zeros((5, 5), bool)).max() == 0

    def test_diagonal(self):
        g = np.array([[1, 0], [0, 1]], bool)
        assert connected_components(g, 8).max() == 1
        assert connected_components(g, 4).max() == 2

    def test_three_squares(self):
        g = np.zeros((12, 12), bool)
        g[0:2, 0:2] = True
        g[5:8, 5:8] = True
        g[9:12, 0:4] = True
        labels = connected_components(g)
        assert labels.max() == 3
        assert sorted(np.bincount(labels.ravel())[1:].tolist()) == [4, 9, 12]

    def test_u_shape_merges(self):
        g = np.zeros((5, 5), bool)
        g[:, 0] = g[:, 4] = g[4, :] = True
        assert connected_components(g, 4).max() == 1

    @pytest.mark.parametrize("connectivity", [4, 8])
    def test_matches_flood_fill_on_500_grids(self, connectivity):
        rng = np.random.default_rng(100 + connectivity)
        for _ in range(500):
            h, w = rng.integers(1, 65, size=2)
            grid = rng.random((h, w)) < rng.uniform(0.2, 0.7)
            got = connected_components(grid, connectivity)
            want = flood_fill_labels(grid, connectivity)
            assert same_partition(got, want)
            # Raster first-encounter numbering makes the labels identical too.
            assert np.array_equal(got, want)
            k = got.max()
            assert set(np.unique(got).tolist()) == set(range(k + 1)) - ({0} if grid.all() else set())

    def test_bad_connectivity(self):
        with pytest.raises(ConfigError):
            connected_components(np.zeros((2, 2)), 6)


class TestExtract:
    def test_min_area_filter(self):
        labels = np.zeros((20, 20), np.int32)
        labels[0, 0:3] = 1
        labels[5:10, 5:15] = 2
        objs = extract_objects(labels, 10)
        assert [o.area for o in objs] == [50]
        assert objs[0].bbox.to_xywh() == [5.0, 5.0, 10.0, 5.0]
        assert len(extract_objects(labels, 1)) == 2

    def test_seven_blobs_match_generator(self):
        cfg = SceneConfig(width=200, height=200, n_objects=7, overlap="forbid", min_gap=4,
                          background=(0.0, 0.0), seed=11)
        _, rec = generate_scene(cfg)
        union = np.zeros((200, 200), np.int32)
        for k, ann in enumerate(rec.annotations, start=1):
            union[rec.mask(ann).to_array()] = k
        objs = extract_objects(connected_components(union > 0), 1)
        assert len(objs) == 7
        assert sorted(o.area for o in objs) == sorted(rec.mask(a).area for a in rec.annotations)


class TestDetect:
    def test_blank(self):
        assert detect(np.full((64, 64, 3), 0.1)) == []

    def test_ten_grains(self):
        cfg = SceneConfig(width=256, height=256, n_objects=10, overlap="forbid", min_gap=8, seed=21)
        image, rec = generate_scene(cfg)
        dets = detect(image, PipelineConfig(), image_id=rec.image_id)
        assert len(dets) == 10
        assert all(d.score == 1.0 and d.label is None for d in dets)
        for ann in rec.annotations:
            gt = rec.mask(ann)
            assert max(mask_iou(d.mask, gt) for d in dets) >= 0.9

    def test_close_grains_merge(self):
        img = np.zeros((60, 80))
        yy, xx = np.mgrid[0:60, 0:80]
        img[(yy - 30) ** 2 + (xx - 28) ** 2 <= 100] = 1.0
        img[(yy - 30) ** 2 + (xx - 50) ** 2 <= 100] = 1.0  # one empty column between them
        assert connected_components(img > 0.5).max() == 2
        assert len(detect(img, PipelineConfig(min_area=10))) == 1

    def test_deterministic(self):
        image, _ = generate_scene(SceneConfig(n_objects=8, seed=4))
        a = detect(image)
        b = detect(image)
        assert [d.mask for d in a] == [d.mask for d in b]

    def test_estimator(self):
        image, _ = generate_scene(SceneConfig(n_objects=5, min_gap=8, seed=9))
        est = ClassicalDetector().fit()
        (dets,) = est.predict([image], image_ids=["x"])
        assert len(dets) == 5 and dets[0].image_id == "x"
        (labels,) = est.transform([image])
        assert labels.max() >= 5

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            PipelineConfig(connectivity=6)
        with pytest.raises(ConfigError):
            PipelineConfig(min_area=0)
        with pytest.raises(ConfigError):
            ClassicalDetector(sigma1=-1).fit()
