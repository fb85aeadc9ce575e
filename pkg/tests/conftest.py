import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import ndimage

sys.path.insert(0, str(Path(__file__).parent))

import foramkit
from foramkit.dataset import AnnotationRecord, ClassLabel, Detection, ImageRecord, Manifest, load_manifest
from foramkit.geometry import BBox, mask_to_bbox, rle_decode, rle_encode
from foramkit.synth import SceneConfig, generate_scene


@pytest.fixture(scope="session")
def table1_manifest():
    return load_manifest(foramkit.table1_manifest_path())


def _jitter_mask(rng, grid):
    dy, dx = rng.integers(-2, 3, size=2)
    out = np.roll(np.roll(grid, dy, axis=0), dx, axis=1)
    op = rng.random()
    if op < 0.2:
        out = ndimage.binary_dilation(out)
    elif op < 0.4:
        out = ndimage.binary_erosion(out)
    return out


def random_eval_case(rng, n_images=20, size=64, max_objects=10, crowd_p=0.1, image_offset=0):
    """Synthetic GT plus jittered, mislabeled, duplicated and spurious detections."""
    images, dets = [], []
    for k in range(n_images):
        mix = rng.dirichlet(np.ones(4))
        cfg = SceneConfig(width=size, height=size, n_objects=int(rng.integers(1, max_objects + 1)),
                          class_mix=tuple(mix / mix.sum()), size_range=(5.0, 16.0),
                          overlap="allow", max_pair_iou=0.6, background=(0.1, 0.0),
                          seed=int(rng.integers(2**31)), image_id=image_offset + k)
        _, rec = generate_scene(cfg)
        for ann in rec.annotations:
            ann.iscrowd = bool(rng.random() < crowd_p)
        images.append(rec)
        for ann in rec.annotations:
            grid = rle_decode(ann.rle)
            for _ in range(int(rng.choice([0, 1, 1, 1, 2]))):
                g = _jitter_mask(rng, grid)
                if not g.any():
                    continue
                label = ann.label if rng.random() > 0.1 else ClassLabel(int(rng.integers(1, 5)))
                # Coarse scores create plenty of ties.
                score = float(np.round(rng.random(), 1))
                dets.append(Detection(rec.image_id, label, score, rle_encode(g)))
        for _ in range(int(rng.integers(0, 3))):
            g = np.zeros((size, size), dtype=bool)
            y, x = rng.integers(0, size - 6, size=2)
            g[y:y + int(rng.integers(2, 7)), x:x + int(rng.integers(2, 7))] = True
            dets.append(Detection(rec.image_id, ClassLabel(int(rng.integers(1, 5))),
                                  float(np.round(rng.random(), 2)), rle_encode(g)))
    order = rng.permutation(len(dets))
    return Manifest(images, name="random"), [dets[i] for i in order]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
