"""Regenerate src/foramkit/data/table1.manifest.

The fixture carries the reference per-phase image and object counts with
synthetic octagonal geometry; there are no image files behind it.
"""

from pathlib import Path

import numpy as np

from foramkit.dataset import AnnotationRecord, ClassLabel, ImageRecord, Manifest, save_manifest

# phase -> (images per class, objects per class); phase 3 images mix all classes.
PHASES = {
    1: ((3, 11, 9, 25), (172, 897, 726, 1980)),
    2: ((9, 11, 10, 11), (583, 695, 657, 669)),
    3: (15, (154, 156, 155, 168)),
}
CELL = 24
GRID = 10
OUT = Path(__file__).resolve().parents[1] / "src" / "foramkit" / "data" / "table1.manifest"


def spread(total, parts):
    q, r = divmod(total, parts)
    return [q + (1 if i < r else 0) for i in range(parts)]


def octagon(rng, cell_index):
    row, col = divmod(cell_index, GRID)
    x0, y0 = col * CELL, row * CELL
    half = int(rng.integers(4, 10))
    cut = max(1, half // 3)
    cx = x0 + CELL // 2 + int(rng.integers(-1, 2))
    cy = y0 + CELL // 2 + int(rng.integers(-1, 2))
    return [(cx - half + cut, cy - half), (cx + half - cut, cy - half), (cx + half, cy - half + cut),
            (cx + half, cy + half - cut), (cx + half - cut, cy + half), (cx - half + cut, cy + half),
            (cx - half, cy + half - cut), (cx - half, cy - half + cut)]


def image_record(rng, image_id, phase, labels):
    cells = rng.permutation(GRID * GRID)[:len(labels)]
    anns = [AnnotationRecord(k + 1, lab, polygon=octagon(rng, int(c)))
            for k, (lab, c) in enumerate(zip(labels, cells))]
    return ImageRecord(image_id, f"plate_{image_id:03d}.png", GRID * CELL, GRID * CELL, phase, anns)


def build():
    rng = np.random.Generator(np.random.PCG64(20240101))
    images = []
    for phase in (1, 2):
        n_imgs, n_objs = PHASES[phase]
        for label, k, total in zip(ClassLabel, n_imgs, n_objs):
            for count in spread(total, k):
                images.append(image_record(rng, len(images) + 1, phase, [label] * count))
    n_imgs, n_objs = PHASES[3]
    per_class = [spread(total, n_imgs) for total in n_objs]
    for i in range(n_imgs):
        labels = [lab for lab, counts in zip(ClassLabel, per_class) for _ in range(counts[i])]
        labels = [labels[j] for j in rng.permutation(len(labels))]
        images.append(image_record(rng, len(images) + 1, 3, labels))
    return Manifest(images, name="table1-fixture", version="1")


if __name__ == "__main__":
    save_manifest(build(), OUT)
    print(f"wrote {OUT}")
