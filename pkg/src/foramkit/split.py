"""Class-stratified train/test splitting of a manifest."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .dataset import Manifest
from .exceptions import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_RATIO = 2.47


class SplitWarning(UserWarning):
    """The requested stratification tolerance could not be met."""


@dataclass(frozen=True)
class SplitSpec:
    """``train_fraction`` defaults to a 2.47:1 train:test ratio.

    ``tolerance`` bounds the absolute difference, per class, between the
    class's share of training objects and its share of all objects.
    """

    train_fraction: float = DEFAULT_RATIO / (DEFAULT_RATIO + 1.0)
    seed: int = 0
    tolerance: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.tolerance < 0:
            raise ConfigError("tolerance must be non-negative")

    @classmethod
    def from_ratio(cls, ratio: float, **kwargs) -> "SplitSpec":
        if ratio <= 0:
            raise ConfigError(f"ratio must be positive, got {ratio}")
        return cls(train_fraction=ratio / (ratio + 1.0), **kwargs)


def train_size(n_images: int, fraction: float) -> int:
    """``round(n * fraction)`` with halves rounded up, kept inside [1, n - 1]."""
    n_train = math.floor(n_images * fraction + 0.5)
    return min(max(n_train, 1), n_images - 1)


def _shares(counts):
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total > 0, counts / np.where(total > 0, total, 1.0), np.nan)


def split_divergence(train_counts, test_counts, target) -> float:
    """L1 gap between each side's class composition and the target composition.

    An empty side contributes nothing.
    """
    total = 0.0
    for side in (train_counts, test_counts):
        s = _shares(side)
        if not np.isnan(s).any():
            total += float(np.abs(s - target).sum())
    return total


def _divergence_many(train, test, target):
    # Vectorized split_divergence over leading axes.
    out = np.zeros(train.shape[:-1])
    for side in (train, test):
        s = _shares(side)
        d = np.abs(s - target).sum(axis=-1)
        out += np.where(np.isnan(d), 0.0, d)
    return out


def stratified_split(manifest: Manifest, spec: SplitSpec = SplitSpec()):
    """Partition images into (train, test) manifests.

    Images are visited in descending object count (ties broken by a seeded
    shuffle) and each is placed on the side that keeps both sides' class
    compositions closest to the whole dataset's, subject to the train-size
    quota. A pairwise-swap pass then removes any remaining improvable pair.
    """
    n = len(manifest)
    if n < 2:
        raise ConfigError("stratified_split needs at least 2 images")
    counts = np.stack([img.class_counts() for img in manifest.images]).astype(np.float64)
    totals = counts.sum(axis=0)
    target = totals / totals.sum() if totals.sum() > 0 else np.zeros_like(totals)
    n_train = train_size(n, spec.train_fraction)
    n_test = n - n_train

    rng = np.random.Generator(np.random.PCG64(spec.seed))
    shuffled = rng.permutation(n)
    order = sorted(shuffled.tolist(), key=lambda i: -counts[i].sum())

    in_train = np.zeros(n, dtype=bool)
    train_c = np.zeros_like(totals)
    test_c = np.zeros_like(totals)
    k_train = k_test = 0
    for i in order:
        if k_train == n_train:
            side_train = False
        elif k_test == n_test:
            side_train = True
        else:
            cost_train = split_divergence(train_c + counts[i], test_c, target)
            cost_test = split_divergence(train_c, test_c + counts[i], target)
            side_train = cost_train <= cost_test
        if side_train:
            in_train[i] = True
            train_c += counts[i]
            k_train += 1
        else:
            test_c += counts[i]
            k_test += 1

    _refine_by_swaps(counts, in_train, target)

    train_c = counts[in_train].sum(axis=0)
    worst = float(np.nanmax(np.abs(_shares(train_c) - target))) if train_c.sum() > 0 else 0.0
    if worst > spec.tolerance:
        msg = (f"stratified split: worst per-class share deviation {worst:.4f} "
               f"exceeds tolerance {spec.tolerance}")
        logger.warning(msg)
        warnings.warn(msg, SplitWarning, stacklevel=2)

    ids = [img.image_id for img in manifest.images]
    train_ids = [ids[i] for i in range(n) if in_train[i]]
    test_ids = [ids[i] for i in range(n) if not in_train[i]]
    return (manifest.subset(train_ids, name=f"{manifest.name}-train"),
            manifest.subset(test_ids, name=f"{manifest.name}-test"))


def _refine_by_swaps(counts, in_train, target, max_rounds: int = 10_000):
    """Apply the best improving train/test swap until none improves."""
    for _ in range(max_rounds):
        tr = np.flatnonzero(in_train)
        te = np.flatnonzero(~in_train)
        base_train = counts[tr].sum(axis=0)
        base_test = counts[te].sum(axis=0)
        current = split_divergence(base_train, base_test, target)
        delta = counts[te][None, :, :] - counts[tr][:, None, :]
        cand = _divergence_many(base_train + delta, base_test - delta, target)
        a, b = np.unravel_index(np.argmin(cand), cand.shape)
        if cand[a, b] >= current - 1e-12:
            return
        in_train[tr[a]] = False
        in_train[te[b]] = True
