"""Confidence-derived importance weights.

Augmentations of a test image are scored by how decisively they pick a
class (sum of p*log p over the class distribution, 0 for a one-hot
choice, -log C for a uniform one); prototype points are scored by how
much conditional mass they attract across the augmentations. Both score
vectors are turned into weights with a unit-temperature softmax, so a
confident augmentation outweighs an ambiguous one and background-only
crops are damped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PROB_FLOOR, ProbVector, UnitVector, softmax, stack_units
from .errors import DimensionError


@dataclass(frozen=True)
class ImageDistribution:
    """A test image as a weighted set of augmentation embeddings.

    Index 0 is the original image's feature by convention.
    """

    augment_features: tuple[UnitVector, ...]
    weights: ProbVector
    sample_id: int

    def __post_init__(self) -> None:
        if not self.augment_features:
            raise DimensionError("an image distribution needs at least one augmentation")
        d = self.augment_features[0].d
        if any(f.d != d for f in self.augment_features):
            raise DimensionError("augmentation features have mixed dimensions")
        if self.weights.n != len(self.augment_features):
            raise DimensionError(
                f"{self.weights.n} weights for {len(self.augment_features)} augmentations"
            )


def _row_softmax(scores: np.ndarray, temperature: float, axis: int) -> np.ndarray:
    z = np.exp((scores - scores.max(axis=axis, keepdims=True)) / temperature)
    return z / z.sum(axis=axis, keepdims=True)


def _plogp(p: np.ndarray) -> np.ndarray:
    return p * np.log(np.maximum(p, PROB_FLOOR))


def compute_image_weights(augment_features, prototype_means, temperature: float) -> ProbVector:
    """Weight each augmentation by the confidence of its class distribution.

    For augmentation n, the class distribution is a softmax over the cosine
    similarities to the per-class prototype means at `temperature`; its
    score is the sum of p*log p. The returned weights are the
    unit-temperature softmax of the scores.
    """
    feats = stack_units(augment_features)
    means = stack_units(prototype_means)
    if feats.shape[1] != means.shape[1]:
        raise DimensionError(
            f"feature dimension {feats.shape[1]} vs prototype dimension {means.shape[1]}"
        )
    sims = np.clip(feats @ means.T, -1.0, 1.0)
    class_probs = _row_softmax(sims, temperature, axis=1)
    scores = _plogp(class_probs).sum(axis=1)
    return softmax(scores, temperature=1.0)


def compute_prototype_weights(prototype_points, augment_features, temperature: float) -> ProbVector:
    """Weight each prototype point by its conditional mass across augmentations.

    For every augmentation, the points of this class compete through a
    softmax over cosine similarities at `temperature`; point m's score sums
    p*log p of its share over all augmentations. The returned weights are
    the unit-temperature softmax of the scores.
    """
    points = stack_units(prototype_points)
    feats = stack_units(augment_features)
    if points.shape[1] != feats.shape[1]:
        raise DimensionError(
            f"prototype dimension {points.shape[1]} vs feature dimension {feats.shape[1]}"
        )
    sims = np.clip(points @ feats.T, -1.0, 1.0)
    point_probs = _row_softmax(sims, temperature, axis=0)
    scores = _plogp(point_probs).sum(axis=1)
    return softmax(scores, temperature=1.0)
