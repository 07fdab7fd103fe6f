"""Per-class multimodal prototypes: fixed text embeddings plus a mutable
cache of visual particles, updated online from confident test samples.

Updates are functional: update_visual_particles returns a new prototype
object, so a store snapshot taken before a sample is never mutated
behind the reader's back.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import Matrix, ProbVector, UnitVector, stack_units
from .errors import DimensionError


def _renormalized_mean(vectors: np.ndarray, fallback: UnitVector) -> UnitVector:
    mean = vectors.mean(axis=0)
    if float(np.linalg.norm(mean)) < 1e-9:
        return fallback
    return UnitVector(mean)


@dataclass(frozen=True)
class MultimodalPrototype:
    """One class's prototype distribution: M text points and S visual particles."""

    class_id: int
    text_features: tuple[UnitVector, ...]
    visual_particles: tuple[UnitVector, ...]
    last_weights: ProbVector

    def __post_init__(self) -> None:
        if not self.text_features:
            raise DimensionError("a prototype needs at least one text feature")
        d = self.text_features[0].d
        for v in self.text_features + self.visual_particles:
            if v.d != d:
                raise DimensionError("prototype vectors have mixed dimensions")
        if self.last_weights.n != self.num_points:
            raise DimensionError(
                f"{self.last_weights.n} weights for {self.num_points} prototype points"
            )
        # cached views used on every sample
        pts = stack_units(self.points)
        object.__setattr__(self, "_points_matrix", pts)
        object.__setattr__(self, "_mean", _renormalized_mean(pts, self.text_features[0]))
        object.__setattr__(
            self,
            "_text_mean",
            _renormalized_mean(stack_units(self.text_features), self.text_features[0]),
        )

    @property
    def d(self) -> int:
        return self.text_features[0].d

    @property
    def m(self) -> int:
        return len(self.text_features)

    @property
    def s(self) -> int:
        return len(self.visual_particles)

    @property
    def num_points(self) -> int:
        return self.m + self.s

    @property
    def points(self) -> tuple[UnitVector, ...]:
        """Text features followed by visual particles."""
        return self.text_features + self.visual_particles

    @property
    def points_matrix(self) -> np.ndarray:
        return self._points_matrix  # type: ignore[attr-defined]

    @property
    def mean(self) -> UnitVector:
        """Renormalized mean of all prototype points."""
        return self._mean  # type: ignore[attr-defined]

    @property
    def text_mean(self) -> UnitVector:
        """Renormalized mean of the text features only (zero-shot anchor)."""
        return self._text_mean  # type: ignore[attr-defined]


@dataclass(frozen=True)
class PrototypeStore:
    """The full prototype table, one entry per class id."""

    prototypes: tuple[MultimodalPrototype, ...]

    def __post_init__(self) -> None:
        if not self.prototypes:
            raise DimensionError("a store needs at least one class")
        first = self.prototypes[0]
        for i, p in enumerate(self.prototypes):
            if p.class_id != i:
                raise DimensionError(f"prototype at position {i} has class_id {p.class_id}")
            if p.d != first.d or p.m != first.m or p.s != first.s:
                raise DimensionError("prototypes disagree on d, M or S")

    @property
    def num_classes(self) -> int:
        return len(self.prototypes)

    @property
    def d(self) -> int:
        return self.prototypes[0].d

    @property
    def m(self) -> int:
        return self.prototypes[0].m

    @property
    def s(self) -> int:
        return self.prototypes[0].s

    def with_prototype(self, class_id: int, prototype: MultimodalPrototype) -> "PrototypeStore":
        protos = list(self.prototypes)
        protos[class_id] = prototype
        return PrototypeStore(tuple(protos))

    def means(self) -> tuple[UnitVector, ...]:
        return tuple(p.mean for p in self.prototypes)


def init_visual_particles(text_features, s: int) -> tuple[UnitVector, ...]:
    """Initial particles: S copies of the renormalized text-feature mean.

    Falls back to the first text feature if the mean is numerically zero.
    """
    feats = list(text_features)
    if not feats:
        raise DimensionError("need at least one text feature")
    if s <= 0:
        return ()
    seed = _renormalized_mean(stack_units(feats), feats[0])
    return (seed,) * s


def uniform_weights(n: int) -> ProbVector:
    return ProbVector(np.full(n, 1.0 / n))


def new_prototype(class_id: int, text_features, s: int) -> MultimodalPrototype:
    """Build a fresh prototype with initialized particles and uniform weights."""
    text = tuple(text_features)
    return MultimodalPrototype(
        class_id=class_id,
        text_features=text,
        visual_particles=init_visual_particles(text, s),
        last_weights=uniform_weights(len(text) + max(s, 0)),
    )


def score_augmentations(plan: Matrix, weights: ProbVector) -> np.ndarray:
    """Per-augmentation relevance: the plan times the prototype point weights."""
    if plan.cols != weights.n:
        raise DimensionError(f"plan has {plan.cols} columns but {weights.n} weights given")
    out = plan.values @ weights.values
    out.setflags(write=False)
    return out


def select_top_s(augment_features, scores, s: int) -> list[tuple[UnitVector, float]]:
    """The min(s, N) highest-scoring augmentations, ties broken by lower index."""
    feats = list(augment_features)
    sc = np.asarray(scores, dtype=np.float64).reshape(-1)
    if sc.shape[0] != len(feats):
        raise DimensionError(f"{sc.shape[0]} scores for {len(feats)} augmentations")
    if s <= 0:
        return []
    order = np.argsort(-sc, kind="stable")[: min(s, len(feats))]
    return [(feats[i], float(sc[i])) for i in order]


def update_visual_particles(
    prototype: MultimodalPrototype,
    candidates: list[tuple[UnitVector, float]],
    weights: ProbVector,
) -> MultimodalPrototype:
    """Blend the ranked candidates into the particles they are paired with.

    The s-th candidate (x, theta) moves the s-th particle e to the
    renormalized weighted mean (w*e + theta*x) / (w + theta), where w is
    that particle slot's entry in `weights`. A particle is left unchanged
    when w + theta (or the blended vector) is numerically zero. Text
    features are never modified.
    """
    if weights.n != prototype.num_points:
        raise DimensionError(
            f"{weights.n} weights for {prototype.num_points} prototype points"
        )
    if len(candidates) > prototype.s:
        raise DimensionError(
            f"{len(candidates)} candidates for {prototype.s} particle slots"
        )
    particles = list(prototype.visual_particles)
    for slot, (x, theta) in enumerate(candidates):
        if x.d != prototype.d:
            raise DimensionError(f"candidate dimension {x.d} vs prototype dimension {prototype.d}")
        w = float(weights.values[prototype.m + slot])
        denom = w + theta
        if denom < 1e-12:
            continue
        # exact fixed points: a zero-mass candidate or one equal to the
        # particle must leave it bit-identical, not perturbed by roundoff
        if theta == 0.0 or np.array_equal(x.values, particles[slot].values):
            continue
        blend = (w * particles[slot].values + theta * x.values) / denom
        if float(np.linalg.norm(blend)) < 1e-9:
            continue
        particles[slot] = UnitVector(blend)
    return replace(
        prototype, visual_particles=tuple(particles), last_weights=weights
    )
