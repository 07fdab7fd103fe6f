"""Deterministic synthetic embedding worlds with tunably ambiguous text.

Classes get well-separated visual clusters on the unit sphere, but paired
classes (0,1), (2,3), ... share a text anchor direction controlled by the
`ambiguity` knob: at 0 each class's text sits on its own visual mean, at 1
both classes of a pair describe themselves identically. This manufactures
the "two lilies" failure mode of text-only prototypes at desk scale.

Draw order (one seeded generator, so equal configs give equal bytes):
  1. per class, one d-dim standard normal -> visual mean (normalized);
  2. per class and description, one d-dim normal -> description =
     normalize(anchor + text_noise * draw); anchors consume no draws;
  3. per stream sample: one uniform integer (class), one d-dim normal
     (true feature), then one d-dim normal per augmentation;
  4. per class, 100 d-dim normals -> held-out reference features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import UnitVector
from .engine import StreamRecord
from .errors import ConfigError
from .prototypes import MultimodalPrototype, PrototypeStore, init_visual_particles, uniform_weights

_REFERENCE_PER_CLASS = 100


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    dim: int = 64
    classes: int = 10
    descriptions: int = 50
    augmentations: int = 50
    particles: int = 25
    samples: int = 500
    text_noise: float = 0.05
    augment_noise: float = 0.15
    ambiguity: float = 0.85

    def __post_init__(self) -> None:
        for name in ("dim", "classes", "descriptions", "augmentations", "particles", "samples"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)!r}")
        if self.text_noise < 0 or self.augment_noise < 0:
            raise ConfigError("noise levels must be >= 0")
        if not (0.0 <= self.ambiguity <= 1.0):
            raise ConfigError(f"ambiguity must lie in [0, 1], got {self.ambiguity!r}")


@dataclass(frozen=True)
class World:
    """An in-memory world; the io module defines its on-disk forms."""

    config: SynthConfig
    store: PrototypeStore
    class_names: tuple[str, ...]
    stream: tuple[StreamRecord, ...]
    reference: dict[int, tuple[UnitVector, ...]]


def _unit(vec: np.ndarray, fallback: np.ndarray) -> UnitVector:
    if float(np.linalg.norm(vec)) < 1e-9:
        return UnitVector(fallback)
    return UnitVector(vec)


def generate_world(config: SynthConfig) -> World:
    """Build (bundle, stream, reference) content from the seeded recipe above."""
    rng = np.random.default_rng(config.seed)
    d = config.dim
    c = config.classes

    means = np.stack([UnitVector(rng.standard_normal(d)).values for _ in range(c)])

    anchors = np.empty_like(means)
    for i in range(c):
        j = i + 1 if i % 2 == 0 else i - 1
        if j >= c:
            j = i  # odd class count: last class is unpaired
        midpoint = 0.5 * (means[i] + means[j])
        anchors[i] = _unit(
            (1.0 - config.ambiguity) * means[i] + config.ambiguity * midpoint, means[i]
        ).values

    prototypes = []
    for i in range(c):
        text = tuple(
            _unit(anchors[i] + config.text_noise * rng.standard_normal(d), anchors[i])
            for _ in range(config.descriptions)
        )
        prototypes.append(
            MultimodalPrototype(
                class_id=i,
                text_features=text,
                visual_particles=init_visual_particles(text, config.particles),
                last_weights=uniform_weights(config.descriptions + config.particles),
            )
        )
    store = PrototypeStore(tuple(prototypes))

    stream = []
    for t in range(config.samples):
        label = int(rng.integers(0, c))
        true = _unit(means[label] + config.augment_noise * rng.standard_normal(d), means[label])
        feats = tuple(
            _unit(true.values + config.augment_noise * rng.standard_normal(d), true.values)
            for _ in range(config.augmentations)
        )
        stream.append(StreamRecord(sample_id=t, features=feats, true_label=label))

    reference = {
        i: tuple(
            _unit(means[i] + config.augment_noise * rng.standard_normal(d), means[i])
            for _ in range(_REFERENCE_PER_CLASS)
        )
        for i in range(c)
    }

    class_names = tuple(f"class_{i:02d}" for i in range(c))
    return World(
        config=config,
        store=store,
        class_names=class_names,
        stream=tuple(stream),
        reference=reference,
    )


def describe_world(bundle_path, stream_path) -> str:
    """Summarize a written world: shapes, label counts, text similarity levels."""
    from .formats import read_bundle, read_stream

    store, class_names = read_bundle(bundle_path)
    data = read_stream(stream_path)

    text_means = np.stack(
        [np.mean([t.values for t in p.text_features], axis=0) for p in store.prototypes]
    )
    norms = np.linalg.norm(text_means, axis=1)
    norms[norms < 1e-12] = 1.0
    text_means /= norms[:, None]

    within = []
    for p in store.prototypes:
        if p.m < 2:
            continue
        pts = np.stack([t.values for t in p.text_features])
        sims = pts @ pts.T
        within.append(sims[np.triu_indices(p.m, k=1)].mean())

    c = store.num_classes
    paired, cross = [], []
    for i in range(c):
        for j in range(i + 1, c):
            sim = float(text_means[i] @ text_means[j])
            if j == i + 1 and i % 2 == 0:
                paired.append(sim)
            else:
                cross.append(sim)

    label_counts: dict[int, int] = {}
    for rec in data.records:
        if rec.true_label is not None:
            label_counts[rec.true_label] = label_counts.get(rec.true_label, 0) + 1

    def fmt(values) -> str:
        return f"{float(np.mean(values)):.4f}" if values else "n/a"

    lines = [
        f"bundle: d={store.d} classes={c} descriptions={store.m} particles={store.s}",
        f"stream: records={len(data.records)} augmentations={data.n} "
        f"labeled={'yes' if data.has_labels else 'no'}",
        f"text similarity: within-class={fmt(within)} paired-class={fmt(paired)} "
        f"cross-class={fmt(cross)}",
    ]
    if label_counts:
        counts = " ".join(
            f"{class_names[k]}={label_counts[k]}" for k in sorted(label_counts)
        )
        lines.append(f"label counts: {counts}")
    return "\n".join(lines) + "\n"
