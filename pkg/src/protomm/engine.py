"""The streaming prediction pipeline.

One sample flows through: augmentation weights, per-class prototype
weights, per-class transport problems (cost = cosine distance between
augmentations and prototype points), a softmax over the negated
transport costs, and, when the top probability clears the confidence
threshold, a top-S particle update for the predicted class. Samples are
strictly sequential; everything inside one sample is pure until the
single store update at the end.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import Matrix, ProbVector, UnitVector, softmax, stack_units
from .errors import ConfigError, DimensionError, NumericError
from .prototypes import (
    PrototypeStore,
    score_augmentations,
    select_top_s,
    update_visual_particles,
)
from .sinkhorn import SinkhornConfig, solve_sinkhorn_batch
from .weighting import compute_image_weights, compute_prototype_weights


@dataclass(frozen=True)
class StreamRecord:
    """One test sample: its augmentation features and optional true label."""

    sample_id: int
    features: tuple[UnitVector, ...]
    true_label: int | None = None

    def __post_init__(self) -> None:
        if not self.features:
            raise DimensionError("a stream record needs at least one feature")
        d = self.features[0].d
        if any(f.d != d for f in self.features):
            raise DimensionError("stream record features have mixed dimensions")

    @property
    def d(self) -> int:
        return self.features[0].d


@dataclass(frozen=True)
class EngineConfig:
    """Pipeline knobs.

    tau is the confidence gate: a sample updates the cache only when its
    top class probability reaches it. top_s is clamped to the number of
    augmentations (and particle slots) at runtime. prediction_temperature
    scales the softmax over negated transport costs and defaults to 1.
    """

    epsilon: float = 0.1
    tau: float = 0.8
    top_s: int = 25
    class_temperature: float = 0.01
    prediction_temperature: float = 1.0
    sinkhorn: SinkhornConfig | None = None
    update_all_classes: bool = False
    threads: int = 1

    def __post_init__(self) -> None:
        if not (np.isfinite(self.epsilon) and self.epsilon > 0.0):
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon!r}")
        if not (0.0 <= self.tau <= 1.0):
            raise ConfigError(f"tau must lie in [0, 1], got {self.tau!r}")
        if self.top_s < 0:
            raise ConfigError(f"top_s must be >= 0, got {self.top_s!r}")
        if not (np.isfinite(self.class_temperature) and self.class_temperature > 0.0):
            raise ConfigError(f"class_temperature must be > 0, got {self.class_temperature!r}")
        if not (
            np.isfinite(self.prediction_temperature) and self.prediction_temperature > 0.0
        ):
            raise ConfigError(
                f"prediction_temperature must be > 0, got {self.prediction_temperature!r}"
            )
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads!r}")
        if self.sinkhorn is None:
            object.__setattr__(
                self,
                "sinkhorn",
                SinkhornConfig(epsilon=self.epsilon, max_iterations=100, tolerance=1e-9),
            )


@dataclass(frozen=True)
class PredictionRecord:
    """Outcome of one processed sample."""

    sample_id: int
    probabilities: ProbVector
    predicted_class: int
    max_probability: float
    updated_cache: bool
    ot_costs: tuple[float, ...]
    true_label: int | None


@dataclass(frozen=True)
class RunSummary:
    """Aggregates over a processed stream; accuracy is None without labels."""

    total: int
    processed: int
    skipped: tuple[tuple[int, str], ...]
    labeled: int
    correct: int
    accuracy: float | None
    cache_updates: int
    mean_ot_iterations: float | None


def zero_shot_predict(image_feature: UnitVector, class_features) -> int:
    """Argmax of cosine similarity against the class features; ties break low."""
    classes = stack_units(class_features)
    if classes.shape[1] != image_feature.d:
        raise DimensionError(
            f"feature dimension {image_feature.d} vs class dimension {classes.shape[1]}"
        )
    return int(np.argmax(classes @ image_feature.values))


def zero_shot_stream(records, class_features) -> tuple[list[PredictionRecord], RunSummary]:
    """Classify each record's original view (index 0) by cosine similarity.

    Emits prediction records in the engine's shape so the same results
    format applies; ot_costs hold the cosine distances and probabilities
    their unit-temperature softmax. No cache exists, so nothing updates.
    """
    classes = stack_units(class_features)
    predictions: list[PredictionRecord] = []
    skipped: list[tuple[int, str]] = []
    total = 0
    for record in records:
        total += 1
        if record.d != classes.shape[1]:
            skipped.append(
                (
                    record.sample_id,
                    f"feature dimension {record.d} vs class dimension {classes.shape[1]}",
                )
            )
            continue
        original = record.features[0]
        sims = np.clip(classes @ original.values, -1.0, 1.0)
        costs = 1.0 - sims
        probabilities = softmax(-costs, temperature=1.0)
        predicted = zero_shot_predict(original, class_features)
        predictions.append(
            PredictionRecord(
                sample_id=record.sample_id,
                probabilities=probabilities,
                predicted_class=predicted,
                max_probability=float(probabilities.values[predicted]),
                updated_cache=False,
                ot_costs=tuple(float(c) for c in costs),
                true_label=record.true_label,
            )
        )
    labeled = sum(1 for r in predictions if r.true_label is not None)
    correct = sum(
        1 for r in predictions if r.true_label is not None and r.predicted_class == r.true_label
    )
    summary = RunSummary(
        total=total,
        processed=len(predictions),
        skipped=tuple(skipped),
        labeled=labeled,
        correct=correct,
        accuracy=(correct / labeled) if labeled else None,
        cache_updates=0,
        mean_ot_iterations=None,
    )
    return predictions, summary


def _class_problem(prototype, feats_matrix, features, temperature):
    w = compute_prototype_weights(prototype.points, features, temperature)
    cost = Matrix(np.clip(1.0 - feats_matrix @ prototype.points_matrix.T, 0.0, 2.0))
    return w, cost


def process_sample(
    record: StreamRecord,
    store: PrototypeStore,
    config: EngineConfig,
) -> tuple[PredictionRecord, PrototypeStore, list]:
    """Predict one sample and, if it clears the gate, update the store.

    Returns the prediction record, the (possibly updated) store, and the
    per-class transport solutions (plans plus convergence diagnostics).
    """
    if record.d != store.d:
        raise DimensionError(
            f"sample {record.sample_id}: feature dimension {record.d} vs store dimension {store.d}"
        )
    feats = record.features
    feats_matrix = stack_units(feats)
    augment_weights = compute_image_weights(feats, store.means(), config.class_temperature)

    protos = store.prototypes
    if config.threads > 1 and store.num_classes > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            problems = list(
                pool.map(
                    lambda p: _class_problem(p, feats_matrix, feats, config.class_temperature),
                    protos,
                )
            )
    else:
        problems = [
            _class_problem(p, feats_matrix, feats, config.class_temperature) for p in protos
        ]
    point_weights = [w for w, _ in problems]
    costs = [c for _, c in problems]

    try:
        solutions = solve_sinkhorn_batch(augment_weights, point_weights, costs, config.sinkhorn)
    except NumericError as exc:
        raise NumericError(f"sample {record.sample_id}: {exc}") from exc

    ot_costs = tuple(s.transport_cost for s in solutions)
    probabilities = softmax(
        -np.array(ot_costs), temperature=config.prediction_temperature
    )
    predicted = int(np.argmax(probabilities.values))
    max_probability = float(probabilities.values[predicted])

    updates_possible = config.top_s > 0 and store.s > 0
    updated = max_probability >= config.tau and updates_possible
    if updated:
        k = min(config.top_s, len(feats), store.s)
        w_pred = point_weights[predicted]
        theta = score_augmentations(solutions[predicted].plan, w_pred)
        candidates = select_top_s(feats, theta, k)
        targets = range(store.num_classes) if config.update_all_classes else (predicted,)
        for c in targets:
            store = store.with_prototype(
                c, update_visual_particles(store.prototypes[c], candidates, w_pred)
            )

    rec = PredictionRecord(
        sample_id=record.sample_id,
        probabilities=probabilities,
        predicted_class=predicted,
        max_probability=max_probability,
        updated_cache=updated,
        ot_costs=ot_costs,
        true_label=record.true_label,
    )
    return rec, store, solutions


def run_stream(
    records,
    store: PrototypeStore,
    config: EngineConfig,
    plan_hook=None,
) -> tuple[list[PredictionRecord], PrototypeStore, RunSummary]:
    """Process records strictly in order, skipping per-sample failures.

    The cache state seen by sample t reflects exactly samples 1..t-1.
    plan_hook, when given, is called with (prediction, solutions) after
    each processed sample; it must not mutate either.
    """
    predictions: list[PredictionRecord] = []
    skipped: list[tuple[int, str]] = []
    total = 0
    iteration_sum = 0
    solve_count = 0
    for record in records:
        total += 1
        try:
            rec, store, solutions = process_sample(record, store, config)
        except (DimensionError, NumericError) as exc:
            skipped.append((record.sample_id, str(exc)))
            continue
        predictions.append(rec)
        iteration_sum += sum(s.iterations for s in solutions)
        solve_count += len(solutions)
        if plan_hook is not None:
            plan_hook(rec, solutions)
    labeled = sum(1 for r in predictions if r.true_label is not None)
    correct = sum(
        1 for r in predictions if r.true_label is not None and r.predicted_class == r.true_label
    )
    summary = RunSummary(
        total=total,
        processed=len(predictions),
        skipped=tuple(skipped),
        labeled=labeled,
        correct=correct,
        accuracy=(correct / labeled) if labeled else None,
        cache_updates=sum(1 for r in predictions if r.updated_cache),
        mean_ot_iterations=(iteration_sum / solve_count) if solve_count else None,
    )
    return predictions, store, summary
