"""Distribution discrepancy between a class's visual particles and a
reference sample of that class's true features.

KL is computed between diagonal-Gaussian fits (closed form, variance
floored so collapsed particle sets stay finite). MMD uses the unbiased
RBF estimator with the median-distance bandwidth heuristic. Absolute
values depend on these estimator choices; only trends over time are
meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import stack_units
from .errors import ConfigError, DimensionError, EmptyInputError
from .prototypes import PrototypeStore

_VARIANCE_FLOOR = 1e-6
_BANDWIDTH_FLOOR = 1e-6


@dataclass(frozen=True)
class GaussianFit:
    """Per-dimension mean and (floored) variance of a sample."""

    mean: np.ndarray
    variance: np.ndarray


def fit_gaussian(sample) -> GaussianFit:
    vecs = list(sample)
    if not vecs:
        raise EmptyInputError("cannot fit a Gaussian to an empty sample")
    pts = stack_units(vecs)
    mean = pts.mean(axis=0)
    variance = np.maximum(pts.var(axis=0), _VARIANCE_FLOOR)
    return GaussianFit(mean=mean, variance=variance)


def gaussian_kl(p: GaussianFit, q: GaussianFit) -> float:
    """Closed-form KL between diagonal Gaussians."""
    if p.mean.shape != q.mean.shape:
        raise DimensionError(
            f"sample dimensions differ: {p.mean.shape[0]} vs {q.mean.shape[0]}"
        )
    ratio = p.variance / q.variance
    shift = (q.mean - p.mean) ** 2 / q.variance
    return float(0.5 * np.sum(ratio + shift - 1.0 + np.log(q.variance / p.variance)))


def kl_divergence(sample_p, sample_q) -> float:
    """KL(P || Q) between diagonal-Gaussian fits of the two samples."""
    return gaussian_kl(fit_gaussian(sample_p), fit_gaussian(sample_q))


def _pairwise_sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    sq = (x**2).sum(axis=1)[:, None] + (y**2).sum(axis=1)[None, :] - 2.0 * (x @ y.T)
    return np.maximum(sq, 0.0)


def mmd(sample_p, sample_q) -> float:
    """Unbiased RBF-kernel MMD (square root, clamped at zero).

    The kernel is exp(-dist^2 / (2 sigma^2)) with sigma the median pairwise
    Euclidean distance over the pooled samples, floored at 1e-6. Each
    sample needs at least two points.
    """
    xp = list(sample_p)
    xq = list(sample_q)
    if len(xp) < 2 or len(xq) < 2:
        raise EmptyInputError("the unbiased MMD estimator needs >= 2 points per sample")
    x = stack_units(xp)
    y = stack_units(xq)
    if x.shape[1] != y.shape[1]:
        raise DimensionError(f"sample dimensions differ: {x.shape[1]} vs {y.shape[1]}")
    pooled = np.vstack([x, y])
    dists = np.sqrt(_pairwise_sq_dists(pooled, pooled))
    upper = dists[np.triu_indices(pooled.shape[0], k=1)]
    sigma = max(float(np.median(upper)), _BANDWIDTH_FLOOR)
    denom = 2.0 * sigma * sigma
    kxx = np.exp(-_pairwise_sq_dists(x, x) / denom)
    kyy = np.exp(-_pairwise_sq_dists(y, y) / denom)
    kxy = np.exp(-_pairwise_sq_dists(x, y) / denom)
    m = x.shape[0]
    n = y.shape[0]
    np.fill_diagonal(kxx, 0.0)
    np.fill_diagonal(kyy, 0.0)
    mmd2 = kxx.sum() / (m * (m - 1)) + kyy.sum() / (n * (n - 1)) - 2.0 * kxy.mean()
    return float(np.sqrt(max(mmd2, 0.0)))


@dataclass(frozen=True)
class ClassMetrics:
    class_id: int
    kl: float | None
    mmd: float | None


@dataclass(frozen=True)
class SnapshotMetrics:
    """Per-class particle quality plus macro averages over defined values."""

    classes: tuple[ClassMetrics, ...]
    macro_kl: float | None
    macro_mmd: float | None


def snapshot_metrics(store: PrototypeStore, reference: dict) -> SnapshotMetrics:
    """Compare every class's visual particles against its reference sample.

    The reference must cover all classes with at least two vectors each.
    Classes with no particles report null for both metrics; a single
    particle reports KL only (MMD is undefined there).
    """
    rows = []
    for proto in store.prototypes:
        cid = proto.class_id
        if cid not in reference:
            raise ConfigError(f"reference is missing class {cid}")
        ref = list(reference[cid])
        if len(ref) < 2:
            raise ConfigError(f"reference for class {cid} has {len(ref)} vectors, need >= 2")
        particles = list(proto.visual_particles)
        kl = kl_divergence(particles, ref) if particles else None
        dm = mmd(particles, ref) if len(particles) >= 2 else None
        rows.append(ClassMetrics(class_id=cid, kl=kl, mmd=dm))
    kls = [r.kl for r in rows if r.kl is not None]
    mms = [r.mmd for r in rows if r.mmd is not None]
    return SnapshotMetrics(
        classes=tuple(rows),
        macro_kl=float(np.mean(kls)) if kls else None,
        macro_mmd=float(np.mean(mms)) if mms else None,
    )


def format_metrics(snapshot: SnapshotMetrics) -> str:
    """Render a snapshot as a stable tab-separated table."""

    def cell(v: float | None) -> str:
        return "null" if v is None else f"{v:.6g}"

    lines = ["class\tkl\tmmd"]
    for row in snapshot.classes:
        lines.append(f"{row.class_id}\t{cell(row.kl)}\t{cell(row.mmd)}")
    lines.append(f"macro\t{cell(snapshot.macro_kl)}\t{cell(snapshot.macro_mmd)}")
    return "\n".join(lines) + "\n"
