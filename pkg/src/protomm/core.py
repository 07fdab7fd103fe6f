"""Embedding and probability primitives shared by every other module.

All values are float64 internally (files store float32, widened on load).
Embeddings are kept L2-normalized so cosine similarity reduces to a dot
product. Probability vectors are validated at construction and never
renormalized silently.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericError

# Floor applied inside logarithms so that p*log(p) follows the 0*log(0)=0
# convention without producing NaN.
PROB_FLOOR = 1e-12

# Norms already this close to 1 are kept bit-identical instead of rescaled,
# which keeps file round-trips lossless. 1e-6 is the documented norm slack.
_NORM_KEEP_TOL = 1e-6


class UnitVector:
    """An L2-normalized embedding. Immutable after construction.

    The constructor rescales its input to unit norm. Inputs whose norm is
    already within 1e-6 of 1 are stored unchanged (float32 data widened
    from disk stays bit-identical). Zero and non-finite vectors are
    rejected.
    """

    __slots__ = ("values",)

    def __init__(self, values) -> None:
        arr = np.array(values, dtype=np.float64, copy=True).reshape(-1)
        if arr.size == 0:
            raise DimensionError("embedding must have at least one component")
        if not np.isfinite(arr).all():
            raise NumericError("embedding has non-finite components")
        norm = float(np.linalg.norm(arr))
        if norm < 1e-12:
            raise NumericError("zero vector cannot be normalized")
        if abs(norm - 1.0) > _NORM_KEEP_TOL:
            arr /= norm
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def d(self) -> int:
        return self.values.shape[0]

    def __setattr__(self, name, value):
        raise AttributeError("UnitVector is immutable")

    def __repr__(self) -> str:
        return f"UnitVector(d={self.d})"


class ProbVector:
    """A validated discrete probability vector (entries >= 0, sum == 1)."""

    __slots__ = ("values",)

    def __init__(self, values) -> None:
        arr = np.array(values, dtype=np.float64, copy=True).reshape(-1)
        if arr.size == 0:
            raise DimensionError("probability vector must have at least one entry")
        if not np.isfinite(arr).all():
            raise NumericError("probability vector has non-finite entries")
        if (arr < 0.0).any():
            raise NumericError("probability vector has negative entries")
        total = float(arr.sum())
        if abs(total - 1.0) > 1e-9:
            raise NumericError(f"probabilities sum to {total!r}, expected 1 within 1e-9")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def __setattr__(self, name, value):
        raise AttributeError("ProbVector is immutable")

    def __repr__(self) -> str:
        return f"ProbVector(n={self.n})"


class Matrix:
    """A dense row-major matrix of finite float64 values. Immutable."""

    __slots__ = ("values",)

    def __init__(self, values) -> None:
        arr = np.array(values, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
            raise DimensionError(f"expected a non-empty 2-D matrix, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NumericError("matrix has non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def __setattr__(self, name, value):
        raise AttributeError("Matrix is immutable")

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols})"


def cosine_similarity(u: UnitVector, v: UnitVector) -> float:
    """Cosine similarity of two unit vectors: their dot product, clamped to [-1, 1]."""
    if u.d != v.d:
        raise DimensionError(f"dimension mismatch: {u.d} vs {v.d}")
    return float(np.clip(np.dot(u.values, v.values), -1.0, 1.0))


def softmax(scores, temperature: float = 1.0) -> ProbVector:
    """Temperature softmax computed in shifted form (never overflows).

    Entry i is proportional to exp(scores[i] / temperature). The
    normalizer sums the shifted exponentials in ascending order, so
    permuting the scores permutes the output bit-exactly.
    """
    if not (np.isfinite(temperature) and temperature > 0.0):
        raise NumericError(f"temperature must be a positive finite real, got {temperature!r}")
    arr = np.asarray(scores, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise DimensionError("softmax needs at least one score")
    if not np.isfinite(arr).all():
        raise NumericError("softmax scores must be finite")
    z = np.exp((arr - arr.max()) / temperature)
    return ProbVector(z / np.sort(z).sum())


def neg_entropy_score(p: ProbVector) -> float:
    """Sum of p*log(p) with the probability floor: 0 for one-hot, -log(n) for uniform."""
    v = p.values
    return float(np.dot(v, np.log(np.maximum(v, PROB_FLOOR))))


def stack_units(vectors) -> np.ndarray:
    """Stack a sequence of UnitVectors into an (n, d) read-only array.

    Raises DimensionError on an empty sequence or mixed dimensions.
    """
    vecs = list(vectors)
    if not vecs:
        raise DimensionError("expected at least one vector")
    d = vecs[0].d
    for v in vecs[1:]:
        if v.d != d:
            raise DimensionError(f"mixed dimensions: {v.d} vs {d}")
    out = np.stack([v.values for v in vecs])
    out.setflags(write=False)
    return out
