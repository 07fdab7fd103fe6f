"""On-disk formats. These byte layouts are the public integration surface;
any tool that writes them can feed the engine.

Bundle = a JSON manifest next to a raw binary blob:
  manifest keys: format ("protomm-bundle"), format_version (1), d,
  classes, descriptions, particles, class_names (list, one per class),
  data_file (relative to the manifest), byte_order ("little"), dtype
  ("float32"), includes_cache (bool).
  data file: little-endian float32; first classes*descriptions*d values
  (text features, class-major), then classes*particles*d cache values
  when includes_cache is true.

Stream = one binary file:
  header (32 bytes): magic b"PTMS", u32 version (1), u32 d, u32 n,
  u64 record_count, u8 has_labels, 7 pad bytes; little-endian.
  record (16 + 4*n*d bytes): u64 sample_id, i64 true_label (-1 when
  absent), n*d float32 features, original view first.

Reference = one binary file:
  header (16 bytes): magic b"PTMR", u32 version (1), u32 d, u32 blocks.
  block: u32 class_id, u32 count, count*d float32 features.

Vectors are widened to float64 on load. Rows whose norm is already
within 1e-6 of 1 are kept bit-identical (so write-read-write round-trips
byte for byte); larger deviations are renormalized and deviations beyond
1e-3 additionally emit one aggregate warning.

Results files are line-oriented text; see write_results.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import UnitVector
from .engine import PredictionRecord, RunSummary, StreamRecord
from .errors import FormatError, IoError, NumericError, VersionError
from .prototypes import MultimodalPrototype, PrototypeStore, init_visual_particles, uniform_weights

FORMAT_VERSION = 1
_BUNDLE_FORMAT = "protomm-bundle"
_STREAM_MAGIC = b"PTMS"
_REFERENCE_MAGIC = b"PTMR"
_STREAM_HEADER = struct.Struct("<4sIIIQB7x")
_REFERENCE_HEADER = struct.Struct("<4sIII")
_NORM_WARN_TOL = 1e-3


def _float_cell(value: float | None) -> str:
    return "null" if value is None else f"{value:.6g}"


def _to_f32_bytes(rows: np.ndarray) -> bytes:
    return np.ascontiguousarray(rows, dtype="<f4").tobytes()


def _vectors_from_f32(raw: np.ndarray, count: int, d: int, what: str) -> list[UnitVector]:
    mat = raw.astype(np.float64).reshape(count, d)
    if not np.isfinite(mat).all():
        raise FormatError(f"{what}: non-finite value in embedding data")
    norms = np.linalg.norm(mat, axis=1)
    if (norms < 1e-12).any():
        raise FormatError(f"{what}: zero-norm embedding row")
    worst = float(np.abs(norms - 1.0).max())
    if worst > _NORM_WARN_TOL:
        bad = int((np.abs(norms - 1.0) > _NORM_WARN_TOL).sum())
        warnings.warn(
            f"{what}: {bad} embedding rows deviate from unit norm by up to {worst:.3g}; "
            "renormalizing",
            RuntimeWarning,
            stacklevel=3,
        )
    try:
        return [UnitVector(row) for row in mat]
    except NumericError as exc:  # pragma: no cover - guarded above
        raise FormatError(f"{what}: {exc}") from exc


def _read_file(path) -> bytes:
    p = Path(path)
    if not p.is_file():
        raise FormatError(f"{p}: no such file")
    return p.read_bytes()


# ---------------------------------------------------------------------------
# bundle


def write_bundle(path, store: PrototypeStore, class_names, include_cache: bool = False) -> None:
    """Write manifest JSON at `path` and the binary blob next to it."""
    p = Path(path)
    names = list(class_names)
    if len(names) != store.num_classes:
        raise IoError(f"{len(names)} class names for {store.num_classes} classes")
    data_name = p.stem + ".bin"
    manifest = {
        "format": _BUNDLE_FORMAT,
        "format_version": FORMAT_VERSION,
        "d": store.d,
        "classes": store.num_classes,
        "descriptions": store.m,
        "particles": store.s,
        "class_names": names,
        "data_file": data_name,
        "byte_order": "little",
        "dtype": "float32",
        "includes_cache": bool(include_cache),
    }
    text = np.stack(
        [t.values for proto in store.prototypes for t in proto.text_features]
    )
    blob = _to_f32_bytes(text)
    if include_cache:
        if store.s == 0:
            raise IoError("cannot checkpoint a store with no particle slots")
        cache = np.stack(
            [e.values for proto in store.prototypes for e in proto.visual_particles]
        )
        blob += _to_f32_bytes(cache)
    try:
        p.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (p.parent / data_name).write_bytes(blob)
    except OSError as exc:
        raise IoError(f"cannot write bundle at {p}: {exc}") from exc


def read_bundle(path) -> tuple[PrototypeStore, tuple[str, ...]]:
    """Load a bundle; initializes particles from the text mean unless the
    manifest carries a checkpointed cache."""
    p = Path(path)
    try:
        manifest = json.loads(_read_file(p).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{p}: manifest is not valid JSON ({exc})") from exc
    if not isinstance(manifest, dict) or manifest.get("format") != _BUNDLE_FORMAT:
        raise FormatError(f"{p}: not a {_BUNDLE_FORMAT} manifest")
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionError(f"{p}: unsupported format_version {version!r}")
    try:
        d = int(manifest["d"])
        c = int(manifest["classes"])
        m = int(manifest["descriptions"])
        s = int(manifest["particles"])
        names = list(manifest["class_names"])
        data_file = str(manifest["data_file"])
        byte_order = manifest["byte_order"]
        dtype = manifest["dtype"]
        includes_cache = bool(manifest["includes_cache"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{p}: manifest is missing or mistypes a field ({exc})") from exc
    if byte_order != "little" or dtype != "float32":
        raise FormatError(
            f"{p}: unsupported encoding byte_order={byte_order!r} dtype={dtype!r}"
        )
    if d < 1 or c < 1 or m < 1 or s < 0:
        raise FormatError(f"{p}: invalid counts d={d} classes={c} descriptions={m} particles={s}")
    if len(names) != c or not all(isinstance(n, str) for n in names):
        raise FormatError(f"{p}: class_names must list {c} strings")
    blob = _read_file(p.parent / data_file)
    expected = 4 * (c * m * d + (c * s * d if includes_cache else 0))
    if len(blob) != expected:
        raise FormatError(
            f"{p.parent / data_file}: expected {expected} bytes, found {len(blob)}"
        )
    floats = np.frombuffer(blob, dtype="<f4")
    text = _vectors_from_f32(floats[: c * m * d], c * m, d, f"{p} text block")
    cache: list[UnitVector] | None = None
    if includes_cache:
        cache = _vectors_from_f32(floats[c * m * d :], c * s, d, f"{p} cache block")
    prototypes = []
    for i in range(c):
        text_i = tuple(text[i * m : (i + 1) * m])
        if cache is not None:
            particles = tuple(cache[i * s : (i + 1) * s])
        else:
            particles = init_visual_particles(text_i, s)
        prototypes.append(
            MultimodalPrototype(
                class_id=i,
                text_features=text_i,
                visual_particles=particles,
                last_weights=uniform_weights(m + s),
            )
        )
    return PrototypeStore(tuple(prototypes)), tuple(names)


# ---------------------------------------------------------------------------
# stream


@dataclass(frozen=True)
class StreamData:
    d: int
    n: int
    has_labels: bool
    records: tuple[StreamRecord, ...]


def write_stream(path, records, d: int | None = None, n: int | None = None) -> None:
    recs = list(records)
    if recs:
        d = recs[0].d
        n = len(recs[0].features)
    elif d is None or n is None:
        raise IoError("an empty stream needs explicit d and n")
    has_labels = any(r.true_label is not None for r in recs)
    parts = [
        _STREAM_HEADER.pack(
            _STREAM_MAGIC, FORMAT_VERSION, d, n, len(recs), 1 if has_labels else 0
        )
    ]
    for r in recs:
        if r.d != d or len(r.features) != n:
            raise IoError(
                f"record {r.sample_id}: expected {n} features of dimension {d}, "
                f"got {len(r.features)} of dimension {r.d}"
            )
        label = r.true_label if r.true_label is not None else -1
        parts.append(struct.pack("<Qq", r.sample_id, label))
        parts.append(_to_f32_bytes(np.stack([f.values for f in r.features])))
    try:
        Path(path).write_bytes(b"".join(parts))
    except OSError as exc:
        raise IoError(f"cannot write stream at {path}: {exc}") from exc


def read_stream(path) -> StreamData:
    p = Path(path)
    blob = _read_file(p)
    if len(blob) < _STREAM_HEADER.size:
        raise FormatError(
            f"{p}: expected at least {_STREAM_HEADER.size} header bytes, found {len(blob)}"
        )
    magic, version, d, n, count, labels_flag = _STREAM_HEADER.unpack_from(blob)
    if magic != _STREAM_MAGIC:
        raise FormatError(f"{p}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionError(f"{p}: unsupported format_version {version}")
    if d < 1 or n < 1:
        raise FormatError(f"{p}: invalid header d={d} n={n}")
    record_size = 16 + 4 * n * d
    expected = _STREAM_HEADER.size + count * record_size
    if len(blob) != expected:
        raise FormatError(f"{p}: expected {expected} bytes for {count} records, found {len(blob)}")
    has_labels = labels_flag != 0
    records = []
    offset = _STREAM_HEADER.size
    for _ in range(count):
        sample_id, label = struct.unpack_from("<Qq", blob, offset)
        floats = np.frombuffer(blob, dtype="<f4", count=n * d, offset=offset + 16)
        feats = _vectors_from_f32(floats, n, d, f"{p} record {sample_id}")
        records.append(
            StreamRecord(
                sample_id=sample_id,
                features=tuple(feats),
                true_label=label if has_labels and label >= 0 else None,
            )
        )
        offset += record_size
    return StreamData(d=d, n=n, has_labels=has_labels, records=tuple(records))


# ---------------------------------------------------------------------------
# reference


def write_reference(path, reference: dict) -> None:
    items = sorted(reference.items())
    parts = []
    d = None
    for class_id, vectors in items:
        vecs = list(vectors)
        if not vecs:
            raise IoError(f"reference class {class_id} has no vectors")
        if d is None:
            d = vecs[0].d
        parts.append(struct.pack("<II", class_id, len(vecs)))
        parts.append(_to_f32_bytes(np.stack([v.values for v in vecs])))
    if d is None:
        raise IoError("reference has no classes")
    header = _REFERENCE_HEADER.pack(_REFERENCE_MAGIC, FORMAT_VERSION, d, len(items))
    try:
        Path(path).write_bytes(header + b"".join(parts))
    except OSError as exc:
        raise IoError(f"cannot write reference at {path}: {exc}") from exc


def read_reference(path) -> dict[int, tuple[UnitVector, ...]]:
    p = Path(path)
    blob = _read_file(p)
    if len(blob) < _REFERENCE_HEADER.size:
        raise FormatError(
            f"{p}: expected at least {_REFERENCE_HEADER.size} header bytes, found {len(blob)}"
        )
    magic, version, d, blocks = _REFERENCE_HEADER.unpack_from(blob)
    if magic != _REFERENCE_MAGIC:
        raise FormatError(f"{p}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionError(f"{p}: unsupported format_version {version}")
    if d < 1:
        raise FormatError(f"{p}: invalid dimension {d}")
    offset = _REFERENCE_HEADER.size
    out: dict[int, tuple[UnitVector, ...]] = {}
    for _ in range(blocks):
        if len(blob) - offset < 8:
            raise FormatError(f"{p}: truncated block header at byte {offset}")
        class_id, count = struct.unpack_from("<II", blob, offset)
        offset += 8
        need = 4 * count * d
        if len(blob) - offset < need:
            raise FormatError(
                f"{p}: class {class_id} needs {need} bytes at byte {offset}, "
                f"only {len(blob) - offset} remain"
            )
        if class_id in out:
            raise FormatError(f"{p}: duplicate class {class_id}")
        floats = np.frombuffer(blob, dtype="<f4", count=count * d, offset=offset)
        out[class_id] = tuple(_vectors_from_f32(floats, count, d, f"{p} class {class_id}"))
        offset += need
    if offset != len(blob):
        raise FormatError(f"{p}: {len(blob) - offset} trailing bytes after {blocks} blocks")
    return out


# ---------------------------------------------------------------------------
# results


def write_results(path, predictions, summary: RunSummary, manifest: dict) -> None:
    """Line-oriented text: a config echo, one row per prediction, a summary.

    Numbers use 6 significant digits; field order is fixed; two identical
    runs produce identical bytes.
    """
    lines = [
        "# protomm-results v1",
        "# config: " + json.dumps(manifest, sort_keys=True),
        "sample_id\tpredicted_class\tmax_probability\tupdated_cache\ttrue_label",
    ]
    for r in predictions:
        label = "null" if r.true_label is None else str(r.true_label)
        cache = "true" if r.updated_cache else "false"
        lines.append(
            f"{r.sample_id}\t{r.predicted_class}\t{r.max_probability:.6g}\t{cache}\t{label}"
        )
    lines.extend(
        [
            "# summary",
            f"# samples: {summary.total}",
            f"# processed: {summary.processed}",
            f"# skipped: {len(summary.skipped)}",
            f"# labeled: {summary.labeled}",
            f"# accuracy: {_float_cell(summary.accuracy)}",
            f"# cache_updates: {summary.cache_updates}",
            f"# mean_ot_iterations: {_float_cell(summary.mean_ot_iterations)}",
        ]
    )
    for sample_id, message in summary.skipped:
        lines.append(f"# skip {sample_id}: {message}")
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write results at {path}: {exc}") from exc


def write_plan(path, plan: np.ndarray, point_labels: list[str]) -> None:
    """Dump one transport plan as a labeled tab-separated matrix."""
    lines = ["augment\t" + "\t".join(point_labels)]
    for i, row in enumerate(plan):
        lines.append(str(i) + "\t" + "\t".join(f"{v:.6g}" for v in row))
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write plan at {path}: {exc}") from exc
