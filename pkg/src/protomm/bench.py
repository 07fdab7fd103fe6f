"""Seeded end-to-end scenarios: synth world -> zero-shot baseline ->
static multimodal run -> adaptive run -> particle-quality snapshots,
evaluated against named assertions.

Scenarios are data (JSON files), so other implementations of the same
formats can share them verbatim. Reports are deterministic text.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

from .diagnostics import snapshot_metrics
from .engine import EngineConfig, run_stream, zero_shot_stream
from .errors import FormatError
from .sinkhorn import SinkhornConfig
from .synth import SynthConfig, generate_world

_OPS = {
    "ge": lambda measured, value: measured >= value,
    "gt": lambda measured, value: measured > value,
    "le": lambda measured, value: measured <= value,
    "lt": lambda measured, value: measured < value,
    "eq": lambda measured, value: measured == value,
}


@dataclass(frozen=True)
class Assertion:
    """One named check; `criterion` names the acceptance criterion it implements."""

    criterion: str
    name: str
    metric: str
    op: str
    value: float


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    synth: SynthConfig
    engine: EngineConfig
    assertions: tuple[Assertion, ...]


@dataclass(frozen=True)
class ScenarioReport:
    name: str
    metrics: dict
    text: str
    passed: bool


def load_scenario(path) -> ScenarioSpec:
    p = Path(path)
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise FormatError(f"{p}: cannot read scenario ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{p}: scenario is not valid JSON ({exc})") from exc
    try:
        synth = SynthConfig(**raw["synth"])
        eng = dict(raw["engine"])
        sink = SinkhornConfig(
            epsilon=eng.get("epsilon", 0.1),
            max_iterations=eng.pop("max_iterations", 100),
            tolerance=eng.pop("tolerance", 1e-9),
        )
        engine = EngineConfig(sinkhorn=sink, **eng)
        assertions = tuple(Assertion(**a) for a in raw["assertions"])
        name = str(raw["name"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{p}: scenario is missing or mistypes a field ({exc})") from exc
    for a in assertions:
        if a.op not in _OPS:
            raise FormatError(f"{p}: unknown assertion op {a.op!r}")
    return ScenarioSpec(name=name, synth=synth, engine=engine, assertions=assertions)


def _fmt(value) -> str:
    if value is None:
        return "null"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def run_scenario(spec: ScenarioSpec) -> ScenarioReport:
    """Execute the full pipeline for one scenario and evaluate its assertions.

    The adaptive run is measured in two segments (25% / 75%) so particle
    quality can be snapshotted mid-stream; sequential semantics make the
    split equivalent to one uninterrupted run.
    """
    world = generate_world(spec.synth)
    stream = world.stream
    text_means = tuple(p.text_mean for p in world.store.prototypes)

    _, zs_summary = zero_shot_stream(stream, text_means)

    static_cfg = replace(spec.engine, tau=1.0)
    _, _, static_summary = run_stream(stream, world.store, static_cfg)

    quarter = len(stream) // 4
    first, first_store, sum1 = run_stream(stream[:quarter], world.store, spec.engine)
    snap25 = snapshot_metrics(first_store, world.reference)
    second, final_store, sum2 = run_stream(stream[quarter:], first_store, spec.engine)
    snap100 = snapshot_metrics(final_store, world.reference)

    labeled = sum1.labeled + sum2.labeled
    correct = sum1.correct + sum2.correct
    protomm_accuracy = (correct / labeled) if labeled else None

    metrics = {
        "zeroshot_accuracy": zs_summary.accuracy,
        "static_accuracy": static_summary.accuracy,
        "protomm_accuracy": protomm_accuracy,
        "cache_updates": sum1.cache_updates + sum2.cache_updates,
        "skipped": len(sum1.skipped) + len(sum2.skipped) + len(zs_summary.skipped),
        "kl_25": snap25.macro_kl,
        "kl_100": snap100.macro_kl,
        "mmd_25": snap25.macro_mmd,
        "mmd_100": snap100.macro_mmd,
    }
    if protomm_accuracy is not None and zs_summary.accuracy is not None:
        metrics["gain_vs_zeroshot_pp"] = 100.0 * (protomm_accuracy - zs_summary.accuracy)
    if protomm_accuracy is not None and static_summary.accuracy is not None:
        metrics["gain_vs_static_pp"] = 100.0 * (protomm_accuracy - static_summary.accuracy)
    if snap25.macro_kl is not None and snap100.macro_kl is not None:
        metrics["kl_drop"] = snap25.macro_kl - snap100.macro_kl
    if snap25.macro_mmd is not None and snap100.macro_mmd is not None:
        metrics["mmd_drop"] = snap25.macro_mmd - snap100.macro_mmd

    lines = [f"scenario: {spec.name}"]
    for key in sorted(metrics):
        lines.append(f"metric {key} = {_fmt(metrics[key])}")
    passed = True
    for a in spec.assertions:
        measured = metrics.get(a.metric)
        ok = measured is not None and _OPS[a.op](measured, a.value)
        passed = passed and ok
        status = "PASS" if ok else "FAIL"
        lines.append(
            f"{status} [criterion {a.criterion}] {a.name}: "
            f"{a.metric} = {_fmt(measured)} {a.op} {_fmt(a.value)}"
        )
    lines.append(f"result: {'PASS' if passed else 'FAIL'}")
    return ScenarioReport(
        name=spec.name, metrics=metrics, text="\n".join(lines) + "\n", passed=passed
    )
