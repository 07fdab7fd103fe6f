import numpy as np
import pytest

from protomm.core import UnitVector, softmax
from protomm.engine import (
    EngineConfig,
    StreamRecord,
    process_sample,
    run_stream,
    zero_shot_predict,
    zero_shot_stream,
)
from protomm.errors import ConfigError, DimensionError
from protomm.prototypes import new_prototype, PrototypeStore
from conftest import random_store, random_unit, random_units


def make_stream(rng, samples, n, d, classes):
    records = []
    for t in range(samples):
        label = int(rng.integers(0, classes))
        records.append(
            StreamRecord(
                sample_id=t,
                features=tuple(random_units(rng, n, d)),
                true_label=label,
            )
        )
    return records


class TestEngineConfig:
    def test_defaults(self):
        cfg = EngineConfig()
        assert cfg.tau == 0.8
        assert cfg.top_s == 25
        assert cfg.sinkhorn.epsilon == 0.1
        assert cfg.sinkhorn.max_iterations == 100
        assert cfg.sinkhorn.tolerance == 1e-9

    def test_tau_range_checked(self):
        with pytest.raises(ConfigError):
            EngineConfig(tau=1.5)

    def test_top_s_zero_allowed(self):
        EngineConfig(top_s=0)

    def test_negative_top_s_rejected(self):
        with pytest.raises(ConfigError):
            EngineConfig(top_s=-1)


class TestZeroShotPredict:
    def test_single_class(self, rng):
        assert zero_shot_predict(random_unit(rng, 4), random_units(rng, 1, 4)) == 0

    def test_exact_match_wins(self, rng):
        classes = [UnitVector([1, 0, 0]), UnitVector([0, 1, 0]), UnitVector([0, 0, 1])]
        assert zero_shot_predict(UnitVector([0, 1, 0]), classes) == 1

    def test_tie_breaks_low(self):
        x = UnitVector([np.sqrt(0.5), np.sqrt(0.5)])
        assert zero_shot_predict(x, [UnitVector([1, 0]), UnitVector([0, 1])]) == 0

    def test_dimension_mismatch(self, rng):
        with pytest.raises(DimensionError):
            zero_shot_predict(random_unit(rng, 3), random_units(rng, 2, 4))


class TestDegenerateReduction:
    def test_matches_zero_shot_and_cosine_costs(self, rng):
        # N = M = 1, S = 0: the transport plan is forced, so the engine is
        # exactly the zero-shot classifier with costs 1 - cosine
        config = EngineConfig(top_s=0)
        for _ in range(25):
            d = int(rng.integers(2, 9))
            c = int(rng.integers(1, 6))
            store = random_store(rng, classes=c, m=1, s=0, d=d)
            feature = random_unit(rng, d)
            record = StreamRecord(sample_id=0, features=(feature,))
            rec, _, _ = process_sample(record, store, config)
            expected_class = zero_shot_predict(
                feature, [p.text_features[0] for p in store.prototypes]
            )
            assert rec.predicted_class == expected_class
            for cost, proto in zip(rec.ot_costs, store.prototypes):
                cosine = float(np.dot(feature.values, proto.text_features[0].values))
                assert abs(cost - (1.0 - cosine)) <= 1e-9


class TestProcessSample:
    def test_identical_prototypes_tie(self, rng):
        text = random_units(rng, 2, 6)
        store = PrototypeStore(
            (new_prototype(0, text, 2), new_prototype(1, text, 2))
        )
        record = StreamRecord(sample_id=0, features=tuple(random_units(rng, 3, 6)))
        rec, _, _ = process_sample(record, store, EngineConfig())
        assert rec.predicted_class == 0
        assert rec.probabilities.values[0] == 0.5
        assert rec.probabilities.values[1] == 0.5

    def test_probabilities_reproducible_from_costs(self, rng):
        store = random_store(rng, classes=4, m=2, s=2, d=8)
        record = StreamRecord(sample_id=0, features=tuple(random_units(rng, 3, 8)))
        config = EngineConfig(prediction_temperature=0.05)
        rec, _, _ = process_sample(record, store, config)
        again = softmax(-np.array(rec.ot_costs), temperature=0.05)
        assert np.allclose(rec.probabilities.values, again.values, atol=1e-9, rtol=0)

    def test_gate_formula(self, rng):
        for tau in (0.0, 0.4, 1.0):
            for top_s, s in ((0, 2), (2, 0), (2, 2)):
                store = random_store(rng, classes=3, m=2, s=s, d=6)
                record = StreamRecord(0, tuple(random_units(rng, 3, 6)))
                cfg = EngineConfig(tau=tau, top_s=top_s, prediction_temperature=0.05)
                rec, _, _ = process_sample(record, store, cfg)
                assert rec.updated_cache == (
                    rec.max_probability >= tau and top_s > 0 and s > 0
                )

    def test_updates_touch_only_predicted_class(self, rng):
        store = random_store(rng, classes=4, m=2, s=2, d=6)
        record = StreamRecord(0, tuple(random_units(rng, 4, 6)))
        rec, updated, _ = process_sample(record, store, EngineConfig(tau=0.0, top_s=2))
        assert rec.updated_cache
        for c, (old, new) in enumerate(zip(store.prototypes, updated.prototypes)):
            if c == rec.predicted_class:
                assert new is not old
            else:
                assert new is old

    def test_update_all_classes_switch(self, rng):
        store = random_store(rng, classes=3, m=2, s=2, d=6)
        record = StreamRecord(0, tuple(random_units(rng, 4, 6)))
        cfg = EngineConfig(tau=0.0, top_s=2, update_all_classes=True)
        rec, updated, _ = process_sample(record, store, cfg)
        assert rec.updated_cache
        for old, new in zip(store.prototypes, updated.prototypes):
            assert new is not old

    def test_dimension_mismatch(self, rng):
        store = random_store(rng, classes=2, m=1, s=1, d=4)
        record = StreamRecord(7, tuple(random_units(rng, 2, 6)))
        with pytest.raises(DimensionError, match="sample 7"):
            process_sample(record, store, EngineConfig())

    def test_threads_match_sequential(self, rng):
        store = random_store(rng, classes=5, m=2, s=2, d=8)
        record = StreamRecord(0, tuple(random_units(rng, 4, 8)))
        rec1, store1, _ = process_sample(record, store, EngineConfig(tau=0.0, top_s=2))
        rec2, store2, _ = process_sample(
            record, store, EngineConfig(tau=0.0, top_s=2, threads=3)
        )
        assert rec1.ot_costs == rec2.ot_costs
        assert np.array_equal(rec1.probabilities.values, rec2.probabilities.values)
        for p1, p2 in zip(store1.prototypes, store2.prototypes):
            for a, b in zip(p1.visual_particles, p2.visual_particles):
                assert np.array_equal(a.values, b.values)


class TestRunStream:
    def test_empty_stream(self, rng):
        store = random_store(rng, classes=2, m=1, s=1, d=4)
        preds, final, summary = run_stream([], store, EngineConfig())
        assert preds == []
        assert final is store
        assert summary.accuracy is None
        assert summary.total == 0

    def test_tau_zero_single_sample_updates_once(self, rng):
        store = random_store(rng, classes=2, m=2, s=2, d=6)
        stream = make_stream(rng, 1, 3, 6, 2)
        _, final, summary = run_stream(stream, store, EngineConfig(tau=0.0, top_s=2))
        assert summary.cache_updates == 1
        assert final is not store

    def test_tau_one_never_updates(self, rng):
        store = random_store(rng, classes=3, m=2, s=2, d=6)
        stream = make_stream(rng, 10, 3, 6, 3)
        preds, final, summary = run_stream(stream, store, EngineConfig(tau=1.0))
        assert summary.cache_updates == 0
        assert final is store
        for p_old, p_new in zip(store.prototypes, final.prototypes):
            assert p_old is p_new

    def test_deterministic(self, rng):
        store = random_store(rng, classes=3, m=2, s=2, d=6)
        stream = make_stream(rng, 12, 3, 6, 3)
        cfg = EngineConfig(tau=0.3, top_s=2, prediction_temperature=0.05)
        p1, f1, s1 = run_stream(stream, store, cfg)
        p2, f2, s2 = run_stream(stream, store, cfg)
        assert s1 == s2
        for r1, r2 in zip(p1, p2):
            assert r1.ot_costs == r2.ot_costs
            assert np.array_equal(r1.probabilities.values, r2.probabilities.values)
        for q1, q2 in zip(f1.prototypes, f2.prototypes):
            for a, b in zip(q1.visual_particles, q2.visual_particles):
                assert np.array_equal(a.values, b.values)

    def test_static_run_is_permutation_invariant(self, rng):
        store = random_store(rng, classes=3, m=2, s=2, d=6)
        stream = make_stream(rng, 8, 2, 6, 3)
        cfg = EngineConfig(tau=1.0)
        base, _, _ = run_stream(stream, store, cfg)
        perm = list(rng.permutation(len(stream)))
        shuffled, _, _ = run_stream([stream[i] for i in perm], store, cfg)
        by_id_base = {r.sample_id: r for r in base}
        by_id_perm = {r.sample_id: r for r in shuffled}
        assert by_id_base.keys() == by_id_perm.keys()
        for sid in by_id_base:
            assert by_id_base[sid].ot_costs == by_id_perm[sid].ot_costs
            assert by_id_base[sid].predicted_class == by_id_perm[sid].predicted_class

    def test_monotone_gate(self, rng):
        store = random_store(rng, classes=4, m=2, s=2, d=8)
        stream = make_stream(rng, 30, 4, 8, 4)
        counts = []
        for tau in (0.0, 0.5, 0.8, 0.95, 1.0):
            cfg = EngineConfig(tau=tau, top_s=2, prediction_temperature=0.05)
            _, _, summary = run_stream(stream, store, cfg)
            counts.append(summary.cache_updates)
        assert counts == sorted(counts, reverse=True)

    def test_bad_samples_skipped(self, rng):
        store = random_store(rng, classes=2, m=1, s=1, d=4)
        good = make_stream(rng, 3, 2, 4, 2)
        bad = StreamRecord(99, tuple(random_units(rng, 2, 6)))
        preds, _, summary = run_stream(good[:2] + [bad] + good[2:], store, EngineConfig())
        assert summary.total == 4
        assert summary.processed == 3
        assert len(summary.skipped) == 1
        assert summary.skipped[0][0] == 99
        assert [p.sample_id for p in preds] == [0, 1, 2]

    def test_s_zero_store_is_static(self, rng):
        store = random_store(rng, classes=3, m=2, s=0, d=6)
        stream = make_stream(rng, 6, 2, 6, 3)
        _, final, summary = run_stream(stream, store, EngineConfig(tau=0.0))
        assert summary.cache_updates == 0
        assert final is store


class TestZeroShotStream:
    def test_accuracy_and_skips(self, rng):
        classes = random_units(rng, 3, 5)
        records = [
            StreamRecord(0, (classes[1],), true_label=1),
            StreamRecord(1, (classes[2],), true_label=0),
            StreamRecord(2, tuple(random_units(rng, 1, 7)), true_label=2),
        ]
        preds, summary = zero_shot_stream(records, classes)
        assert summary.processed == 2
        assert len(summary.skipped) == 1
        assert preds[0].predicted_class == 1
        assert summary.accuracy == 0.5

    def test_unlabeled_gives_null_accuracy(self, rng):
        classes = random_units(rng, 2, 4)
        records = [StreamRecord(0, tuple(random_units(rng, 2, 4)))]
        _, summary = zero_shot_stream(records, classes)
        assert summary.accuracy is None
