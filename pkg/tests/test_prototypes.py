import math

import numpy as np
import pytest

from protomm.core import Matrix, ProbVector, UnitVector
from protomm.errors import DimensionError
from protomm.prototypes import (
    MultimodalPrototype,
    PrototypeStore,
    init_visual_particles,
    new_prototype,
    score_augmentations,
    select_top_s,
    uniform_weights,
    update_visual_particles,
)
from conftest import random_store, random_unit, random_units


class TestInitVisualParticles:
    def test_single_text_feature(self):
        t = UnitVector([1.0, 0.0])
        particles = init_visual_particles([t], 3)
        assert len(particles) == 3
        assert all(np.array_equal(p.values, t.values) for p in particles)

    def test_mean_renormalized(self):
        particles = init_visual_particles([UnitVector([1, 0]), UnitVector([0, 1])], 2)
        expected = np.array([0.5, 0.5]) / math.sqrt(0.5)
        assert np.allclose(particles[0].values, expected, atol=1e-12, rtol=0)

    def test_zero_particles(self):
        assert init_visual_particles([UnitVector([1, 0])], 0) == ()

    def test_degenerate_mean_falls_back_to_first_text(self):
        t0 = UnitVector([1.0, 0.0])
        particles = init_visual_particles([t0, UnitVector([-1.0, 0.0])], 1)
        assert np.array_equal(particles[0].values, t0.values)


class TestScoreAugmentations:
    def test_one_hot_weights_select_column(self):
        plan = Matrix([[0.1, 0.2], [0.3, 0.4]])
        theta = score_augmentations(plan, ProbVector([0.0, 1.0]))
        assert np.array_equal(theta, [0.2, 0.4])

    def test_zero_plan(self):
        plan = Matrix(np.zeros((3, 2)))
        assert np.array_equal(score_augmentations(plan, ProbVector([0.5, 0.5])), np.zeros(3))

    def test_direct_arithmetic(self):
        plan = Matrix([[0.25, 0.25], [0.25, 0.25]])
        theta = score_augmentations(plan, ProbVector([0.5, 0.5]))
        assert np.allclose(theta, [0.25, 0.25], atol=1e-15, rtol=0)

    def test_nonnegative(self, rng):
        plan = Matrix(rng.random((4, 6)))
        w = rng.random(6)
        theta = score_augmentations(plan, ProbVector(w / w.sum()))
        assert (theta >= 0.0).all()

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            score_augmentations(Matrix(np.ones((2, 3))), ProbVector([0.5, 0.5]))


class TestSelectTopS:
    def test_full_sort(self, rng):
        feats = random_units(rng, 3, 4)
        out = select_top_s(feats, [0.2, 0.9, 0.5], 3)
        assert [score for _, score in out] == [0.9, 0.5, 0.2]
        assert out[0][0] is feats[1]

    def test_argmax(self, rng):
        feats = random_units(rng, 3, 4)
        out = select_top_s(feats, [0.2, 0.9, 0.5], 1)
        assert len(out) == 1 and out[0][0] is feats[1]

    def test_tie_breaks_to_lower_index(self, rng):
        feats = random_units(rng, 2, 4)
        out = select_top_s(feats, [0.5, 0.5], 1)
        assert out[0][0] is feats[0]

    def test_clamps_to_available(self, rng):
        feats = random_units(rng, 2, 4)
        assert len(select_top_s(feats, [0.1, 0.2], 10)) == 2

    def test_zero_selection(self, rng):
        assert select_top_s(random_units(rng, 2, 4), [0.1, 0.2], 0) == []


def make_prototype(rng, m=2, s=2, d=4):
    return new_prototype(0, random_units(rng, m, d), s)


class TestUpdateVisualParticles:
    def test_zero_theta_keeps_particles_bit_identical(self, rng):
        proto = make_prototype(rng)
        cands = [(random_unit(rng, 4), 0.0), (random_unit(rng, 4), 0.0)]
        updated = update_visual_particles(proto, cands, uniform_weights(4))
        for old, new in zip(proto.visual_particles, updated.visual_particles):
            assert np.array_equal(old.values, new.values)

    def test_identical_candidate_is_fixed_point(self, rng):
        proto = make_prototype(rng)
        cands = [(proto.visual_particles[0], 3.7)]
        updated = update_visual_particles(proto, cands, uniform_weights(4))
        assert np.array_equal(
            updated.visual_particles[0].values, proto.visual_particles[0].values
        )

    def test_direct_arithmetic_blend(self):
        proto = MultimodalPrototype(
            class_id=0,
            text_features=(UnitVector([0.0, 1.0]),),
            visual_particles=(UnitVector([1.0, 0.0]),),
            last_weights=uniform_weights(2),
        )
        # slot weight 0.25, candidate weight 0.75: blend of e=(1,0) and
        # x=(0,1) at ratio 1:3 is (0.25, 0.75), normalized by sqrt(0.625)
        weights = ProbVector([0.75, 0.25])
        updated = update_visual_particles(proto, [(UnitVector([0.0, 1.0]), 0.75)], weights)
        expected = np.array([0.25, 0.75]) / math.sqrt(0.625)
        assert np.allclose(updated.visual_particles[0].values, expected, atol=1e-12, rtol=0)

    def test_unit_norm_after_updates(self, rng):
        proto = make_prototype(rng, m=3, s=4, d=8)
        for _ in range(20):
            theta = rng.random(4)
            cands = [(random_unit(rng, 8), float(t)) for t in theta]
            w = rng.random(7)
            proto = update_visual_particles(proto, cands, ProbVector(w / w.sum()))
            for p in proto.visual_particles:
                assert abs(np.linalg.norm(p.values) - 1.0) <= 1e-6

    def test_convex_combination_recovery(self, rng):
        proto = make_prototype(rng, m=1, s=1, d=6)
        x = random_unit(rng, 6)
        theta = 0.6
        w_vec = ProbVector([0.7, 0.3])
        updated = update_visual_particles(proto, [(x, theta)], w_vec)
        lam = 0.3 / (0.3 + theta)
        assert 0.0 <= lam <= 1.0
        blend = lam * proto.visual_particles[0].values + (1.0 - lam) * x.values
        assert np.allclose(
            updated.visual_particles[0].values,
            blend / np.linalg.norm(blend),
            atol=1e-12,
            rtol=0,
        )

    def test_vanishing_mass_keeps_particle(self, rng):
        proto = make_prototype(rng, m=1, s=1)
        weights = ProbVector([1.0, 0.0])  # particle slot carries zero weight
        updated = update_visual_particles(proto, [(random_unit(rng, 4), 5e-13)], weights)
        assert np.array_equal(
            updated.visual_particles[0].values, proto.visual_particles[0].values
        )

    def test_functional_update_leaves_original(self, rng):
        proto = make_prototype(rng)
        before = [p.values.copy() for p in proto.visual_particles]
        update_visual_particles(proto, [(random_unit(rng, 4), 1.0)], uniform_weights(4))
        for old, kept in zip(before, proto.visual_particles):
            assert np.array_equal(old, kept.values)

    def test_too_many_candidates_rejected(self, rng):
        proto = make_prototype(rng, s=1)
        cands = [(random_unit(rng, 4), 0.1), (random_unit(rng, 4), 0.2)]
        with pytest.raises(DimensionError):
            update_visual_particles(proto, cands, uniform_weights(3))

    def test_wrong_weight_length_rejected(self, rng):
        proto = make_prototype(rng)
        with pytest.raises(DimensionError):
            update_visual_particles(proto, [], uniform_weights(3))

    def test_last_weights_recorded(self, rng):
        proto = make_prototype(rng)
        w = ProbVector([0.4, 0.3, 0.2, 0.1])
        updated = update_visual_particles(proto, [], w)
        assert np.array_equal(updated.last_weights.values, w.values)

    def test_text_features_untouched(self, rng):
        proto = make_prototype(rng)
        updated = update_visual_particles(
            proto, [(random_unit(rng, 4), 2.0)], uniform_weights(4)
        )
        assert updated.text_features is proto.text_features


class TestStore:
    def test_with_prototype_replaces_only_target(self, rng):
        store = random_store(rng, classes=3, m=2, s=2, d=4)
        new_proto = update_visual_particles(
            store.prototypes[1], [(random_unit(rng, 4), 1.0)], uniform_weights(4)
        )
        updated = store.with_prototype(1, new_proto)
        assert updated.prototypes[0] is store.prototypes[0]
        assert updated.prototypes[2] is store.prototypes[2]
        assert updated.prototypes[1] is new_proto

    def test_class_ids_validated(self, rng):
        proto = new_prototype(1, random_units(rng, 2, 4), 1)
        with pytest.raises(DimensionError):
            PrototypeStore((proto,))

    def test_mixed_shapes_rejected(self, rng):
        a = new_prototype(0, random_units(rng, 2, 4), 1)
        b = new_prototype(1, random_units(rng, 3, 4), 1)
        with pytest.raises(DimensionError):
            PrototypeStore((a, b))

    def test_mean_reflects_particles(self, rng):
        proto = new_prototype(0, random_units(rng, 2, 4), 2)
        moved = update_visual_particles(
            proto, [(random_unit(rng, 4), 5.0), (random_unit(rng, 4), 5.0)], uniform_weights(4)
        )
        assert not np.array_equal(proto.mean.values, moved.mean.values)
        assert np.array_equal(proto.text_mean.values, moved.text_mean.values)
