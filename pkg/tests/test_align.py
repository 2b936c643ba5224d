"""Alignment scorer tests: worked examples plus loop-oracle equivalence."""

import math

import numpy as np
import pytest

import oracles
from fairadapt import align


def vec_with_cosines(sims):
    """2-d rows whose cosine against [1, 0] is exactly sims[i]."""
    return np.array([[s, math.sqrt(1.0 - s * s)] for s in sims])


class TestCosine:
    def test_identical_vectors(self):
        assert align.cosine_sim([1.0, 0.0], [1.0, 0.0]) == 1.0

    def test_orthogonal(self):
        assert align.cosine_sim([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_forty_five_degrees(self):
        assert align.cosine_sim([1.0, 1.0], [1.0, 0.0]) == pytest.approx(
            1.0 / math.sqrt(2.0), abs=1e-9
        )

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError, match="zero-norm"):
            align.cosine_sim([0.0, 0.0], [1.0, 0.0])

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mismatch"):
            align.cosine_sim([1.0, 0.0], [1.0, 0.0, 0.0])

    def test_matches_oracle_on_random_pairs(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            u = rng.standard_normal(8)
            v = rng.standard_normal(8)
            assert align.cosine_sim(u, v) == pytest.approx(
                oracles.cosine(u, v), abs=1e-12
            )


class TestClipScore:
    def test_feature_equal_to_row(self):
        prompts = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        scores = align.clip_score([1.0, 0.0, 0.0], prompts)
        assert scores.values[0] == 1.0
        assert align.predict_label(scores) == 0

    def test_orthogonal_to_all_rows(self):
        prompts = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        scores = align.clip_score([0.0, 0.0, 1.0], prompts)
        np.testing.assert_array_equal(scores.values, [0.0, 0.0])

    def test_random_matches_per_class_loop(self):
        rng = np.random.default_rng(1)
        f = rng.standard_normal(6)
        prompts = rng.standard_normal((3, 6))
        got = align.clip_score(f, prompts).values
        np.testing.assert_allclose(got, oracles.clip_scores(f, prompts), atol=1e-12)

    def test_zero_norm_row_names_class(self):
        prompts = np.array([[1.0, 0.0], [0.0, 0.0]])
        with pytest.raises(ValueError, match="row 1"):
            align.clip_score([1.0, 0.0], prompts)


class TestCuplScore:
    def test_single_description_reduces_to_clip(self):
        rng = np.random.default_rng(2)
        f = rng.standard_normal(5)
        row = rng.standard_normal((1, 5))
        assert align.cupl_score(f, row) == align.clip_score(f, row).values[0]

    def test_descriptions_equal_to_feature(self):
        f = np.array([0.3, -0.7, 0.1])
        descriptions = np.tile(f, (4, 1))
        assert align.cupl_score(f, descriptions) == pytest.approx(1.0, abs=1e-12)

    def test_matches_mean_of_cosines(self):
        rng = np.random.default_rng(3)
        f = rng.standard_normal(7)
        descriptions = rng.standard_normal((3, 7))
        assert align.cupl_score(f, descriptions) == pytest.approx(
            oracles.cupl(f, descriptions), abs=1e-12
        )


class TestWcaCropWeights:
    def test_identical_crops_give_uniform(self):
        crops = np.tile([0.2, 0.5], (5, 1))
        w = align.wca_crop_weights([1.0, 1.0], crops)
        np.testing.assert_allclose(w.values, 0.2, atol=1e-12)
        assert w.scheme is align.WeightScheme.SOFTMAX_GLOBAL_SIM

    def test_two_crops_softmax_values(self):
        crops = vec_with_cosines([1.0, 0.0])
        w = align.wca_crop_weights([1.0, 0.0], crops)
        e = math.e
        np.testing.assert_allclose(
            w.values, [e / (e + 1.0), 1.0 / (e + 1.0)], atol=1e-12
        )
        assert w.values[0] == pytest.approx(0.7311, abs=5e-5)

    def test_shift_invariance_of_softmax(self):
        rng = np.random.default_rng(4)
        f = rng.standard_normal(4)
        crops = rng.standard_normal((6, 4))
        w = align.wca_crop_weights(f, crops)
        sims = [oracles.cosine(f, crop) for crop in crops]
        np.testing.assert_allclose(w.values, oracles.softmax(sims), atol=1e-12)
        # adding a constant to every similarity leaves the weights unchanged
        np.testing.assert_allclose(
            w.values, oracles.softmax([s + 0.37 for s in sims]), atol=1e-12
        )


class TestWcaDescWeights:
    def test_single_description(self):
        v = align.wca_desc_weights([1.0, 0.0], np.array([[0.5, 0.5]]))
        np.testing.assert_array_equal(v.values, [1.0])

    def test_equal_descriptions_uniform(self):
        descs = np.tile([0.4, 0.1, 0.2], (3, 1))
        v = align.wca_desc_weights([1.0, 0.0, 0.0], descs)
        np.testing.assert_allclose(v.values, 1.0 / 3.0, atol=1e-12)

    def test_two_descriptions_known_sims(self):
        descs = vec_with_cosines([0.9, 0.1])
        v = align.wca_desc_weights([1.0, 0.0], descs)
        np.testing.assert_allclose(v.values, oracles.softmax([0.9, 0.1]), atol=1e-12)
        assert v.values[0] == pytest.approx(0.6900, abs=5e-5)
        assert v.values[1] == pytest.approx(0.3100, abs=5e-5)


class TestWcaScore:
    def test_single_crop_single_description(self):
        rng = np.random.default_rng(5)
        crop = rng.standard_normal((1, 4))
        desc = rng.standard_normal((1, 4))
        w = align.CropWeights(np.array([1.0]), align.WeightScheme.SOFTMAX_GLOBAL_SIM)
        v = align.DescWeights(np.array([1.0]))
        assert align.wca_score(crop, desc, w, v) == pytest.approx(
            oracles.cosine(crop[0], desc[0]), abs=1e-12
        )

    def test_uniform_weights_identical_inputs_give_theta_mean(self):
        crops = np.tile([1.0, 2.0], (3, 1))
        descs = np.tile([2.0, 1.0], (2, 1))
        w = align.CropWeights(np.full(3, 1 / 3), align.WeightScheme.SOFTMAX_GLOBAL_SIM)
        v = align.DescWeights(np.full(2, 0.5))
        theta = align.cross_alignment(crops, descs)
        assert align.wca_score(crops, descs, w, v) == pytest.approx(
            theta.mean(), abs=1e-12
        )

    def test_random_matches_double_loop(self):
        rng = np.random.default_rng(6)
        crops = rng.standard_normal((4, 5))
        descs = rng.standard_normal((3, 5))
        w = align.wca_crop_weights(rng.standard_normal(5), crops)
        v = align.wca_desc_weights(rng.standard_normal(5), descs)
        assert align.wca_score(crops, descs, w, v) == pytest.approx(
            oracles.wca(crops, descs, w.values, v.values), abs=1e-12
        )

    def test_weight_length_mismatch_rejected(self):
        crops = np.eye(3)
        w = align.CropWeights(np.array([0.5, 0.5]), align.WeightScheme.SOFTMAX_GLOBAL_SIM)
        v = align.DescWeights(np.array([1.0]))
        with pytest.raises(ValueError, match="weight lengths"):
            align.wca_score(crops, np.eye(3), w, v)


class TestFairCropWeights:
    def test_crops_equal_to_global_give_uniform(self):
        g = np.array([0.3, 0.4, 0.5])
        w = align.fair_crop_weights(g, np.tile(g, (4, 1)))
        np.testing.assert_allclose(w.values, 0.25, atol=1e-12)
        assert w.scheme is align.WeightScheme.CLS_SUM_NORMALIZED

    def test_two_crops_sum_normalization(self):
        crops = vec_with_cosines([0.8, 0.2])
        w = align.fair_crop_weights([1.0, 0.0], crops)
        np.testing.assert_allclose(w.values, [0.8, 0.2], atol=1e-12)

    def test_near_cancelling_sims_degenerate(self):
        crops = vec_with_cosines([0.5, -0.5 + 1e-9])
        with pytest.raises(align.DegenerateWeightsError):
            align.fair_crop_weights([1.0, 0.0], crops)

    def test_negative_weights_possible_but_sum_one(self):
        crops = vec_with_cosines([0.9, -0.2])
        w = align.fair_crop_weights([1.0, 0.0], crops)
        assert w.values[1] < 0
        assert w.values.sum() == pytest.approx(1.0, abs=1e-9)


class TestSelectTopK:
    def test_k_equals_n_selects_everything(self):
        w = align.CropWeights(np.array([0.5, 0.2, 0.3]), align.WeightScheme.CLS_SUM_NORMALIZED)
        sel = align.select_topk(w, 3)
        assert sel.k == 3
        assert sorted(sel.indices.tolist()) == [0, 1, 2]

    def test_tie_breaks_to_lower_index(self):
        w = align.CropWeights(np.array([0.1, 0.4, 0.4, 0.1]), align.WeightScheme.CLS_SUM_NORMALIZED)
        sel = align.select_topk(w, 2)
        assert sel.indices.tolist() == [1, 2]

    def test_matches_full_sort_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            vals = rng.random(8)
            w = align.CropWeights(vals, align.WeightScheme.CLS_SUM_NORMALIZED)
            sel = align.select_topk(w, 3)
            assert sel.indices.tolist() == oracles.topk(vals, 3)

    def test_k_out_of_range(self):
        w = align.CropWeights(np.array([1.0]), align.WeightScheme.CLS_SUM_NORMALIZED)
        with pytest.raises(ValueError, match="out of range"):
            align.select_topk(w, 2)
        with pytest.raises(ValueError, match="out of range"):
            align.select_topk(w, 0)


class TestLasScore:
    def test_k_equals_n_is_full_weighted_sum(self):
        rng = np.random.default_rng(8)
        crops = rng.standard_normal((4, 6))
        anchors = rng.standard_normal((3, 6))
        w = align.CropWeights(rng.dirichlet(np.ones(4)), align.WeightScheme.CLS_SUM_NORMALIZED)
        sel = align.select_topk(w, 4)
        got = align.las_score(crops, anchors, w, sel).values
        theta = align.cross_alignment(crops, anchors)
        np.testing.assert_allclose(got, w.values @ theta, atol=1e-12)

    def test_single_crop_matching_anchor(self):
        anchor = np.array([[1.0, 2.0, 3.0], [0.0, 1.0, 0.0]])
        crops = np.array([[1.0, 2.0, 3.0]])
        w = align.CropWeights(np.array([1.0]), align.WeightScheme.CLS_SUM_NORMALIZED)
        sel = align.TopKSelection(indices=np.array([0]), k=1)
        got = align.las_score(crops, anchor, w, sel).values
        assert got[0] == pytest.approx(1.0, abs=1e-12)

    def test_random_matches_masked_loop(self):
        rng = np.random.default_rng(9)
        crops = rng.standard_normal((5, 8))
        anchors = rng.standard_normal((3, 8))
        w = align.CropWeights(rng.random(5), align.WeightScheme.CLS_SUM_NORMALIZED)
        sel = align.select_topk(w, 2)
        got = align.las_score(crops, anchors, w, sel).values
        want = oracles.las(crops, anchors, w.values, sel.indices.tolist())
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_selected_weights_not_renormalized(self):
        crops = np.array([[1.0, 0.0], [1.0, 0.0]])
        anchors = np.array([[1.0, 0.0], [0.0, 1.0]])
        w = align.CropWeights(np.array([0.6, 0.4]), align.WeightScheme.CLS_SUM_NORMALIZED)
        sel = align.select_topk(w, 1)
        got = align.las_score(crops, anchors, w, sel).values
        assert got[0] == pytest.approx(0.6, abs=1e-12)  # mass of dropped crop is gone

    def test_renormalize_flag_rescales(self):
        crops = np.array([[1.0, 0.0], [1.0, 0.0]])
        anchors = np.array([[1.0, 0.0], [0.0, 1.0]])
        w = align.CropWeights(np.array([0.6, 0.4]), align.WeightScheme.CLS_SUM_NORMALIZED)
        sel = align.select_topk(w, 1)
        got = align.las_score(crops, anchors, w, sel, renormalize=True).values
        assert got[0] == pytest.approx(1.0, abs=1e-12)


class TestPredictLabel:
    def test_plain_argmax(self):
        sv = align.ScoreVector(np.array([0.1, 0.9, 0.3]), align.Scorer.LAS)
        assert align.predict_label(sv) == 1

    def test_tie_breaks_low(self):
        sv = align.ScoreVector(np.array([0.5, 0.5]), align.Scorer.CLIP)
        assert align.predict_label(sv) == 0

    def test_invariant_under_positive_scaling(self):
        rng = np.random.default_rng(10)
        for scorer in align.Scorer:
            values = rng.standard_normal(6)
            a = align.ScoreVector(values, scorer)
            b = align.ScoreVector(3.0 * values, scorer)
            assert align.predict_label(a) == align.predict_label(b)


class TestProperties:
    """Invariants over randomized instances."""

    def test_wca_weights_positive_and_normalized(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            n, d = rng.integers(1, 9), rng.integers(2, 17)
            crops = rng.standard_normal((n, d))
            f = rng.standard_normal(d)
            w = align.wca_crop_weights(f, crops)
            assert np.all(w.values > 0)
            assert w.values.sum() == pytest.approx(1.0, abs=1e-9)

    def test_fair_weights_sum_one_and_permutation_equivariant(self):
        rng = np.random.default_rng(12)
        for _ in range(30):
            n, d = int(rng.integers(1, 9)), int(rng.integers(2, 17))
            g = rng.standard_normal(d)
            crops = rng.standard_normal((n, d))
            try:
                w = align.fair_crop_weights(g, crops)
            except align.DegenerateWeightsError:
                continue
            assert w.values.sum() == pytest.approx(1.0, abs=1e-9)
            perm = rng.permutation(n)
            w_perm = align.fair_crop_weights(g, crops[perm])
            np.testing.assert_allclose(w_perm.values, w.values[perm], atol=1e-12)

    def test_las_with_uniform_weights_and_full_k_is_column_mean(self):
        rng = np.random.default_rng(13)
        crops = rng.standard_normal((6, 5))
        anchors = rng.standard_normal((4, 5))
        w = align.CropWeights(np.full(6, 1.0 / 6.0), align.WeightScheme.CLS_SUM_NORMALIZED)
        sel = align.select_topk(w, 6)
        theta = align.cross_alignment(crops, anchors)
        np.testing.assert_allclose(
            align.las_score(crops, anchors, w, sel).values,
            theta.mean(axis=0),
            atol=1e-12,
        )

    def test_cross_alignment_entries_in_cosine_range(self):
        rng = np.random.default_rng(14)
        for _ in range(20):
            theta = align.cross_alignment(
                rng.standard_normal((5, 7)), rng.standard_normal((4, 7))
            )
            assert np.all(theta >= -1.0) and np.all(theta <= 1.0)
