"""Metric and scorer-comparison tests."""

import io

import numpy as np
import pytest

import oracles
from fairadapt import embdata
from fairadapt.cda import CDA, Adapter, init_cda
from fairadapt.metrics import (
    compare_scorers,
    confusion_to_csv,
    evaluate,
    metrics_from_predictions,
    metrics_to_json,
    pseudo_label_accuracy,
)


class FakeBatch:
    def __init__(self, labels):
        self.labels = np.asarray(labels)


class TestEvaluate:
    def test_perfect_predictions_are_diagonal(self, small_dataset):
        anchors = init_cda(small_dataset.classes)
        m = evaluate(small_dataset, anchors, Adapter.identity(anchors.d))
        assert m.top1 == 1.0
        assert np.all(m.confusion == np.diag(m.support))
        np.testing.assert_array_equal(m.per_class, 1.0)

    def test_permuted_anchors_permute_confusion_columns(self, small_dataset):
        anchors = init_cda(small_dataset.classes)
        adapter = Adapter.identity(anchors.d)
        base = evaluate(small_dataset, anchors, adapter)
        assert base.top1 == 1.0
        perm = np.array([1, 2, 3, 0])  # derangement of the 4 classes
        shuffled = CDA(anchors=anchors.anchors[perm], class_names=anchors.class_names)
        moved = evaluate(small_dataset, shuffled, adapter)
        np.testing.assert_array_equal(moved.confusion, base.confusion[:, perm])
        assert moved.top1 == 0.0

    def test_matches_loop_and_count_oracle(self, small_dataset):
        rng = np.random.default_rng(0)
        c = small_dataset.header.num_classes
        anchors = CDA(
            anchors=rng.standard_normal((c, small_dataset.header.d)),
            class_names=[cls.name for cls in small_dataset.classes],
        )
        adapter = Adapter.identity(small_dataset.header.d)
        m = evaluate(small_dataset, anchors, adapter)

        hits = 0
        counts = np.zeros((c, c), dtype=int)
        for im in small_dataset.images:
            sims = oracles.clip_scores(im.f_global, anchors.anchors)
            pred = max(range(c), key=lambda j: (sims[j], -j))
            counts[im.label, pred] += 1
            hits += pred == im.label
        assert m.top1 == hits / len(small_dataset.images)
        np.testing.assert_array_equal(m.confusion, counts)

    def test_missing_labels_rejected(self, small_dataset):
        small_dataset.header.has_labels = False
        for im in small_dataset.images:
            im.label = None
        anchors = init_cda(small_dataset.classes)
        with pytest.raises(ValueError, match="labels"):
            evaluate(small_dataset, anchors, Adapter.identity(anchors.d))

    def test_image_order_does_not_matter(self, small_dataset):
        anchors = init_cda(small_dataset.classes)
        adapter = Adapter.identity(anchors.d)
        before = evaluate(small_dataset, anchors, adapter)
        rng = np.random.default_rng(1)
        order = rng.permutation(len(small_dataset.images))
        small_dataset.images = [small_dataset.images[i] for i in order]
        after = evaluate(small_dataset, anchors, adapter)
        assert before.top1 == after.top1
        np.testing.assert_array_equal(before.confusion, after.confusion)

    def test_zero_support_class_excluded_from_macro(self):
        preds = np.array([0, 0, 1])
        labels = np.array([0, 0, 1])
        m = metrics_from_predictions(preds, labels, num_classes=3)
        assert np.isnan(m.per_class[2])
        assert m.macro_accuracy() == 1.0
        assert m.top1 == pytest.approx(np.trace(m.confusion) / m.support.sum())


class TestPseudoLabelAccuracy:
    def test_all_correct(self):
        labels = np.array([0, 1, 2, 0, 1])
        assert pseudo_label_accuracy([FakeBatch(labels)], labels) == 1.0

    def test_shifted_labels_score_zero(self):
        labels = np.arange(6) % 3
        shifted = (labels + 1) % 3
        assert pseudo_label_accuracy([FakeBatch(shifted)], labels) == 0.0

    def test_seven_of_ten(self):
        labels = np.zeros(10, dtype=int)
        predicted = np.array([0] * 7 + [1] * 3)
        batches = [FakeBatch(predicted[:4]), FakeBatch(predicted[4:])]
        assert pseudo_label_accuracy(batches, labels) == 0.7

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="labels"):
            pseudo_label_accuracy([FakeBatch([0, 1])], np.array([0, 1, 2]))


class TestCompareScorers:
    def single_description_dataset(self):
        """Descriptions identical to prompts, M=1 everywhere."""
        ds = embdata.synth_generate(
            embdata.SynthSpec(
                num_classes=3, num_images=12, d=10, d_cls=6,
                crops_per_image=4, strong_variants=2,
                descriptions_per_class=1, cluster_separation=0.7,
                feature_noise=0.4, crop_noise=0.4, description_noise=0.4, seed=21,
            )
        )
        for cls in ds.classes:
            cls.descriptions = cls.prompt_embedding[None, :].copy()
        return ds

    def test_single_description_makes_clip_equal_cupl(self):
        ds = self.single_description_dataset()
        table = compare_scorers(ds, init_cda(ds.classes), k=2, n_use=3, seed=0)
        assert table["clip"].top1 == table["cupl"].top1
        np.testing.assert_array_equal(
            table["clip"].confusion, table["cupl"].confusion
        )

    def test_single_crop_collapses_wca_and_las(self):
        ds = self.single_description_dataset()
        table = compare_scorers(ds, init_cda(ds.classes), k=1, n_use=1, seed=0)
        np.testing.assert_array_equal(table["wca"].confusion, table["las"].confusion)

    def test_all_four_match_naive_reimplementation(self, small_dataset):
        k, n_use, seed = 2, 4, 3
        anchors = init_cda(small_dataset.classes)
        table = compare_scorers(small_dataset, anchors, k=k, n_use=n_use, seed=seed)

        c = small_dataset.header.num_classes
        rng = np.random.default_rng(np.random.SeedSequence([seed]))
        hits = {name: 0 for name in ("clip", "cupl", "wca", "las")}
        for im in small_dataset.images:
            prompts = [cls.prompt_embedding for cls in small_dataset.classes]
            clip_pred = int(np.argmax(oracles.clip_scores(im.f_global, prompts)))
            cupl_pred = int(
                np.argmax(
                    [oracles.cupl(im.f_global, cls.descriptions) for cls in small_dataset.classes]
                )
            )
            idx = rng.choice(small_dataset.header.crops_per_image, size=n_use, replace=False)
            crops = im.F_crops[idx]
            w = oracles.wca_weights(im.f_global, crops)
            wca_scores = []
            for cls in small_dataset.classes:
                v = oracles.desc_weights(cls.prompt_embedding, cls.descriptions)
                wca_scores.append(oracles.wca(crops, cls.descriptions, w, v))
            wca_pred = int(np.argmax(wca_scores))
            fw, _ = oracles.fair_weights(im.g_global, im.G_crops[idx])
            sel = oracles.topk(fw, k)
            las_pred = int(np.argmax(oracles.las(crops, anchors.anchors, fw, sel)))
            truth = im.label
            hits["clip"] += clip_pred == truth
            hits["cupl"] += cupl_pred == truth
            hits["wca"] += wca_pred == truth
            hits["las"] += las_pred == truth

        n = len(small_dataset.images)
        for name in hits:
            assert table[name].top1 == pytest.approx(hits[name] / n, abs=1e-12)

    def test_clip_column_equals_evaluate_with_prompt_anchors(self, small_dataset):
        anchors = init_cda(small_dataset.classes)
        table = compare_scorers(small_dataset, anchors, k=2, n_use=4, seed=0)
        prompt_cda = CDA(
            anchors=np.stack([c.prompt_embedding for c in small_dataset.classes]).astype(np.float64),
            class_names=[c.name for c in small_dataset.classes],
        )
        via_eval = evaluate(small_dataset, prompt_cda, Adapter.identity(prompt_cda.d))
        assert table["clip"].top1 == via_eval.top1
        np.testing.assert_array_equal(table["clip"].confusion, via_eval.confusion)

    def test_bad_subsample_arguments_rejected(self, small_dataset):
        anchors = init_cda(small_dataset.classes)
        with pytest.raises(ValueError, match="n_use"):
            compare_scorers(small_dataset, anchors, k=3, n_use=2)
        with pytest.raises(ValueError):
            compare_scorers(small_dataset, anchors, k=1, n_use=99)


class TestExport:
    def test_json_round_trips_and_is_deterministic(self):
        m = metrics_from_predictions(np.array([0, 1, 1]), np.array([0, 1, 0]), 2)
        a = metrics_to_json(m)
        b = metrics_to_json(m)
        assert a == b
        import json

        parsed = json.loads(a)
        assert parsed["top1"] == m.top1
        assert parsed["confusion"] == m.confusion.tolist()

    def test_confusion_csv_grid(self):
        m = metrics_from_predictions(np.array([0, 1, 1]), np.array([0, 1, 0]), 2)
        sink = io.StringIO()
        confusion_to_csv(m, sink, class_names=["cat", "dog"])
        lines = sink.getvalue().strip().splitlines()
        assert lines[0].split(",") == ["truth\\pred", "cat", "dog"]
        assert lines[1].split(",") == ["cat", "1", "1"]
        assert lines[2].split(",") == ["dog", "0", "1"]
