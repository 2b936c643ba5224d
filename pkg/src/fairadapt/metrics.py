"""Accuracy metrics and side-by-side zero-shot scorer comparison.

Accuracies are fractions on [0, 1] everywhere in this package; convert
to percent only when presenting. Classes with no ground-truth examples
report NaN per-class accuracy and are excluded from macro averages.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import align
from .align import DegenerateWeightsError
from .cda import CDA, Adapter, adapter_apply
from .embdata import EmbeddingDataset


@dataclass(eq=False)
class Metrics:
    """Top-1 and per-class accuracy with the full confusion matrix.

    confusion rows are ground truth, columns are predictions;
    support[y] is the number of ground-truth examples of class y.
    """

    top1: float
    per_class: np.ndarray  # (c,) fractions, NaN where support == 0
    confusion: np.ndarray  # (c, c) counts
    support: np.ndarray  # (c,) counts

    def macro_accuracy(self) -> float:
        """Mean per-class accuracy over classes with support."""
        defined = self.per_class[~np.isnan(self.per_class)]
        return float(defined.mean()) if defined.size else float("nan")


def _require_labels(dataset: EmbeddingDataset) -> np.ndarray:
    labels = dataset.labels()
    if np.any(labels < 0):
        raise ValueError("dataset has images without labels; cannot evaluate")
    return labels


def metrics_from_predictions(
    predictions: np.ndarray, labels: np.ndarray, num_classes: int
) -> Metrics:
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ValueError(
            f"{predictions.shape[0]} predictions for {labels.shape[0]} labels"
        )
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (labels, predictions), 1)
    support = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(
            support > 0, np.diag(confusion) / np.maximum(support, 1), np.nan
        )
    top1 = float(np.trace(confusion) / max(1, support.sum()))
    return Metrics(top1=top1, per_class=per_class, confusion=confusion, support=support)


def evaluate(dataset: EmbeddingDataset, cda: CDA, adapter: Adapter) -> Metrics:
    """Global-feature accuracy: adapted features scored against anchors."""
    labels = _require_labels(dataset)
    predictions = np.empty(len(dataset.images), dtype=np.int64)
    for i, im in enumerate(dataset.images):
        feat = adapter_apply(adapter, im.f_global)
        predictions[i] = align.predict_label(align.clip_score(feat, cda.anchors))
    return metrics_from_predictions(predictions, labels, cda.num_classes)


def pseudo_label_accuracy(batches, labels) -> float:
    """Fraction of pseudo-labels matching ground truth across batches.

    `batches` is any iterable of objects with a `labels` array (the
    pseudo-label batches of one epoch, in order); `labels` is the
    matching ground truth.
    """
    predicted = np.concatenate([np.asarray(b.labels) for b in batches])
    labels = np.asarray(labels)
    if predicted.shape != labels.shape:
        raise ValueError(
            f"{predicted.shape[0]} pseudo-labels for {labels.shape[0]} labels"
        )
    return float(np.mean(predicted == labels))


def _subsample(rng: np.random.Generator, n_total: int, n_use: int) -> np.ndarray:
    return rng.choice(n_total, size=n_use, replace=False)


def compare_scorers(
    dataset: EmbeddingDataset,
    cda: CDA,
    k: int,
    n_use: int,
    seed: int = 0,
) -> dict[str, Metrics]:
    """Zero-shot metrics for all four scorers on one labeled dataset.

    Plain prompt cosine ("clip"), description-ensemble mean ("cupl"),
    the doubly weighted crop score ("wca"), and the learned alignment
    score with the given anchors ("las"). The crop-based scorers share
    one seeded subsample of n_use crops per image.
    """
    labels = _require_labels(dataset)
    h = dataset.header
    if not 1 <= k <= n_use <= h.crops_per_image:
        raise ValueError(
            f"need 1 <= k <= n_use <= crops ({k}, {n_use}, {h.crops_per_image})"
        )
    prompts = np.stack([cls.prompt_embedding for cls in dataset.classes]).astype(
        np.float64
    )
    desc_weights = [
        align.wca_desc_weights(cls.prompt_embedding, cls.descriptions)
        for cls in dataset.classes
    ]

    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    preds = {name: np.empty(len(dataset.images), dtype=np.int64) for name in
             ("clip", "cupl", "wca", "las")}
    for i, im in enumerate(dataset.images):
        preds["clip"][i] = align.predict_label(align.clip_score(im.f_global, prompts))

        cupl = np.array(
            [align.cupl_score(im.f_global, cls.descriptions) for cls in dataset.classes]
        )
        preds["cupl"][i] = align.predict_label(
            align.ScoreVector(values=cupl, scorer_id=align.Scorer.CUPL)
        )

        idx = _subsample(rng, h.crops_per_image, n_use)
        crops = im.F_crops[idx]

        w_soft = align.wca_crop_weights(im.f_global, crops)
        wca = np.array(
            [
                align.wca_score(crops, cls.descriptions, w_soft, desc_weights[y])
                for y, cls in enumerate(dataset.classes)
            ]
        )
        preds["wca"][i] = align.predict_label(
            align.ScoreVector(values=wca, scorer_id=align.Scorer.WCA)
        )

        try:
            w_cls = align.fair_crop_weights(im.g_global, im.G_crops[idx])
        except DegenerateWeightsError:
            w_cls = align.uniform_crop_weights(n_use)
        sel = align.select_topk(w_cls, k)
        las = align.las_score(crops, cda.anchors, w_cls, sel)
        preds["las"][i] = align.predict_label(las)

    return {
        name: metrics_from_predictions(p, labels, h.num_classes)
        for name, p in preds.items()
    }


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def metrics_to_dict(metrics: Metrics) -> dict:
    return {
        "top1": metrics.top1,
        "macro_accuracy": metrics.macro_accuracy(),
        "per_class": [None if np.isnan(x) else float(x) for x in metrics.per_class],
        "support": metrics.support.tolist(),
        "confusion": metrics.confusion.tolist(),
    }


def metrics_to_json(metrics: Metrics, indent: int | None = 2) -> str:
    return json.dumps(metrics_to_dict(metrics), indent=indent, sort_keys=True)


def confusion_to_csv(metrics: Metrics, sink, class_names: list[str] | None = None) -> None:
    """Dense confusion grid: header row of predicted classes, one row per truth."""
    c = metrics.confusion.shape[0]
    names = class_names if class_names is not None else [str(j) for j in range(c)]
    writer = csv.writer(sink)
    writer.writerow(["truth\\pred", *names])
    for y in range(c):
        writer.writerow([names[y], *metrics.confusion[y].tolist()])
