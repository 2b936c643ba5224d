"""Shared fixtures, including the tuned reference dataset.

The reference fixture (10 classes, 500 images, d=64) is tuned once per
session: cluster separation is found by bisection so that the
description-ensemble zero-shot accuracy lands inside the target band,
leaving the self-training loop real headroom to close.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fairadapt import align, cda, embdata, metrics

# frozen reference-fixture definition: everything but the separation,
# which bisection below pins against measured zero-shot accuracy
FIXTURE_KWARGS = dict(
    num_classes=10,
    num_images=500,
    d=64,
    d_cls=48,
    crops_per_image=16,
    strong_variants=8,
    descriptions_per_class=5,
    feature_noise=0.2,
    crop_noise=0.5,
    description_noise=1.5,
    seed=2024,
)
CUPL_TARGET = (0.60, 0.68)  # interior of the required 0.60-0.80 band


def make_fixture_dataset(separation: float) -> embdata.EmbeddingDataset:
    return embdata.synth_generate(
        embdata.SynthSpec(cluster_separation=separation, **FIXTURE_KWARGS)
    )


def cupl_zero_shot_accuracy(dataset: embdata.EmbeddingDataset) -> float:
    hits = 0
    for im in dataset.images:
        scores = [
            align.cupl_score(im.f_global, cls.descriptions) for cls in dataset.classes
        ]
        hits += int(np.argmax(scores)) == im.label
    return hits / len(dataset.images)


def tune_separation(lo: float = 0.02, hi: float = 1.2, max_iter: int = 30) -> float:
    """Bisection on cluster separation against measured zero-shot accuracy."""
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        acc = cupl_zero_shot_accuracy(make_fixture_dataset(mid))
        if CUPL_TARGET[0] <= acc <= CUPL_TARGET[1]:
            return mid
        if acc < CUPL_TARGET[0]:
            lo = mid
        else:
            hi = mid
    raise RuntimeError("bisection failed to land in the zero-shot target band")


@pytest.fixture(scope="session")
def reference_fixture():
    """Tuned dataset plus its zero-shot baselines, shared across tests."""
    separation = tune_separation()
    dataset = make_fixture_dataset(separation)
    anchors0 = cda.init_cda(dataset.classes)
    zero_shot = metrics.evaluate(
        dataset, anchors0, cda.Adapter.identity(anchors0.d)
    ).top1
    return {
        "dataset": dataset,
        "separation": separation,
        "cupl_accuracy": cupl_zero_shot_accuracy(dataset),
        "zero_shot_top1": zero_shot,
        "cupl_target": CUPL_TARGET,
    }


@pytest.fixture()
def small_dataset():
    """Fast well-separated dataset for plumbing tests."""
    return embdata.synth_generate(
        embdata.SynthSpec(
            num_classes=4,
            num_images=24,
            d=16,
            d_cls=12,
            crops_per_image=6,
            strong_variants=3,
            descriptions_per_class=3,
            cluster_separation=0.9,
            feature_noise=0.1,
            crop_noise=0.1,
            description_noise=0.1,
            seed=11,
        )
    )


def random_unit_rows(rng, n, d):
    """Random rows guaranteed comfortably away from the zero-norm guard."""
    rows = rng.standard_normal((n, d))
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    return rows / norms + 0.1 * rng.standard_normal((n, d))
