"""Alignment scoring primitives for embedding classifiers.

Every scorer here is a pure function over numpy arrays: plain cosine
scoring against class prompts, description-ensemble scoring, the
crop-weighted cross-alignment score, and the learned alignment score
over trainable class anchors together with its crop-weight and top-k
machinery. No state, no learning; callers batch.

All inputs are converted to float64 before any arithmetic. Cosine
values are clipped into [-1, 1] so downstream weights stay in range.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

# Guard threshold for zero-norm operands and near-cancelling weight
# denominators. Far above double round-off, far below any meaningful
# similarity mass.
EPS = 1e-6


class Scorer(Enum):
    CLIP = "clip"
    CUPL = "cupl"
    WCA = "wca"
    LAS = "las"


class WeightScheme(Enum):
    SOFTMAX_GLOBAL_SIM = "softmax_global_sim"
    CLS_SUM_NORMALIZED = "cls_sum_normalized"


class DegenerateWeightsError(ValueError):
    """Sum-normalized crop weights are undefined: similarities cancel.

    Callers that can tolerate this (the pseudo-labeler) fall back to
    uniform weights and record the fallback.
    """


@dataclass
class ScoreVector:
    """Per-class alignment scores for one image."""

    values: np.ndarray
    scorer_id: Scorer


@dataclass
class CropWeights:
    """Relevance weights over an image's crops, summing to 1."""

    values: np.ndarray
    scheme: WeightScheme


@dataclass
class DescWeights:
    """Softmax relevance weights over one class's descriptions."""

    values: np.ndarray


@dataclass
class TopKSelection:
    """Indices of the k most relevant crops, best first."""

    indices: np.ndarray
    k: int


def _as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _checked_norms(rows: np.ndarray, what: str) -> np.ndarray:
    """Row norms of a 2-d array, raising if any row is (near) zero."""
    norms = np.linalg.norm(rows, axis=-1)
    bad = np.flatnonzero(norms <= EPS)
    if bad.size:
        raise ValueError(f"zero-norm {what} at row {bad[0]}")
    return norms


def cosine_sim(u, v) -> float:
    """Cosine similarity of two vectors, clipped to [-1, 1].

    Raises ValueError on dimension mismatch or a (near) zero-norm
    operand.
    """
    u = _as_f64(u)
    v = _as_f64(v)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu <= EPS or nv <= EPS:
        raise ValueError("zero-norm operand in cosine similarity")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def cosine_rows(f, rows, what: str = "row") -> np.ndarray:
    """Cosine of one vector against every row of a matrix."""
    f = _as_f64(f)
    rows = _as_f64(rows)
    if rows.ndim != 2 or rows.shape[1] != f.shape[0]:
        raise ValueError(f"dimension mismatch: {f.shape} vs {rows.shape}")
    nf = np.linalg.norm(f)
    if nf <= EPS:
        raise ValueError("zero-norm query vector")
    norms = _checked_norms(rows, what)
    return np.clip(rows @ f / (norms * nf), -1.0, 1.0)


def cross_alignment(features, anchors) -> np.ndarray:
    """Pairwise cosine matrix: rows = feature rows, cols = anchor rows.

    This is the cross-alignment matrix underlying both the
    description-ensemble score (anchors = description embeddings) and
    the learned alignment score (anchors = class anchors). Entries lie
    in [-1, 1].
    """
    features = _as_f64(features)
    anchors = _as_f64(anchors)
    if features.ndim != 2 or anchors.ndim != 2 or features.shape[1] != anchors.shape[1]:
        raise ValueError(
            f"dimension mismatch: {features.shape} vs {anchors.shape}"
        )
    fn = _checked_norms(features, "feature")
    an = _checked_norms(anchors, "anchor")
    sims = (features @ anchors.T) / np.outer(fn, an)
    return np.clip(sims, -1.0, 1.0)


def clip_score(f, class_prompts) -> ScoreVector:
    """Cosine of a global feature against one prompt embedding per class."""
    try:
        values = cosine_rows(f, class_prompts, what="class prompt")
    except ValueError as exc:
        raise ValueError(f"clip_score: {exc}") from None
    return ScoreVector(values=values, scorer_id=Scorer.CLIP)


def cupl_score(f, descriptions) -> float:
    """Mean cosine of a feature against a class's description embeddings."""
    descriptions = _as_f64(descriptions)
    if descriptions.shape[0] < 1:
        raise ValueError("cupl_score: need at least one description")
    return float(np.mean(cosine_rows(f, descriptions, what="description")))


def wca_crop_weights(f_global, F_crops) -> CropWeights:
    """Softmax weights over crops from global-to-crop cosine similarity."""
    sims = cosine_rows(f_global, F_crops, what="crop")
    shifted = np.exp(sims - sims.max())
    return CropWeights(
        values=shifted / shifted.sum(), scheme=WeightScheme.SOFTMAX_GLOBAL_SIM
    )


def wca_desc_weights(prompt_embedding, descriptions) -> DescWeights:
    """Softmax weights over descriptions from prompt-to-description cosine."""
    sims = cosine_rows(prompt_embedding, descriptions, what="description")
    shifted = np.exp(sims - sims.max())
    return DescWeights(values=shifted / shifted.sum())


def wca_score(F_crops, descriptions, w: CropWeights, v: DescWeights) -> float:
    """Doubly weighted sum over the crop-description cosine matrix."""
    theta = cross_alignment(F_crops, descriptions)
    if w.values.shape[0] != theta.shape[0] or v.values.shape[0] != theta.shape[1]:
        raise ValueError(
            f"wca_score: weight lengths {w.values.shape[0]}/{v.values.shape[0]} "
            f"do not match alignment matrix {theta.shape}"
        )
    return float(w.values @ theta @ v.values)


def fair_crop_weights(g_global, G_crops) -> CropWeights:
    """Sum-normalized (not softmax) crop weights from CLS-token cosines.

    Raises DegenerateWeightsError when the similarities nearly cancel
    and the normalization is undefined; callers typically fall back to
    uniform weights.
    """
    sims = cosine_rows(g_global, G_crops, what="crop CLS")
    denom = sims.sum()
    if abs(denom) <= EPS:
        raise DegenerateWeightsError(
            f"crop CLS similarities sum to {denom:.3e}; weights undefined"
        )
    return CropWeights(values=sims / denom, scheme=WeightScheme.CLS_SUM_NORMALIZED)


def uniform_crop_weights(n: int) -> CropWeights:
    """Uniform fallback weights for the degenerate-denominator case."""
    return CropWeights(
        values=np.full(n, 1.0 / n), scheme=WeightScheme.CLS_SUM_NORMALIZED
    )


def select_topk(w: CropWeights, k: int) -> TopKSelection:
    """Indices of the k largest weights.

    Ties break toward the lower index; the result is ordered by
    descending weight, then ascending index.
    """
    n = w.values.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"select_topk: k={k} out of range [1, {n}]")
    order = np.lexsort((np.arange(n), -w.values))
    return TopKSelection(indices=order[:k].copy(), k=k)


def las_score(
    F_crops, anchors, w: CropWeights, sel: TopKSelection, renormalize: bool = False
) -> ScoreVector:
    """Learned alignment score: weighted crop-to-anchor cosines over top-k crops.

    The selected weights are NOT renormalized by default -- the score is
    the masked weighted sum, so dropping crops drops their mass. Pass
    renormalize=True for the rescaled ablation variant.
    """
    theta = cross_alignment(F_crops, anchors)
    if w.values.shape[0] != theta.shape[0]:
        raise ValueError(
            f"las_score: {w.values.shape[0]} weights for {theta.shape[0]} crops"
        )
    picked = w.values[sel.indices]
    if renormalize:
        total = picked.sum()
        if abs(total) <= EPS:
            raise DegenerateWeightsError("selected crop weights sum to ~0")
        picked = picked / total
    values = picked @ theta[sel.indices]
    return ScoreVector(values=values, scorer_id=Scorer.LAS)


def predict_label(scores: ScoreVector) -> int:
    """Argmax class index; ties break to the lowest index."""
    if scores.values.shape[0] == 0:
        raise ValueError("predict_label: empty score vector")
    return int(np.argmax(scores.values))
