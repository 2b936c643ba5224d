"""Unsupervised adaptation of vision-language classifiers over precomputed embeddings.

The package operates on frozen embedding datasets (global, CLS-token,
crop, and strong-augmentation features plus per-class description
embeddings) and adapts a cosine classifier to them without labels:

- :mod:`fairadapt.embdata` -- dataset model, binary format, synthetic generator
- :mod:`fairadapt.align` -- alignment scores (prompt cosine, description
  ensemble, weighted crop alignment, learned alignment score)
- :mod:`fairadapt.cda` -- trainable class anchors, affine feature adapter,
  checkpoints
- :mod:`fairadapt.selftrain` -- pseudo-labeling, weighted self-training loss,
  analytic gradients, epoch loop
- :mod:`fairadapt.metrics` -- accuracy metrics and zero-shot scorer comparison
- :mod:`fairadapt.cli` -- command-line workflows
"""

from .align import (
    CropWeights,
    DegenerateWeightsError,
    DescWeights,
    Scorer,
    ScoreVector,
    TopKSelection,
    WeightScheme,
    clip_score,
    cosine_sim,
    cross_alignment,
    cupl_score,
    fair_crop_weights,
    las_score,
    predict_label,
    select_topk,
    wca_crop_weights,
    wca_desc_weights,
    wca_score,
)
from .cda import (
    CDA,
    Adapter,
    Checkpoint,
    adapter_apply,
    init_cda,
    load_checkpoint,
    save_checkpoint,
)
from .embdata import (
    ClassRecord,
    DatasetHeader,
    EmbeddingDataset,
    ImageRecord,
    SynthSpec,
    load_dataset,
    read_dataset,
    save_dataset,
    synth_generate,
    validate_dataset,
    write_dataset,
)
from .metrics import Metrics, compare_scorers, evaluate, pseudo_label_accuracy
from .selftrain import (
    PseudoLabelBatch,
    TrainConfig,
    TrainerState,
    compute_gradients,
    compute_loss,
    pseudo_label_batch,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "CDA",
    "Adapter",
    "Checkpoint",
    "ClassRecord",
    "CropWeights",
    "DatasetHeader",
    "DegenerateWeightsError",
    "DescWeights",
    "EmbeddingDataset",
    "ImageRecord",
    "Metrics",
    "PseudoLabelBatch",
    "Scorer",
    "ScoreVector",
    "SynthSpec",
    "TopKSelection",
    "TrainConfig",
    "TrainerState",
    "WeightScheme",
    "adapter_apply",
    "clip_score",
    "compare_scorers",
    "compute_gradients",
    "compute_loss",
    "cosine_sim",
    "cross_alignment",
    "cupl_score",
    "evaluate",
    "fair_crop_weights",
    "init_cda",
    "las_score",
    "load_checkpoint",
    "load_dataset",
    "predict_label",
    "pseudo_label_accuracy",
    "pseudo_label_batch",
    "read_dataset",
    "save_checkpoint",
    "save_dataset",
    "select_topk",
    "synth_generate",
    "train",
    "validate_dataset",
    "wca_crop_weights",
    "wca_desc_weights",
    "wca_score",
    "write_dataset",
]
