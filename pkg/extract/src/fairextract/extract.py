"""Extraction pipeline: images + class descriptions -> embedding dataset file.

Per image: the weak view is the centered square; the multimodal and
CLS features of that view become the global features. N random crops
with sides in [lo*min(W,H), hi*min(W,H)] provide the local views, and
R strong augmentations provide the self-training targets. Everything
is keyed on (seed, image index), so output bytes are independent of
batch size and unchanged by skipped neighbors.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from fairadapt.embdata import (
    ClassRecord,
    DatasetHeader,
    EmbeddingDataset,
    ImageRecord,
    save_dataset,
    validate_dataset,
)

from .augment import STRONG_POLICY, center_crop, random_crop, strong_augment
from .encoders import resolve_encoder
from .spec import ExtractSpec, load_class_names, load_descriptions, load_listing

log = logging.getLogger("fairextract")

_TAG_VIEWS = 17


class ExtractionError(RuntimeError):
    """The pipeline produced a dataset that fails validation."""


def encode_descriptions(spec: ExtractSpec, encoder=None) -> list[ClassRecord]:
    """Embed every class's description lines plus its plain prompt."""
    if encoder is None:
        encoder = resolve_encoder(spec.model_id)
    class_names = load_class_names(spec)
    descriptions = load_descriptions(spec, class_names)
    records = []
    for name in class_names:
        rows = encoder.encode_texts(descriptions[name])
        prompt = encoder.encode_texts([spec.prompt_template.format(name)])[0]
        records.append(
            ClassRecord(
                name=name,
                descriptions=rows.astype(np.float32),
                prompt_embedding=prompt.astype(np.float32),
            )
        )
    return records


def _image_views(spec: ExtractSpec, img: Image.Image, rng: np.random.Generator):
    views = [center_crop(img)]
    for _ in range(spec.crops_per_image):
        views.append(random_crop(rng, img, spec.crop_scale_lo, spec.crop_scale_hi))
    for _ in range(spec.strong_variants):
        views.append(strong_augment(rng, img))
    return views


def extract_dataset(spec: ExtractSpec) -> tuple[EmbeddingDataset, dict]:
    """Run the full pipeline and write the dataset plus its manifest.

    Undecodable images are skipped with a warning and recorded in the
    manifest; an unresolvable model aborts immediately.
    """
    spec.validate()
    encoder = resolve_encoder(spec.model_id)
    class_names = load_class_names(spec)
    entries = load_listing(spec, class_names)
    classes = encode_descriptions(spec, encoder)

    n, r = spec.crops_per_image, spec.strong_variants
    views_per_image = 1 + n + r
    skipped: list[dict] = []
    images: list[ImageRecord] = []
    labels: list[int | None] = []

    pending: list[tuple[int, Image.Image]] = []

    def flush():
        if not pending:
            return
        views = []
        for index, img in pending:
            rng = np.random.default_rng(
                np.random.SeedSequence([spec.seed, _TAG_VIEWS, index])
            )
            views.extend(_image_views(spec, img, rng))
        feats, cls_feats = encoder.encode_images(views)
        for slot, (index, _) in enumerate(pending):
            base = slot * views_per_image
            f = feats[base : base + views_per_image]
            g = cls_feats[base : base + views_per_image]
            images.append(
                ImageRecord(
                    f_global=f[0].astype(np.float32),
                    g_global=g[0].astype(np.float32),
                    F_crops=f[1 : 1 + n].astype(np.float32),
                    G_crops=g[1 : 1 + n].astype(np.float32),
                    F_strong=f[1 + n :].astype(np.float32),
                    label=entries[index].label,
                )
            )
            labels.append(entries[index].label)
        pending.clear()

    for index, entry in enumerate(entries):
        try:
            with Image.open(entry.path) as raw:
                img = raw.convert("RGB")
        except (FileNotFoundError, UnidentifiedImageError, OSError) as exc:
            log.warning("skipping %s: %s", entry.path, exc)
            skipped.append({"path": str(entry.path), "reason": str(exc)})
            continue
        pending.append((index, img))
        if len(pending) >= spec.batch_size:
            flush()
    flush()

    has_labels = bool(images) and labels[0] is not None
    header = DatasetHeader(
        d=encoder.d,
        d_cls=encoder.d_cls,
        num_images=len(images),
        num_classes=len(classes),
        crops_per_image=n,
        strong_variants=r,
        descriptions_per_class=[cls.descriptions.shape[0] for cls in classes],
        crop_scale_lo=spec.crop_scale_lo,
        crop_scale_hi=spec.crop_scale_hi,
        source_model_id=encoder.model_id,
        rng_seed=spec.seed,
        has_labels=has_labels,
    )
    dataset = EmbeddingDataset(header=header, classes=classes, images=images)
    problems = validate_dataset(dataset)
    if problems:
        raise ExtractionError(
            "extracted dataset fails validation: " + "; ".join(problems[:5])
        )

    save_dataset(dataset, spec.output_path)
    manifest = {
        "spec": asdict(spec),
        "model_id": encoder.model_id,
        "d": encoder.d,
        "d_cls": encoder.d_cls,
        "written_images": len(images),
        "skipped": skipped,
        "augmentation": {
            "weak": "center-crop",
            "crop_scale": [spec.crop_scale_lo, spec.crop_scale_hi],
            "strong": {k: list(v) if isinstance(v, tuple) else v
                       for k, v in STRONG_POLICY.items()},
        },
    }
    manifest_path = Path(str(spec.output_path) + ".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
    return dataset, manifest
