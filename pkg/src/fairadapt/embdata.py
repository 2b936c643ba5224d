"""Embedding-dataset model, binary serialization, and a synthetic generator.

A dataset is the frozen world the adaptation engine works in: per-image
global/CLS/crop/strong-augmentation features plus per-class description
and prompt embeddings. Files store float32 payloads little-endian;
arrays are kept float32 in memory as well (the canonical at-rest dtype)
and upcast to float64 at the point of use by the scoring and training
code.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .align import EPS

MAGIC = b"FAIREMB1"
FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    """Raised when a dataset byte stream cannot be parsed."""


@dataclass
class DatasetHeader:
    """Shape and provenance metadata for an embedding dataset."""

    d: int
    d_cls: int
    num_images: int
    num_classes: int
    crops_per_image: int
    strong_variants: int
    descriptions_per_class: list[int]
    crop_scale_lo: float = 0.5
    crop_scale_hi: float = 0.9
    source_model_id: str = "unknown"
    rng_seed: int = 0
    has_labels: bool = False
    format_version: int = FORMAT_VERSION


@dataclass(eq=False)
class ImageRecord:
    """All precomputed features for one image.

    f_global / F_crops / F_strong live in the multimodal space (dim d);
    g_global / G_crops are CLS-token features (dim d_cls). The label is
    evaluation-only metadata.
    """

    f_global: np.ndarray  # (d,)
    g_global: np.ndarray  # (d_cls,)
    F_crops: np.ndarray  # (N, d)
    G_crops: np.ndarray  # (N, d_cls)
    F_strong: np.ndarray  # (R, d)
    label: int | None = None


@dataclass(eq=False)
class ClassRecord:
    """One class: name, description embeddings, and the plain-prompt embedding."""

    name: str
    descriptions: np.ndarray  # (M_y, d)
    prompt_embedding: np.ndarray  # (d,)


@dataclass(eq=False)
class EmbeddingDataset:
    header: DatasetHeader
    classes: list[ClassRecord] = field(default_factory=list)
    images: list[ImageRecord] = field(default_factory=list)

    @property
    def class_names(self) -> list[str]:
        return [c.name for c in self.classes]

    def labels(self) -> np.ndarray:
        """Labels as an int array with -1 marking absent."""
        return np.array(
            [-1 if im.label is None else im.label for im in self.images],
            dtype=np.int64,
        )


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def _check_rows(arr: np.ndarray, what: str, out: list[str]) -> None:
    rows = np.atleast_2d(np.asarray(arr, dtype=np.float64))
    if not np.all(np.isfinite(rows)):
        out.append(f"{what}: non-finite entry")
        return
    norms = np.linalg.norm(rows, axis=1)
    for j in np.flatnonzero(norms <= EPS):
        out.append(f"zero-norm feature at {what}, row {int(j)}")


def validate_header(header: DatasetHeader) -> list[str]:
    out: list[str] = []
    if header.format_version != FORMAT_VERSION:
        out.append(
            f"header: unsupported format_version {header.format_version}"
        )
    if header.d <= 0:
        out.append(f"header: d must be positive, got {header.d}")
    if header.d_cls <= 0:
        out.append(f"header: d_cls must be positive, got {header.d_cls}")
    if header.num_images < 0:
        out.append(f"header: num_images must be >= 0, got {header.num_images}")
    if header.num_classes < 2:
        out.append(f"header: need at least 2 classes, got {header.num_classes}")
    if header.crops_per_image < 1:
        out.append(f"header: crops_per_image must be >= 1, got {header.crops_per_image}")
    if header.strong_variants < 1:
        out.append(f"header: strong_variants must be >= 1, got {header.strong_variants}")
    if len(header.descriptions_per_class) != header.num_classes:
        out.append(
            "header: descriptions_per_class length "
            f"{len(header.descriptions_per_class)} != num_classes {header.num_classes}"
        )
    if any(m < 1 for m in header.descriptions_per_class):
        out.append("header: every class needs at least one description")
    if not (0.0 < header.crop_scale_lo <= header.crop_scale_hi <= 1.0):
        out.append(
            f"header: crop scales must satisfy 0 < lo <= hi <= 1, got "
            f"({header.crop_scale_lo}, {header.crop_scale_hi})"
        )
    return out


def validate_dataset(dataset: EmbeddingDataset) -> list[str]:
    """All invariant violations as named strings; empty means valid."""
    h = dataset.header
    out = validate_header(h)

    if len(dataset.classes) != h.num_classes:
        out.append(
            f"classes: expected {h.num_classes}, found {len(dataset.classes)}"
        )
    names = [c.name for c in dataset.classes]
    if len(set(names)) != len(names):
        out.append("classes: names not unique")
    for y, cls in enumerate(dataset.classes):
        desc = np.asarray(cls.descriptions)
        want_m = (
            h.descriptions_per_class[y]
            if y < len(h.descriptions_per_class)
            else None
        )
        if desc.ndim != 2 or desc.shape[1] != h.d:
            out.append(f"class {y} ({cls.name}): descriptions shape {desc.shape} != (M, {h.d})")
        elif want_m is not None and desc.shape[0] != want_m:
            out.append(
                f"class {y} ({cls.name}): {desc.shape[0]} descriptions, header says {want_m}"
            )
        else:
            _check_rows(desc, f"class {y} descriptions", out)
        prompt = np.asarray(cls.prompt_embedding)
        if prompt.shape != (h.d,):
            out.append(f"class {y} ({cls.name}): prompt embedding shape {prompt.shape} != ({h.d},)")
        else:
            _check_rows(prompt, f"class {y} prompt", out)

    if len(dataset.images) != h.num_images:
        out.append(
            f"images: expected {h.num_images}, found {len(dataset.images)}"
        )
    for i, im in enumerate(dataset.images):
        shapes = {
            "f_global": (np.asarray(im.f_global), (h.d,)),
            "g_global": (np.asarray(im.g_global), (h.d_cls,)),
            "F_crops": (np.asarray(im.F_crops), (h.crops_per_image, h.d)),
            "G_crops": (np.asarray(im.G_crops), (h.crops_per_image, h.d_cls)),
            "F_strong": (np.asarray(im.F_strong), (h.strong_variants, h.d)),
        }
        ok = True
        for fname, (arr, want) in shapes.items():
            if arr.shape != want:
                out.append(f"image {i}: {fname} shape {arr.shape} != {want}")
                ok = False
        if ok:
            _check_rows(im.f_global, f"image {i}, f_global", out)
            _check_rows(im.g_global, f"image {i}, g_global", out)
            # spell crop rows the way callers grep for them
            crops = np.asarray(im.F_crops, dtype=np.float64)
            if not np.all(np.isfinite(crops)):
                out.append(f"image {i}: F_crops has non-finite entry")
            else:
                for j in np.flatnonzero(np.linalg.norm(crops, axis=1) <= EPS):
                    out.append(f"zero-norm feature at image {i}, crop {int(j)}")
            _check_rows(im.G_crops, f"image {i}, G_crops", out)
            _check_rows(im.F_strong, f"image {i}, F_strong", out)
        if im.label is not None and not (0 <= im.label < h.num_classes):
            out.append(f"image {i}: label out of range ({im.label} not in [0, {h.num_classes}))")
        if h.has_labels and im.label is None:
            out.append(f"image {i}: label missing although header has_labels is true")
        if not h.has_labels and im.label is not None:
            out.append(f"image {i}: label present although header has_labels is false")
    return out


# ---------------------------------------------------------------------------
# binary format
# ---------------------------------------------------------------------------


def _header_json(dataset: EmbeddingDataset) -> bytes:
    h = dataset.header
    payload = {
        "format_version": h.format_version,
        "d": h.d,
        "d_cls": h.d_cls,
        "num_images": h.num_images,
        "num_classes": h.num_classes,
        "crops_per_image": h.crops_per_image,
        "strong_variants": h.strong_variants,
        "descriptions_per_class": list(h.descriptions_per_class),
        "crop_scale_lo": h.crop_scale_lo,
        "crop_scale_hi": h.crop_scale_hi,
        "source_model_id": h.source_model_id,
        "rng_seed": h.rng_seed,
        "has_labels": h.has_labels,
        "class_names": dataset.class_names,
    }
    return json.dumps(payload, sort_keys=True).encode("utf-8")


def _f32_bytes(arr) -> bytes:
    a = np.ascontiguousarray(np.asarray(arr, dtype=np.float32))
    return a.astype("<f4", copy=False).tobytes()


def write_dataset(dataset: EmbeddingDataset, sink) -> int:
    """Serialize a dataset to a binary sink. Returns the byte count.

    The dataset must be valid; violations raise ValueError before any
    bytes are written.
    """
    problems = validate_dataset(dataset)
    if problems:
        raise ValueError(
            "refusing to write invalid dataset: " + "; ".join(problems[:5])
        )
    header = _header_json(dataset)
    n = 0
    n += sink.write(MAGIC)
    n += sink.write(struct.pack("<I", len(header)))
    n += sink.write(header)
    for cls in dataset.classes:
        n += sink.write(_f32_bytes(cls.descriptions))
        n += sink.write(_f32_bytes(cls.prompt_embedding))
    for im in dataset.images:
        n += sink.write(_f32_bytes(im.f_global))
        n += sink.write(_f32_bytes(im.g_global))
        n += sink.write(_f32_bytes(im.F_crops))
        n += sink.write(_f32_bytes(im.G_crops))
        n += sink.write(_f32_bytes(im.F_strong))
        label = -1 if im.label is None else int(im.label)
        n += sink.write(struct.pack("<i", label))
    return n


def _read_exact(source, count: int, section: str) -> bytes:
    data = source.read(count)
    if len(data) != count:
        raise DatasetFormatError(
            f"truncated stream in {section} section: wanted {count} bytes, got {len(data)}"
        )
    return data


def _read_f32(source, shape: tuple[int, ...], section: str) -> np.ndarray:
    count = int(np.prod(shape))
    data = _read_exact(source, 4 * count, section)
    return np.frombuffer(data, dtype="<f4").reshape(shape).copy()


def read_dataset(source, validate: bool = True) -> EmbeddingDataset:
    """Parse a dataset from a binary source, validating as it goes.

    Raises DatasetFormatError naming the offending section on bad magic,
    version mismatch, truncation, or dimension problems. Header
    invariants are always enforced (payload sizes derive from them);
    pass validate=False to skip the final payload validation and get
    the raw parsed dataset, e.g. to report violations yourself.
    """
    magic = source.read(len(MAGIC))
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic: {magic!r}, expected {MAGIC!r}")
    (header_len,) = struct.unpack("<I", _read_exact(source, 4, "header"))
    try:
        meta = json.loads(_read_exact(source, header_len, "header"))
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"header section is not valid JSON: {exc}") from None

    try:
        class_names = meta.pop("class_names")
        header = DatasetHeader(**meta)
    except (KeyError, TypeError) as exc:
        raise DatasetFormatError(f"header section malformed: {exc}") from None
    problems = validate_header(header)
    if problems:
        raise DatasetFormatError("header invalid: " + "; ".join(problems))
    if len(class_names) != header.num_classes:
        raise DatasetFormatError(
            f"header invalid: {len(class_names)} class names for "
            f"{header.num_classes} classes"
        )

    classes = []
    for y, name in enumerate(class_names):
        m = header.descriptions_per_class[y]
        descriptions = _read_f32(source, (m, header.d), "classes")
        prompt = _read_f32(source, (header.d,), "classes")
        classes.append(ClassRecord(name=name, descriptions=descriptions, prompt_embedding=prompt))

    images = []
    n, r = header.crops_per_image, header.strong_variants
    for _ in range(header.num_images):
        f_global = _read_f32(source, (header.d,), "images")
        g_global = _read_f32(source, (header.d_cls,), "images")
        F_crops = _read_f32(source, (n, header.d), "images")
        G_crops = _read_f32(source, (n, header.d_cls), "images")
        F_strong = _read_f32(source, (r, header.d), "images")
        (label,) = struct.unpack("<i", _read_exact(source, 4, "images"))
        images.append(
            ImageRecord(
                f_global=f_global,
                g_global=g_global,
                F_crops=F_crops,
                G_crops=G_crops,
                F_strong=F_strong,
                label=None if label < 0 else label,
            )
        )

    dataset = EmbeddingDataset(header=header, classes=classes, images=images)
    if validate:
        problems = validate_dataset(dataset)
        if problems:
            raise DatasetFormatError("payload invalid: " + "; ".join(problems[:5]))
    return dataset


def save_dataset(dataset: EmbeddingDataset, path) -> int:
    with open(path, "wb") as fh:
        return write_dataset(dataset, fh)


def load_dataset(path) -> EmbeddingDataset:
    with open(path, "rb") as fh:
        return read_dataset(fh)


def dataset_to_bytes(dataset: EmbeddingDataset) -> bytes:
    buf = io.BytesIO()
    write_dataset(dataset, buf)
    return buf.getvalue()


def dataset_equal(a: EmbeddingDataset, b: EmbeddingDataset) -> bool:
    """Field-by-field equality, arrays compared bit-exactly."""
    if a.header != b.header:
        return False
    if len(a.classes) != len(b.classes) or len(a.images) != len(b.images):
        return False
    for ca, cb in zip(a.classes, b.classes):
        if ca.name != cb.name:
            return False
        if not np.array_equal(ca.descriptions, cb.descriptions):
            return False
        if not np.array_equal(ca.prompt_embedding, cb.prompt_embedding):
            return False
    for ia, ib in zip(a.images, b.images):
        if ia.label != ib.label:
            return False
        for fname in ("f_global", "g_global", "F_crops", "G_crops", "F_strong"):
            if not np.array_equal(getattr(ia, fname), getattr(ib, fname)):
                return False
    return True


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------


@dataclass
class SynthSpec:
    """Knobs for the synthetic embedding generator.

    cluster_separation moves class centroids from coincident (0.0)
    toward mutually orthogonal (1.0 and beyond); feature/crop/strong
    noise magnitudes are relative to the unit-norm centroids.
    """

    num_classes: int
    num_images: int
    d: int = 64
    d_cls: int = 48
    crops_per_image: int = 16
    strong_variants: int = 8
    descriptions_per_class: int = 5
    cluster_separation: float = 1.0
    feature_noise: float = 0.25
    crop_noise: float = 0.3
    description_noise: float = 0.3
    seed: int = 0


def synth_generate(spec: SynthSpec) -> EmbeddingDataset:
    """Deterministic clustered dataset for desk-scale experiments.

    Class centroids are unit vectors whose pairwise angle grows with
    cluster_separation; images scatter around their class centroid,
    crops and strong variants scatter around the image, CLS features
    are a fixed random linear projection of the multimodal features,
    and descriptions/prompts scatter around the centroid.
    """
    c, u, d = spec.num_classes, spec.num_images, spec.d
    if min(c, u, d, spec.d_cls, spec.crops_per_image, spec.strong_variants,
           spec.descriptions_per_class) < 1:
        raise ValueError("synth_generate: all dimensions must be positive")
    if c < 2:
        raise ValueError("synth_generate: need at least 2 classes")
    if spec.cluster_separation < 0:
        raise ValueError("synth_generate: cluster_separation must be >= 0")
    if c + 1 > d:
        raise ValueError(
            f"synth_generate: {c} separated centroids need d >= {c + 1}, got d={d}"
        )

    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))

    def noise(*shape):
        # expected row norm ~= 1, so noise scales read against unit centroids
        return rng.standard_normal(shape) / np.sqrt(d)

    # orthonormal frame: column 0 is the shared direction, columns 1..c
    # are the per-class components mixed in by cluster_separation
    q, _ = np.linalg.qr(rng.standard_normal((d, c + 1)))
    s = spec.cluster_separation
    mix = (1.0 - s) * q[:, :1] + s * q[:, 1:]
    centroids = (mix / np.linalg.norm(mix, axis=0)).T  # (c, d)

    projection = rng.standard_normal((spec.d_cls, d)) / np.sqrt(d)

    classes = []
    for y in range(c):
        descriptions = centroids[y] + spec.description_noise * noise(
            spec.descriptions_per_class, d
        )
        prompt = centroids[y] + spec.description_noise * noise(d)
        classes.append(
            ClassRecord(
                name=f"class_{y:03d}",
                descriptions=descriptions.astype(np.float32),
                prompt_embedding=prompt.astype(np.float32),
            )
        )

    images = []
    for i in range(u):
        label = i % c
        f = centroids[label] + spec.feature_noise * noise(d)
        crops = f + spec.crop_noise * noise(spec.crops_per_image, d)
        strong = f + spec.feature_noise * noise(spec.strong_variants, d)
        images.append(
            ImageRecord(
                f_global=f.astype(np.float32),
                g_global=(projection @ f).astype(np.float32),
                F_crops=crops.astype(np.float32),
                G_crops=(crops @ projection.T).astype(np.float32),
                F_strong=strong.astype(np.float32),
                label=label,
            )
        )

    header = DatasetHeader(
        d=d,
        d_cls=spec.d_cls,
        num_images=u,
        num_classes=c,
        crops_per_image=spec.crops_per_image,
        strong_variants=spec.strong_variants,
        descriptions_per_class=[spec.descriptions_per_class] * c,
        source_model_id="synthetic",
        rng_seed=spec.seed,
        has_labels=True,
    )
    return EmbeddingDataset(header=header, classes=classes, images=images)
