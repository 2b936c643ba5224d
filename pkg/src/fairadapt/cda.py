"""Trainable state: class anchors and the affine feature adapter.

The anchor matrix is the adaptive classifier (one row per class,
initialized as the mean of that class's description embeddings). The
adapter is a per-dimension scale/shift on multimodal image features,
standing in for layer-norm style fine-tuning of an image encoder while
keeping the artifact framework-free. A fresh adapter is the identity.

Checkpoints serialize both to a compact little-endian binary file with
float32 payloads.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .embdata import ClassRecord

CKPT_MAGIC = b"FAIRCKP1"


class CheckpointFormatError(ValueError):
    """Raised when a checkpoint byte stream cannot be parsed."""


@dataclass(eq=False)
class CDA:
    """Class anchor matrix (c, d) plus the class-name order defining indices."""

    anchors: np.ndarray
    class_names: list[str]

    @property
    def num_classes(self) -> int:
        return self.anchors.shape[0]

    @property
    def d(self) -> int:
        return self.anchors.shape[1]

    def copy(self) -> "CDA":
        return CDA(anchors=self.anchors.copy(), class_names=list(self.class_names))


@dataclass(eq=False)
class Adapter:
    """Elementwise scale/shift over multimodal features."""

    scale: np.ndarray
    shift: np.ndarray

    @classmethod
    def identity(cls, d: int) -> "Adapter":
        return cls(scale=np.ones(d), shift=np.zeros(d))

    def copy(self) -> "Adapter":
        return Adapter(scale=self.scale.copy(), shift=self.shift.copy())


@dataclass(eq=False)
class Checkpoint:
    cda: CDA
    adapter: Adapter
    epoch: int
    config_hash: str


def init_cda(classes: list[ClassRecord], normalize_descriptions: bool = False) -> CDA:
    """Anchor per class = plain mean of its description embeddings.

    No normalization is applied after averaging; set
    normalize_descriptions to unit-normalize each description before
    the mean (ablation variant).
    """
    anchors = np.empty((len(classes), 0))
    rows = []
    for cls in classes:
        desc = np.asarray(cls.descriptions, dtype=np.float64)
        if desc.ndim != 2 or desc.shape[0] < 1:
            raise ValueError(f"init_cda: class {cls.name!r} has no descriptions")
        if normalize_descriptions:
            norms = np.linalg.norm(desc, axis=1, keepdims=True)
            if np.any(norms == 0):
                raise ValueError(
                    f"init_cda: class {cls.name!r} has a zero-norm description"
                )
            desc = desc / norms
        rows.append(desc.mean(axis=0))
    anchors = np.stack(rows)
    return CDA(anchors=anchors, class_names=[cls.name for cls in classes])


def adapter_apply(adapter: Adapter, feature) -> np.ndarray:
    """Elementwise scale * feature + shift, in float64."""
    feature = np.asarray(feature, dtype=np.float64)
    if feature.shape[-1] != adapter.scale.shape[0]:
        raise ValueError(
            f"adapter_apply: feature dim {feature.shape[-1]} != adapter dim "
            f"{adapter.scale.shape[0]}"
        )
    return adapter.scale * feature + adapter.shift


def save_checkpoint(ckpt: Checkpoint, sink) -> int:
    """Serialize a checkpoint; float payloads are cast to float32."""
    c, d = ckpt.cda.anchors.shape
    if ckpt.adapter.scale.shape != (d,) or ckpt.adapter.shift.shape != (d,):
        raise ValueError("save_checkpoint: adapter dimensions do not match anchors")
    if len(ckpt.cda.class_names) != c:
        raise ValueError("save_checkpoint: class name count does not match anchors")
    meta = json.dumps(
        {
            "c": c,
            "d": d,
            "epoch": ckpt.epoch,
            "config_hash": ckpt.config_hash,
            "class_names": ckpt.cda.class_names,
        },
        sort_keys=True,
    ).encode("utf-8")
    n = sink.write(CKPT_MAGIC)
    n += sink.write(struct.pack("<I", len(meta)))
    n += sink.write(meta)
    for arr in (ckpt.cda.anchors, ckpt.adapter.scale, ckpt.adapter.shift):
        n += sink.write(
            np.ascontiguousarray(arr, dtype=np.float32).astype("<f4", copy=False).tobytes()
        )
    return n


def _read_exact(source, count: int, what: str) -> bytes:
    data = source.read(count)
    if len(data) != count:
        raise CheckpointFormatError(f"truncated checkpoint in {what}")
    return data


def load_checkpoint(source) -> Checkpoint:
    """Parse a checkpoint; arrays come back float32, exactly as stored."""
    magic = source.read(len(CKPT_MAGIC))
    if magic != CKPT_MAGIC:
        raise CheckpointFormatError(f"bad magic: {magic!r}, expected {CKPT_MAGIC!r}")
    (meta_len,) = struct.unpack("<I", _read_exact(source, 4, "header"))
    try:
        meta = json.loads(_read_exact(source, meta_len, "header"))
        c, d = int(meta["c"]), int(meta["d"])
        epoch = int(meta["epoch"])
        config_hash = str(meta["config_hash"])
        class_names = list(meta["class_names"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"malformed checkpoint header: {exc}") from None
    if c < 1 or d < 1:
        raise CheckpointFormatError(f"bad checkpoint dimensions c={c}, d={d}")
    if len(class_names) != c:
        raise CheckpointFormatError(
            f"{len(class_names)} class names for {c} anchor rows"
        )

    def read_f32(shape, what):
        count = int(np.prod(shape))
        data = _read_exact(source, 4 * count, what)
        return np.frombuffer(data, dtype="<f4").reshape(shape).copy()

    anchors = read_f32((c, d), "anchors")
    scale = read_f32((d,), "adapter scale")
    shift = read_f32((d,), "adapter shift")
    if not (np.all(np.isfinite(anchors)) and np.all(np.isfinite(scale)) and np.all(np.isfinite(shift))):
        raise CheckpointFormatError("checkpoint payload has non-finite values")
    return Checkpoint(
        cda=CDA(anchors=anchors, class_names=class_names),
        adapter=Adapter(scale=scale, shift=shift),
        epoch=epoch,
        config_hash=config_hash,
    )


def save_checkpoint_file(ckpt: Checkpoint, path) -> int:
    with open(path, "wb") as fh:
        return save_checkpoint(ckpt, fh)


def load_checkpoint_file(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return load_checkpoint(fh)


def check_resume_hash(ckpt: Checkpoint, config_hash: str) -> bool:
    """Warn (and return False) when resuming under a different config."""
    if ckpt.config_hash != config_hash:
        warnings.warn(
            f"checkpoint was written under config {ckpt.config_hash}, "
            f"resuming under {config_hash}",
            RuntimeWarning,
            stacklevel=2,
        )
        return False
    return True


def checkpoint_equal(a: Checkpoint, b: Checkpoint) -> bool:
    return (
        a.epoch == b.epoch
        and a.config_hash == b.config_hash
        and a.cda.class_names == b.cda.class_names
        and np.array_equal(a.cda.anchors, b.cda.anchors)
        and np.array_equal(a.adapter.scale, b.adapter.scale)
        and np.array_equal(a.adapter.shift, b.adapter.shift)
    )
