"""Extraction job description and its on-disk inputs.

A job points at an image root plus a split listing (one image per
line, optionally tab-separated from its class name), a class-name
list, and a directory of per-class description files
(`<class name>.txt`, one description per line).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

PROMPT_TEMPLATE = "a photo of a {}"


@dataclass
class ExtractSpec:
    image_root: str
    listing_file: str
    class_names_file: str
    descriptions_dir: str
    model_id: str
    output_path: str
    crops_per_image: int = 16
    strong_variants: int = 8
    crop_scale_lo: float = 0.5
    crop_scale_hi: float = 0.9
    seed: int = 0
    batch_size: int = 8
    prompt_template: str = PROMPT_TEMPLATE

    def validate(self) -> None:
        if self.crops_per_image < 1 or self.strong_variants < 1:
            raise ValueError("need at least one crop and one strong variant per image")
        if not (0.0 < self.crop_scale_lo <= self.crop_scale_hi <= 1.0):
            raise ValueError(
                f"crop scales must satisfy 0 < lo <= hi <= 1, got "
                f"({self.crop_scale_lo}, {self.crop_scale_hi})"
            )
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class ListingEntry:
    path: Path
    label: int | None = None


def load_class_names(spec: ExtractSpec) -> list[str]:
    names = [
        line.strip()
        for line in Path(spec.class_names_file).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    if len(names) < 2:
        raise ValueError(f"class list {spec.class_names_file} needs at least 2 names")
    if len(set(names)) != len(names):
        raise ValueError(f"class list {spec.class_names_file} has duplicate names")
    return names


def load_listing(spec: ExtractSpec, class_names: list[str]) -> list[ListingEntry]:
    """Parse the split listing; labels must be all present or all absent."""
    index = {name: i for i, name in enumerate(class_names)}
    root = Path(spec.image_root)
    entries: list[ListingEntry] = []
    for lineno, raw in enumerate(
        Path(spec.listing_file).read_text(encoding="utf-8").splitlines(), start=1
    ):
        line = raw.strip()
        if not line:
            continue
        parts = line.split("\t")
        rel = parts[0]
        label = None
        if len(parts) > 1 and parts[1]:
            if parts[1] not in index:
                raise ValueError(
                    f"{spec.listing_file}:{lineno}: unknown class {parts[1]!r}"
                )
            label = index[parts[1]]
        entries.append(ListingEntry(path=root / rel, label=label))
    if not entries:
        raise ValueError(f"listing {spec.listing_file} is empty")
    labeled = sum(e.label is not None for e in entries)
    if labeled not in (0, len(entries)):
        raise ValueError(
            f"listing {spec.listing_file} mixes labeled and unlabeled entries"
        )
    return entries


def load_descriptions(spec: ExtractSpec, class_names: list[str]) -> dict[str, list[str]]:
    """One description file per class; empty or missing files are errors."""
    out: dict[str, list[str]] = {}
    folder = Path(spec.descriptions_dir)
    for name in class_names:
        path = folder / f"{name}.txt"
        if not path.exists():
            raise ValueError(f"no description file for class {name!r} at {path}")
        lines = [
            line.strip()
            for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        if not lines:
            raise ValueError(f"description file for class {name!r} is empty")
        out[name] = lines
    return out
