"""Shared fixtures: a tiny on-disk image tree with listings and descriptions."""

import numpy as np
import pytest
from PIL import Image

from fairextract import ExtractSpec

CLASSES = ["red things", "green things", "blue things"]


def _make_image(rng, channel, size):
    pixels = rng.integers(0, 60, size=(size[1], size[0], 3), dtype=np.uint8)
    pixels[..., channel] = rng.integers(150, 255, size=(size[1], size[0]), dtype=np.uint8)
    return Image.fromarray(pixels, mode="RGB")


@pytest.fixture()
def image_tree(tmp_path):
    """Images + listing + class names + per-class descriptions on disk."""
    rng = np.random.default_rng(123)
    root = tmp_path / "images"
    root.mkdir()
    lines = []
    sizes = [(48, 48), (64, 40), (40, 64), (48, 48)]
    for channel, name in enumerate(CLASSES):
        for j, size in enumerate(sizes):
            rel = f"{name.replace(' ', '_')}_{j}.png"
            _make_image(rng, channel, size).save(root / rel)
            lines.append(f"{rel}\t{name}")

    listing = tmp_path / "split.tsv"
    listing.write_text("\n".join(lines) + "\n", encoding="utf-8")

    names_file = tmp_path / "classes.txt"
    names_file.write_text("\n".join(CLASSES) + "\n", encoding="utf-8")

    desc_dir = tmp_path / "descriptions"
    desc_dir.mkdir()
    for name in CLASSES:
        color = name.split()[0]
        (desc_dir / f"{name}.txt").write_text(
            f"a photo dominated by {color} hues\n"
            f"an object that is mostly {color}\n"
            f"a {color} item on a dark background\n",
            encoding="utf-8",
        )
    return {
        "root": root,
        "listing": listing,
        "class_names": names_file,
        "descriptions": desc_dir,
        "tmp": tmp_path,
    }


@pytest.fixture()
def base_spec(image_tree):
    def factory(**overrides):
        kwargs = dict(
            image_root=str(image_tree["root"]),
            listing_file=str(image_tree["listing"]),
            class_names_file=str(image_tree["class_names"]),
            descriptions_dir=str(image_tree["descriptions"]),
            model_id="synthetic:d=32,d_cls=16",
            output_path=str(image_tree["tmp"] / "out.femb"),
            crops_per_image=4,
            strong_variants=3,
            seed=5,
        )
        kwargs.update(overrides)
        return ExtractSpec(**kwargs)

    return factory
