"""Deterministic view generation: weak center crop, scale-bounded random
crops, and the strong-augmentation policy (random resized crop, flip,
and a randomized photometric/geometric op pair).

Every function takes an explicit numpy Generator; no global RNG state.
Crops are returned at their natural size; encoders own resizing.
"""

from __future__ import annotations

import math

import numpy as np
from PIL import Image, ImageEnhance, ImageOps

# strong-augmentation policy parameters, echoed into the manifest
STRONG_POLICY = {
    "resized_crop_scale": (0.08, 1.0),
    "resized_crop_ratio": (3.0 / 4.0, 4.0 / 3.0),
    "flip_probability": 0.5,
    "rand_ops": 2,
    "rand_magnitude": 9,
    "rand_magnitude_max": 30,
}


def center_crop(img: Image.Image) -> Image.Image:
    """Largest centered square, the only weak augmentation."""
    w, h = img.size
    side = min(w, h)
    left = (w - side) // 2
    top = (h - side) // 2
    return img.crop((left, top, left + side, top + side))


def sample_crop_box(
    rng: np.random.Generator, width: int, height: int, lo: float, hi: float
) -> tuple[int, int, int]:
    """(left, top, side) for one random crop with side in [lo*m, hi*m].

    The side is the rounded continuous draw, clamped into the legal
    integer range so the scale bounds hold exactly.
    """
    m = min(width, height)
    side_min = max(1, math.ceil(lo * m))
    side_max = max(side_min, math.floor(hi * m))
    side = int(round(rng.uniform(lo, hi) * m))
    side = min(max(side, side_min), side_max)
    left = int(rng.integers(0, width - side + 1))
    top = int(rng.integers(0, height - side + 1))
    return left, top, side


def random_crop(
    rng: np.random.Generator, img: Image.Image, lo: float, hi: float
) -> Image.Image:
    w, h = img.size
    left, top, side = sample_crop_box(rng, w, h, lo, hi)
    m = min(w, h)
    assert lo * m - 1 < side <= hi * m + 1e-9, f"crop side {side} outside [{lo*m}, {hi*m}]"
    return img.crop((left, top, left + side, top + side))


def _random_resized_crop(rng: np.random.Generator, img: Image.Image) -> Image.Image:
    w, h = img.size
    area = w * h
    scale_lo, scale_hi = STRONG_POLICY["resized_crop_scale"]
    ratio_lo, ratio_hi = STRONG_POLICY["resized_crop_ratio"]
    for _ in range(10):
        target = area * rng.uniform(scale_lo, scale_hi)
        ratio = math.exp(rng.uniform(math.log(ratio_lo), math.log(ratio_hi)))
        cw = int(round(math.sqrt(target * ratio)))
        ch = int(round(math.sqrt(target / ratio)))
        if 0 < cw <= w and 0 < ch <= h:
            left = int(rng.integers(0, w - cw + 1))
            top = int(rng.integers(0, h - ch + 1))
            return img.crop((left, top, left + cw, top + ch))
    return center_crop(img)


def _apply_rand_op(rng: np.random.Generator, img: Image.Image, op: str, frac: float) -> Image.Image:
    """One randomized-policy op at fractional magnitude (0..1)."""
    if op == "identity":
        return img
    if op == "autocontrast":
        return ImageOps.autocontrast(img)
    if op == "equalize":
        return ImageOps.equalize(img)
    if op == "rotate":
        degrees = 30.0 * frac * (1 if rng.random() < 0.5 else -1)
        return img.rotate(degrees, resample=Image.BILINEAR)
    if op == "posterize":
        bits = 8 - int(4 * frac)
        return ImageOps.posterize(img, max(4, bits))
    if op == "solarize":
        return ImageOps.solarize(img, int(255 * (1.0 - frac)))
    if op in ("color", "contrast", "brightness", "sharpness"):
        enhancer = {
            "color": ImageEnhance.Color,
            "contrast": ImageEnhance.Contrast,
            "brightness": ImageEnhance.Brightness,
            "sharpness": ImageEnhance.Sharpness,
        }[op]
        factor = 1.0 + 0.9 * frac * (1 if rng.random() < 0.5 else -1)
        return enhancer(img).enhance(max(0.1, factor))
    if op in ("shear_x", "shear_y"):
        amount = 0.3 * frac * (1 if rng.random() < 0.5 else -1)
        coeffs = (1, amount, 0, 0, 1, 0) if op == "shear_x" else (1, 0, 0, amount, 1, 0)
        return img.transform(img.size, Image.AFFINE, coeffs, resample=Image.BILINEAR)
    if op in ("translate_x", "translate_y"):
        w, h = img.size
        span = (w if op == "translate_x" else h) * 0.3 * frac
        shift = span * (1 if rng.random() < 0.5 else -1)
        coeffs = (1, 0, shift, 0, 1, 0) if op == "translate_x" else (1, 0, 0, 0, 1, shift)
        return img.transform(img.size, Image.AFFINE, coeffs, resample=Image.BILINEAR)
    raise ValueError(f"unknown augmentation op {op!r}")


_RAND_OPS = [
    "identity", "autocontrast", "equalize", "rotate", "posterize", "solarize",
    "color", "contrast", "brightness", "sharpness",
    "shear_x", "shear_y", "translate_x", "translate_y",
]


def strong_augment(rng: np.random.Generator, img: Image.Image) -> Image.Image:
    """Random resized crop, horizontal flip, then two randomized ops."""
    out = _random_resized_crop(rng, img)
    if rng.random() < STRONG_POLICY["flip_probability"]:
        out = ImageOps.mirror(out)
    frac = STRONG_POLICY["rand_magnitude"] / STRONG_POLICY["rand_magnitude_max"]
    for _ in range(STRONG_POLICY["rand_ops"]):
        op = _RAND_OPS[int(rng.integers(0, len(_RAND_OPS)))]
        out = _apply_rand_op(rng, out, op, frac)
    return out
