"""Image/text encoders behind one small interface.

Model identifiers select the backend:

- ``clip:<huggingface-id-or-local-path>`` -- a CLIP-family checkpoint via
  transformers. Multimodal features are the projected image embeddings;
  the CLS feature is the pre-projection pooled class token.
- ``synthetic`` or ``synthetic:d=64,d_cls=48`` -- a deterministic
  pixel-projection encoder with no model weights, for offline tests of
  the extraction pipeline.
"""

from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image


class ModelLoadError(RuntimeError):
    """The requested encoder could not be constructed."""


class SyntheticEncoder:
    """Deterministic stand-in encoder: fixed random projections of pixels.

    Identical images map to identical features on every platform; text
    features are seeded from a digest of the string.
    """

    _THUMB = 16

    def __init__(self, d: int = 64, d_cls: int = 48, seed: int = 0):
        self.d = d
        self.d_cls = d_cls
        self.model_id = f"synthetic:d={d},d_cls={d_cls},seed={seed}"
        n_pixels = self._THUMB * self._THUMB * 3 + 1  # affine lift
        rng = np.random.default_rng(np.random.SeedSequence([780571, seed, d, d_cls]))
        self._w_img = rng.standard_normal((d, n_pixels)) / np.sqrt(n_pixels)
        self._w_cls = rng.standard_normal((d_cls, n_pixels)) / np.sqrt(n_pixels)

    def _pixels(self, img: Image.Image) -> np.ndarray:
        small = img.convert("RGB").resize((self._THUMB, self._THUMB), Image.BILINEAR)
        flat = np.asarray(small, dtype=np.float64).reshape(-1) / 255.0 - 0.5
        return np.concatenate([flat, [1.0]])

    def encode_images(self, images: list[Image.Image]):
        pixels = np.stack([self._pixels(img) for img in images])
        return pixels @ self._w_img.T, pixels @ self._w_cls.T

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        rows = []
        for text in texts:
            digest = hashlib.sha256(text.encode("utf-8")).digest()
            seed = int.from_bytes(digest[:8], "little")
            rows.append(np.random.default_rng(seed).standard_normal(self.d))
        return np.stack(rows)


class ClipEncoder:
    """CLIP-family checkpoint through transformers (CPU)."""

    def __init__(self, name_or_path: str):
        try:
            import torch  # noqa: F401
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise ModelLoadError(f"transformers/torch unavailable: {exc}") from None
        try:
            self._model = CLIPModel.from_pretrained(name_or_path)
            self._processor = CLIPProcessor.from_pretrained(name_or_path)
        except Exception as exc:
            raise ModelLoadError(f"cannot load {name_or_path!r}: {exc}") from None
        self._model.eval()
        self.model_id = f"clip:{name_or_path}"
        self.d = int(self._model.config.projection_dim)
        self.d_cls = int(self._model.config.vision_config.hidden_size)

    def encode_images(self, images: list[Image.Image]):
        import torch

        inputs = self._processor(images=images, return_tensors="pt")
        with torch.no_grad():
            vision = self._model.vision_model(pixel_values=inputs["pixel_values"])
            pooled = vision.pooler_output  # pre-projection class token
            projected = self._model.visual_projection(pooled)
        return (
            projected.cpu().numpy().astype(np.float64),
            pooled.cpu().numpy().astype(np.float64),
        )

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        import torch

        inputs = self._processor(
            text=texts, return_tensors="pt", padding=True, truncation=True
        )
        with torch.no_grad():
            embeds = self._model.get_text_features(**inputs)
        return embeds.cpu().numpy().astype(np.float64)


def resolve_encoder(model_id: str):
    """Build an encoder from its identifier string."""
    if model_id == "synthetic" or model_id.startswith("synthetic:"):
        kwargs = {}
        if ":" in model_id:
            for part in model_id.split(":", 1)[1].split(","):
                if not part:
                    continue
                key, _, value = part.partition("=")
                if key not in ("d", "d_cls", "seed"):
                    raise ModelLoadError(f"unknown synthetic-encoder option {key!r}")
                kwargs[key] = int(value)
        return SyntheticEncoder(**kwargs)
    if model_id.startswith("clip:"):
        return ClipEncoder(model_id.split(":", 1)[1])
    raise ModelLoadError(
        f"unknown model identifier {model_id!r}; use 'clip:<path-or-id>' or 'synthetic:...'"
    )
