#!/usr/bin/env python3
"""Walk one image through all four alignment scorers.

Generates a small synthetic embedding dataset, then scores a single
image with: plain prompt cosine, the description-ensemble mean, the
doubly weighted crop score, and the learned alignment score over
anchor vectors, printing every intermediate quantity along the way.
"""

import numpy as np

from fairadapt import align, embdata
from fairadapt.cda import init_cda

ds = embdata.synth_generate(
    embdata.SynthSpec(
        num_classes=4,
        num_images=8,
        d=32,
        d_cls=16,
        crops_per_image=6,
        strong_variants=2,
        descriptions_per_class=4,
        cluster_separation=0.6,
        seed=42,
    )
)
im = ds.images[0]
print(f"dataset: {ds.header.num_classes} classes, image 0 has label {im.label}\n")

# 1. plain prompt cosine: one score per class from the global feature
prompts = np.stack([c.prompt_embedding for c in ds.classes])
clip = align.clip_score(im.f_global, prompts)
print("prompt-cosine scores:", np.round(clip.values, 4))
print("  -> predicted class:", align.predict_label(clip))

# 2. description-ensemble mean per class
cupl = np.array([align.cupl_score(im.f_global, c.descriptions) for c in ds.classes])
print("\ndescription-ensemble scores:", np.round(cupl, 4))
print("  -> predicted class:", int(np.argmax(cupl)))

# 3. weighted crop alignment: softmax crop weights x softmax description weights
w = align.wca_crop_weights(im.f_global, im.F_crops)
print("\nsoftmax crop weights:", np.round(w.values, 4), f"(sum={w.values.sum():.6f})")
wca = []
for cls in ds.classes:
    v = align.wca_desc_weights(cls.prompt_embedding, cls.descriptions)
    wca.append(align.wca_score(im.F_crops, cls.descriptions, w, v))
print("weighted crop-alignment scores:", np.round(wca, 4))
print("  -> predicted class:", int(np.argmax(wca)))

# 4. learned alignment score: CLS-token crop weights, top-k selection,
#    cosine against the anchor matrix initialized from description means
anchors = init_cda(ds.classes)
fw = align.fair_crop_weights(im.g_global, im.G_crops)
print("\nsum-normalized CLS crop weights:", np.round(fw.values, 4))
sel = align.select_topk(fw, k=3)
print("top-3 crops by weight:", sel.indices.tolist())
las = align.las_score(im.F_crops, anchors.anchors, fw, sel)
print("learned alignment scores:", np.round(las.values, 4))
print("  -> predicted class:", align.predict_label(las))
