"""Self-training loop: pseudo-labels from the learned alignment score,
confidence-weighted cross-entropy on strong-augmentation features,
fairness regularization, analytic gradients, and a deterministic
epoch/step driver.

Gradients are computed in closed form (softmax -> logit scale ->
cosine normalization -> affine adapter) rather than via autodiff, which
keeps the package dependency-free and makes the finite-difference
checks in the test suite meaningful. Pseudo-labels and their weights
are constants with respect to the parameters (the labeling branch runs
without back-propagation).

All randomness flows from a single seed through named streams keyed by
(seed, purpose, epoch, batch), so results do not depend on execution
interleaving.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import align
from .align import DegenerateWeightsError, TopKSelection
from .cda import CDA, Adapter, Checkpoint, adapter_apply, check_resume_hash, init_cda
from .embdata import EmbeddingDataset, ImageRecord, validate_dataset
from .metrics import evaluate

# purpose tags for the seed-splitting scheme
_TAG_SHUFFLE = 0
_TAG_CROPS = 1
_TAG_STRONG = 2


def rng_stream(seed: int, tag: int, *key: int) -> np.random.Generator:
    """Independent deterministic stream for (seed, purpose, epoch, batch...)."""
    return np.random.default_rng(np.random.SeedSequence([seed, tag, *key]))


@dataclass
class TrainConfig:
    """Hyperparameters and ablation switches for self-training."""

    epochs: int = 15
    batch_size: int = 32
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    logit_scale: float = 100.0
    k: int = 4
    n_use: int = 16
    pl_weight_on: bool = True
    las_on: bool = True
    fairg_mode: bool = False
    topk_renormalize: bool = False
    use_raw_dot: bool = False
    pbar_mode: str = "batch"  # "batch" or "ema"
    pbar_momentum: float = 0.9
    seed: int = 0

    def validate(self, dataset_crops: int | None = None) -> None:
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.logit_scale <= 0:
            raise ValueError(f"logit_scale must be > 0, got {self.logit_scale}")
        if not 1 <= self.k <= self.n_use:
            raise ValueError(f"need 1 <= k <= n_use, got k={self.k}, n_use={self.n_use}")
        if dataset_crops is not None and self.n_use > dataset_crops:
            raise ValueError(
                f"n_use={self.n_use} exceeds dataset crops_per_image={dataset_crops}"
            )
        if self.pbar_mode not in ("batch", "ema"):
            raise ValueError(f"pbar_mode must be 'batch' or 'ema', got {self.pbar_mode!r}")
        if not 0.0 <= self.pbar_momentum <= 1.0:
            raise ValueError(f"pbar_momentum must be in [0, 1], got {self.pbar_momentum}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")

    def hash_hex(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(eq=False)
class TrainerState:
    """Mutable training state; scorers only ever see immutable snapshots."""

    cda: CDA
    adapter: Adapter
    anchors_init: np.ndarray  # frozen snapshot for the fixed-classifier ablation
    pbar: np.ndarray  # running class-probability estimate (ema mode)
    step: int = 0

    @classmethod
    def fresh(cls, dataset: EmbeddingDataset) -> "TrainerState":
        cda = init_cda(dataset.classes)
        c, d = cda.anchors.shape
        return cls(
            cda=cda,
            adapter=Adapter.identity(d),
            anchors_init=cda.anchors.copy(),
            pbar=np.full(c, 1.0 / c),
        )


@dataclass(eq=False)
class PseudoLabelBatch:
    """Per-image pseudo-labels with confidence weights and crop selections."""

    labels: np.ndarray  # (B,) int
    gamma: np.ndarray  # (B,) float, >= 0 in the weighted regime
    top1: np.ndarray  # (B,) best alignment score
    top2: np.ndarray  # (B,) runner-up score
    selections: list[TopKSelection]  # indices into the subsampled crop set
    crop_indices: list[np.ndarray]  # subsample -> original crop index map
    degenerate_mask: np.ndarray  # (B,) bool, uniform-weight fallback used


@dataclass(eq=False)
class LossResult:
    l_st: float
    l_reg: float
    loss: float
    p: np.ndarray  # (B, c) softmax outputs
    pbar_used: np.ndarray  # (c,) distribution the regularizer saw


@dataclass(eq=False)
class Gradients:
    anchors: np.ndarray  # (c, d)
    scale: np.ndarray  # (d,)
    shift: np.ndarray  # (d,)


def _top2(values: np.ndarray) -> tuple[float, float]:
    part = np.partition(values, -2)
    return float(part[-1]), float(part[-2])


def pseudo_label_batch(
    state: TrainerState,
    images: list[ImageRecord],
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> PseudoLabelBatch:
    """Label a batch with the learned alignment score. No state is mutated.

    Crop weights come from raw (un-adapted) CLS features; the
    cross-alignment uses adapter-transformed crop features against the
    current anchors (or the frozen initial anchors when las_on is off).
    Degenerate CLS weights fall back to uniform and are recorded.
    """
    anchors = state.cda.anchors if cfg.las_on else state.anchors_init
    b = len(images)
    labels = np.zeros(b, dtype=np.int64)
    gamma = np.zeros(b)
    top1 = np.zeros(b)
    top2 = np.zeros(b)
    selections: list[TopKSelection] = []
    crop_indices: list[np.ndarray] = []
    degenerate = np.zeros(b, dtype=bool)

    for i, im in enumerate(images):
        if cfg.fairg_mode:
            feat = adapter_apply(state.adapter, im.f_global)
            psi = align.clip_score(feat, anchors).values
            selections.append(TopKSelection(indices=np.empty(0, dtype=np.int64), k=0))
            crop_indices.append(np.empty(0, dtype=np.int64))
        else:
            n_total = im.F_crops.shape[0]
            idx = rng.choice(n_total, size=cfg.n_use, replace=False)
            crop_indices.append(idx)
            try:
                w = align.fair_crop_weights(im.g_global, im.G_crops[idx])
            except DegenerateWeightsError:
                w = align.uniform_crop_weights(cfg.n_use)
                degenerate[i] = True
            sel = align.select_topk(w, cfg.k)
            selections.append(sel)
            crops = adapter_apply(state.adapter, im.F_crops[idx])
            psi = align.las_score(
                crops, anchors, w, sel, renormalize=cfg.topk_renormalize
            ).values

        labels[i] = int(np.argmax(psi))
        s1, s2 = _top2(psi)
        top1[i], top2[i] = s1, s2
        gamma[i] = s1 * (s1 - s2) if cfg.pl_weight_on else 1.0

    return PseudoLabelBatch(
        labels=labels,
        gamma=gamma,
        top1=top1,
        top2=top2,
        selections=selections,
        crop_indices=crop_indices,
        degenerate_mask=degenerate,
    )


def _forward(state: TrainerState, strong_features: np.ndarray, cfg: TrainConfig):
    """Shared forward pass: adapted features -> logits -> softmax."""
    feats = np.asarray(strong_features, dtype=np.float64)
    z = state.cda.anchors
    u = adapter_apply(state.adapter, feats)  # (B, d)
    if cfg.use_raw_dot:
        logits = cfg.logit_scale * (u @ z.T)
        aux = (u, None, z, None, None)
    else:
        un = np.linalg.norm(u, axis=1)
        zn = np.linalg.norm(z, axis=1)
        if np.any(un <= align.EPS) or np.any(zn <= align.EPS):
            raise ValueError("zero-norm row in loss forward pass")
        cos = (u / un[:, None]) @ (z / zn[:, None]).T
        logits = cfg.logit_scale * cos
        aux = (u, un, z, zn, cos)
    shifted = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(shifted)
    p = expl / expl.sum(axis=1, keepdims=True)
    log_p = shifted - np.log(expl.sum(axis=1, keepdims=True))
    return feats, logits, p, log_p, aux


def _pbar_weight(cfg: TrainConfig, batch: int) -> float:
    """d(pbar_used)/d(p_bj): batch-mean weight of one softmax row."""
    if cfg.pbar_mode == "ema":
        return (1.0 - cfg.pbar_momentum) / batch
    return 1.0 / batch


def _pbar_used(state: TrainerState, p: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    mean = p.mean(axis=0)
    if cfg.pbar_mode == "ema":
        return cfg.pbar_momentum * state.pbar + (1.0 - cfg.pbar_momentum) * mean
    return mean


def compute_loss(
    state: TrainerState,
    plb: PseudoLabelBatch,
    strong_features: np.ndarray,
    cfg: TrainConfig,
) -> LossResult:
    """Weighted self-training cross-entropy plus fairness regularization.

    The state is read, never written: in EMA mode the caller commits
    pbar_used back to the state after the optimizer step.
    """
    b = strong_features.shape[0]
    _, _, p, log_p, _ = _forward(state, strong_features, cfg)
    ce = -log_p[np.arange(b), plb.labels]
    l_st = float(np.mean(plb.gamma * ce))
    pbar_used = _pbar_used(state, p, cfg)
    if np.any(pbar_used <= 0.0):
        raise FloatingPointError("pbar has a non-positive entry")  # unreachable via softmax
    l_reg = float(-np.mean(np.log(pbar_used)))
    return LossResult(
        l_st=l_st, l_reg=l_reg, loss=l_st + l_reg, p=p, pbar_used=pbar_used
    )


def compute_gradients(
    state: TrainerState,
    plb: PseudoLabelBatch,
    strong_features: np.ndarray,
    cfg: TrainConfig,
) -> Gradients:
    """Closed-form gradient of the total loss w.r.t. anchors, scale, shift.

    Pseudo-labels and gamma weights are constants (no gradient flows
    through the labeling branch); in EMA mode the previous pbar is a
    constant as well, so only the current batch's contribution is
    differentiated.
    """
    b, _ = strong_features.shape
    c = state.cda.anchors.shape[0]
    feats, _, p, _, aux = _forward(state, strong_features, cfg)
    u, un, z, zn, cos = aux

    pbar_used = _pbar_used(state, p, cfg)
    if np.any(pbar_used <= 0.0):
        raise FloatingPointError("pbar has a non-positive entry")
    omega = _pbar_weight(cfg, b)

    # dL/dlogits: cross-entropy term plus regularizer through the softmax
    onehot = np.zeros((b, c))
    onehot[np.arange(b), plb.labels] = 1.0
    g_logits = (plb.gamma / b)[:, None] * (p - onehot)
    ratio = p / pbar_used  # (B, c)
    g_logits -= (omega / c) * (ratio - ratio.sum(axis=1, keepdims=True) * p)
    s = cfg.logit_scale

    if cfg.use_raw_dot:
        du = s * (g_logits @ z)  # (B, d)
        dz = s * (g_logits.T @ u)  # (c, d)
    else:
        u_hat = u / un[:, None]
        z_hat = z / zn[:, None]
        gc = g_logits * cos  # reused contraction sum_j G_bj * cos_bj
        du = s * ((g_logits @ z_hat) - gc.sum(axis=1, keepdims=True) * u_hat) / un[:, None]
        dz = s * ((g_logits.T @ u_hat) - gc.sum(axis=0)[:, None] * z_hat) / zn[:, None]

    return Gradients(
        anchors=dz,
        scale=(du * feats).sum(axis=0),
        shift=du.sum(axis=0),
    )


class AdamW:
    """Decoupled-weight-decay adaptive-moment optimizer over named arrays."""

    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig, eps: float = 1e-8):
        self.params = params
        self.beta1 = cfg.beta1
        self.beta2 = cfg.beta2
        self.weight_decay = cfg.weight_decay
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, param in self.params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            param -= lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * param)


def cosine_lr(base: float, step: int, total_steps: int) -> float:
    """Cosine decay from base toward 0 over the full run."""
    if total_steps <= 0:
        return base
    return base * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass(eq=False)
class TrainResult:
    checkpoint: Checkpoint
    log: list[dict] = field(default_factory=list)


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]


def train(
    dataset: EmbeddingDataset,
    cfg: TrainConfig,
    resume: Checkpoint | None = None,
    log_sink=None,
) -> TrainResult:
    """Run the full self-training loop over a dataset.

    Per epoch: seeded shuffle -> pseudo-label each batch -> sample one
    strong variant per image -> loss/gradients -> optimizer step under a
    cosine-decayed learning rate. The final short batch is kept. One
    JSON-serializable record per epoch goes to the returned log (and to
    log_sink as a JSON line, when given). Fully deterministic given
    cfg.seed.
    """
    problems = validate_dataset(dataset)
    if problems:
        raise ValueError("train: invalid dataset: " + "; ".join(problems[:5]))
    cfg.validate(dataset_crops=dataset.header.crops_per_image)
    cfg_hash = cfg.hash_hex()

    state = TrainerState.fresh(dataset)
    start_epoch = 0
    if resume is not None:
        check_resume_hash(resume, cfg_hash)
        if resume.cda.anchors.shape != state.cda.anchors.shape:
            raise ValueError("train: resume checkpoint dimensions do not match dataset")
        state.cda = CDA(
            anchors=np.asarray(resume.cda.anchors, dtype=np.float64).copy(),
            class_names=list(resume.cda.class_names),
        )
        state.adapter = Adapter(
            scale=np.asarray(resume.adapter.scale, dtype=np.float64).copy(),
            shift=np.asarray(resume.adapter.shift, dtype=np.float64).copy(),
        )
        start_epoch = resume.epoch

    n_images = dataset.header.num_images
    n_strong = dataset.header.strong_variants
    steps_per_epoch = max(1, math.ceil(n_images / cfg.batch_size))
    total_steps = cfg.epochs * steps_per_epoch
    state.step = start_epoch * steps_per_epoch

    opt = AdamW(
        {
            "anchors": state.cda.anchors,
            "scale": state.adapter.scale,
            "shift": state.adapter.shift,
        },
        cfg,
    )
    true_labels = dataset.labels() if dataset.header.has_labels else None

    log: list[dict] = []
    for epoch in range(start_epoch, cfg.epochs):
        order = rng_stream(cfg.seed, _TAG_SHUFFLE, epoch).permutation(n_images)
        sums = {"l_st": 0.0, "l_reg": 0.0, "loss": 0.0, "gamma": 0.0}
        pl_hits = 0
        degenerate_count = 0

        for batch_i, chunk in enumerate(_batches(order, cfg.batch_size)):
            images = [dataset.images[j] for j in chunk]
            crop_rng = rng_stream(cfg.seed, _TAG_CROPS, epoch, batch_i)
            plb = pseudo_label_batch(state, images, cfg, crop_rng)

            strong_rng = rng_stream(cfg.seed, _TAG_STRONG, epoch, batch_i)
            variants = strong_rng.integers(0, n_strong, size=len(images))
            strong = np.stack(
                [im.F_strong[v] for im, v in zip(images, variants)]
            ).astype(np.float64)

            result = compute_loss(state, plb, strong, cfg)
            if not math.isfinite(result.loss):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}, step {state.step}"
                )
            grads = compute_gradients(state, plb, strong, cfg)
            lr = cosine_lr(cfg.learning_rate, state.step, total_steps)
            opt.step(
                {"anchors": grads.anchors, "scale": grads.scale, "shift": grads.shift},
                lr,
            )
            if cfg.pbar_mode == "ema":
                state.pbar = result.pbar_used
            state.step += 1

            nb = len(images)
            sums["l_st"] += result.l_st * nb
            sums["l_reg"] += result.l_reg * nb
            sums["loss"] += result.loss * nb
            sums["gamma"] += float(plb.gamma.sum())
            degenerate_count += int(plb.degenerate_mask.sum())
            if true_labels is not None:
                pl_hits += int(np.sum(plb.labels == true_labels[chunk]))

        record = {
            "epoch": epoch,
            "step": state.step,
            "L_st": sums["l_st"] / n_images,
            "L_reg": sums["l_reg"] / n_images,
            "L": sums["loss"] / n_images,
            "pl_acc": (pl_hits / n_images) if true_labels is not None else None,
            "eval_acc": (
                evaluate(dataset, state.cda, state.adapter).top1
                if true_labels is not None
                else None
            ),
            "gamma_mean": sums["gamma"] / n_images,
            "degenerate_count": degenerate_count,
        }
        log.append(record)
        if log_sink is not None:
            log_sink.write(json.dumps(record, sort_keys=True) + "\n")

    checkpoint = Checkpoint(
        cda=state.cda, adapter=state.adapter, epoch=cfg.epochs, config_hash=cfg_hash
    )
    return TrainResult(checkpoint=checkpoint, log=log)
