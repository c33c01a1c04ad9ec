"""Mean-teacher self-training for open-set segmentation.

Five training modes reproduce the ablation ladder:

=====================  =====  ======  ==========
mode                   heads  DECON   OpenReMix
=====================  =====  ======  ==========
conf_threshold (A)     C
head_expansion (B)     C+1
head_expansion_decon   C+1    yes
head_expansion_remix   C+1            yes
bus_full               C+1    yes     yes
=====================  =====  ======  ==========
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from . import nn
from .core import ClassSpace, argmax_with_prob, softmax
from .losses import DeconConfig, LossValue, decon_loss, total_loss, weighted_cross_entropy
from .mixing import MixConfig, attach_private, classmix_target, openremix_target
from .morphology import MorphConfig, decon_masks, random_private_crop
from .pseudolabel import confidence_ratio, ema_update, generate_pseudo_label, private_mask


class ModeFlags(NamedTuple):
    expanded: bool
    decon: bool
    remix: bool
    letter: str


MODES = {
    "conf_threshold": ModeFlags(False, False, False, "A"),
    "head_expansion": ModeFlags(True, False, False, "B"),
    "head_expansion_decon": ModeFlags(True, True, False, "C"),
    "head_expansion_remix": ModeFlags(True, False, True, "D"),
    "bus_full": ModeFlags(True, True, True, "Ours"),
}


@dataclass(frozen=True)
class TrainerConfig:
    mode: str = "bus_full"
    tau_p: float = 0.5
    tau_t: float = 0.968
    alpha: float = 0.99
    lr: float = 0.1
    momentum: float = 0.9
    clip_norm: float = 1.0  # 0 disables gradient-norm clipping
    precision: str = "float32"  # activation dtype during training steps
    steps: int = 2000
    batch_size: int = 1
    seed: int = 0
    width: int = 16
    unknown_heads: int = 1
    tau_inf: float = 0.5
    decon: DeconConfig = field(default_factory=DeconConfig)
    mix: MixConfig = field(default_factory=MixConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {list(MODES)}")
        for name in ("tau_p", "tau_t", "tau_inf"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.steps < 1 or self.batch_size < 1 or self.width < 1:
            raise ValueError("steps, batch_size and width must be >= 1")
        if self.lr < 0 or self.momentum < 0 or self.clip_norm < 0:
            raise ValueError("lr, momentum and clip_norm must be nonnegative")
        if self.precision not in ("float64", "float32"):
            raise ValueError(f"precision must be float64 or float32, got {self.precision!r}")
        if self.unknown_heads != 1:
            raise ValueError("only a single unknown head is supported")

    @property
    def flags(self) -> ModeFlags:
        return MODES[self.mode]

    def net_shape(self, cs: ClassSpace) -> nn.NetShape:
        return nn.NetShape(cs.num_heads if self.flags.expanded else cs.num_known, self.width)


@dataclass
class TrainState:
    student: np.ndarray
    teacher: np.ndarray
    velocity: np.ndarray
    step: int = 0


def init_state(shape: nn.NetShape, seed: int) -> TrainState:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    theta = nn.init_params(shape, rng)
    # teacher starts as an exact copy of the student
    return TrainState(theta, theta.copy(), np.zeros_like(theta), 0)


def teacher_targets(shape: nn.NetShape, teacher: np.ndarray, images: np.ndarray, cs: ClassSpace, cfg: TrainerConfig):
    """Pseudo-labels and per-image confidence from the teacher on clean targets."""
    logits, _, _ = nn.forward(shape, teacher, images, cfg.precision)
    known = softmax(logits)[..., : cs.num_known]
    labels, confs = [], []
    for k in known:
        if cfg.flags.expanded:
            labels.append(generate_pseudo_label(k, cfg.tau_p))
        else:
            labels.append(argmax_with_prob(k)[0])
        confs.append(confidence_ratio(k, cfg.tau_t))
    return np.stack(labels), np.array(confs)


def train_step(
    state: TrainState,
    source_images: np.ndarray,
    source_labels: np.ndarray,
    target_images: np.ndarray,
    cfg: TrainerConfig,
    cs: ClassSpace,
    rng: np.random.Generator,
) -> tuple[TrainState, dict]:
    """One student update followed by the EMA teacher update."""
    flags = cfg.flags
    shape = cfg.net_shape(cs)
    b = len(source_images)
    pseudo, q_t = teacher_targets(shape, state.teacher, target_images, cs, cfg)

    src_img, src_lbl, src_w, tgt_img, tgt_lbl, tgt_w = [], [], [], [], [], []
    crops = []
    for i in range(b):
        source = (source_images[i], source_labels[i])
        target = (target_images[i], pseudo[i])
        private = private_mask(pseudo[i], cs)
        if flags.remix:
            mixed_src = attach_private(source, target, private)
            src_img.append(mixed_src.image)
            src_lbl.append(mixed_src.label)
            # attached pixels carry teacher labels, so they get the image confidence
            src_w.append(np.where(mixed_src.origin_mask == 1, q_t[i], 1.0))
            mixed_tgt = openremix_target(source, target, cfg.mix, rng, cs.ignore_id)
        else:
            src_img.append(source[0])
            src_lbl.append(source[1])
            src_w.append(np.ones(source[1].shape))
            mixed_tgt, _ = classmix_target(source, target, rng, cs.ignore_id)
        tgt_img.append(mixed_tgt.image)
        tgt_lbl.append(mixed_tgt.label)
        # source-origin pixels are ground truth, target-origin ones get q_t
        tgt_w.append(np.where(mixed_tgt.origin_mask == 1, 1.0, q_t[i]))
        if flags.decon:
            crops.append(random_private_crop(private, cfg.decon.morph, rng))

    batch = src_img + tgt_img + (list(target_images) if flags.decon else [])
    logits, feats, cache = nn.forward(shape, state.student, np.stack(batch), cfg.precision)
    src_ce = weighted_cross_entropy(logits[:b], np.stack(src_lbl), np.stack(src_w), cs)
    tgt_ce = weighted_cross_entropy(logits[b:2 * b], np.stack(tgt_lbl), np.stack(tgt_w), cs)

    d_feats = np.zeros(feats.shape)
    dec_value, n_skipped = 0.0, 0
    if flags.decon:
        c = cfg.decon.morph.crop_size
        for i, crop in enumerate(crops):
            if crop is None:
                n_skipped += 1
                continue
            mask, (y, x) = crop
            negative, positive = decon_masks(mask, cfg.decon.morph)
            lv = decon_loss(feats[2 * b + i, y:y + c, x:x + c], positive, negative, cfg.decon)
            if lv.skipped:
                n_skipped += 1
                continue
            # the private crop comes from pseudo-labels: scale like the target loss
            dec_value += q_t[i] * lv.value / b
            d_feats[2 * b + i, y:y + c, x:x + c] = q_t[i] * lv.grad / b
    decon = LossValue(dec_value, d_feats, n_skipped == b)
    loss, (g_src, g_tgt, g_dec) = total_loss(src_ce, tgt_ce, decon, cfg.decon.weight if flags.decon else 0.0)

    d_logits = np.zeros_like(logits)
    d_logits[:b] = g_src
    d_logits[b:2 * b] = g_tgt
    grads = nn.backward(shape, state.student, cache, d_logits, g_dec if flags.decon else None)
    grad_norm = float(np.linalg.norm(grads))
    if cfg.clip_norm > 0 and grad_norm > cfg.clip_norm:
        grads = grads * (cfg.clip_norm / grad_norm)
    student, velocity = nn.sgd_step(state.student, grads, cfg.lr, cfg.momentum, state.velocity)
    teacher = ema_update(state.teacher, student, cfg.alpha)

    metrics = {
        "loss": float(loss),
        "loss_source": src_ce.value,
        "loss_target": tgt_ce.value,
        "loss_decon": float(dec_value),
        "q_t": float(q_t.mean()),
        "unknown_frac": float((pseudo == cs.unknown_id).mean()),
        "decon_skipped": n_skipped / b if flags.decon else 1.0,
        "grad_norm": grad_norm,
    }
    return TrainState(student, teacher, velocity, state.step + 1), metrics


LOG_FIELDS = ["step", "loss", "loss_source", "loss_target", "loss_decon", "q_t", "unknown_frac", "decon_skipped", "grad_norm"]


def train(bench, cfg: TrainerConfig, on_step: Callable[[int, dict], None] | None = None) -> tuple[TrainState, list[dict]]:
    """Run ``cfg.steps`` updates on a benchmark; returns final state and the log."""
    cs = bench.cs
    if cfg.flags.remix:
        cfg.mix.validate(cs.num_known)
    shape = cfg.net_shape(cs)
    state = init_state(shape, cfg.seed)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    ns, nt = len(bench.source_images), len(bench.target_images)
    log = []
    for _ in range(cfg.steps):
        si = rng.integers(0, ns, cfg.batch_size)
        ti = rng.integers(0, nt, cfg.batch_size)
        state, m = train_step(
            state, bench.source_images[si], bench.source_labels[si], bench.target_images[ti], cfg, cs, rng
        )
        row = {"step": state.step, **m}
        log.append(row)
        if on_step is not None:
            on_step(state.step, row)
    return state, log


def predict(shape: nn.NetShape, theta: np.ndarray, images: np.ndarray, cfg: TrainerConfig, cs: ClassSpace, chunk: int = 16) -> np.ndarray:
    """Label maps for a stack of images.

    Head-expansion nets take the argmax over all C + 1 heads; the C-head
    confidence baseline marks pixels whose top probability is below
    ``tau_inf`` as unknown.
    """
    images = np.asarray(images, dtype=np.float64)
    single = images.ndim == 3
    if single:
        images = images[None]
    out = []
    for start in range(0, len(images), chunk):
        logits, _, _ = nn.forward(shape, theta, images[start:start + chunk])
        out.append(labels_from_logits(logits, cfg, cs))
    labels = np.concatenate(out)
    return labels[0] if single else labels


def labels_from_logits(logits: np.ndarray, cfg: TrainerConfig, cs: ClassSpace) -> np.ndarray:
    probs = softmax(logits)
    idx, top = argmax_with_prob(probs)
    if not cfg.flags.expanded:
        idx = np.where(top < cfg.tau_inf, cs.unknown_id, idx)
    return idx.astype(np.uint8)


# -- checkpoint ------------------------------------------------------------
#
# b"OSSEG-CKPT 1\n" | one line of JSON metadata | student | teacher | velocity
# The three vectors are little-endian float64 of length meta["num_params"].

CKPT_MAGIC = b"OSSEG-CKPT 1\n"


def config_to_dict(cfg: TrainerConfig) -> dict:
    d = asdict(cfg)
    d["mix"]["thing_class_ids"] = sorted(cfg.mix.thing_class_ids)
    return d


def config_from_dict(d: dict) -> TrainerConfig:
    d = dict(d)
    decon = d.pop("decon")
    morph = MorphConfig(**decon.pop("morph"))
    mix = d.pop("mix")
    return TrainerConfig(
        decon=DeconConfig(morph=morph, **decon),
        mix=MixConfig(resize_scale=mix["resize_scale"], thing_class_ids=frozenset(mix["thing_class_ids"])),
        **d,
    )


def save_checkpoint(path, state: TrainState, cfg: TrainerConfig, cs: ClassSpace, class_names=()) -> None:
    meta = {
        "config": config_to_dict(cfg),
        "step": state.step,
        "num_known": cs.num_known,
        "ignore_id": cs.ignore_id,
        "class_names": list(class_names),
        "num_params": int(state.student.size),
    }
    body = b"".join(v.astype("<f8").tobytes() for v in (state.student, state.teacher, state.velocity))
    Path(path).write_bytes(CKPT_MAGIC + json.dumps(meta, sort_keys=True).encode() + b"\n" + body)


def load_checkpoint(path) -> tuple[TrainState, TrainerConfig, ClassSpace, dict]:
    data = Path(path).read_bytes()
    if not data.startswith(CKPT_MAGIC):
        raise ValueError(f"{path} is not a checkpoint file")
    rest = data[len(CKPT_MAGIC):]
    nl = rest.index(b"\n")
    meta = json.loads(rest[:nl])
    n = meta["num_params"]
    vec = np.frombuffer(rest[nl + 1:], dtype="<f8").astype(np.float64)
    if vec.size != 3 * n:
        raise ValueError("checkpoint body has the wrong length")
    state = TrainState(vec[:n].copy(), vec[n:2 * n].copy(), vec[2 * n:].copy(), int(meta["step"]))
    cs = ClassSpace(meta["num_known"], meta["ignore_id"])
    return state, config_from_dict(meta["config"]), cs, meta


def with_things(cfg: TrainerConfig, thing_ids) -> TrainerConfig:
    return replace(cfg, mix=replace(cfg.mix, thing_class_ids=frozenset(thing_ids)))


def evaluate(shape: nn.NetShape, theta: np.ndarray, bench, cfg: TrainerConfig):
    """Dataset-level metrics of a parameter vector on the benchmark's eval split."""
    from .metrics import evaluate_predictions

    preds = predict(shape, theta, bench.eval_images, cfg, bench.cs)
    return evaluate_predictions(preds, bench.eval_labels, bench.cs, bench.class_names[: bench.cs.num_known] + ("unknown",))
