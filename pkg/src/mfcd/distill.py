"""Student-teacher training: losses, SGD, and the training loops.

The teacher is trained on raw clips with cross-entropy only.  Distillation
trains a student on compressed-domain clips while a frozen teacher runs on
the paired raw clip of the same sample; the objective combines
cross-entropy, per-stage hint losses (squared feature distance), and a
tempered KL term on the soft logits:

    total = ce + lambda1 * sum(hints) + lambda2 * kl
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .codec import DEFAULT_BLOCK, DEFAULT_GOP, DEFAULT_SEARCH, encode
from .model import Model, ModelConfig, build
from .synth import LabeledVideo
from .xform import CLIP_FORMATS, FULL, RAW, assemble_clip

__all__ = [
    "DistillConfig",
    "EpochStats",
    "TrainReport",
    "hint_loss",
    "soft_logit_loss",
    "cross_entropy",
    "total_loss",
    "sgd_step",
    "make_clips",
    "make_paired_clips",
    "predict_logits",
    "evaluate",
    "train_teacher",
    "train_student",
    "distill_student",
    "parse_distill_config",
    "load_distill_config",
]


@dataclass
class DistillConfig:
    tau: float = 4.0
    lambda1: float = 1.0
    lambda2: float = 1.0
    hint_layers: Optional[tuple[int, ...]] = None   # None -> every stage
    epochs: int = 20
    batch_size: int = 32
    lr: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 0.0001
    seed: int = 0
    batch_stats: bool = True
    tau_squared_scaling: bool = False
    check_teacher_grads: bool = False   # assert zero teacher grads each step

    def validate(self) -> None:
        if self.tau <= 0:
            raise ValueError(f"temperature must be > 0, got {self.tau}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    ce: float
    hint: float
    sl: float
    total: float
    train_acc: float
    test_acc: float


@dataclass
class TrainReport:
    seed: int
    epochs: list[EpochStats] = field(default_factory=list)
    wall_clock: float = 0.0

    CSV_HEADER = "epoch,ce,hint,sl,total,train_acc,test_acc"

    @property
    def final_train_acc(self) -> float:
        return self.epochs[-1].train_acc if self.epochs else 0.0

    @property
    def final_test_acc(self) -> float:
        return self.epochs[-1].test_acc if self.epochs else 0.0

    def to_csv(self) -> str:
        """Machine-readable table; wall clock is deliberately excluded so
        repeated runs with the same seed are byte-identical."""
        rows = [self.CSV_HEADER]
        for e in self.epochs:
            rows.append(f"{e.epoch},{e.ce:.10g},{e.hint:.10g},{e.sl:.10g},"
                        f"{e.total:.10g},{e.train_acc:.6f},{e.test_acc:.6f}")
        return "\n".join(rows) + "\n"

    def to_text(self) -> str:
        lines = [f"seed {self.seed}"]
        for e in self.epochs:
            lines.append(f"epoch {e.epoch:3d}  total {e.total:.6f}  ce {e.ce:.6f}  "
                         f"hint {e.hint:.6f}  sl {e.sl:.6f}  "
                         f"train_acc {e.train_acc:.4f}  test_acc {e.test_acc:.4f}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# loss terms

def hint_loss(student_hints: Sequence, teacher_hints: Sequence) -> list[T.Tensor]:
    """Per layer: batch mean of the squared feature distance, additionally
    normalized by the per-sample element count so the weight is insensitive
    to stage width.  The teacher side is treated as a constant."""
    if len(student_hints) != len(teacher_hints):
        raise ValueError(
            f"hint bundles differ in length: {len(student_hints)} vs {len(teacher_hints)}")
    losses = []
    for i, (s, t) in enumerate(zip(student_hints, teacher_hints)):
        s = s if isinstance(s, T.Tensor) else T.Tensor(s)
        t_data = t.data if isinstance(t, T.Tensor) else np.asarray(t)
        if s.shape != t_data.shape:
            raise ValueError(
                f"hint layer {i}: shape mismatch {s.shape} vs {t_data.shape}")
        diff = T.sub(s, T.Tensor(t_data.astype(s.dtype)))
        losses.append(T.scale(T.sum_all(T.mul(diff, diff)), 1.0 / s.data.size))
    return losses


def soft_logit_loss(student_logits, teacher_logits, tau: float,
                    tau_squared_scaling: bool = False) -> T.Tensor:
    """Batch-mean KL(softmax(student/tau) || softmax(teacher/tau)).

    The teacher term is constant with respect to gradients.  The optional
    tau^2 factor is off by default.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be > 0, got {tau}")
    s = student_logits if isinstance(student_logits, T.Tensor) else T.Tensor(student_logits)
    t_data = (teacher_logits.data if isinstance(teacher_logits, T.Tensor)
              else np.asarray(teacher_logits, dtype=np.float64))
    if s.shape != t_data.shape:
        raise ValueError(f"logit shape mismatch {s.shape} vs {t_data.shape}")
    n = s.shape[0]
    zt = t_data / tau
    zt = zt - zt.max(axis=-1, keepdims=True)
    log_pt = zt - np.log(np.exp(zt).sum(axis=-1, keepdims=True))

    log_ps = T.log_softmax(T.scale(s, 1.0 / tau))
    ps = T.exp(log_ps)
    kl = T.sum_all(T.mul(ps, T.sub(log_ps, T.Tensor(log_pt.astype(s.dtype)))))
    loss = T.scale(kl, 1.0 / n)
    if tau_squared_scaling:
        loss = T.scale(loss, tau * tau)
    return loss


def cross_entropy(logits, labels) -> T.Tensor:
    """Batch mean of -log_softmax(logits)[label]."""
    x = logits if isinstance(logits, T.Tensor) else T.Tensor(logits)
    labels = np.asarray(labels)
    n, classes = x.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} != ({n},)")
    if labels.min() < 0 or labels.max() >= classes:
        raise ValueError(f"label out of range [0, {classes})")
    onehot = np.zeros((n, classes), dtype=x.dtype)
    onehot[np.arange(n), labels] = 1.0
    return T.scale(T.sum_all(T.mul(T.Tensor(onehot), T.log_softmax(x))), -1.0 / n)


def total_loss(ce: T.Tensor, hint_losses: Sequence[T.Tensor],
               sl: Optional[T.Tensor], lambda1: float, lambda2: float) -> T.Tensor:
    """ce + lambda1 * sum(hints) + lambda2 * sl.

    Zero weights short-circuit so the degenerate case is bitwise equal to
    the cross-entropy term alone.
    """
    total = ce
    if lambda1 != 0.0 and hint_losses:
        hsum = hint_losses[0]
        for h in hint_losses[1:]:
            hsum = T.add(hsum, h)
        total = T.add(total, T.scale(hsum, lambda1))
    if lambda2 != 0.0 and sl is not None:
        total = T.add(total, T.scale(sl, lambda2))
    return total


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
             state: Sequence[np.ndarray], lr: float, momentum: float,
             weight_decay: float) -> None:
    """Classic SGD with momentum; L2 decay folded into the gradient.

    v <- momentum * v + (g + weight_decay * p);  p <- p - lr * v.
    Updates params and state in place.
    """
    if not (len(params) == len(grads) == len(state)):
        raise ValueError("params, grads and state must have equal lengths")
    for p, g, v in zip(params, grads, state):
        if p.shape != g.shape or p.shape != v.shape:
            raise ValueError(f"shape mismatch: {p.shape}, {g.shape}, {v.shape}")
        v *= momentum
        v += g + weight_decay * p
        p -= lr * v


# ---------------------------------------------------------------------------
# clip preparation

def make_clips(samples: Sequence[LabeledVideo], clip_format: str,
               block: int = DEFAULT_BLOCK, search: int = DEFAULT_SEARCH,
               gop_len: int = DEFAULT_GOP, dtype=np.float32):
    """Encode every sample and emit one clip per full-length GOP.

    Returns (clips [M,C,K,H,W], labels [M], video_ids [M]).  Partial final
    GOPs are skipped because the network needs a fixed clip length.
    """
    if clip_format not in CLIP_FORMATS:
        raise ValueError(f"unknown clip format {clip_format!r}")
    clips, labels, vids = [], [], []
    for vi, s in enumerate(samples):
        stream = encode(s.video, block, search, gop_len)
        offset = 0
        for gop in stream.gops:
            if gop.num_frames == gop_len:
                raw = s.video[offset:offset + gop.num_frames]
                clips.append(assemble_clip(gop, clip_format, block, raw=raw))
                labels.append(s.label)
                vids.append(vi)
            offset += gop.num_frames
    if not clips:
        raise ValueError("dataset yielded no full-length clips")
    return (np.stack(clips).astype(dtype), np.asarray(labels, dtype=np.int64),
            np.asarray(vids, dtype=np.int64))


def make_paired_clips(samples: Sequence[LabeledVideo], student_format: str = FULL,
                      block: int = DEFAULT_BLOCK, search: int = DEFAULT_SEARCH,
                      gop_len: int = DEFAULT_GOP, dtype=np.float32):
    """Paired clips from one encode pass: each GOP yields both the raw
    teacher clip and the compressed student clip.

    Returns (raw_clips, student_clips, labels, video_ids).
    """
    raws, students, labels, vids = [], [], [], []
    for vi, s in enumerate(samples):
        stream = encode(s.video, block, search, gop_len)
        offset = 0
        for gop in stream.gops:
            if gop.num_frames == gop_len:
                raw = s.video[offset:offset + gop.num_frames]
                raws.append(assemble_clip(gop, RAW, block, raw=raw))
                students.append(assemble_clip(gop, student_format, block, raw=raw))
                labels.append(s.label)
                vids.append(vi)
            offset += gop.num_frames
    if not raws:
        raise ValueError("dataset yielded no full-length clips")
    return (np.stack(raws).astype(dtype), np.stack(students).astype(dtype),
            np.asarray(labels, dtype=np.int64), np.asarray(vids, dtype=np.int64))


# ---------------------------------------------------------------------------
# evaluation

def predict_logits(model: Model, clips: np.ndarray, batch_size: int = 64,
                   batch_stats: bool = True) -> np.ndarray:
    out = []
    with T.no_grad():
        for start in range(0, clips.shape[0], batch_size):
            logits, _ = model.forward(clips[start:start + batch_size],
                                      batch_stats=batch_stats)
            out.append(logits.data)
    return np.concatenate(out)


def evaluate(model: Model, clips: np.ndarray, labels: np.ndarray,
             video_ids: np.ndarray, batch_size: int = 64,
             batch_stats: bool = True) -> float:
    """Video-level accuracy: average the logits of every clip (GOP) of a
    video, then take the argmax.  Batches are sliced in a fixed order, so
    batch-statistics evaluation is deterministic."""
    logits = predict_logits(model, clips, batch_size, batch_stats)
    correct = 0
    videos = np.unique(video_ids)
    for v in videos:
        mask = video_ids == v
        pred = int(np.argmax(logits[mask].mean(axis=0)))
        correct += int(pred == labels[mask][0])
    return correct / len(videos)


# ---------------------------------------------------------------------------
# training loops

def _run_training(model_config: ModelConfig, cfg: DistillConfig,
                  clips: np.ndarray, labels: np.ndarray,
                  test_clips: np.ndarray, test_labels: np.ndarray,
                  test_vids: np.ndarray,
                  teacher: Optional[Model] = None,
                  teacher_clips: Optional[np.ndarray] = None) -> tuple[Model, TrainReport]:
    cfg.validate()
    start = time.monotonic()
    model = build(model_config, cfg.seed, dtype=np.float32)
    named = model.parameters()
    params = [p for _, p in named]
    velocity = [np.zeros_like(p.data) for p in params]
    teacher_params = teacher.parameters() if teacher is not None else []
    if teacher is not None:
        teacher.zero_grad()  # clear grads left over from the teacher's own training

    n_stages = len(model_config.stage_widths)
    hint_idx = tuple(range(n_stages)) if cfg.hint_layers is None else cfg.hint_layers
    if any(i < 0 or i >= n_stages for i in hint_idx):
        raise ValueError(f"hint layer index out of range [0, {n_stages})")

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 0xD15])))
    n = clips.shape[0]
    report = TrainReport(seed=cfg.seed)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        sums = {"ce": 0.0, "hint": 0.0, "sl": 0.0, "total": 0.0}
        correct = 0
        for bs in range(0, n, cfg.batch_size):
            idx = order[bs:bs + cfg.batch_size]
            x = T.Tensor(clips[idx])
            y = labels[idx]
            model.zero_grad()
            logits, hints = model.forward(x, capture_hints=teacher is not None,
                                          batch_stats=cfg.batch_stats)
            ce = cross_entropy(logits, y)
            if teacher is not None:
                with T.no_grad():
                    t_logits, t_hints = teacher.forward(teacher_clips[idx],
                                                        capture_hints=True,
                                                        batch_stats=cfg.batch_stats)
                hl = hint_loss([hints[i] for i in hint_idx],
                               [t_hints[i] for i in hint_idx])
                sl = soft_logit_loss(logits, t_logits, cfg.tau,
                                     cfg.tau_squared_scaling)
                loss = total_loss(ce, hl, sl, cfg.lambda1, cfg.lambda2)
                sums["hint"] += sum(h.item() for h in hl) * len(idx)
                sums["sl"] += sl.item() * len(idx)
            else:
                loss = total_loss(ce, [], None, 0.0, 0.0)
            loss.backward()
            if cfg.check_teacher_grads and teacher is not None:
                for name, p in teacher_params:
                    if p.grad is not None and np.any(p.grad):
                        raise AssertionError(f"teacher parameter {name} received gradient")
            sums["ce"] += ce.item() * len(idx)
            sums["total"] += loss.item() * len(idx)
            correct += int((logits.data.argmax(axis=1) == y).sum())
            sgd_step([p.data for p in params], [p.grad for p in params],
                     velocity, cfg.lr, cfg.momentum, cfg.weight_decay)
        test_acc = evaluate(model, test_clips, test_labels, test_vids,
                            batch_stats=cfg.batch_stats)
        report.epochs.append(EpochStats(
            epoch=epoch, ce=sums["ce"] / n, hint=sums["hint"] / n,
            sl=sums["sl"] / n, total=sums["total"] / n,
            train_acc=correct / n, test_acc=test_acc))
    report.wall_clock = time.monotonic() - start
    return model, report


def train_teacher(train_samples: Sequence[LabeledVideo],
                  test_samples: Sequence[LabeledVideo],
                  model_config: ModelConfig, cfg: DistillConfig,
                  block: int = DEFAULT_BLOCK, search: int = DEFAULT_SEARCH
                  ) -> tuple[Model, TrainReport]:
    """Train on RAW clips with cross-entropy only."""
    if not train_samples:
        raise ValueError("empty training set")
    clips, labels, _ = make_clips(train_samples, RAW, block, search,
                                  model_config.clip_len)
    tclips, tlabels, tvids = make_clips(test_samples, RAW, block, search,
                                        model_config.clip_len)
    return _run_training(model_config, cfg, clips, labels, tclips, tlabels, tvids)


def train_student(train_samples: Sequence[LabeledVideo],
                  test_samples: Sequence[LabeledVideo],
                  model_config: ModelConfig, cfg: DistillConfig,
                  clip_format: str = FULL,
                  block: int = DEFAULT_BLOCK, search: int = DEFAULT_SEARCH
                  ) -> tuple[Model, TrainReport]:
    """Plain (non-distilled) training on any clip format."""
    if not train_samples:
        raise ValueError("empty training set")
    clips, labels, _ = make_clips(train_samples, clip_format, block, search,
                                  model_config.clip_len)
    tclips, tlabels, tvids = make_clips(test_samples, clip_format, block, search,
                                        model_config.clip_len)
    return _run_training(model_config, cfg, clips, labels, tclips, tlabels, tvids)


def distill_student(train_samples: Sequence[LabeledVideo],
                    test_samples: Sequence[LabeledVideo],
                    teacher: Model, model_config: ModelConfig, cfg: DistillConfig,
                    student_format: str = FULL,
                    block: int = DEFAULT_BLOCK, search: int = DEFAULT_SEARCH
                    ) -> tuple[Model, TrainReport]:
    """Distill a compressed-domain student against a frozen raw-domain
    teacher; every step pairs the student clip with the raw clip of the
    same GOP."""
    if not train_samples:
        raise ValueError("empty training set")
    raw_clips, stu_clips, labels, _ = make_paired_clips(
        train_samples, student_format, block, search, model_config.clip_len)
    tclips, tlabels, tvids = make_clips(test_samples, student_format, block,
                                        search, model_config.clip_len)
    return _run_training(model_config, cfg, stu_clips, labels, tclips, tlabels,
                         tvids, teacher=teacher, teacher_clips=raw_clips)


# ---------------------------------------------------------------------------
# flat key=value config files

_CONFIG_KEYS = ("tau", "lambda1", "lambda2", "lr", "momentum", "weight_decay",
                "epochs", "batch_size", "seed", "hint_layers",
                "batch_stats", "tau_squared_scaling")


def parse_distill_config(text: str) -> DistillConfig:
    """Flat key=value text ("#" comments)."""
    cfg = DistillConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        if key in ("tau", "lambda1", "lambda2", "lr", "momentum", "weight_decay"):
            cfg = replace(cfg, **{key: float(val)})
        elif key in ("epochs", "batch_size", "seed"):
            cfg = replace(cfg, **{key: int(val)})
        elif key in ("tau_squared_scaling", "batch_stats"):
            cfg = replace(cfg, **{key: val.lower() in ("1", "true", "yes")})
        else:  # hint_layers
            layers = tuple(int(v) for v in val.split(",")) if val else None
            cfg = replace(cfg, hint_layers=layers)
    cfg.validate()
    return cfg


def load_distill_config(path) -> DistillConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_distill_config(fh.read())
