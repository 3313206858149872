"""Deterministic synthetic "MovingShapes" video dataset.

Each sample is a short clip of a random-color rectangle sprite moving over
a background; the label is the motion pattern, so the discriminative
signal lives in frame-to-frame change rather than appearance.  Generation
is a pure function of (config, seed): per-sample RNGs are derived with
``numpy.random.SeedSequence([seed, sample_id])``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .codec import read_raw_video, write_raw_video

__all__ = [
    "CLASS_NAMES",
    "SynthConfig",
    "LabeledVideo",
    "generate",
    "split",
    "save_dataset",
    "load_dataset",
]

CLASS_NAMES = (
    "still",
    "left",
    "right",
    "up",
    "down",
    "diag-down-right",
    "diag-up-left",
    "bounce-horizontal",
)

# (dy, dx) per frame; bounce-horizontal picks a horizontal direction at
# random and reflects at the walls.
_VELOCITIES = {
    "still": (0, 0),
    "left": (0, -2),
    "right": (0, 2),
    "up": (-2, 0),
    "down": (2, 0),
    "diag-down-right": (2, 2),
    "diag-up-left": (-2, -2),
}
_SPEED = 2


@dataclass
class SynthConfig:
    height: int = 32
    width: int = 32
    channels: int = 3
    frames: int = 12
    samples_per_class: int = 64
    sprite_min: int = 6
    sprite_max: int = 12
    background: str = "solid"      # "solid" | "noise"
    noise_amplitude: int = 2       # per-frame pixel noise, 8-bit units
    seed: int = 0

    def validate(self) -> None:
        if self.height < 8 or self.width < 8:
            raise ValueError("frame too small for sprites")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        if not (2 <= self.sprite_min <= self.sprite_max):
            raise ValueError("invalid sprite size range")
        if self.sprite_max > min(self.height, self.width) // 2:
            raise ValueError("sprite too large to stay renderable")
        if self.background not in ("solid", "noise"):
            raise ValueError(f"unknown background mode {self.background!r}")
        if self.noise_amplitude < 0:
            raise ValueError("noise amplitude must be >= 0")

    @property
    def classes(self) -> int:
        return len(CLASS_NAMES)


@dataclass
class LabeledVideo:
    video: np.ndarray       # (F, H, W, C) uint8
    label: int
    sample_id: int


def _sample_rng(seed: int, sample_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, sample_id])))


def _render_sample(cfg: SynthConfig, class_id: int, rng: np.random.Generator) -> np.ndarray:
    h, w, c, f = cfg.height, cfg.width, cfg.channels, cfg.frames
    name = CLASS_NAMES[class_id]

    sh = int(rng.integers(cfg.sprite_min, cfg.sprite_max + 1))
    sw = int(rng.integers(cfg.sprite_min, cfg.sprite_max + 1))
    bg_color = rng.integers(0, 256, size=c)
    sprite = rng.integers(0, 256, size=c)
    # keep the sprite visually separable from the background
    while np.abs(sprite.astype(int) - bg_color.astype(int)).max() < 120:
        sprite = rng.integers(0, 256, size=c)

    if cfg.background == "solid":
        base = np.broadcast_to(bg_color.astype(np.uint8), (h, w, c)).copy()
    else:
        base = rng.integers(0, 256, size=(h, w, c)).astype(np.uint8)

    y_max, x_max = h - sh, w - sw
    if name == "bounce-horizontal":
        vy, vx = 0, int(rng.choice([-_SPEED, _SPEED]))
    else:
        vy, vx = _VELOCITIES[name]

    # Start positions leave room to move for the entire clip, so every
    # frame of a directed-motion sample carries motion signal (a left-mover
    # starting at the left wall would otherwise be indistinguishable from
    # "still").  When the frame is too small for the full travel the start
    # degenerates to the far wall, which maximizes the travelled distance.
    travel = (f - 1) * _SPEED

    def _start(extent_max: int, v: int) -> int:
        if v > 0:
            return int(rng.integers(0, max(0, extent_max - travel) + 1))
        if v < 0:
            return int(rng.integers(min(extent_max, travel), extent_max + 1))
        return int(rng.integers(0, extent_max + 1))

    y = _start(y_max, vy)
    if name == "bounce-horizontal":
        # start close enough to the wall ahead that the sprite bounces
        # within the clip
        room = (f // 2) * _SPEED
        if vx > 0:
            x = int(rng.integers(max(0, x_max - room), x_max + 1))
        else:
            x = int(rng.integers(0, min(room, x_max) + 1))
    else:
        x = _start(x_max, vx)

    frames = np.empty((f, h, w, c), dtype=np.uint8)
    for t in range(f):
        img = base.copy()
        img[y:y + sh, x:x + sw] = sprite.astype(np.uint8)
        if cfg.noise_amplitude > 0:
            noise = rng.integers(-cfg.noise_amplitude, cfg.noise_amplitude + 1,
                                 size=(h, w, c))
            img = np.clip(img.astype(np.int16) + noise, 0, 255).astype(np.uint8)
        frames[t] = img
        if name == "bounce-horizontal":
            nx = x + vx
            if nx < 0 or nx > x_max:
                vx = -vx
                nx = x + vx
            x = nx
        else:
            y = min(max(y + vy, 0), y_max)
            x = min(max(x + vx, 0), x_max)
    return frames


def generate(cfg: SynthConfig) -> list[LabeledVideo]:
    """Render the full dataset: exact class balance, deterministic in
    (config, seed)."""
    cfg.validate()
    samples = []
    sample_id = 0
    for class_id in range(cfg.classes):
        for _ in range(cfg.samples_per_class):
            rng = _sample_rng(cfg.seed, sample_id)
            samples.append(LabeledVideo(video=_render_sample(cfg, class_id, rng),
                                        label=class_id, sample_id=sample_id))
            sample_id += 1
    return samples


def split(dataset: list[LabeledVideo], train_fraction: float,
          seed: int) -> tuple[list[LabeledVideo], list[LabeledVideo]]:
    """Deterministic stratified split preserving class balance within one
    sample per class."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.Generator(np.random.PCG64(seed))
    by_class: dict[int, list[LabeledVideo]] = {}
    for s in dataset:
        by_class.setdefault(s.label, []).append(s)
    train: list[LabeledVideo] = []
    test: list[LabeledVideo] = []
    for label in sorted(by_class):
        group = by_class[label]
        order = rng.permutation(len(group))
        n_train = int(round(len(group) * train_fraction))
        for i, idx in enumerate(order):
            (train if i < n_train else test).append(group[idx])
    train.sort(key=lambda s: s.sample_id)
    test.sort(key=lambda s: s.sample_id)
    return train, test


def save_dataset(directory, dataset: list[LabeledVideo]) -> None:
    """Persist as manifest.txt (sample id, class id, file name) plus one
    raw-video file per sample."""
    os.makedirs(directory, exist_ok=True)
    lines = []
    for s in dataset:
        fname = f"sample_{s.sample_id:05d}.mfrv"
        write_raw_video(os.path.join(directory, fname), s.video)
        lines.append(f"{s.sample_id},{s.label},{fname}\n")
    with open(os.path.join(directory, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.writelines(lines)


def load_dataset(directory) -> list[LabeledVideo]:
    samples = []
    with open(os.path.join(directory, "manifest.txt"), encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            sid, label, fname = line.split(",")
            samples.append(LabeledVideo(
                video=read_raw_video(os.path.join(directory, fname)),
                label=int(label), sample_id=int(sid)))
    return samples
