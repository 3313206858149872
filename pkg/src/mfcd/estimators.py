"""Scikit-learn style estimator wrappers.

``ClipAssembler`` is a transformer turning raw videos into network-ready
clips; ``RawVideoClassifier`` and ``CompressedVideoClassifier`` wrap the
teacher and student training loops behind fit/predict/score with
``get_params``/``set_params``, so the pipeline composes with the wider
ecosystem (duck-typed; no scikit-learn dependency).
"""

from __future__ import annotations

import inspect

import numpy as np

from .codec import DEFAULT_BLOCK, DEFAULT_GOP, DEFAULT_SEARCH
from .distill import (DistillConfig, distill_student, make_clips,
                      predict_logits, train_student, train_teacher)
from .model import ModelConfig
from .synth import LabeledVideo
from .xform import CLIP_FORMATS, FULL, RAW

__all__ = ["ClipAssembler", "RawVideoClassifier", "CompressedVideoClassifier"]


def check_videos(X) -> list[np.ndarray]:
    """Validate a batch of raw videos: uint8 arrays of shape (F, H, W, C)
    sharing one geometry."""
    videos = [np.asarray(v) for v in X]
    if not videos:
        raise ValueError("expected at least one video")
    for i, v in enumerate(videos):
        if v.ndim != 4 or v.shape[3] not in (1, 3):
            raise ValueError(f"video {i}: expected (F, H, W, C) with C in (1, 3), "
                             f"got {v.shape}")
        if v.dtype != np.uint8:
            raise ValueError(f"video {i}: expected uint8 pixels, got {v.dtype}")
        if v.shape[1:] != videos[0].shape[1:]:
            raise ValueError(f"video {i}: geometry {v.shape[1:]} differs from "
                             f"video 0 ({videos[0].shape[1:]})")
    return videos


def check_labels(y, n: int) -> np.ndarray:
    labels = np.asarray(y)
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} != ({n},)")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"labels must be integers, got dtype {labels.dtype}")
    return labels.astype(np.int64)


class _ParamsMixin:
    """get_params/set_params over __init__ keyword arguments, matching the
    scikit-learn estimator contract."""

    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for key, val in params.items():
            if key not in valid:
                raise ValueError(f"invalid parameter {key!r} for {type(self).__name__}")
            setattr(self, key, val)
        return self


class ClipAssembler(_ParamsMixin):
    """Transform raw videos into (C, K, H, W) clips in a chosen format.

    Stateless apart from hyperparameters; fit is a no-op.
    """

    def __init__(self, clip_format: str = FULL, block: int = DEFAULT_BLOCK,
                 search: int = DEFAULT_SEARCH, gop_len: int = DEFAULT_GOP):
        self.clip_format = clip_format
        self.block = block
        self.search = search
        self.gop_len = gop_len

    def fit(self, X, y=None):
        if self.clip_format not in CLIP_FORMATS:
            raise ValueError(f"unknown clip format {self.clip_format!r}")
        return self

    def transform(self, X) -> np.ndarray:
        """Returns the clip of the first full GOP of each video, stacked
        into (N, C, K, H, W) float32."""
        self.fit(X)
        videos = check_videos(X)
        samples = [LabeledVideo(video=v, label=0, sample_id=i)
                   for i, v in enumerate(videos)]
        clips, _, vids = make_clips(samples, self.clip_format, self.block,
                                    self.search, self.gop_len)
        first = [int(np.argmax(vids == i)) for i in range(len(videos))]
        return clips[first]

    def fit_transform(self, X, y=None) -> np.ndarray:
        return self.fit(X, y).transform(X)


class _BaseVideoClassifier(_ParamsMixin):
    clip_format_ = RAW

    def _distill_config(self) -> DistillConfig:
        return DistillConfig(epochs=self.epochs, batch_size=self.batch_size,
                             lr=self.lr, momentum=self.momentum,
                             weight_decay=self.weight_decay, seed=self.seed)

    def _model_config(self, videos, n_classes: int) -> ModelConfig:
        f, h, w, c = videos[0].shape
        return ModelConfig(in_channels=c, clip_len=self.gop_len, height=h,
                           width=w, stage_widths=tuple(self.stage_widths),
                           fibers=self.fibers, classes=n_classes)

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise RuntimeError("estimator is not fitted; call fit first")
        assembler = ClipAssembler(self.clip_format_, gop_len=self.gop_len)
        clips = assembler.transform(X)
        logits = predict_logits(self.model_, clips)
        return self.classes_[np.argmax(logits, axis=1)]

    def score(self, X, y) -> float:
        pred = self.predict(X)
        y = np.asarray(y)
        return float((pred == y).mean())


class RawVideoClassifier(_BaseVideoClassifier):
    """Raw-domain 3D CNN classifier (the distillation teacher)."""

    clip_format_ = RAW

    def __init__(self, epochs: int = 20, batch_size: int = 32, lr: float = 0.005,
                 momentum: float = 0.9, weight_decay: float = 0.0001,
                 stage_widths: tuple = (16, 32, 64), fibers: int = 4,
                 gop_len: int = DEFAULT_GOP, seed: int = 0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.stage_widths = stage_widths
        self.fibers = fibers
        self.gop_len = gop_len
        self.seed = seed

    def fit(self, X, y):
        videos = check_videos(X)
        labels = check_labels(y, len(videos))
        self.classes_ = np.unique(labels)
        remap = {c: i for i, c in enumerate(self.classes_)}
        samples = [LabeledVideo(video=v, label=remap[int(l)], sample_id=i)
                   for i, (v, l) in enumerate(zip(videos, labels))]
        cfg = self._distill_config()
        self.model_, self.report_ = train_teacher(
            samples, samples, self._model_config(videos, len(self.classes_)), cfg)
        return self


class CompressedVideoClassifier(_BaseVideoClassifier):
    """Compressed-domain student classifier.

    With ``teacher=None`` this is plain training on the chosen clip
    format; passing a fitted RawVideoClassifier enables hint + soft-logit
    distillation.
    """

    def __init__(self, teacher: RawVideoClassifier | None = None,
                 clip_format: str = FULL, tau: float = 4.0, lambda1: float = 1.0,
                 lambda2: float = 1.0, epochs: int = 20, batch_size: int = 32,
                 lr: float = 0.005, momentum: float = 0.9,
                 weight_decay: float = 0.0001, stage_widths: tuple = (16, 32, 64),
                 fibers: int = 4, gop_len: int = DEFAULT_GOP, seed: int = 0):
        self.teacher = teacher
        self.clip_format = clip_format
        self.tau = tau
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.stage_widths = stage_widths
        self.fibers = fibers
        self.gop_len = gop_len
        self.seed = seed

    @property
    def clip_format_(self):
        return self.clip_format

    def fit(self, X, y):
        if self.clip_format not in CLIP_FORMATS:
            raise ValueError(f"unknown clip format {self.clip_format!r}")
        videos = check_videos(X)
        labels = check_labels(y, len(videos))
        self.classes_ = np.unique(labels)
        remap = {c: i for i, c in enumerate(self.classes_)}
        samples = [LabeledVideo(video=v, label=remap[int(l)], sample_id=i)
                   for i, (v, l) in enumerate(zip(videos, labels))]
        cfg = self._distill_config()
        cfg.tau, cfg.lambda1, cfg.lambda2 = self.tau, self.lambda1, self.lambda2
        mconfig = self._model_config(videos, len(self.classes_))
        if self.teacher is None:
            self.model_, self.report_ = train_student(
                samples, samples, mconfig, cfg, clip_format=self.clip_format)
        else:
            if not hasattr(self.teacher, "model_"):
                raise RuntimeError("teacher is not fitted; call teacher.fit first")
            self.model_, self.report_ = distill_student(
                samples, samples, self.teacher.model_, mconfig, cfg,
                student_format=self.clip_format)
        return self
