"""Compressed-domain action recognition toolkit.

End-to-end desk-scale pipeline: a toy motion-compensated GOP codec,
residual accumulation and augmented-residual clip assembly, a mini
multi-fiber 3D CNN on a minimal autodiff tensor engine, raw-to-compressed
teacher-student distillation, and a synthetic MovingShapes dataset.
"""

from . import codec, distill, model, synth, tensor, xform
from .estimators import ClipAssembler, CompressedVideoClassifier, RawVideoClassifier

__version__ = "0.1.0"

__all__ = [
    "codec",
    "distill",
    "model",
    "synth",
    "tensor",
    "xform",
    "ClipAssembler",
    "RawVideoClassifier",
    "CompressedVideoClassifier",
    "__version__",
]
