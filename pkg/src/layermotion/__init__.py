"""Layered dynamic radiance fields with motion-mask fusion.

A desk-scale, fully differentiable engine: a three-layer field (static /
semi-static / dynamic-in-camera-coordinates) is trained on procedurally
generated scenes with an uncertainty-weighted color loss plus positive and
negative motion fusion of 2D pseudo-masks, optionally refined at test time
on selected frames, and scored with per-frame average precision.
"""

__version__ = "0.1.0"

from . import bake, dataset, evalkit, fields, geometry, imgio, losses, renderer, scenegen, trainer
from .errors import (
    ConfigError,
    DataError,
    DomainError,
    EngineError,
    MissingArtifactError,
    NumericalError,
    RenderError,
)
