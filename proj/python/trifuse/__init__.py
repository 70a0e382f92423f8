"""Trimodal face, gesture and voice identification."""

import json

from . import _core
from ._core import (
    ConfigError,
    Model,
    ShapeError,
    apply_correction,
    confidence_weighted_fusion,
    ensemble,
    focal_loss,
    softmax,
    uncertainty_weighted_total,
)

__all__ = [
    "ConfigError",
    "Model",
    "ShapeError",
    "apply_correction",
    "confidence_weighted_fusion",
    "default_config",
    "ensemble",
    "evaluate",
    "focal_loss",
    "generate_data",
    "grad_check",
    "softmax",
    "train",
    "uncertainty_weighted_total",
]


def _dump(config):
    return "" if config is None else json.dumps(config)


def default_config():
    return json.loads(_core.default_config())


def generate_data(out, config=None):
    return _core.generate_data(_dump(config), str(out))


def train(data_dir, out, config=None):
    return json.loads(_core.train(_dump(config), str(data_dir), str(out)))


def evaluate(checkpoint, data_dir, ablate=""):
    return json.loads(Model(str(checkpoint)).evaluate(str(data_dir), ablate))


def grad_check(seed=0, module="all"):
    return _core.grad_check(seed, module)
