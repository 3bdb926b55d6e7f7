"""Intermediate multi-task prediction heads and the feature transform.

Each of the four auxiliary tasks gets a deconvolution that doubles the
encoder grid (full width for depth and parsing, half width for normal and
contour), a scoring conv, and a resize to exactly 1/4 of the input image.
Before distillation every active prediction map is widened to the shared
feature width by an independent 3x3 conv + ReLU.
"""

from dataclasses import dataclass

from .autograd import ConfigurationError, Tensor4
from .config import TASKS
from .frontend import aggregated_channels
from .ops import bilinear_resize, conv2d, conv_transpose2d, relu


def score_channels(cfg, task):
    return {"depth": 1, "parsing": cfg.num_classes, "normal": 3, "contour": 1}[task]


def head_width(cfg, task):
    # main tasks get the full head width, the two auxiliary-only tasks half
    return cfg.n_channels if task in ("depth", "parsing") else cfg.n_channels // 2


@dataclass
class IntermediatePredictions:
    """Quarter-resolution score maps for the four auxiliary tasks."""

    depth: Tensor4
    parsing: Tensor4
    normal: Tensor4
    contour: Tensor4

    def by_task(self, task):
        return getattr(self, task)


def build_heads(cfg, store):
    in_ch = aggregated_channels(cfg)
    for task in TASKS:
        width = head_width(cfg, task)
        store.add_conv(f"heads.{task}.up", width, in_ch, 4, 4, transposed=True)
        store.add_conv(f"heads.{task}.score", score_channels(cfg, task), width, 3, 3)


def heads_forward(store, cfg, features, image_hw):
    """Aggregated features -> four task score maps at 1/4 input resolution."""
    h, w = image_hw
    th, tw = h // 4, w // 4
    out = {}
    for task in TASKS:
        weight, bias = store.pair(f"heads.{task}.up")
        x = relu(conv_transpose2d(features.tensor, weight, bias, stride=2, padding=1))
        sw, sb = store.pair(f"heads.{task}.score")
        x = conv2d(x, sw, sb, padding=1)
        out[task] = bilinear_resize(x, th, tw)
    return IntermediatePredictions(**out)


def build_transforms(cfg, store):
    for task in TASKS:
        if task in cfg.active_inputs:
            store.add_conv(f"transform.{task}", cfg.feature_channels,
                           score_channels(cfg, task), 3, 3)


def predictions_to_features(store, cfg, preds):
    """Widen the active intermediate score maps into distillation features."""
    if cfg.distill_variant != "none" and not cfg.active_inputs:
        raise ConfigurationError(
            "distillation is enabled but no intermediate inputs are active"
        )
    features = {}
    for task in TASKS:
        if task not in cfg.active_inputs:
            continue
        weight, bias = store.pair(f"transform.{task}")
        features[task] = relu(conv2d(preds.by_task(task), weight, bias, padding=1))
    return features
