"""Shared convolutional encoder with multi-scale feature aggregation.

Three strided 3x3 stages halve the resolution each (1/2, 1/4, 1/8 of the
input for the default config); later stages may dilate their kernels to
grow the receptive field without extra downsampling. Shallow stage maps are
channel-reduced by 1x1 convs, resized to the deepest stage's grid and
concatenated with it.
"""

from dataclasses import dataclass

from .autograd import Tensor4, UsageError
from .ops import bilinear_resize, concat_channels, conv2d, relu


@dataclass
class AggregatedFeatures:
    """Concatenated multi-scale encoder output at the deepest stage's grid."""

    tensor: Tensor4
    source_scales: tuple


def reduced_channels(stage_ch, last_ch):
    """Channel width a shallow stage is reduced to before aggregation."""
    return max(8, min(stage_ch, last_ch) // 4)


def aggregated_channels(cfg):
    stages = cfg.encoder_stage_channels
    if len(stages) == 1:
        return stages[0]
    last = stages[-1]
    return sum(reduced_channels(ch, last) for ch in stages[:-1]) + last


def build_frontend(cfg, store):
    in_ch = 3
    for i, ch in enumerate(cfg.encoder_stage_channels, 1):
        store.add_conv(f"frontend.stage{i}", ch, in_ch, 3, 3)
        in_ch = ch
    stages = cfg.encoder_stage_channels
    if len(stages) > 1:
        last = stages[-1]
        for i, ch in enumerate(stages[:-1], 1):
            store.add_conv(f"frontend.agg{i}", reduced_channels(ch, last), ch, 1, 1)


def encoder_stages(store, cfg, image):
    """Per-stage feature maps; stage s comes out at 1/2^s of the input grid."""
    factor = 2 ** len(cfg.encoder_stage_channels)
    _, _, h, w = image.shape
    if h % factor or w % factor:
        raise UsageError(
            f"input {h}x{w} not divisible by {factor} "
            f"(required by {len(cfg.encoder_stage_channels)} strided stages)"
        )
    x = image
    maps = []
    for i, dil in enumerate(cfg.dilation_rates, 1):
        weight, bias = store.pair(f"frontend.stage{i}")
        # padding == dilation keeps the stride-2 halving exact for 3x3 kernels
        x = relu(conv2d(x, weight, bias, stride=2, padding=dil, dilation=dil))
        maps.append(x)
    return maps


def aggregate_scales(store, cfg, stage_maps):
    if not stage_maps:
        raise UsageError("aggregate_scales needs at least one stage map")
    if len(stage_maps) == 1:
        return AggregatedFeatures(stage_maps[0], (1,))
    last = stage_maps[-1]
    _, _, th, tw = last.shape
    parts = []
    for i, m in enumerate(stage_maps[:-1], 1):
        weight, bias = store.pair(f"frontend.agg{i}")
        # plain linear projection; the stage maps are already rectified
        parts.append(bilinear_resize(conv2d(m, weight, bias), th, tw))
    parts.append(last)
    return AggregatedFeatures(
        concat_channels(parts), tuple(range(1, len(stage_maps) + 1))
    )
