"""Final task decoders: two 2x deconvolutions then a scoring convolution.

Each deconvolution doubles the spatial grid and halves the channel count,
taking the fused quarter-resolution features back to the full input grid.
"""

from .autograd import ConfigurationError
from .frontend import aggregated_channels
from .distill import fused_channels
from .heads import score_channels
from .ops import conv2d, conv_transpose2d, relu


def build_decoders(cfg, store):
    in_ch = fused_channels(cfg, aggregated_channels(cfg))
    if in_ch < 4:
        raise ConfigurationError(
            f"decoder input has {in_ch} channels; needs >= 4 to halve twice"
        )
    c1, c2 = in_ch // 2, in_ch // 4
    for k in cfg.final_tasks:
        store.add_conv(f"decoder.{k}.up1", c1, in_ch, 4, 4, transposed=True)
        store.add_conv(f"decoder.{k}.up2", c2, c1, 4, 4, transposed=True)
        store.add_conv(f"decoder.{k}.score", score_channels(cfg, k), c2, 3, 3)


def decode(store, cfg, fused, k):
    """Quarter-resolution fused features -> full-resolution score map for task k."""
    w1, b1 = store.pair(f"decoder.{k}.up1")
    x = relu(conv_transpose2d(fused, w1, b1, stride=2, padding=1))
    w2, b2 = store.pair(f"decoder.{k}.up2")
    x = relu(conv_transpose2d(x, w2, b2, stride=2, padding=1))
    sw, sb = store.pair(f"decoder.{k}.score")
    return conv2d(x, sw, sb, padding=1)
