"""Multi-modal distillation: fusing the auxiliary predictions per final task.

Three schemes, selected by config:
  A - concatenate all task features into one shared map for both decoders;
  B - per final task, add messages from every other task's features through
      pair-specific 3x3 convs (a residual refinement);
  C - like B, but a sigmoid attention map computed from the target task's
      own features gates every incoming message elementwise, and the
      message convs are shared across final tasks.

Message kernels (and their biases) start at zero, so an untrained module
is exactly the residual identity.
"""

from .autograd import ConfigurationError
from .config import TASKS
from .ops import add, concat_channels, conv2d, mul, sigmoid
from .params import ZERO


def _ordered_active(cfg):
    return [t for t in TASKS if t in cfg.active_inputs]


def build_distillation(cfg, store):
    cf = cfg.feature_channels
    active = _ordered_active(cfg)
    if cfg.distill_variant == "B":
        for k in cfg.final_tasks:
            for t in active:
                if t != k:
                    store.add_conv(f"distill.b.msg.{t}_to_{k}", cf, cf, 3, 3, init=ZERO)
    elif cfg.distill_variant == "C":
        for k in cfg.final_tasks:
            store.add_conv(f"distill.c.attn.{k}", cf, cf, 3, 3)
        for t in active:
            store.add_conv(f"distill.c.msg.{t}", cf, cf, 3, 3, init=ZERO)


def distill_a(features):
    """Naive concatenation; one fused map shared by every decoder."""
    if not features:
        raise ConfigurationError("distillation needs at least one feature map")
    return concat_channels([features[t] for t in TASKS if t in features])


def distill_b(store, cfg, features, k):
    """Residual cross-task message passing for final task k."""
    if k not in features:
        raise ConfigurationError(
            f"final task {k!r} has no distillation features; active inputs are "
            f"{sorted(features)}"
        )
    out = features[k]
    if not cfg.distill_messages:
        return out
    for t in _ordered_active(cfg):
        if t == k:
            continue
        weight, bias = store.pair(f"distill.b.msg.{t}_to_{k}")
        out = add(out, conv2d(features[t], weight, bias, padding=1))
    return out


def attention_map(store, k, f_k):
    """Sigmoid gate in (0,1) computed from the target task's own features."""
    weight, bias = store.pair(f"distill.c.attn.{k}")
    return sigmoid(conv2d(f_k, weight, bias, padding=1))


def distill_c(store, cfg, features, k):
    """Attention-gated message passing: the gate scales every incoming message."""
    if k not in features:
        raise ConfigurationError(
            f"final task {k!r} has no distillation features; active inputs are "
            f"{sorted(features)}"
        )
    out = features[k]
    if not cfg.distill_messages:
        return out
    gate = attention_map(store, k, features[k])
    for t in _ordered_active(cfg):
        if t == k:
            continue
        weight, bias = store.pair(f"distill.c.msg.{t}")
        out = add(out, mul(gate, conv2d(features[t], weight, bias, padding=1)))
    return out


def fused_channels(cfg, agg_ch):
    """Channel width of the map each decoder consumes."""
    if cfg.distill_variant == "none":
        return agg_ch
    if cfg.distill_variant == "A":
        return len(cfg.active_inputs) * cfg.feature_channels
    return cfg.feature_channels
