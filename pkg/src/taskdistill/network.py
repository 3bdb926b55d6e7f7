"""Whole-network assembly: parameters, forward pass, and phase-1 subsets."""

from dataclasses import dataclass

from .decoders import build_decoders, decode
from .distill import build_distillation, distill_a, distill_b, distill_c
from .frontend import aggregate_scales, build_frontend, encoder_stages
from .heads import build_heads, build_transforms, heads_forward, predictions_to_features
from .ops import bilinear_resize
from .params import ParamStore


@dataclass
class NetworkOutputs:
    """Everything one forward pass produces.

    intermediate is None for configs without deep supervision; final maps
    exist only for the configured final tasks, at full input resolution.
    """

    intermediate: object
    final: dict


def build_network(cfg, seed):
    """Allocate and initialize every parameter; bit-deterministic per seed."""
    cfg.validate()
    store = ParamStore(seed)
    build_frontend(cfg, store)
    if cfg.deep_supervision:
        build_heads(cfg, store)
        if cfg.distill_variant != "none":
            build_transforms(cfg, store)
            build_distillation(cfg, store)
    build_decoders(cfg, store)
    return store


def forward(store, cfg, image):
    """Full forward pass from an RGB batch to all configured predictions."""
    _, _, h, w = image.shape
    stages = encoder_stages(store, cfg, image)
    agg = aggregate_scales(store, cfg, stages)

    intermediate = None
    features = None
    if cfg.deep_supervision:
        intermediate = heads_forward(store, cfg, agg, (h, w))
        if cfg.distill_variant != "none":
            features = predictions_to_features(store, cfg, intermediate)

    final = {}
    shared = None
    for k in cfg.final_tasks:
        if cfg.distill_variant == "none":
            if shared is None:
                # no distillation: decoders read the front-end features,
                # lifted to the quarter grid the decoder contract expects
                shared = bilinear_resize(agg.tensor, h // 4, w // 4)
            fused = shared
        elif cfg.distill_variant == "A":
            if shared is None:
                shared = distill_a(features)
            fused = shared
        elif cfg.distill_variant == "B":
            fused = distill_b(store, cfg, features, k)
        else:
            fused = distill_c(store, cfg, features, k)
        final[k] = decode(store, cfg, fused, k)
    return NetworkOutputs(intermediate=intermediate, final=final)


def phase1_layers(cfg, store):
    """Layers trained in phase 1: the front end plus its parsing supervisor.

    With deep supervision that is the intermediate parsing head; otherwise,
    when parsing is a final task, the parsing decoder. Configs with no
    parsing path anywhere get an empty set (phase 1 is skipped).
    """
    layers = [g for g in store.groups() if g.startswith("frontend.")]
    if cfg.deep_supervision:
        layers += [g for g in store.groups() if g.startswith("heads.parsing.")]
    elif "parsing" in cfg.final_tasks:
        layers += [g for g in store.groups() if g.startswith("decoder.parsing.")]
    else:
        return []
    return layers


def param_names_for_layers(store, layers):
    wanted = set(layers)
    return [n for n in store.names() if n.rsplit(".", 1)[0] in wanted]
