"""Experiment configuration: schema, validation, defaults and digests.

Config files are JSON with three sections (network, training, data). The
architecture digest hashes the canonicalized network section only, so
checkpoints bind to the architecture and not to schedules or data settings.
"""

import hashlib
import json
from dataclasses import dataclass, field, replace

import jsonschema

TASKS = ("depth", "parsing", "normal", "contour")
FINAL_TASKS = ("depth", "parsing")
DISTILL_VARIANTS = ("none", "A", "B", "C")

NYUD_RATIOS = (1.0, 1.2, 1.5)
CITYSCAPES_RATIOS = (0.5, 0.75, 1.0, 1.25, 1.75)

LOSS_NAMES = (
    "intermediate_depth",
    "intermediate_parsing",
    "normal",
    "contour",
    "depth",
    "parsing",
)
DEFAULT_LOSS_WEIGHTS = {
    "intermediate_depth": 1.0,
    "intermediate_parsing": 1.0,
    "normal": 0.8,
    "contour": 0.8,
    "depth": 1.0,
    "parsing": 1.0,
}


class ConfigError(ValueError):
    """Config file violates the schema; field_path names the offender."""

    def __init__(self, message, field_path=""):
        super().__init__(message)
        self.field_path = field_path


CONFIG_SCHEMA = {
    "type": "object",
    "required": ["network", "training", "data"],
    "additionalProperties": False,
    "properties": {
        "network": {
            "type": "object",
            "required": ["n_channels", "encoder_stage_channels", "num_classes",
                         "distill_variant", "final_tasks"],
            "additionalProperties": False,
            "properties": {
                "n_channels": {"type": "integer", "minimum": 2},
                "encoder_stage_channels": {
                    "type": "array", "items": {"type": "integer", "minimum": 1},
                    "minItems": 1,
                },
                "dilation_rates": {
                    "type": "array", "items": {"type": "integer", "minimum": 1},
                },
                "num_classes": {"type": "integer", "minimum": 2, "maximum": 254},
                "distill_variant": {"enum": list(DISTILL_VARIANTS)},
                "active_inputs": {
                    "type": "array", "items": {"enum": list(TASKS)}, "uniqueItems": True,
                },
                "final_tasks": {
                    "type": "array", "items": {"enum": list(FINAL_TASKS)},
                    "minItems": 1, "uniqueItems": True,
                },
                "deep_supervision": {"type": "boolean"},
                "distill_channels": {"type": "integer", "minimum": 4},
                "distill_messages": {"type": "boolean"},
                "loss_weights": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {name: {"type": "number", "minimum": 0}
                                   for name in LOSS_NAMES},
                },
            },
        },
        "training": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "batch_size": {"type": "integer", "minimum": 1},
                "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "weight_decay": {"type": "number", "minimum": 0},
                "phase1": {"$ref": "#/$defs/phase"},
                "phase2": {"$ref": "#/$defs/phase"},
                "augment": {"type": "boolean"},
                "scale_ratios": {"enum": ["nyud", "cityscapes"]},
                "pos_weight_clamp": {
                    "type": "array", "items": {"type": "number", "minimum": 0},
                    "minItems": 2, "maxItems": 2,
                },
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "canvas": {"type": "integer", "minimum": 8},
                "object_count": {
                    "type": "array", "items": {"type": "integer", "minimum": 0},
                    "minItems": 2, "maxItems": 2,
                },
                "depth_range": {
                    "type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                    "minItems": 2, "maxItems": 2,
                },
                "camera_constant": {"type": "number", "exclusiveMinimum": 0},
                "depth_dropout": {"type": "number", "minimum": 0, "maximum": 1},
                "train_count": {"type": "integer", "minimum": 1},
                "val_count": {"type": "integer", "minimum": 0},
            },
        },
    },
    "$defs": {
        "phase": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "epochs": {"type": "integer", "minimum": 0},
            },
        },
    },
}


@dataclass(frozen=True)
class NetworkConfig:
    """Architectural hyperparameters; everything the parameter builder needs."""

    n_channels: int = 32
    encoder_stage_channels: tuple = (16, 32, 64)
    dilation_rates: tuple = (1, 1, 2)
    num_classes: int = 6
    distill_variant: str = "C"
    active_inputs: tuple = TASKS
    final_tasks: tuple = FINAL_TASKS
    deep_supervision: bool = True
    distill_channels: int = 0  # 0 -> n_channels // 2
    distill_messages: bool = True
    loss_weights: tuple = tuple(sorted(DEFAULT_LOSS_WEIGHTS.items()))

    @property
    def num_tasks(self):
        return len(TASKS)

    @property
    def feature_channels(self):
        return self.distill_channels or self.n_channels // 2

    def weight_of(self, loss_name):
        return dict(self.loss_weights)[loss_name]

    def validate(self):
        if self.n_channels % 2:
            raise ConfigError(
                f"n_channels must be even (auxiliary heads use half), got {self.n_channels}",
                "network.n_channels",
            )
        if not self.encoder_stage_channels:
            raise ConfigError("encoder needs at least one stage", "network.encoder_stage_channels")
        if len(self.dilation_rates) != len(self.encoder_stage_channels):
            raise ConfigError(
                f"dilation_rates has {len(self.dilation_rates)} entries for "
                f"{len(self.encoder_stage_channels)} stages",
                "network.dilation_rates",
            )
        if self.distill_variant not in DISTILL_VARIANTS:
            raise ConfigError(f"unknown distill variant {self.distill_variant!r}",
                              "network.distill_variant")
        if self.distill_variant != "none":
            if not self.active_inputs:
                raise ConfigError(
                    "distillation requires at least one active intermediate input",
                    "network.active_inputs",
                )
            if not self.deep_supervision:
                raise ConfigError(
                    "distillation consumes intermediate predictions; "
                    "deep_supervision must be on",
                    "network.deep_supervision",
                )
        unknown = set(self.active_inputs) - set(TASKS)
        if unknown:
            raise ConfigError(f"unknown tasks in active_inputs: {sorted(unknown)}",
                              "network.active_inputs")
        if not self.final_tasks or set(self.final_tasks) - set(FINAL_TASKS):
            raise ConfigError(f"final_tasks must be a non-empty subset of {FINAL_TASKS}",
                              "network.final_tasks")
        return self

    def architecture_dict(self):
        return {
            "n_channels": self.n_channels,
            "encoder_stage_channels": list(self.encoder_stage_channels),
            "dilation_rates": list(self.dilation_rates),
            "num_classes": self.num_classes,
            "distill_variant": self.distill_variant,
            "active_inputs": sorted(self.active_inputs),
            "final_tasks": sorted(self.final_tasks),
            "deep_supervision": self.deep_supervision,
            "distill_channels": self.feature_channels,
            "distill_messages": self.distill_messages,
        }

    def digest(self):
        """First 8 bytes of sha256 over the canonical architecture JSON, as u64."""
        blob = json.dumps(self.architecture_dict(), sort_keys=True,
                          separators=(",", ":")).encode()
        return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


@dataclass(frozen=True)
class PhaseConfig:
    learning_rate: float
    epochs: int


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 2
    momentum: float = 0.99
    weight_decay: float = 0.0005
    phase1: PhaseConfig = PhaseConfig(0.001, 10)
    phase2: PhaseConfig = PhaseConfig(1e-5, 40)
    augment: bool = False
    scale_ratios: str = "nyud"
    pos_weight_clamp: tuple = (1.0, 20.0)

    @property
    def ratio_set(self):
        return NYUD_RATIOS if self.scale_ratios == "nyud" else CITYSCAPES_RATIOS


@dataclass(frozen=True)
class SceneConfig:
    """Synthetic scene generator settings."""

    canvas: int = 64
    num_classes: int = 6
    object_count: tuple = (2, 5)
    depth_range: tuple = (2.0, 6.0)
    camera_constant: float = 1.0
    depth_dropout: float = 0.05

    def validate(self):
        if self.canvas % 8:
            raise ConfigError(f"canvas must be divisible by 8, got {self.canvas}",
                              "data.canvas")
        if self.object_count[0] > self.object_count[1]:
            raise ConfigError("object_count range is inverted", "data.object_count")
        if self.depth_range[0] >= self.depth_range[1]:
            raise ConfigError("depth_range must be (near, far) with near < far",
                              "data.depth_range")
        if not 2 <= self.num_classes <= 254:
            raise ConfigError(f"num_classes {self.num_classes} outside [2, 254]",
                              "data.num_classes")
        return self


@dataclass(frozen=True)
class Experiment:
    """One fully resolved run: architecture + schedule + data settings."""

    network: NetworkConfig
    training: TrainConfig = TrainConfig()
    scene: SceneConfig = SceneConfig()
    train_count: int = 8
    val_count: int = 8


def _validate_schema(raw):
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        path = ".".join(str(p) for p in e.absolute_path) or "(root)"
        raise ConfigError(f"{path}: {e.message}", path) from None


def experiment_from_dict(raw):
    """Build a validated Experiment from a parsed config dict."""
    _validate_schema(raw)
    net_raw = raw["network"]
    weights = dict(DEFAULT_LOSS_WEIGHTS)
    weights.update(net_raw.get("loss_weights", {}))
    n_stages = len(net_raw["encoder_stage_channels"])
    default_dilations = [1] * (n_stages - 1) + [2] if n_stages > 1 else [1]
    network = NetworkConfig(
        n_channels=net_raw["n_channels"],
        encoder_stage_channels=tuple(net_raw["encoder_stage_channels"]),
        dilation_rates=tuple(net_raw.get("dilation_rates", default_dilations)),
        num_classes=net_raw["num_classes"],
        distill_variant=net_raw["distill_variant"],
        active_inputs=tuple(net_raw.get("active_inputs", [])),
        final_tasks=tuple(net_raw["final_tasks"]),
        deep_supervision=net_raw.get("deep_supervision", net_raw["distill_variant"] != "none"),
        distill_channels=net_raw.get("distill_channels", 0),
        distill_messages=net_raw.get("distill_messages", True),
        loss_weights=tuple(sorted(weights.items())),
    ).validate()

    tr_raw = raw["training"]

    def phase(key, default_lr, default_epochs):
        p = tr_raw.get(key, {})
        return PhaseConfig(p.get("learning_rate", default_lr), p.get("epochs", default_epochs))

    training = TrainConfig(
        batch_size=tr_raw.get("batch_size", 2),
        momentum=tr_raw.get("momentum", 0.99),
        weight_decay=tr_raw.get("weight_decay", 0.0005),
        phase1=phase("phase1", 0.001, 10),
        phase2=phase("phase2", 1e-5, 40),
        augment=tr_raw.get("augment", False),
        scale_ratios=tr_raw.get("scale_ratios", "nyud"),
        pos_weight_clamp=tuple(tr_raw.get("pos_weight_clamp", (1.0, 20.0))),
    )

    d_raw = raw["data"]
    scene = SceneConfig(
        canvas=d_raw.get("canvas", 64),
        num_classes=network.num_classes,
        object_count=tuple(d_raw.get("object_count", (2, 5))),
        depth_range=tuple(d_raw.get("depth_range", (2.0, 6.0))),
        camera_constant=d_raw.get("camera_constant", 1.0),
        depth_dropout=d_raw.get("depth_dropout", 0.05),
    ).validate()

    return Experiment(
        network=network,
        training=training,
        scene=scene,
        train_count=d_raw.get("train_count", 8),
        val_count=d_raw.get("val_count", 8),
    )


def load_experiment(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"not valid JSON: {e}", "(file)") from None
    return experiment_from_dict(raw)


def apply_variant(experiment, variant):
    """Overlay an experiment variant's architecture fields onto a base config."""
    network = replace(
        experiment.network,
        distill_variant=variant.uses_distillation,
        final_tasks=tuple(variant.final_tasks),
        active_inputs=tuple(variant.active_inputs),
        deep_supervision=variant.deep_supervision,
        distill_messages=variant.distill_messages,
    ).validate()
    return replace(experiment, network=network)


SCENE_SCHEMA = {
    "type": "object",
    "required": ["num_classes"],
    "additionalProperties": False,
    "properties": {
        "canvas": {"type": "integer", "minimum": 8},
        "num_classes": {"type": "integer", "minimum": 2, "maximum": 254},
        "object_count": CONFIG_SCHEMA["properties"]["data"]["properties"]["object_count"],
        "depth_range": CONFIG_SCHEMA["properties"]["data"]["properties"]["depth_range"],
        "camera_constant": {"type": "number", "exclusiveMinimum": 0},
        "depth_dropout": {"type": "number", "minimum": 0, "maximum": 1},
    },
}


def load_scene_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"not valid JSON: {e}", "(file)") from None
    try:
        jsonschema.validate(raw, SCENE_SCHEMA)
    except jsonschema.ValidationError as e:
        path_ = ".".join(str(p) for p in e.absolute_path) or "(root)"
        raise ConfigError(f"{path_}: {e.message}", path_) from None
    return SceneConfig(
        canvas=raw.get("canvas", 64),
        num_classes=raw["num_classes"],
        object_count=tuple(raw.get("object_count", (2, 5))),
        depth_range=tuple(raw.get("depth_range", (2.0, 6.0))),
        camera_constant=raw.get("camera_constant", 1.0),
        depth_dropout=raw.get("depth_dropout", 0.05),
    ).validate()
