"""Multi-task prediction-and-distillation network for joint depth estimation
and scene parsing, built on a self-contained CPU autograd engine.

The pipeline: a shared convolutional front end with multi-scale feature
aggregation produces deep features; four intermediate heads predict depth,
semantic labels, surface normals and contours as supervised auxiliary
tasks; a distillation module fuses those predictions per final task
(concatenation, message passing, or attention-gated message passing); and
task decoders emit full-resolution depth and parsing maps. Training
combines six weighted losses with invalid-pixel masking under a two-phase
SGD schedule. Inference consumes RGB only.
"""

from .autograd import ConfigurationError, DataError, Tape, Tensor4, UsageError
from .config import (
    Experiment,
    NetworkConfig,
    SceneConfig,
    TrainConfig,
    apply_variant,
    experiment_from_dict,
    load_experiment,
)
from .data import (
    Sample,
    augment,
    contours_from_semantics,
    generate_dataset,
    generate_scene,
    normals_from_depth,
    read_dataset,
    write_dataset,
)
from .evaluate import evaluate, predict
from .gradcheck import run_gradcheck
from .losses import DivergenceError, LossReport, combine_losses
from .metrics import (
    DepthAccumulator,
    DepthMetrics,
    ParsingAccumulator,
    ParsingMetrics,
    depth_metrics,
    parsing_metrics,
)
from .network import NetworkOutputs, build_network, forward
from .optim import OptimState, sgd_step
from .training import TrainResult, assemble_batch, compute_objective, two_phase_train
from .variants import GRIDS, REGISTRY, ExperimentVariant, get_variant, grid_variants

__version__ = "0.1.0"
