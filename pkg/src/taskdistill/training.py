"""Batch assembly, the joint objective, and the two-phase training schedule.

Phase 1 optimizes the front end through its parsing supervisor at the
phase-1 learning rate; phase 2 optimizes every parameter against the full
weighted objective at a lower rate. Intermediate heads are supervised at
1/4 resolution with ground truth subsampled by strided picking; normals
and contours for those targets are re-derived at that grid.
"""

from dataclasses import dataclass

import numpy as np

from .autograd import Tape, Tensor4
from .config import TASKS
from .data import augment, contours_from_semantics, normals_from_depth
from .losses import (
    DivergenceError,
    combine_losses,
    contour_pos_weight,
    loss_contour,
    loss_depth,
    loss_normal,
    loss_parsing,
)
from .network import forward, param_names_for_layers, phase1_layers
from .optim import OptimState, sgd_step

CURVE_COLUMNS = (
    "iteration", "phase",
    "L1_intermediate_depth", "L2_intermediate_parsing", "L3_normal",
    "L4_contour", "L5_depth", "L6_parsing", "L_all", "lr",
)


@dataclass
class Batch:
    """Stacked tensors for one optimization step, full and quarter resolution."""

    image: Tensor4
    depth: np.ndarray
    valid: np.ndarray
    labels: np.ndarray
    depth_q: np.ndarray
    valid_q: np.ndarray
    labels_q: np.ndarray
    normal_q: np.ndarray
    normal_mask_q: np.ndarray
    contour_q: np.ndarray


def assemble_batch(samples):
    image = Tensor4(np.stack([s.image for s in samples]))
    depth = np.stack([s.depth for s in samples])[:, None]
    valid = np.stack([s.valid_mask for s in samples])[:, None]
    labels = np.stack([s.labels for s in samples]).astype(np.int64)

    dq, vq, lq, nq, nmq, cq = [], [], [], [], [], []
    for s in samples:
        d4 = s.depth[::4, ::4]
        l4 = s.labels[::4, ::4]
        v4 = (d4 > 0).astype(np.float64)
        # strided picking keeps validity crisp; derivatives use the 4px spacing
        n4, nm4 = normals_from_depth(d4, v4, s.camera_constant, spacing=4.0)
        dq.append(d4)
        vq.append(v4)
        lq.append(l4.astype(np.int64))
        nq.append(n4)
        nmq.append(nm4)
        cq.append(contours_from_semantics(l4))
    return Batch(
        image=image,
        depth=depth, valid=valid, labels=labels,
        depth_q=np.stack(dq)[:, None], valid_q=np.stack(vq)[:, None],
        labels_q=np.stack(lq),
        normal_q=np.stack(nq), normal_mask_q=np.stack(nmq)[:, None],
        contour_q=np.stack(cq)[:, None],
    )


def compute_objective(store, cfg, batch, pos_weight_clamp=(1.0, 20.0), only=None):
    """Forward plus every configured loss term; returns (total, report, outputs)."""
    outputs = forward(store, cfg, batch.image)
    terms = {}
    if cfg.deep_supervision:
        inter = outputs.intermediate
        terms["intermediate_depth"] = loss_depth(inter.depth, batch.depth_q, batch.valid_q)
        terms["intermediate_parsing"] = loss_parsing(inter.parsing, batch.labels_q)
        terms["normal"] = loss_normal(inter.normal, batch.normal_q, batch.normal_mask_q)
        terms["contour"] = loss_contour(
            inter.contour, batch.contour_q,
            pos_weight=contour_pos_weight(batch.contour_q, pos_weight_clamp),
        )
    if "depth" in cfg.final_tasks:
        terms["depth"] = loss_depth(outputs.final["depth"], batch.depth, batch.valid)
    if "parsing" in cfg.final_tasks:
        terms["parsing"] = loss_parsing(outputs.final["parsing"], batch.labels)
    if only is not None:
        terms = {k: v for k, v in terms.items() if k in only}
    total, report = combine_losses(terms, cfg)
    return total, report, outputs


def phase1_loss_name(cfg):
    if cfg.deep_supervision:
        return "intermediate_parsing"
    if "parsing" in cfg.final_tasks:
        return "parsing"
    return None


@dataclass
class TrainResult:
    curve: list            # rows matching CURVE_COLUMNS
    iterations: int
    diverged: bool
    final_report: object   # LossReport of the last completed step
    phase: int
    velocities: dict       # name -> array, matching the final parameters


def two_phase_train(store, experiment, train_samples, seed,
                    on_epoch=None, on_iteration=None):
    """Run both phases over the training set; deterministic per (config, seed).

    on_epoch(phase, epoch, iteration, state) fires after each epoch
    (checkpointing); on_iteration(row) after each step (loss-curve
    streaming). On divergence the parameters and velocities roll back to the
    last epoch boundary and the result is flagged; callers decide how to exit.
    """
    if not train_samples:
        raise DivergenceError("training set is empty")
    cfg = experiment.network
    tr = experiment.training
    rng = np.random.default_rng(np.random.PCG64(seed))

    curve = []
    iteration = 0
    last_report = None
    good_params = store.clone_values()
    good_vel = {}
    phase_reached = 0

    phase1_only = phase1_loss_name(cfg)
    phases = (
        (1, tr.phase1, param_names_for_layers(store, phase1_layers(cfg, store)),
         (phase1_only,) if phase1_only else None),
        (2, tr.phase2, store.names(), None),
    )
    for phase, pcfg, active, only in phases:
        if pcfg.epochs == 0 or not active or (phase == 1 and only is None):
            continue
        phase_reached = phase
        state = OptimState.for_params(store, active, pcfg.learning_rate,
                                      tr.momentum, tr.weight_decay, phase)
        n = len(train_samples)
        bs = min(tr.batch_size, n)
        for epoch in range(pcfg.epochs):
            order = rng.permutation(n)
            for start in range(0, n - bs + 1, bs):
                chosen = [train_samples[i] for i in order[start : start + bs]]
                if tr.augment:
                    chosen = [augment(s, rng, tr.ratio_set) for s in chosen]
                batch = assemble_batch(chosen)
                with Tape() as tape:
                    try:
                        total, report, _ = compute_objective(
                            store, cfg, batch, tr.pos_weight_clamp, only=only
                        )
                    except DivergenceError:
                        store.load_values(good_params)
                        return TrainResult(curve, iteration, True, last_report,
                                           phase_reached, good_vel)
                    tape.backward(total)
                grads = {name: tape.grad(store[name]) for name in active}
                sgd_step(store, grads, state)
                iteration += 1
                row = _curve_row(iteration, phase, report, pcfg.learning_rate)
                curve.append(row)
                last_report = report
                if on_iteration:
                    on_iteration(row)
            good_params = store.clone_values()
            good_vel = {k: v.copy() for k, v in state.velocities.items()}
            if on_epoch:
                on_epoch(phase, epoch, iteration, state)
    return TrainResult(curve, iteration, False, last_report, phase_reached, good_vel)


def _curve_row(iteration, phase, report, lr):
    return [str(iteration), str(phase)] + report.row() + [f"{lr:g}"]


def write_curve(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(CURVE_COLUMNS) + "\n")
        for row in rows:
            fh.write("\t".join(row) + "\n")
