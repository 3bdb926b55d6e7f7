"""Command-line entry point: train, eval, ablate, gradcheck, gen-data.

Exit codes: 0 success, 2 configuration problem (schema violation, bad
files), 3 divergence during training, 4 checkpoint digest mismatch,
5 gradient-check exceedance.
"""

import argparse
import statistics
import sys
from pathlib import Path

from .autograd import ConfigurationError, DataError
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, apply_variant, experiment_from_dict, load_experiment, load_scene_config
from .data import generate_dataset, read_dataset, write_dataset
from .evaluate import evaluate
from .gradcheck import run_gradcheck
from .metrics import (
    DEPTH_METRIC_NAMES,
    PARSING_METRIC_NAMES,
    format_metric_table,
    metric_cells,
)
from .network import build_network
from .training import two_phase_train, write_curve
from .variants import GRIDS, get_variant, grid_variants

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_DIGEST = 4
EXIT_GRADCHECK = 5


def desk_config_dict():
    """Built-in desk-scale defaults used by `ablate` when no config is given."""
    return {
        "network": {
            "n_channels": 32,
            "encoder_stage_channels": [16, 32, 64],
            "num_classes": 6,
            "distill_variant": "C",
            "active_inputs": ["depth", "parsing", "normal", "contour"],
            "final_tasks": ["depth", "parsing"],
            "deep_supervision": True,
            "distill_channels": 32,
        },
        "training": {
            "batch_size": 2,
            "phase1": {"learning_rate": 0.001, "epochs": 6},
            "phase2": {"learning_rate": 0.001, "epochs": 10},
        },
        "data": {
            "canvas": 64,
            "train_count": 64,
            "val_count": 16,
        },
    }


def train_data_seed(seed):
    return seed * 10_000_000 + 1


def val_data_seed(seed):
    return seed * 10_000_000 + 5_000_001


def _train_one(experiment, seed, out_dir=None, echo=print):
    """Build, train and evaluate one run; returns (store, result, metrics pair)."""
    cfg = experiment.network
    store = build_network(cfg, seed)
    train_samples = generate_dataset(train_data_seed(seed), experiment.train_count,
                                     experiment.scene)
    val_samples = generate_dataset(val_data_seed(seed), experiment.val_count,
                                   experiment.scene)
    curve_rows = []
    digest = cfg.digest()

    def on_epoch(phase, epoch, iteration, state):
        if out_dir is not None:
            save_checkpoint(out_dir / "latest.ckpt", digest, iteration, phase,
                            {n: store[n].data for n in store.names()},
                            state.velocities)

    result = two_phase_train(store, experiment, train_samples, seed,
                             on_epoch=on_epoch,
                             on_iteration=curve_rows.append)
    if out_dir is not None:
        write_curve(out_dir / "loss_curve.tsv", curve_rows)
        save_checkpoint(out_dir / "final.ckpt", digest, result.iterations,
                        result.phase, {n: store[n].data for n in store.names()},
                        result.velocities)
    metrics = (None, None)
    if not result.diverged and val_samples:
        metrics = evaluate(store, cfg, val_samples)
    return store, result, metrics


def cmd_train(args):
    experiment = load_experiment(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    store, result, (dm, pm) = _train_one(experiment, args.seed, out_dir)
    if result.diverged:
        print("training diverged; last good checkpoint written", file=sys.stderr)
        return EXIT_DIVERGED
    table = format_metric_table([("final", dm, pm)])
    (out_dir / "metrics.tsv").write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK


def cmd_eval(args):
    experiment = load_experiment(args.config)
    cfg = experiment.network
    ckpt = load_checkpoint(args.ckpt)
    if ckpt.digest != cfg.digest():
        print(
            f"checkpoint digest {ckpt.digest:#018x} does not match the "
            f"requested architecture {cfg.digest():#018x}",
            file=sys.stderr,
        )
        return EXIT_DIGEST
    store = build_network(cfg, seed=0)
    store.load_values(ckpt.params)
    samples = read_dataset(args.data, camera_constant=experiment.scene.camera_constant)
    dm, pm = evaluate(store, cfg, samples, rel_denominator=args.rel_denominator,
                      dump_dir=args.dump_dir)
    print(format_metric_table([("eval", dm, pm)]), end="")
    return EXIT_OK


def _median_metrics(per_seed, names):
    """Per-metric medians over seed runs; None when any run lacks the family."""
    out = {}
    for name in names:
        vals = [m[name] for m in per_seed if m is not None and m[name] is not None]
        out[name] = statistics.median(vals) if vals else None
    return out


class _MedianView:
    def __init__(self, values):
        self.values = values
        self.defined = any(v is not None for v in values.values())

    def as_dict(self):
        return self.values


def cmd_ablate(args):
    if args.grid not in GRIDS:
        print(f"unknown grid {args.grid!r}; available: {', '.join(GRIDS)}",
              file=sys.stderr)
        return EXIT_CONFIG
    base = load_experiment(args.config) if args.config else experiment_from_dict(desk_config_dict())
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = list(range(args.seeds))
    rows = []
    notes = []
    detail_lines = []
    for variant in grid_variants(args.grid):
        experiment = apply_variant(base, variant)
        depth_runs, parsing_runs, failures = [], [], []
        for seed in seeds:
            try:
                _, result, (dm, pm) = _train_one(experiment, seed)
            except (ConfigurationError, DataError) as e:
                failures.append(f"seed {seed}: {e}")
                continue
            if result.diverged:
                failures.append(f"seed {seed}: diverged")
                continue
            depth_runs.append(dm.as_dict() if dm is not None else None)
            parsing_runs.append(pm.as_dict() if pm is not None else None)
            detail_lines.append(
                "\t".join([variant.name, str(seed)]
                          + metric_cells(dm, DEPTH_METRIC_NAMES)
                          + metric_cells(pm, PARSING_METRIC_NAMES))
            )
        if failures and not depth_runs and not parsing_runs:
            rows.append((variant.name + " [failed]", None, None))
            notes.append(f"{variant.name}: all runs failed ({'; '.join(failures)})")
            continue
        dmed = _MedianView(_median_metrics(depth_runs, DEPTH_METRIC_NAMES))
        pmed = _MedianView(_median_metrics(parsing_runs, PARSING_METRIC_NAMES))
        rows.append((variant.name, dmed if dmed.defined else None,
                     pmed if pmed.defined else None))
        if failures:
            notes.append(f"{variant.name}: {len(failures)} failed run(s): "
                         f"{'; '.join(failures)}")
        if variant.note:
            notes.append(f"{variant.name}: {variant.note}")
    table = format_metric_table(rows)
    body = table + "".join(f"# {n}\n" for n in notes)
    (out_dir / f"ablation_{args.grid}.tsv").write_text(body, encoding="utf-8")
    header = "\t".join(["variant", "seed"]
                       + [f"depth_{n}" for n in DEPTH_METRIC_NAMES]
                       + [f"parsing_{n}" for n in PARSING_METRIC_NAMES])
    (out_dir / f"ablation_{args.grid}_runs.tsv").write_text(
        header + "\n" + "\n".join(detail_lines) + "\n", encoding="utf-8")
    print(body, end="")
    return EXIT_OK


def cmd_gradcheck(args):
    experiment = load_experiment(args.config)
    big = max(experiment.scene.canvas, experiment.network.n_channels,
              *experiment.network.encoder_stage_channels)
    if big > 8:
        print(f"note: config dimensions up to {big} exceed the intended tiny "
              f"size (<= 8); this may be slow", file=sys.stderr)
    report = run_gradcheck(experiment, args.seed)
    print("loss\tgroup\tmax_rel_error\tchecked")
    for row in report.rows:
        print(f"{row.loss}\t{row.group}\t{row.max_error:.3e}\t{row.checked}")
    print(f"max relative error: {report.max_error:.3e} "
          f"(tolerance {report.tolerance:g})")
    if report.passed:
        print("gradcheck: PASS")
        return EXIT_OK
    print("gradcheck: FAIL in groups: " + ", ".join(report.failing_groups()),
          file=sys.stderr)
    return EXIT_GRADCHECK


def cmd_gen_data(args):
    scene = load_scene_config(args.scene_config)
    samples = generate_dataset(args.seed, args.count, scene)
    write_dataset(args.out, samples)
    print(f"wrote {len(samples)} samples to {args.out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="taskdistill",
        description="Multi-task prediction-and-distillation trainer "
                    "(joint depth estimation and scene parsing)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="two-phase training on synthetic scenes")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="forward-only evaluation of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True,
                   help="architecture config the checkpoint must match")
    p.add_argument("--dump-dir", default=None)
    p.add_argument("--rel-denominator", choices=("gt", "pred"), default="gt")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train every variant of a diagnostic grid")
    p.add_argument("--grid", required=True, choices=sorted(GRIDS))
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="base config (desk defaults if omitted)")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    p.add_argument("--scene-config", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gen_data)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error at {e.field_path or '(unknown)'}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigurationError, DataError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
