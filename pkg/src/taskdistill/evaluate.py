"""Forward-only evaluation: RGB in, metric accumulators and dumps out.

Ground-truth channels are consumed solely by the metric accumulators; the
network forward sees only the image batch.
"""

import struct
from pathlib import Path

import numpy as np

from .autograd import Tensor4
from .metrics import DepthAccumulator, ParsingAccumulator
from .network import forward


def predict(store, cfg, samples, batch_size=4):
    """Predicted (depth map, label map) pairs per sample, image input only."""
    preds = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        image = Tensor4(np.stack([s.image for s in chunk]))
        out = forward(store, cfg, image)
        depth = out.final["depth"].data[:, 0] if "depth" in out.final else None
        labels = (np.argmax(out.final["parsing"].data, axis=1).astype(np.uint8)
                  if "parsing" in out.final else None)
        for i in range(len(chunk)):
            preds.append((
                None if depth is None else depth[i],
                None if labels is None else labels[i],
            ))
    return preds


def evaluate(store, cfg, samples, rel_denominator="gt", batch_size=4, dump_dir=None):
    """Returns (DepthMetrics | None, ParsingMetrics | None) over the dataset."""
    want_depth = "depth" in cfg.final_tasks
    want_parsing = "parsing" in cfg.final_tasks
    depth_acc = DepthAccumulator(rel_denominator) if want_depth else None
    parsing_acc = ParsingAccumulator(cfg.num_classes) if want_parsing else None

    preds = predict(store, cfg, samples, batch_size=batch_size)
    for i, (sample, (dp, lp)) in enumerate(zip(samples, preds)):
        if depth_acc is not None and dp is not None:
            depth_acc.add(dp, sample.depth, sample.valid_mask)
        if parsing_acc is not None and lp is not None:
            parsing_acc.add(lp, sample.labels)
        if dump_dir is not None:
            _dump_prediction(Path(dump_dir), i, dp, lp)

    return (
        depth_acc.result() if depth_acc is not None else None,
        parsing_acc.result() if parsing_acc is not None else None,
    )


def _dump_prediction(out_dir, index, depth, labels):
    out_dir.mkdir(parents=True, exist_ok=True)
    if depth is not None:
        with open(out_dir / f"pred_{index:06d}.depth.bin", "wb") as fh:
            fh.write(struct.pack("<II", *depth.shape))
            fh.write(depth.astype("<f4").tobytes())
    if labels is not None:
        with open(out_dir / f"pred_{index:06d}.labels.bin", "wb") as fh:
            fh.write(struct.pack("<II", *labels.shape))
            fh.write(np.ascontiguousarray(labels, dtype=np.uint8).tobytes())
