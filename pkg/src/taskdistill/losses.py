"""The six-term training objective and its bookkeeping.

Depth and surface normals use masked Euclidean losses (normals are
unit-normalized first), parsing uses per-pixel softmax cross-entropy and
contours a positive-weighted sigmoid cross-entropy. Invalid pixels
contribute nothing to values or gradients. The combined objective is the
weighted sum of whichever terms the configuration enables.
"""

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor4
from .ops import add, masked_sq_err, scale, sigmoid_ce, softmax_ce, unit_normalize

LOSS_ORDER = (
    "intermediate_depth",
    "intermediate_parsing",
    "normal",
    "contour",
    "depth",
    "parsing",
)


class DivergenceError(RuntimeError):
    """A loss term left the finite range; training cannot continue."""


def loss_depth(pred, target, mask):
    """Masked mean squared depth error; zero when no pixel is valid."""
    return masked_sq_err(pred, target, mask)


def loss_normal(pred, target, mask):
    """Masked MSE between the unit-normalized prediction and unit targets."""
    return masked_sq_err(unit_normalize(pred), target, mask)


def loss_parsing(logits, labels, ignore_index=255):
    return softmax_ce(logits, labels, ignore_index=ignore_index)


def loss_contour(logit, target, pos_weight=1.0):
    return sigmoid_ce(logit, target, pos_weight=pos_weight)


def contour_pos_weight(target, clamp=(1.0, 20.0)):
    """Per-batch negative/positive ratio, clamped; 1.0 when nothing is positive."""
    pos = float(np.asarray(target).sum())
    total = np.asarray(target).size
    if pos <= 0:
        return clamp[0]
    return float(np.clip((total - pos) / pos, clamp[0], clamp[1]))


@dataclass
class LossReport:
    """Scalar values of every term plus the combined objective."""

    values: dict          # loss name -> float (only configured terms)
    weights: dict         # loss name -> float
    total: float

    def row(self):
        cells = [f"{self.values.get(name, float('nan')):.6f}" if name in self.values
                 else "" for name in LOSS_ORDER]
        return cells + [f"{self.total:.6f}"]


def combine_losses(terms, cfg):
    """Weighted sum of the configured loss terms on the tape.

    terms maps loss name -> scalar tensor. Non-finite terms abort with a
    diagnostic naming the loss.
    """
    weights = dict(cfg.loss_weights)
    total = None
    values = {}
    for name in LOSS_ORDER:
        node = terms.get(name)
        if node is None:
            continue
        v = node.item()
        if not np.isfinite(v):
            raise DivergenceError(f"loss {name!r} is non-finite ({v})")
        values[name] = v
        weighted = scale(node, weights[name])
        total = weighted if total is None else add(total, weighted)
    if total is None:
        raise DivergenceError("no loss terms are enabled")
    report = LossReport(values=values,
                        weights={n: weights[n] for n in values},
                        total=total.item())
    return total, report
