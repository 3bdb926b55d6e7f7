"""Rank-4 tensors and the reverse-mode gradient tape.

Every value flowing through the network is a Tensor4: a float64 array in
row-major NCHW order. Differentiable operations (ops.py) record nodes on
the active Tape; Tape.backward replays the recorded nodes in reverse and
accumulates gradients per node.

A tape is confined to a single thread. Parameters are plain Tensor4 leaves
that are never mutated by tracing, so several tapes may run concurrently
over a shared read-only parameter set.
"""

import threading

import numpy as np

__all__ = [
    "Tensor4",
    "Tape",
    "active_tape",
    "ConfigurationError",
    "UsageError",
    "DataError",
]


class ConfigurationError(ValueError):
    """Shapes or settings cannot produce a valid operation."""


class UsageError(RuntimeError):
    """An operation was called outside its contract."""


class DataError(ValueError):
    """Input data violates the expected encoding (labels, file bytes)."""


class Tensor4:
    """Dense (batch, channels, height, width) float64 array.

    node_id is the handle of the tape node that produced this tensor; it is
    None for leaves (parameters, inputs, constants). Leaf tensors are looked
    up by identity on the tape instead, which keeps parameters immutable
    under tracing.
    """

    __slots__ = ("data", "requires_grad", "node_id", "_tape")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 4:
            raise ConfigurationError(
                f"Tensor4 requires exactly 4 axes (NCHW), got shape {arr.shape}"
            )
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node_id = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise UsageError(f"item() needs a 1x1x1x1 tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detached(self):
        """Copy of the value with no grad tracking."""
        return Tensor4(self.data.copy())

    def __repr__(self):
        return f"Tensor4(shape={self.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("kind", "inputs", "backward", "shape")

    def __init__(self, kind, inputs, backward, shape):
        self.kind = kind
        self.inputs = inputs
        self.backward = backward
        self.shape = shape


_tls = threading.local()


def active_tape():
    """Tape currently recording on this thread, or None."""
    stack = getattr(_tls, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Append-only record of differentiable operations.

    Nodes are stored in execution order, so every node's inputs precede it;
    backward() walks the list once in reverse. Gradients are kept as a map
    from node id to an array of the node's own shape.
    """

    def __init__(self):
        self.nodes = []
        self.grads = {}
        self._leaf_ids = {}
        self._leaf_refs = []

    def __enter__(self):
        stack = getattr(_tls, "stack", None)
        if stack is None:
            stack = _tls.stack = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tls.stack.pop()
        return False

    def node_id_of(self, tensor):
        """Node id of `tensor` on this tape, registering leaves on demand.

        Returns None for constants (tensors that neither require grad nor
        were produced on this tape).
        """
        if tensor._tape is self:
            return tensor.node_id
        if tensor.requires_grad:
            key = id(tensor)
            nid = self._leaf_ids.get(key)
            if nid is None:
                nid = len(self.nodes)
                self.nodes.append(_Node("leaf", (), None, tensor.data.shape))
                self._leaf_ids[key] = nid
                self._leaf_refs.append(tensor)
            return nid
        return None

    def record(self, kind, inputs, out_data, backward):
        """Create the output tensor of an op, tracing it if any input is traced."""
        input_ids = tuple(self.node_id_of(t) for t in inputs)
        out = Tensor4(out_data)
        if all(i is None for i in input_ids):
            return out
        nid = len(self.nodes)
        self.nodes.append(_Node(kind, input_ids, backward, out.data.shape))
        out.node_id = nid
        out.requires_grad = True
        out._tape = self
        return out

    def backward(self, loss):
        """Propagate d(loss)/d(node) to every traced ancestor of `loss`.

        The loss must be a scalar (1x1x1x1) tensor recorded on this tape.
        Nodes that do not contribute to the loss simply never receive a
        gradient entry; grad() reports zeros for them.
        """
        if not isinstance(loss, Tensor4) or loss._tape is not self:
            raise UsageError("backward() needs a tensor recorded on this tape")
        if loss.shape != (1, 1, 1, 1):
            raise UsageError(f"loss must be 1x1x1x1, got shape {loss.shape}")
        self.grads = {loss.node_id: np.ones((1, 1, 1, 1))}
        for nid in range(loss.node_id, -1, -1):
            g = self.grads.get(nid)
            if g is None:
                continue
            node = self.nodes[nid]
            if node.backward is None:
                continue
            input_grads = node.backward(g)
            for iid, ig in zip(node.inputs, input_grads):
                if iid is None or ig is None:
                    continue
                if ig.shape != self.nodes[iid].shape:
                    raise UsageError(
                        f"backward of {node.kind!r} produced shape {ig.shape} "
                        f"for input of shape {self.nodes[iid].shape}"
                    )
                acc = self.grads.get(iid)
                if acc is None:
                    # Own the stored array: backward fns may hand back
                    # grad_out itself or a view of it.
                    if ig is g or ig.base is not None:
                        ig = ig.copy()
                    self.grads[iid] = ig
                else:
                    acc += ig

    def grad(self, tensor):
        """Gradient array for `tensor` after backward; zeros if off the loss path."""
        if tensor._tape is self:
            nid = tensor.node_id
        else:
            nid = self._leaf_ids.get(id(tensor))
        if nid is not None:
            g = self.grads.get(nid)
            if g is not None:
                return g
        return np.zeros_like(tensor.data)
