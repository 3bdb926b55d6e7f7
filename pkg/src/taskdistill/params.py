"""Named parameter tensors with deterministic seeded initialization."""

import numpy as np

from .autograd import ConfigurationError, Tensor4

KAIMING = "kaiming"
ZERO = "zero"


class ParamStore:
    """Ordered map of parameter name -> Tensor4 (requires_grad).

    Creation order is fixed by the builders, so a given seed always produces
    bit-identical parameters. Conv entries come in weight/bias pairs named
    '<layer>.weight' / '<layer>.bias'; the layer prefix is the reporting
    group used by the gradient checker.
    """

    def __init__(self, seed):
        self.seed = int(seed)
        self._rng = np.random.default_rng(np.random.PCG64(seed))
        self._params = {}

    def add_conv(self, layer, out_ch, in_ch, kh, kw, init=KAIMING, transposed=False):
        """Allocate a conv (or transposed conv) kernel plus its bias.

        Transposed kernels are stored (in_ch, out_ch, kh, kw); fan-in always
        counts the input side.
        """
        if layer + ".weight" in self._params:
            raise ConfigurationError(f"duplicate parameter layer {layer!r}")
        shape = (in_ch, out_ch, kh, kw) if transposed else (out_ch, in_ch, kh, kw)
        fan_in = in_ch * kh * kw
        if init == KAIMING:
            std = np.sqrt(2.0 / fan_in)
            data = self._rng.standard_normal(shape) * std
        elif init == ZERO:
            data = np.zeros(shape)
        else:
            raise ConfigurationError(f"unknown init {init!r}")
        self._params[layer + ".weight"] = Tensor4(data, requires_grad=True)
        self._params[layer + ".bias"] = Tensor4(np.zeros((1, out_ch, 1, 1)),
                                                requires_grad=True)

    def pair(self, layer):
        """(weight, bias) tensors of a conv layer."""
        try:
            return self._params[layer + ".weight"], self._params[layer + ".bias"]
        except KeyError:
            raise ConfigurationError(f"no parameter layer named {layer!r}") from None

    def __contains__(self, name):
        return name in self._params

    def __getitem__(self, name):
        return self._params[name]

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def groups(self):
        """Layer prefixes in creation order (name minus .weight/.bias)."""
        seen = []
        for name in self._params:
            layer = name.rsplit(".", 1)[0]
            if layer not in seen:
                seen.append(layer)
        return seen

    def total_size(self):
        return sum(t.size for t in self._params.values())

    def clone_values(self):
        """Snapshot of all parameter arrays (for last-good checkpoints)."""
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_values(self, values):
        for name, arr in values.items():
            if name not in self._params:
                raise ConfigurationError(f"unknown parameter {name!r} in state")
            t = self._params[name]
            if t.data.shape != arr.shape:
                raise ConfigurationError(
                    f"parameter {name!r} shape {arr.shape} != expected {t.data.shape}"
                )
            t.data = np.asarray(arr, dtype=np.float64).copy()
