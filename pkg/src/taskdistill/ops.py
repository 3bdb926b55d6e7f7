"""Differentiable operations over Tensor4 values.

Forward paths are pure numpy; each op records one node on the active tape
whose backward closure maps the output gradient to input gradients.
Convolutions use patch-matrix expansion (strided views + tensordot); the
naive nested-loop form lives in the test suite as the independent oracle.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .autograd import ConfigurationError, DataError, Tensor4, active_tape

__all__ = [
    "ConvSpec",
    "conv2d",
    "conv_transpose2d",
    "bilinear_resize",
    "sigmoid",
    "relu",
    "concat_channels",
    "add",
    "mul",
    "scale",
    "sum_all",
    "masked_sq_err",
    "softmax_ce",
    "sigmoid_ce",
    "unit_normalize",
]


class ConvSpec:
    """Geometry of a 2-d convolution: kernel shape, stride, padding, dilation."""

    __slots__ = ("kernel", "stride", "padding", "dilation")

    def __init__(self, kernel, stride=1, padding=0, dilation=1):
        kernel = tuple(int(k) for k in kernel)
        if len(kernel) != 4 or any(k <= 0 for k in kernel):
            raise ConfigurationError(f"kernel must be (out_ch, in_ch, kh, kw) > 0, got {kernel}")
        if stride < 1 or dilation < 1 or padding < 0:
            raise ConfigurationError(
                f"invalid conv geometry: stride={stride} padding={padding} dilation={dilation}"
            )
        self.kernel = kernel
        self.stride = int(stride)
        self.padding = int(padding)
        self.dilation = int(dilation)

    def out_hw(self, in_h, in_w):
        kh, kw = self.kernel[2], self.kernel[3]
        oh = (in_h + 2 * self.padding - self.dilation * (kh - 1) - 1) // self.stride + 1
        ow = (in_w + 2 * self.padding - self.dilation * (kw - 1) - 1) // self.stride + 1
        if oh <= 0 or ow <= 0:
            raise ConfigurationError(
                f"conv output size {oh}x{ow} not positive for input {in_h}x{in_w}, "
                f"kernel {kh}x{kw}, stride {self.stride}, padding {self.padding}, "
                f"dilation {self.dilation}"
            )
        return oh, ow


def _tape_record(kind, inputs, out_data, backward):
    tape = active_tape()
    if tape is None:
        return Tensor4(out_data)
    return tape.record(kind, inputs, out_data, backward)


def _pad_hw(x, padding):
    if padding == 0:
        return x
    p = padding
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _patches(x, kh, kw, stride, dilation, oh, ow):
    # Read-only (B, C, KH, KW, OH, OW) window view over a padded array.
    sb, sc, sh, sw = x.strides
    shape = (x.shape[0], x.shape[1], kh, kw, oh, ow)
    strides = (sb, sc, sh * dilation, sw * dilation, sh * stride, sw * stride)
    return as_strided(x, shape, strides, writeable=False)


def conv2d(x, weight, bias, spec=None, *, stride=1, padding=0, dilation=1):
    """2-d convolution (cross-correlation) with stride, padding and dilation.

    weight is (out_ch, in_ch, kh, kw); bias is a (1, out_ch, 1, 1) tensor or
    None. Differentiable in x, weight and bias.
    """
    if spec is None:
        spec = ConvSpec(weight.shape, stride=stride, padding=padding, dilation=dilation)
    b, c, h, w = x.shape
    oc, ic, kh, kw = spec.kernel
    if weight.shape != spec.kernel:
        raise ConfigurationError(f"weight shape {weight.shape} != spec kernel {spec.kernel}")
    if ic != c:
        raise ConfigurationError(
            f"conv2d channel mismatch: input has {c} channels, kernel expects {ic}"
        )
    if bias is not None and bias.shape != (1, oc, 1, 1):
        raise ConfigurationError(
            f"bias shape {bias.shape} != (1, {oc}, 1, 1) for {oc} output channels"
        )
    oh, ow = spec.out_hw(h, w)
    xp = _pad_hw(x.data, spec.padding)
    pat = _patches(xp, kh, kw, spec.stride, spec.dilation, oh, ow)
    out = np.tensordot(weight.data, pat, axes=([1, 2, 3], [1, 2, 3])).transpose(1, 0, 2, 3)
    out = np.ascontiguousarray(out)
    if bias is not None:
        out += bias.data

    stride_, dil, pad = spec.stride, spec.dilation, spec.padding

    def backward(g):
        gx_p = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                contrib = np.tensordot(g, weight.data[:, :, i, j], axes=([1], [0]))
                gx_p[
                    :, :,
                    i * dil : i * dil + oh * stride_ : stride_,
                    j * dil : j * dil + ow * stride_ : stride_,
                ] += contrib.transpose(0, 3, 1, 2)
        gx = gx_p[:, :, pad : pad + h, pad : pad + w] if pad else gx_p
        gw = np.tensordot(g, pat, axes=([0, 2, 3], [0, 4, 5]))
        gb = None if bias is None else g.sum(axis=(0, 2, 3)).reshape(1, oc, 1, 1)
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _tape_record("conv2d", inputs, out, backward)


def conv_transpose2d(x, weight, bias, stride, padding=0, dilation=1):
    """Transposed convolution: the adjoint of conv2d with the same geometry.

    weight is (in_ch, out_ch, kh, kw); output spatial size is
    (in - 1) * stride + dilation * (k - 1) + 1 - 2 * padding.
    """
    b, c, h, w = x.shape
    ic, oc, kh, kw = weight.shape
    if ic != c:
        raise ConfigurationError(
            f"conv_transpose2d channel mismatch: input has {c} channels, "
            f"kernel expects {ic}"
        )
    if bias is not None and bias.shape != (1, oc, 1, 1):
        raise ConfigurationError(
            f"bias shape {bias.shape} != (1, {oc}, 1, 1) for {oc} output channels"
        )
    if stride < 1 or padding < 0 or dilation < 1:
        raise ConfigurationError(
            f"invalid geometry: stride={stride} padding={padding} dilation={dilation}"
        )
    hf = (h - 1) * stride + dilation * (kh - 1) + 1
    wf = (w - 1) * stride + dilation * (kw - 1) + 1
    oh, ow = hf - 2 * padding, wf - 2 * padding
    if oh <= 0 or ow <= 0:
        raise ConfigurationError(f"transposed conv output {oh}x{ow} not positive")

    full = np.zeros((b, oc, hf, wf))
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(x.data, weight.data[:, :, i, j], axes=([1], [0]))
            full[:, :, i * dilation : i * dilation + (h - 1) * stride + 1 : stride,
                 j * dilation : j * dilation + (w - 1) * stride + 1 : stride] += (
                contrib.transpose(0, 3, 1, 2)
            )
    out = full[:, :, padding : padding + oh, padding : padding + ow]
    out = np.ascontiguousarray(out)
    if bias is not None:
        out += bias.data

    def backward(g):
        gf = _pad_hw(g, padding)
        pat = _patches(gf, kh, kw, stride, dilation, h, w)
        gx = np.tensordot(weight.data, pat, axes=([1, 2, 3], [1, 2, 3])).transpose(1, 0, 2, 3)
        gw = np.tensordot(x.data, pat, axes=([0, 2, 3], [0, 4, 5]))
        gb = None if bias is None else g.sum(axis=(0, 2, 3)).reshape(1, oc, 1, 1)
        return np.ascontiguousarray(gx), gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _tape_record("conv_transpose2d", inputs, out, backward)


def _resize_matrix(n_in, n_out):
    """Corner-aligned 1-d bilinear interpolation matrix (n_out, n_in)."""
    a = np.zeros((n_out, n_in))
    if n_out == 1 or n_in == 1:
        a[:, 0] = 1.0
        return a
    src = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    i0 = np.floor(src).astype(int)
    i0 = np.minimum(i0, n_in - 2)
    frac = src - i0
    rows = np.arange(n_out)
    a[rows, i0] = 1.0 - frac
    a[rows, i0 + 1] += frac
    return a


def bilinear_resize(x, out_h, out_w):
    """Bilinear resampling on a corner-aligned grid (endpoints map to endpoints)."""
    if out_h < 1 or out_w < 1:
        raise ConfigurationError(f"resize target {out_h}x{out_w} must be >= 1")
    b, c, h, w = x.shape
    if (out_h, out_w) == (h, w):
        a_h = a_w = None
        out = x.data.copy()
    else:
        a_h = _resize_matrix(h, out_h)
        a_w = _resize_matrix(w, out_w)
        out = np.einsum("pi,qj,bcij->bcpq", a_h, a_w, x.data, optimize=True)

    def backward(g):
        if a_h is None:
            return (g,)
        return (np.einsum("pi,qj,bcpq->bcij", a_h, a_w, g, optimize=True),)

    return _tape_record("bilinear_resize", (x,), out, backward)


def sigmoid(x):
    """Numerically safe logistic function; never overflows for finite input."""
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward(g):
        return (g * out * (1.0 - out),)

    return _tape_record("sigmoid", (x,), out, backward)


def relu(x):
    out = np.maximum(x.data, 0.0)

    def backward(g):
        return (g * (x.data > 0),)

    return _tape_record("relu", (x,), out, backward)


def concat_channels(inputs):
    """Concatenate along the channel axis; batch and spatial dims must match."""
    if not inputs:
        raise ConfigurationError("concat_channels needs at least one input")
    b, _, h, w = inputs[0].shape
    for t in inputs[1:]:
        tb, _, th, tw = t.shape
        if (tb, th, tw) != (b, h, w):
            raise ConfigurationError(
                f"concat_channels mismatch: {t.shape} vs leading input {inputs[0].shape}"
            )
    out = np.concatenate([t.data for t in inputs], axis=1)
    splits = np.cumsum([t.shape[1] for t in inputs])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=1))

    return _tape_record("concat_channels", tuple(inputs), out, backward)


def add(a, b):
    if a.shape != b.shape:
        raise ConfigurationError(f"add shape mismatch: {a.shape} vs {b.shape}")

    def backward(g):
        return g, g

    return _tape_record("add", (a, b), a.data + b.data, backward)


def mul(a, b):
    """Elementwise product of same-shape tensors."""
    if a.shape != b.shape:
        raise ConfigurationError(f"mul shape mismatch: {a.shape} vs {b.shape}")

    def backward(g):
        return g * b.data, g * a.data

    return _tape_record("mul", (a, b), a.data * b.data, backward)


def scale(x, factor):
    factor = float(factor)

    def backward(g):
        return (g * factor,)

    return _tape_record("scale", (x,), x.data * factor, backward)


def sum_all(x):
    """Sum of all elements as a 1x1x1x1 tensor."""
    out = np.full((1, 1, 1, 1), x.data.sum())

    def backward(g):
        return (np.full_like(x.data, g.reshape(())),)

    return _tape_record("sum_all", (x,), out, backward)


def masked_sq_err(pred, target, mask):
    """Masked mean squared error: sum(mask * (pred - target)^2) / max(sum(mask), 1).

    target and mask are constant arrays. mask has one channel and broadcasts
    over pred's channels; the denominator counts masked pixels once, so a
    multi-channel pred contributes its per-pixel squared norm.
    """
    target = np.asarray(target, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    b, c, h, w = pred.shape
    if target.shape != pred.data.shape:
        raise ConfigurationError(f"target shape {target.shape} != pred shape {pred.shape}")
    if mask.shape != (b, 1, h, w):
        raise ConfigurationError(f"mask shape {mask.shape} != ({b}, 1, {h}, {w})")
    diff = pred.data - target
    denom = max(mask.sum(), 1.0)
    val = float((mask * (diff * diff)).sum() / denom)
    out = np.full((1, 1, 1, 1), val)

    def backward(g):
        return (g.reshape(()) * 2.0 * mask * diff / denom,)

    return _tape_record("masked_sq_err", (pred,), out, backward)


def softmax_ce(logits, labels, ignore_index=255):
    """Mean per-pixel softmax cross-entropy over non-ignored pixels.

    Stable log-sum-exp form. Labels must lie in [0, num_classes) or equal
    ignore_index; anything else raises DataError naming the first offender.
    """
    labels = np.asarray(labels)
    b, c, h, w = logits.shape
    if labels.shape != (b, h, w):
        raise ConfigurationError(f"labels shape {labels.shape} != ({b}, {h}, {w})")
    bad = (labels != ignore_index) & ((labels < 0) | (labels >= c))
    if bad.any():
        bi, yi, xi = (int(v[0]) for v in np.nonzero(bad))
        raise DataError(
            f"label {int(labels[bi, yi, xi])} out of range [0, {c}) at pixel "
            f"(sample {bi}, row {yi}, col {xi})"
        )
    valid = labels != ignore_index
    n = int(valid.sum())
    denom = max(n, 1)
    m = logits.data.max(axis=1, keepdims=True)
    z = logits.data - m
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    safe = np.where(valid, labels, 0)
    picked = np.take_along_axis(logp, safe[:, None, :, :], axis=1)[:, 0]
    val = float(-(picked * valid).sum() / denom)
    out = np.full((1, 1, 1, 1), val)

    def backward(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, safe[:, None, :, :], 1.0, axis=1)
        gl = (p - onehot) * valid[:, None, :, :] / denom
        return (g.reshape(()) * gl,)

    return _tape_record("softmax_ce", (logits,), out, backward)


def _softplus(x):
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def sigmoid_ce(logit, target, pos_weight=1.0):
    """Mean per-pixel sigmoid cross-entropy with weighted positives.

    Per pixel: pos_weight * t * softplus(-z) + (1 - t) * softplus(z),
    averaged over all pixels. Stable for saturated logits.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.shape != logit.data.shape:
        raise ConfigurationError(f"target shape {target.shape} != logit shape {logit.shape}")
    pw = float(pos_weight)
    z = logit.data
    per_pixel = pw * target * _softplus(-z) + (1.0 - target) * _softplus(z)
    n = z.size
    out = np.full((1, 1, 1, 1), per_pixel.sum() / n)

    def backward(g):
        s = 1.0 / (1.0 + np.exp(-np.abs(z)))
        sig = np.where(z >= 0, s, 1.0 - s)
        gl = (pw * target * (sig - 1.0) + (1.0 - target) * sig) / n
        return (g.reshape(()) * gl,)

    return _tape_record("sigmoid_ce", (logit,), out, backward)


def unit_normalize(x, eps=1e-8):
    """Scale each pixel's channel vector to unit length; eps keeps the norm positive."""
    sq = (x.data * x.data).sum(axis=1, keepdims=True)
    norm = np.sqrt(sq + eps)
    u = x.data / norm

    def backward(g):
        dot = (u * g).sum(axis=1, keepdims=True)
        return ((g - u * dot) / norm,)

    return _tape_record("unit_normalize", (x,), u, backward)
