"""Synthetic scenes, derived auxiliary ground truth, augmentation, and file IO.

A scene is a ground plane whose depth grows with the image row, plus a few
axis-aligned rectangular objects at constant or sloped depth that occlude
whatever is behind them. Surface normals are derived from depth treated as
a height field; contours from semantic label boundaries. A configurable
fraction of depth pixels is zeroed to exercise invalid-pixel masking.

Stored values are quantized to float32 at generation time so the dataset
file round-trips bit-exactly.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .autograd import DataError

IGNORE_INDEX = 255
DATASET_MAGIC = b"PADS"
DATASET_VERSION = 1


@dataclass
class Sample:
    """One training example plus its derived auxiliary targets."""

    image: np.ndarray        # (3, H, W) in [0, 1]
    depth: np.ndarray        # (H, W) meters; 0 marks invalid
    labels: np.ndarray       # (H, W) uint8; 255 ignored
    num_classes: int
    normal: np.ndarray       # (3, H, W), unit vectors where valid
    normal_mask: np.ndarray  # (H, W) binary
    contour: np.ndarray      # (H, W) binary
    valid_mask: np.ndarray   # (H, W) binary, = depth > 0
    camera_constant: float = 1.0

    @property
    def hw(self):
        return self.depth.shape


def class_palette(num_classes):
    """Deterministic per-class base colors, spread by golden-ratio hopping."""
    idx = np.arange(num_classes)
    r = (idx * 0.6180339887 + 0.05) % 1.0
    g = (idx * 0.6180339887 * 2 + 0.35) % 1.0
    b = (idx * 0.6180339887 * 3 + 0.65) % 1.0
    return 0.2 + 0.6 * np.stack([r, g, b], axis=1)


def normals_from_depth(depth, valid_mask, camera_constant=1.0, spacing=1.0):
    """Height-field surface normals with central differences.

    Returns (normal, normal_mask): the unnormalized direction is
    (-c * dz/dx, -c * dz/dy, 1); pixels that are invalid or touch an
    invalid 4-neighbor are masked out.
    """
    z = np.asarray(depth, dtype=np.float64)
    dzdy, dzdx = np.gradient(z, spacing)
    c = float(camera_constant)
    nx = -c * dzdx
    ny = -c * dzdy
    nz = np.ones_like(z)
    norm = np.sqrt(nx * nx + ny * ny + nz * nz)
    normal = np.stack([nx / norm, ny / norm, nz / norm], axis=0)

    v = np.asarray(valid_mask, dtype=bool)
    vp = np.pad(v, 1, mode="edge")
    ok = (v & vp[:-2, 1:-1] & vp[2:, 1:-1] & vp[1:-1, :-2] & vp[1:-1, 2:])
    normal[:, ~ok] = 0.0
    return normal, ok.astype(np.float64)


def contours_from_semantics(labels, ignore_index=IGNORE_INDEX):
    """A pixel is contour iff some 4-neighbor carries a different non-ignore label."""
    lab = np.asarray(labels)
    lp = np.pad(lab, 1, mode="edge")
    center = lp[1:-1, 1:-1]
    out = np.zeros(lab.shape, dtype=bool)
    for ny, nx in ((0, 1), (2, 1), (1, 0), (1, 2)):
        nb = lp[ny : ny + lab.shape[0], nx : nx + lab.shape[1]]
        out |= (nb != center) & (nb != ignore_index)
    out &= center != ignore_index
    return out.astype(np.float64)


def derive_targets(depth, labels, num_classes, camera_constant=1.0, spacing=1.0):
    valid = (np.asarray(depth) > 0).astype(np.float64)
    normal, normal_mask = normals_from_depth(depth, valid, camera_constant, spacing)
    contour = contours_from_semantics(labels)
    return normal, normal_mask, contour, valid


def _as_sample(image, depth, labels, num_classes, camera_constant):
    normal, normal_mask, contour, valid = derive_targets(
        depth, labels, num_classes, camera_constant
    )
    return Sample(image=image, depth=depth, labels=labels, num_classes=num_classes,
                  normal=normal, normal_mask=normal_mask, contour=contour,
                  valid_mask=valid, camera_constant=camera_constant)


def generate_scene(seed, cfg):
    """Deterministic synthetic scene for the given seed and SceneConfig."""
    rng = np.random.default_rng(np.random.PCG64(int(seed)))
    h = w = cfg.canvas
    near, far = cfg.depth_range

    rows = np.linspace(near, far, h)[:, None]
    depth = np.broadcast_to(rows, (h, w)).copy()
    labels = np.zeros((h, w), dtype=np.uint8)

    count = int(rng.integers(cfg.object_count[0], cfg.object_count[1] + 1))
    for _ in range(count):
        cls = int(rng.integers(1, cfg.num_classes)) if cfg.num_classes > 1 else 0
        # objects span a few cells of the network's coarsest feature grid
        oh = int(rng.integers(max(2, h // 4), max(3, 3 * h // 4)))
        ow = int(rng.integers(max(2, w // 4), max(3, 3 * w // 4)))
        y0 = int(rng.integers(0, h - oh + 1))
        x0 = int(rng.integers(0, w - ow + 1))
        plane_top = float(rows[y0, 0])
        f0, f1 = rng.uniform(0.3, 0.92, size=2)
        if rng.random() < 0.5:
            f0 = f1  # constant-depth object
        axis_rows = rng.random() < 0.5
        n = oh if axis_rows else ow
        ramp = np.linspace(f0, f1, n)
        obj = plane_top * (ramp[:, None] if axis_rows else ramp[None, :])
        obj = np.broadcast_to(obj, (oh, ow))
        win_d = depth[y0 : y0 + oh, x0 : x0 + ow]
        win_l = labels[y0 : y0 + oh, x0 : x0 + ow]
        nearer = obj < win_d
        win_d[nearer] = obj[nearer]
        win_l[nearer] = cls

    shade = 1.0 - 0.5 * (depth - near) / (far - near)
    image = class_palette(cfg.num_classes)[labels].transpose(2, 0, 1) * shade[None]
    image = image + rng.normal(0.0, 0.02, size=image.shape)
    image = np.clip(image, 0.0, 1.0)

    if cfg.depth_dropout > 0:
        drop = rng.random((h, w)) < cfg.depth_dropout
        depth[drop] = 0.0

    image = image.astype(np.float32).astype(np.float64)
    depth = depth.astype(np.float32).astype(np.float64)
    return _as_sample(image, depth, labels, cfg.num_classes, cfg.camera_constant)


def generate_dataset(base_seed, count, cfg):
    return [generate_scene(base_seed + i, cfg) for i in range(count)]


def _resize_matrix_np(n_in, n_out):
    a = np.zeros((n_out, n_in))
    if n_out == 1 or n_in == 1:
        a[:, 0] = 1.0
        return a
    src = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    i0 = np.minimum(np.floor(src).astype(int), n_in - 2)
    frac = src - i0
    rows = np.arange(n_out)
    a[rows, i0] = 1.0 - frac
    a[rows, i0 + 1] += frac
    return a


def _bilinear_2d(arr, oh, ow):
    ah = _resize_matrix_np(arr.shape[-2], oh)
    aw = _resize_matrix_np(arr.shape[-1], ow)
    return np.einsum("pi,qj,...ij->...pq", ah, aw, arr, optimize=True)


def _nearest_2d(arr, oh, ow):
    def idx(n_in, n_out):
        if n_out == 1 or n_in == 1:
            return np.zeros(n_out, dtype=int)
        return np.rint(np.arange(n_out) * ((n_in - 1) / (n_out - 1))).astype(int)

    return arr[..., idx(arr.shape[-2], oh)[:, None], idx(arr.shape[-1], ow)[None, :]]


def _resize_depth_masked(depth, oh, ow):
    """Bilinear resize of the valid depth field; invalid zeros do not bleed in."""
    m = (depth > 0).astype(np.float64)
    num = _bilinear_2d(depth * m, oh, ow)
    den = _bilinear_2d(m, oh, ow)
    out = np.zeros((oh, ow))
    good = den > 1e-9
    out[good] = num[good] / den[good]
    return out


def apply_augmentation(sample, ratio, flip, crop_y, crop_x):
    """Deterministic core of augment(): scale, divide depth, flip, crop, re-derive."""
    image, depth, labels = sample.image, sample.depth, sample.labels
    h, w = sample.hw
    if ratio != 1.0:
        nh, nw = max(1, round(h * ratio)), max(1, round(w * ratio))
        image = _bilinear_2d(image, nh, nw)
        depth = _resize_depth_masked(depth, nh, nw) / ratio
        labels = _nearest_2d(labels, nh, nw)
        if nh < h or nw < w:
            # downscale ratios leave the canvas short; replicate edges back out
            py, px = max(0, h - nh), max(0, w - nw)
            image = np.pad(image, ((0, 0), (0, py), (0, px)), mode="edge")
            depth = np.pad(depth, ((0, py), (0, px)), mode="edge")
            labels = np.pad(labels, ((0, py), (0, px)), mode="edge")
        image = np.clip(image, 0.0, 1.0)
    if flip:
        image = image[..., ::-1].copy()
        depth = depth[:, ::-1].copy()
        labels = labels[:, ::-1].copy()
    ch = image.shape[-2] - h
    cw = image.shape[-1] - w
    y0 = min(crop_y, ch)
    x0 = min(crop_x, cw)
    image = image[:, y0 : y0 + h, x0 : x0 + w]
    depth = depth[y0 : y0 + h, x0 : x0 + w]
    labels = labels[y0 : y0 + h, x0 : x0 + w]
    return _as_sample(np.ascontiguousarray(image), np.ascontiguousarray(depth),
                      np.ascontiguousarray(labels), sample.num_classes,
                      sample.camera_constant)


def augment(sample, rng, ratios=(1.0, 1.2, 1.5)):
    """Random scale from the configured set, 0.5-probability horizontal flip, crop."""
    ratio = float(ratios[rng.integers(0, len(ratios))])
    flip = bool(rng.random() < 0.5)
    h, w = sample.hw
    nh, nw = max(1, round(h * ratio)), max(1, round(w * ratio))
    crop_y = int(rng.integers(0, max(1, nh - h + 1)))
    crop_x = int(rng.integers(0, max(1, nw - w + 1)))
    return apply_augmentation(sample, ratio, flip, crop_y, crop_x)


def write_dataset(path, samples):
    """Binary dataset file; stores raw image/depth/labels, derived maps excluded."""
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<II", DATASET_VERSION, len(samples)))
        for s in samples:
            h, w = s.hw
            fh.write(struct.pack("<III", h, w, s.num_classes))
            fh.write(s.image.astype("<f4").tobytes())
            fh.write(s.depth.astype("<f4").tobytes())
            fh.write(np.ascontiguousarray(s.labels, dtype=np.uint8).tobytes())


def read_dataset(path, camera_constant=1.0):
    """Load a dataset file, recomputing derived maps; raises DataError on damage."""
    with open(path, "rb") as fh:
        blob = fh.read()

    def need(offset, n, what):
        if offset + n > len(blob):
            raise DataError(
                f"dataset file truncated at byte {len(blob)}: "
                f"needed {n} bytes for {what} at offset {offset}"
            )

    need(0, 12, "header")
    if blob[:4] != DATASET_MAGIC:
        raise DataError(f"bad magic {blob[:4]!r} at byte 0 (expected {DATASET_MAGIC!r})")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != DATASET_VERSION:
        raise DataError(f"unsupported dataset version {version} at byte 4")
    off = 12
    samples = []
    for i in range(count):
        need(off, 12, f"sample {i} dimensions")
        h, w, num_classes = struct.unpack_from("<III", blob, off)
        off += 12
        if h == 0 or w == 0 or not 2 <= num_classes <= 254:
            raise DataError(f"bad sample {i} header ({h}x{w}, {num_classes} classes) "
                            f"at byte {off - 12}")
        n_img, n_dep, n_lab = 3 * h * w * 4, h * w * 4, h * w
        need(off, n_img + n_dep + n_lab, f"sample {i} payload")
        image = np.frombuffer(blob, "<f4", 3 * h * w, off).reshape(3, h, w)
        off += n_img
        depth = np.frombuffer(blob, "<f4", h * w, off).reshape(h, w)
        off += n_dep
        labels = np.frombuffer(blob, np.uint8, h * w, off).reshape(h, w).copy()
        off += n_lab
        samples.append(_as_sample(image.astype(np.float64), depth.astype(np.float64),
                                  labels, int(num_classes), camera_constant))
    if off != len(blob):
        raise DataError(f"{len(blob) - off} trailing bytes at offset {off}")
    return samples
