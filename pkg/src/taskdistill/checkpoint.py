"""Binary checkpoint format.

Layout: magic "PADC", u32 version, u64 architecture digest, u64 iteration,
u8 phase, u32 tensor count, then per tensor: u16 name length, name bytes
(utf-8), u8 rank, u32 dims, f32 little-endian data. Optimizer velocity
buffers are stored as tensors named "opt.velocity/<param>". Values are
rounded to f32 once at save; save -> load -> save is byte-identical.
"""

import struct

import numpy as np

from .autograd import DataError

CHECKPOINT_MAGIC = b"PADC"
CHECKPOINT_VERSION = 1
VELOCITY_PREFIX = "opt.velocity/"


def save_checkpoint(path, digest, iteration, phase, params, velocities=None):
    """params/velocities map names to arrays; insertion order is preserved."""
    entries = list(params.items())
    for name, arr in (velocities or {}).items():
        entries.append((VELOCITY_PREFIX + name, arr))
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQQBI", CHECKPOINT_VERSION, digest, iteration,
                             phase, len(entries)))
        for name, arr in entries:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            a = np.asarray(arr)
            fh.write(struct.pack("<B", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


class Checkpoint:
    def __init__(self, digest, iteration, phase, params, velocities):
        self.digest = digest
        self.iteration = iteration
        self.phase = phase
        self.params = params          # name -> float64 array
        self.velocities = velocities  # name -> float64 array


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()

    def need(offset, n, what):
        if offset + n > len(blob):
            raise DataError(
                f"checkpoint truncated at byte {len(blob)}: needed {n} bytes "
                f"for {what} at offset {offset}"
            )

    need(0, 4 + 25, "header")
    if blob[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"bad magic {blob[:4]!r} at byte 0 (expected {CHECKPOINT_MAGIC!r})")
    version, digest, iteration, phase, count = struct.unpack_from("<IQQBI", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version} at byte 4")
    off = 4 + 25
    params, velocities = {}, {}
    for i in range(count):
        need(off, 2, f"tensor {i} name length")
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        need(off, name_len, f"tensor {i} name")
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        need(off, 1, f"tensor {i} rank")
        rank = blob[off]
        off += 1
        if rank > 8:
            raise DataError(f"implausible rank {rank} for tensor {name!r} at byte {off - 1}")
        need(off, 4 * rank, f"tensor {i} dims")
        dims = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        need(off, 4 * n, f"tensor {name!r} data")
        arr = np.frombuffer(blob, "<f4", n, off).reshape(dims).astype(np.float64)
        off += 4 * n
        if name.startswith(VELOCITY_PREFIX):
            velocities[name[len(VELOCITY_PREFIX):]] = arr
        else:
            params[name] = arr
    if off != len(blob):
        raise DataError(f"{len(blob) - off} trailing bytes at offset {off}")
    return Checkpoint(digest, iteration, phase, params, velocities)
