"""Binary tensor file format used for corpus data and checkpoints.

Layout, all little-endian:

    bytes 0..3   magic ``M2CI``
    byte  4      dtype code (0 = float32, 1 = float64)
    byte  5      rank
    then         rank x uint32 dimension sizes
    then         row-major payload

Code 0 is the on-disk corpus format; code 1 is used for checkpoint
tensors where training must resume bit-exactly. Reading inverts writing
exactly; malformed files raise ``TensorFormatError`` with the byte
offset at which parsing failed.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import TensorFormatError

MAGIC = b"M2CI"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
MAX_RANK = 8


def header_size(rank):
    return len(MAGIC) + 1 + 1 + 4 * rank


def encode_tensor(array):
    """Serialize a float array to bytes."""
    array = np.asarray(array)
    if array.dtype not in _CODES:
        array = array.astype(np.float32)
    if not np.all(np.isfinite(array)):
        raise ValueError("tensor contains non-finite entries")
    if array.ndim > MAX_RANK:
        raise ValueError(f"rank {array.ndim} exceeds maximum {MAX_RANK}")
    parts = [MAGIC, bytes([_CODES[array.dtype]]), bytes([array.ndim])]
    for dim in array.shape:
        parts.append(struct.pack("<I", dim))
    parts.append(np.ascontiguousarray(array).tobytes())
    return b"".join(parts)


def decode_tensor(blob, offset=0):
    """Parse one tensor from ``blob`` starting at ``offset``.

    Returns ``(array, next_offset)``. Reported error offsets are relative
    to the start of the blob.
    """
    if blob[offset:offset + 4] != MAGIC:
        raise TensorFormatError(
            f"bad magic {blob[offset:offset + 4]!r}, expected {MAGIC!r}", offset)
    pos = offset + 4
    if pos >= len(blob):
        raise TensorFormatError("truncated before dtype code", pos)
    code = blob[pos]
    if code not in _DTYPES:
        raise TensorFormatError(f"unknown dtype code {code}", pos)
    pos += 1
    if pos >= len(blob):
        raise TensorFormatError("truncated before rank", pos)
    rank = blob[pos]
    if rank > MAX_RANK:
        raise TensorFormatError(f"rank {rank} exceeds maximum {MAX_RANK}", pos)
    pos += 1
    dims = []
    for _ in range(rank):
        if pos + 4 > len(blob):
            raise TensorFormatError("truncated inside dimension list", pos)
        dims.append(struct.unpack_from("<I", blob, pos)[0])
        pos += 4
    dtype = _DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64)) if dims else 1
    nbytes = count * dtype.itemsize
    if pos + nbytes > len(blob):
        raise TensorFormatError(
            f"truncated payload: need {nbytes} bytes, have {len(blob) - pos}", len(blob))
    array = np.frombuffer(blob, dtype=dtype, count=count, offset=pos).reshape(dims)
    return array.copy(), pos + nbytes


def write_tensor(path, array):
    with open(path, "wb") as fh:
        fh.write(encode_tensor(array))


def read_tensor(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    array, end = decode_tensor(blob)
    if end != len(blob):
        raise TensorFormatError(f"{len(blob) - end} trailing bytes after payload", end)
    return array


def read_tensor_shape(path):
    """Read only the header; cheap existence/consistency checks."""
    with open(path, "rb") as fh:
        head = fh.read(header_size(MAX_RANK))
    if head[:4] != MAGIC:
        raise TensorFormatError(f"bad magic {head[:4]!r}, expected {MAGIC!r}", 0)
    if len(head) < 6:
        raise TensorFormatError("truncated header", len(head))
    rank = head[5]
    if rank > MAX_RANK:
        raise TensorFormatError(f"rank {rank} exceeds maximum {MAX_RANK}", 5)
    if len(head) < header_size(rank):
        raise TensorFormatError("truncated dimension list", len(head))
    return tuple(struct.unpack_from(f"<{rank}I", head, 6)) if rank else ()
