"""Binary shard (CPTD) and target (CPTT) file formats.

Layouts, all little-endian::

    CPTD: b"CPTD" | u16 version=1 | u32 shard_id | u32 count | u32 dim
          | count*dim f32 row-major | count u64 sample ids
    CPTT: b"CPTT" | u16 version=1 | u32 shard_id | u8 aligned | u32 count | u32 dim
          | count*dim f32 row-major
"""

import struct
from pathlib import Path

import numpy as np

from .core import Shard, TargetSet
from .exceptions import FormatError

VERSION = 1
_CPTD_HEADER = struct.Struct("<4sHIII")
_CPTT_HEADER = struct.Struct("<4sHIBII")


def _matrix_bytes(values, count, dim):
    values = np.asarray(values)
    if values.shape != (count, dim):
        raise FormatError(f"matrix shape {values.shape} does not match header ({count}, {dim})")
    return np.ascontiguousarray(values, dtype="<f4").tobytes()


def encode_shard(shard):
    count, dim = shard.X.shape
    return (
        _CPTD_HEADER.pack(b"CPTD", VERSION, shard.shard_id, count, dim)
        + _matrix_bytes(shard.X, count, dim)
        + np.ascontiguousarray(shard.sample_ids, dtype="<u8").tobytes()
    )


def encode_targets(target_set):
    count, dim = target_set.targets.shape
    return _CPTT_HEADER.pack(
        b"CPTT", VERSION, target_set.shard_id, int(bool(target_set.aligned)), count, dim
    ) + _matrix_bytes(target_set.targets, count, dim)


def _check_header(buf, header, magic):
    if len(buf) < header.size:
        raise FormatError(f"truncated {magic.decode()} header: {len(buf)} bytes")
    fields = header.unpack_from(buf)
    if fields[0] != magic:
        raise FormatError(f"bad magic bytes {fields[0]!r}, expected {magic!r}")
    if fields[1] != VERSION:
        raise FormatError(f"unsupported {magic.decode()} version {fields[1]}")
    return fields


def read_shard_header(buf):
    _, version, shard_id, count, dim = _check_header(buf, _CPTD_HEADER, b"CPTD")
    return {"magic": "CPTD", "version": version, "shard_id": shard_id, "count": count, "dim": dim}


def read_targets_header(buf):
    _, version, shard_id, aligned, count, dim = _check_header(buf, _CPTT_HEADER, b"CPTT")
    if aligned not in (0, 1):
        raise FormatError(f"aligned flag must be 0 or 1, got {aligned}")
    return {"magic": "CPTT", "version": version, "shard_id": shard_id, "aligned": bool(aligned),
            "count": count, "dim": dim}


def decode_shard(buf, *, exact=True):
    """Parse a CPTD payload. With ``exact=False`` trailing bytes are allowed.

    Returns the shard and the number of bytes consumed.
    """
    head = read_shard_header(buf)
    count, dim = head["count"], head["dim"]
    start = _CPTD_HEADER.size
    size = start + 4 * count * dim + 8 * count
    if len(buf) < size or (exact and len(buf) != size):
        raise FormatError(f"CPTD payload is {len(buf)} bytes, header implies {size}")
    X = np.frombuffer(buf, dtype="<f4", count=count * dim, offset=start).reshape(count, dim)
    ids = np.frombuffer(buf, dtype="<u8", count=count, offset=start + 4 * count * dim)
    try:
        shard = Shard(head["shard_id"], ids.astype(np.uint64), X.astype(np.float32))
    except ValueError as exc:
        raise FormatError(f"invalid CPTD contents: {exc}") from exc
    return shard, size


def decode_targets(buf, *, exact=True):
    head = read_targets_header(buf)
    count, dim = head["count"], head["dim"]
    start = _CPTT_HEADER.size
    size = start + 4 * count * dim
    if len(buf) < size or (exact and len(buf) != size):
        raise FormatError(f"CPTT payload is {len(buf)} bytes, header implies {size}")
    Y = np.frombuffer(buf, dtype="<f4", count=count * dim, offset=start).reshape(count, dim)
    try:
        ts = TargetSet(head["shard_id"], Y.astype(np.float32), aligned=head["aligned"])
    except ValueError as exc:
        raise FormatError(f"invalid CPTT contents: {exc}") from exc
    return ts, size


def write_shard(path, shard):
    Path(path).write_bytes(encode_shard(shard))


def read_shard(path):
    return decode_shard(Path(path).read_bytes())[0]


def write_targets(path, target_set):
    Path(path).write_bytes(encode_targets(target_set))


def read_targets(path):
    return decode_targets(Path(path).read_bytes())[0]


def inspect_file(path):
    """Return the header of a CPTD or CPTT file as a dict."""
    buf = Path(path).read_bytes()
    magic = buf[:4]
    if magic == b"CPTD":
        return read_shard_header(buf)
    if magic == b"CPTT":
        return read_targets_header(buf)
    raise FormatError(f"{path}: unknown magic bytes {magic!r}")
