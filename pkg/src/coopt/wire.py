"""Length-prefixed binary frames for protocol messages.

Frame layout (little-endian)::

    u32 payload_length | payload
    payload = u8 tag | u32 round | i32 sender | u16 run_id_len | run_id (utf-8) | body

Bodies reuse the file formats: CPTD for shards and the shared set (shard id
``0xFFFFFFFF``), CPTT for shared and uploaded targets, JSON for the rest.
``UploadOptimized`` appends the uniform value as an f64 after its CPTT body.
"""

import json
import struct

from . import protocol as P
from .alignment import SharedSet, SharedTargets
from .core import SHARED_SET_ID, Dataset, Shard, TargetSet
from .exceptions import FormatError
from .formats import decode_shard, decode_targets, encode_shard, encode_targets
from .uniformity import UniformValueReport

_TAGS = {
    "DistributeShard": 1,
    "ShareSet": 2,
    "ReportUniform": 3,
    "AnnounceBest": 4,
    "PublishSharedTargets": 5,
    "UploadOptimized": 6,
    "MergeComplete": 7,
}
_NAMES = {v: k for k, v in _TAGS.items()}
_PREFIX = struct.Struct("<BIiH")
_LEN = struct.Struct("<I")
_F64 = struct.Struct("<d")


def _json(obj):
    return json.dumps(obj, sort_keys=True).encode()


def encode_body(msg):
    if isinstance(msg, P.DistributeShard):
        return encode_shard(msg.shard)
    if isinstance(msg, P.ShareSet):
        ds = msg.shared_set.dataset
        return encode_shard(Shard(SHARED_SET_ID, ds.ids, ds.X))
    if isinstance(msg, P.ReportUniform):
        return msg.report.to_json().encode()
    if isinstance(msg, P.AnnounceBest):
        return _json({"participant_id": msg.participant_id, "n": msg.n, "best_id": msg.best_id,
                      "align": msg.align})
    if isinstance(msg, P.PublishSharedTargets):
        return encode_targets(TargetSet(SHARED_SET_ID, msg.targets.values, aligned=True))
    if isinstance(msg, P.UploadOptimized):
        return encode_targets(msg.target_set) + _F64.pack(msg.uniform_value)
    if isinstance(msg, P.MergeComplete):
        return _json({"dataset_digest": msg.dataset_digest})
    raise FormatError(f"cannot encode {type(msg).__name__}")


def encode_frame(msg):
    run_id = msg.run_id.encode()
    payload = _PREFIX.pack(_TAGS[type(msg).__name__], msg.round, msg.sender, len(run_id)) + run_id
    payload += encode_body(msg)
    return _LEN.pack(len(payload)) + payload


def decode_frame(buf):
    """Decode one frame from the start of ``buf``; return ``(message, bytes_used)``."""
    if len(buf) < _LEN.size:
        raise FormatError("truncated frame length")
    (length,) = _LEN.unpack_from(buf)
    end = _LEN.size + length
    if len(buf) < end or length < _PREFIX.size:
        raise FormatError("truncated frame")
    tag, rnd, sender, id_len = _PREFIX.unpack_from(buf, _LEN.size)
    if tag not in _NAMES:
        raise FormatError(f"unknown message tag {tag}")
    start = _LEN.size + _PREFIX.size
    run_id = bytes(buf[start:start + id_len]).decode()
    body = bytes(buf[start + id_len:end])
    head = {"run_id": run_id, "round": rnd, "sender": sender}
    name = _NAMES[tag]
    if name == "DistributeShard":
        msg = P.DistributeShard(**head, shard=decode_shard(body)[0])
    elif name == "ShareSet":
        shard = decode_shard(body)[0]
        msg = P.ShareSet(**head, shared_set=SharedSet(Dataset(shard.X, shard.sample_ids)))
    elif name == "ReportUniform":
        msg = P.ReportUniform(**head, report=UniformValueReport.from_json(body.decode()))
    elif name == "AnnounceBest":
        msg = P.AnnounceBest(**head, **json.loads(body))
    elif name == "PublishSharedTargets":
        ts = decode_targets(body)[0]
        msg = P.PublishSharedTargets(**head, targets=SharedTargets(ts.n, ts.targets))
    elif name == "UploadOptimized":
        if len(body) < _F64.size:
            raise FormatError("truncated upload frame")
        ts = decode_targets(body[:-_F64.size])[0]
        (value,) = _F64.unpack(body[-_F64.size:])
        msg = P.UploadOptimized(**head, shard_id=ts.shard_id, target_set=ts, uniform_value=value)
    else:
        msg = P.MergeComplete(**head, **json.loads(body))
    return msg, end


def iter_frames(stream):
    """Yield messages from a byte string holding consecutive frames."""
    offset = 0
    view = memoryview(stream)
    while offset < len(stream):
        msg, used = decode_frame(view[offset:])
        offset += used
        yield msg
