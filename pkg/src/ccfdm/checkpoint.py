"""Single-file binary checkpoints.

Layout (all integers little-endian)::

    magic        8 bytes   b"CCFDMCKP"
    version      u32       FORMAT_VERSION
    n_records    u32
    records      n_records times:
        name_len u16, name (utf-8)
        dtype    u8        0=float32 1=float64 2=uint8 3=int64 4=json (utf-8 bytes)
        ndim     u8, shape ndim x u64
        nbytes   u64, payload (raw little-endian values, C order)
    crc32        u32       over every byte before it

Records are written in section order: ``param/<set>/<name>`` arrays, then
``adam/<set>/{m,v}/<name>``, then ``replay/*`` and ``env/*`` arrays, and
finally one ``meta`` JSON record holding optimizer step counters, the
curiosity state, RNG states, counters, the config and the metrics rows.
Parameters trained in float32 are therefore stored as raw 32-bit values.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"CCFDMCKP"
FORMAT_VERSION = 1

_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("u1"): 2, np.dtype("<i8"): 3}
_DTYPES = {v: k for k, v in _CODES.items()}
_JSON = 4


def _encode_record(name: str, value) -> tuple[bytes, bytes | memoryview]:
    raw_name = name.encode("utf-8")
    if isinstance(value, np.ndarray):
        arr = value
        dt = arr.dtype.newbyteorder("<")
        if dt not in _CODES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for record {name!r}")
        payload = memoryview(np.array(arr, dtype=dt, order="C", copy=None).reshape(-1).view(np.uint8))
        code, shape = _CODES[dt], arr.shape
    else:
        payload = json.dumps(value, sort_keys=True).encode("utf-8")
        code, shape = _JSON, ()
    head = struct.pack("<H", len(raw_name)) + raw_name + struct.pack("<BB", code, len(shape))
    nbytes = payload.nbytes if isinstance(payload, memoryview) else len(payload)
    head += struct.pack(f"<{len(shape)}Q", *shape) + struct.pack("<Q", nbytes)
    return head, payload


def save(path, records: dict) -> None:
    """Write ``records`` (name -> ndarray or JSON-able value) atomically, streaming to disk."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    crc = 0
    with open(tmp, "wb") as fh:

        def put(chunk) -> None:
            nonlocal crc
            fh.write(chunk)
            crc = zlib.crc32(chunk, crc)

        put(MAGIC + struct.pack("<II", FORMAT_VERSION, len(records)))
        for name, value in records.items():
            head, payload = _encode_record(name, value)
            put(head)
            put(payload)
        fh.write(struct.pack("<I", crc))
    os.replace(tmp, path)


def load(path) -> dict:
    path = Path(path)
    try:
        data = memoryview(path.read_bytes())
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < len(MAGIC) + 12 or bytes(data[: len(MAGIC)]) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupted)")
    pos = len(MAGIC) + 8
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = bytes(data[pos : pos + n]).decode("utf-8")
            pos += n
            code, ndim = struct.unpack_from("<BB", data, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
            (nbytes,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            payload = data[pos : pos + nbytes]
            if len(payload) != nbytes:
                raise CheckpointError(f"{path}: record {name!r} truncated")
            pos += nbytes
            if code == _JSON:
                out[name] = json.loads(bytes(payload).decode("utf-8"))
            else:
                out[name] = np.frombuffer(payload, dtype=_DTYPES[code]).reshape(shape).copy()
    except (struct.error, KeyError, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed record ({exc})") from exc
    if pos != len(data) - 4:
        raise CheckpointError(f"{path}: trailing bytes after last record")
    return out
