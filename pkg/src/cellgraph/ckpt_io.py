"""Versioned binary checkpoint container: JSON metadata + named arrays,
each with a shape header and CRC32."""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

MAGIC = b"CGCK0001"

_DTYPES = {0: "<f4", 1: "<f8", 2: "<i8"}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}


class CheckpointError(Exception):
    pass


def write_checkpoint(path, meta, arrays):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        mbytes = json.dumps(meta, sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<I", len(mbytes)))
        fh.write(mbytes)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name])
            code = _CODES.get(arr.dtype)
            if code is None:
                raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
            nbytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nbytes)))
            fh.write(nbytes)
            fh.write(struct.pack("<BB", code, arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            payload = arr.astype(_DTYPES[code]).tobytes()
            fh.write(payload)
            fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def read_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        mlen = struct.unpack("<I", fh.read(4))[0]
        meta = json.loads(fh.read(mlen).decode("utf-8"))
        count = struct.unpack("<I", fh.read(4))[0]
        arrays = {}
        for _ in range(count):
            nlen = struct.unpack("<H", fh.read(2))[0]
            name = fh.read(nlen).decode("utf-8")
            code, ndim = struct.unpack("<BB", fh.read(2))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            dtype = np.dtype(_DTYPES[code])
            size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            payload = fh.read(size)
            if len(payload) != size:
                raise CheckpointError(f"truncated array {name}")
            stored = struct.unpack("<I", fh.read(4))[0]
            if stored != zlib.crc32(payload) & 0xFFFFFFFF:
                raise CheckpointError(f"checksum failure for array {name}")
            arrays[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    return meta, arrays
