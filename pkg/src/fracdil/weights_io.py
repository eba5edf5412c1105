"""Bit-exact binary weight files.

Layout (all integers little-endian)::

    b"PODW" | u32 version=1 | u32 count
    count x ( u16 name_len | utf-8 name | u8 rank | rank x u32 dim | u8 dtype | raw data )

dtype code 0 is little-endian float32, the only code currently defined.
"""
import struct

import numpy as np

MAGIC = b"PODW"
VERSION = 1
DTYPE_CODES = {0: np.dtype("<f4")}


class WeightFileError(ValueError):
    pass


class BadMagicError(WeightFileError):
    pass


def dumps(arrays):
    out = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise WeightFileError(f"array name too long: {name[:40]}...")
        a = np.asarray(arr, dtype="<f4")  # tobytes() below is C order
        if a.ndim > 255:
            raise WeightFileError(f"{name}: rank {a.ndim} too large")
        out.append(struct.pack("<H", len(raw_name)))
        out.append(raw_name)
        out.append(struct.pack("<B", a.ndim))
        out.append(struct.pack(f"<{a.ndim}I", *a.shape))
        out.append(struct.pack("<B", 0))
        out.append(a.tobytes())
    return b"".join(out)


def loads(buf):
    buf = memoryview(buf)
    if bytes(buf[:4]) != MAGIC:
        raise BadMagicError(f"not a PODW weight file (magic {bytes(buf[:4])!r})")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise WeightFileError("truncated weight file")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    version, count = take("<II")
    if version != VERSION:
        raise WeightFileError(f"unsupported weight file version {version}")
    arrays = {}
    for _ in range(count):
        (name_len,) = take("<H")
        if pos + name_len > len(buf):
            raise WeightFileError("truncated weight file")
        name = bytes(buf[pos:pos + name_len]).decode("utf-8")
        pos += name_len
        (rank,) = take("<B")
        dims = take(f"<{rank}I") if rank else ()
        (code,) = take("<B")
        if code not in DTYPE_CODES:
            raise WeightFileError(f"{name}: unknown dtype code {code}")
        dt = DTYPE_CODES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        if pos + nbytes > len(buf):
            raise WeightFileError("truncated weight file")
        arrays[name] = np.frombuffer(buf[pos:pos + nbytes], dtype=dt).reshape(dims).astype(np.float32)
        pos += nbytes
    if pos != len(buf):
        raise WeightFileError("trailing bytes after last array")
    return arrays


def save(path, arrays):
    with open(path, "wb") as f:
        f.write(dumps(arrays))


def load(path):
    with open(path, "rb") as f:
        return loads(f.read())
