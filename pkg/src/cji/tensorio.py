"""Bit-exact tensor file format.

ASCII header line ``CJI f64 <ndim> <dim1> ... <dimk>\n`` followed by the
row-major little-endian IEEE-754 64-bit payload.  Trivial to read from any
language; round-trips exactly.
"""

from __future__ import annotations

import numpy as np

MAGIC = "CJI"
DTYPE = np.dtype("<f8")


def write_tensor(path, array) -> None:
    array = np.ascontiguousarray(np.asarray(array, dtype=float))
    header = " ".join([MAGIC, "f64", str(array.ndim), *map(str, array.shape)])
    with open(path, "wb") as fh:
        fh.write((header + "\n").encode("ascii"))
        fh.write(array.astype(DTYPE, copy=False).tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = bytearray()
        while True:
            ch = fh.read(1)
            if not ch:
                raise ValueError(f"{path}: truncated header")
            if ch == b"\n":
                break
            header.extend(ch)
        fields = header.decode("ascii").split()
        if len(fields) < 3 or fields[0] != MAGIC or fields[1] != "f64":
            raise ValueError(f"{path}: not a {MAGIC} f64 tensor file")
        ndim = int(fields[2])
        if len(fields) != 3 + ndim:
            raise ValueError(f"{path}: header dimension count mismatch")
        shape = tuple(int(v) for v in fields[3:])
        count = int(np.prod(shape)) if shape else 1
        payload = fh.read(count * 8)
        if len(payload) != count * 8:
            raise ValueError(f"{path}: truncated payload")
        return np.frombuffer(payload, dtype=DTYPE).reshape(shape).copy()
