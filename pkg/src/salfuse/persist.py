"""Little-endian binary helpers shared by the model and matrix file formats."""
from __future__ import annotations

import struct

import numpy as np


class ModelFormatError(ValueError):
    """A model or matrix file is truncated, has the wrong magic, or an unknown version."""


class Reader:
    def __init__(self, data: bytes, name: str = "file"):
        self.data = data
        self.pos = 0
        self.name = name

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError(f"{self.name}: truncated at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def u32(self) -> int:
        return self.unpack("I")[0]

    def u64(self) -> int:
        return self.unpack("Q")[0]

    def array(self, dtype, count: int) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).copy()

    def expect_magic(self, magic: bytes) -> None:
        if len(self.data) == 0:
            raise ModelFormatError(f"{self.name}: empty file")
        got = self.take(len(magic))
        if got != magic:
            raise ModelFormatError(f"{self.name}: bad magic {got!r}, expected {magic!r}")

    def expect_end(self) -> None:
        if self.pos != len(self.data):
            raise ModelFormatError(f"{self.name}: {len(self.data) - self.pos} trailing bytes")


def f64le(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def save_matrix(path, mat: np.ndarray) -> None:
    """Dump a 2-D matrix as ``rows u64, cols u64`` followed by row-major float64."""
    mat = np.atleast_2d(np.asarray(mat, dtype=np.float64))
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQ", *mat.shape))
        fh.write(f64le(mat))


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        r = Reader(fh.read(), str(path))
    if not r.data:
        raise ModelFormatError(f"{path}: empty file")
    rows, cols = r.unpack("QQ")
    mat = r.array("f8", rows * cols).reshape(rows, cols)
    r.expect_end()
    return mat
