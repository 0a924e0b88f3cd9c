"""
Weight file format (little-endian):

    b"EFCN"  u8 version (1)  u32 tensor count
    per tensor: u16 name length, UTF-8 name, u8 rank, rank x u32 dims,
                prod(dims) float32 values in row-major order
"""
import struct
from typing import Dict, Mapping, Optional

import numpy as np

from src.errors import ArtifactIOError, WeightFormatError

MAGIC = b"EFCN"
VERSION = 1
HEADER_SIZE = len(MAGIC) + 1 + 4


def encode_weights(params: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<BI", VERSION, len(params))]
    for name, value in params.items():
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise WeightFormatError(f"Tensor name too long: {name[:32]}...", offset=sum(map(len, chunks)))
        array = np.asarray(value, dtype="<f4")
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack(f"<B{array.ndim}I", array.ndim, *array.shape))
        chunks.append(array.tobytes(order="C"))
    return b"".join(chunks)


class _Reader:
    def __init__(self, payload: bytes, path: Optional[str]):
        self.payload = payload
        self.offset = 0
        self.path = path

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.payload):
            raise WeightFormatError(f"Truncated file while reading {what}", self.offset, self.path)
        chunk = self.payload[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_weights(payload: bytes, path: Optional[str] = None) -> Dict[str, np.ndarray]:
    """
    Raises:
        WeightFormatError: bad magic, unsupported version, truncation or
            trailing bytes; carries the byte offset of the problem.
    """
    reader = _Reader(payload, path)
    if reader.take(len(MAGIC), "magic") != MAGIC:
        raise WeightFormatError("Bad magic (expected b'EFCN')", 0, path)
    (version,) = reader.unpack("<B", "version")
    if version != VERSION:
        raise WeightFormatError(f"Unsupported version {version}", len(MAGIC), path)
    (count,) = reader.unpack("<I", "tensor count")

    params: Dict[str, np.ndarray] = {}
    for index in range(count):
        (name_length,) = reader.unpack("<H", f"name length of tensor {index}")
        name_offset = reader.offset
        try:
            name = reader.take(name_length, f"name of tensor {index}").decode("utf-8")
        except UnicodeDecodeError as e:
            raise WeightFormatError(f"Tensor name is not UTF-8 ({e.reason})", name_offset, path) from e
        (rank,) = reader.unpack("<B", f"rank of '{name}'")
        dims = reader.unpack(f"<{rank}I", f"dims of '{name}'") if rank else ()
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = reader.take(4 * size, f"data of '{name}'")
        params[name] = np.frombuffer(data, dtype="<f4").reshape(dims).astype(np.float32)
    if reader.offset != len(payload):
        raise WeightFormatError(f"{len(payload) - reader.offset} trailing bytes after {count} tensors",
                                reader.offset, path)
    return params


def save_weights(params: Mapping[str, np.ndarray], path: str) -> int:
    """Write params to path; returns the number of bytes written"""
    payload = encode_weights(params)
    try:
        with open(path, "wb") as f:
            f.write(payload)
    except OSError as e:
        raise ArtifactIOError("write weights to", path, e.strerror or str(e)) from e
    return len(payload)


def load_weights(path: str) -> Dict[str, np.ndarray]:
    try:
        with open(path, "rb") as f:
            payload = f.read()
    except OSError as e:
        raise ArtifactIOError("read weights from", path, e.strerror or str(e)) from e
    return decode_weights(payload, path)
