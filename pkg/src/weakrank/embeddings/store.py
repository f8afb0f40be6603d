"""Embedding matrices and the `.emb` file format.

Layout (all integers little-endian):

    magic    4 bytes  b"WRK1"
    version  u32      1
    N        u32      number of rows
    d        u32      dimension
    data     N*d f32  row-major
    count    u32      number of ids (== N)
    ids      count x (u16 byte length + UTF-8 bytes)
"""
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np

from weakrank.errors import CorruptFile, DimensionMismatch, ValidationError, VersionMismatch
from weakrank.utility.files import atomic_write_bytes

MAGIC = b"WRK1"
VERSION = 1
_HEADER = struct.Struct('<4sIII')
_U32 = struct.Struct('<I')
_U16 = struct.Struct('<H')

@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    ids: List[str]
    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise DimensionMismatch(f"Embedding data must be 2-D, got shape {data.shape}")
        if len(self.ids) != data.shape[0]:
            raise ValidationError(f"{len(self.ids)} ids for {data.shape[0]} rows")
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("Embedding ids must be unique")
        if not np.isfinite(data).all():
            raise ValidationError("Embedding data contains NaN or infinite values")
        object.__setattr__(self, 'ids', list(self.ids))
        object.__setattr__(self, 'data', data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def index(self) -> Dict[str, int]:
        return {item_id: i for i, item_id in enumerate(self.ids)}

    def take(self, ids: Sequence[str]) -> "EmbeddingMatrix":
        """Rows for `ids`, in the given order."""
        index = self.index()
        missing = [i for i in ids if i not in index]
        if missing:
            raise ValidationError(f"{len(missing)} ids not in embedding matrix, e.g. '{missing[0]}'")
        rows = [index[i] for i in ids]
        return EmbeddingMatrix(list(ids), self.data[rows])

    def equals(self, other: "EmbeddingMatrix") -> bool:
        """Bitwise equality of ids and data."""
        return self.ids == other.ids and self.data.shape == other.data.shape \
            and self.data.tobytes() == other.data.tobytes()

    def __repr__(self):
        return f"{self.__class__.__name__}(n={self.n}, dim={self.dim})"

def to_bytes(m: EmbeddingMatrix) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, m.n, m.dim), m.data.astype('<f4').tobytes(), _U32.pack(len(m.ids))]
    for item_id in m.ids:
        encoded = item_id.encode('utf-8')
        if len(encoded) > 0xFFFF:
            raise ValidationError(f"Id longer than 65535 bytes: '{item_id[:32]}...'")
        parts.append(_U16.pack(len(encoded)))
        parts.append(encoded)
    return b"".join(parts)

def from_bytes(payload: bytes, source: str = "<bytes>") -> EmbeddingMatrix:
    if len(payload) < _HEADER.size:
        raise CorruptFile(f"{source}: truncated header")
    magic, version, n, dim = _HEADER.unpack_from(payload, 0)
    if magic != MAGIC:
        raise CorruptFile(f"{source}: bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatch(f"{source}: version {version}, expected {VERSION}")
    offset = _HEADER.size
    n_bytes = n * dim * 4
    if len(payload) < offset + n_bytes + _U32.size:
        raise CorruptFile(f"{source}: truncated data block")
    data = np.frombuffer(payload, dtype='<f4', count=n * dim, offset=offset).reshape(n, dim)
    offset += n_bytes
    count, = _U32.unpack_from(payload, offset)
    offset += _U32.size
    if count != n:
        raise CorruptFile(f"{source}: id table has {count} entries for {n} rows")
    ids = []
    for _ in range(count):
        if len(payload) < offset + _U16.size:
            raise CorruptFile(f"{source}: truncated id table")
        length, = _U16.unpack_from(payload, offset)
        offset += _U16.size
        if len(payload) < offset + length:
            raise CorruptFile(f"{source}: truncated id table")
        try:
            ids.append(payload[offset:offset + length].decode('utf-8'))
        except UnicodeDecodeError as err:
            raise CorruptFile(f"{source}: id is not valid UTF-8") from err
        offset += length
    if offset != len(payload):
        raise CorruptFile(f"{source}: {len(payload) - offset} trailing bytes")
    try:
        return EmbeddingMatrix(ids, data.astype(np.float32))
    except ValidationError as err:
        raise CorruptFile(f"{source}: {err}") from err

def save(m: EmbeddingMatrix, path: Union[str, Path]) -> None:
    atomic_write_bytes(path, to_bytes(m))

def load(path: Union[str, Path]) -> EmbeddingMatrix:
    with open(path, 'rb') as stream:
        return from_bytes(stream.read(), source=str(path))

def file_size(n: int, dim: int, ids: Sequence[str]) -> int:
    """Expected `.emb` size in bytes for a matrix with these ids."""
    return _HEADER.size + n * dim * 4 + _U32.size + sum(_U16.size + len(i.encode('utf-8')) for i in ids)
