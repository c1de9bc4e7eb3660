"""Binary wire format for compressed models.

Layout (little-endian)::

    "DCAD" | version u8 | client_id u32 | round u32 | layer_count u16
    per layer:  rows u32 | cols u32 | K u16 | K x f32 centroids
                | ceil(N * ceil(log2 K) / 8) bytes of LSB-first packed indices
    per layer:  bias_len u32 | bias_len x f32

K = 0 marks a raw layer (rows*cols x f32 follow instead of table + indices);
only the dense-exchange baseline emits those.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import List, Union

import numpy as np

from .errors import (
    BadMagicError,
    BadVersionError,
    CorruptionError,
    DecodeError,
    IndexOverflowError,
    TruncatedStreamError,
)
from .wcp import CompressedLayer, RawLayer, index_bits

MAGIC = b"DCAD"
VERSION = 1
HEADER = struct.Struct("<4sBIIH")
LAYER_HEADER = struct.Struct("<IIH")
HEADER_BYTES = HEADER.size  # 15

Layer = Union[CompressedLayer, RawLayer]


@dataclass
class CompressedModel:
    client_id: int
    round: int
    layers: List[Layer] = field(default_factory=list)
    biases: List[np.ndarray] = field(default_factory=list)

    def __eq__(self, other):
        if not isinstance(other, CompressedModel):
            return NotImplemented
        if (self.client_id, self.round, len(self.layers), len(self.biases)) != (
            other.client_id, other.round, len(other.layers), len(other.biases)
        ):
            return False
        for a, b in zip(self.layers, other.layers):
            if type(a) is not type(b) or tuple(a.shape) != tuple(b.shape):
                return False
            if isinstance(a, RawLayer):
                if not np.array_equal(a.values, b.values):
                    return False
            elif not (np.array_equal(a.centroids, b.centroids) and np.array_equal(a.indices, b.indices)):
                return False
        return all(np.array_equal(x, y) for x, y in zip(self.biases, other.biases))


def pack_indices(indices: np.ndarray, bits: int) -> bytes:
    idx = np.asarray(indices, dtype=np.uint64)
    shifts = np.arange(bits, dtype=np.uint64)
    bitmat = ((idx[:, None] >> shifts[None, :]) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bitmat.ravel(), bitorder="little").tobytes()


def unpack_indices(data: bytes, n: int, bits: int) -> np.ndarray:
    flat = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")[: n * bits]
    weights = (1 << np.arange(bits, dtype=np.int64))
    return flat.reshape(n, bits).astype(np.int64) @ weights


def layer_payload_bytes(layer: Layer) -> int:
    """Bytes of one layer block after its 10-byte header."""
    n = int(layer.shape[0]) * int(layer.shape[1])
    if isinstance(layer, RawLayer):
        return 4 * n
    return 4 * layer.k + (n * index_bits(layer.k) + 7) // 8


def encoded_size(model: CompressedModel) -> int:
    size = HEADER_BYTES
    for layer in model.layers:
        size += LAYER_HEADER.size + layer_payload_bytes(layer)
    for b in model.biases:
        size += 4 + 4 * len(b)
    return size


def encode_wire(model: CompressedModel) -> bytes:
    if len(model.biases) != len(model.layers):
        raise CorruptionError("one bias vector per layer is required (use an empty array for none)")
    out = [HEADER.pack(MAGIC, VERSION, model.client_id, model.round, len(model.layers))]
    for layer in model.layers:
        rows, cols = (int(s) for s in layer.shape)
        if isinstance(layer, RawLayer):
            out.append(LAYER_HEADER.pack(rows, cols, 0))
            out.append(np.asarray(layer.values, dtype="<f4").ravel().tobytes())
            continue
        if layer.k < 2 or layer.centroids[0] != 0.0:
            raise CorruptionError("centroid table must have K >= 2 and a zero first entry")
        out.append(LAYER_HEADER.pack(rows, cols, layer.k))
        out.append(np.asarray(layer.centroids, dtype="<f4").tobytes())
        out.append(pack_indices(layer.indices, index_bits(layer.k)))
    for b in model.biases:
        out.append(struct.pack("<I", len(b)))
        out.append(np.asarray(b, dtype="<f4").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedStreamError(f"stream ends inside {what} at byte {self.pos}")
        chunk = bytes(self.data[self.pos:self.pos + n])
        self.pos += n
        return chunk


def decode_wire(data: bytes) -> CompressedModel:
    r = _Reader(data)
    if len(data) >= 4 and bytes(data[:4]) != MAGIC:
        raise BadMagicError(f"bad magic {bytes(data[:4])!r}")
    magic, version, client_id, rnd, n_layers = HEADER.unpack(r.take(HEADER_BYTES, "header"))
    if version != VERSION:
        raise BadVersionError(f"unsupported version {version}")
    layers: List[Layer] = []
    for li in range(n_layers):
        rows, cols, k = LAYER_HEADER.unpack(r.take(LAYER_HEADER.size, f"layer {li} header"))
        n = rows * cols
        if k == 0:
            vals = np.frombuffer(r.take(4 * n, f"layer {li} values"), dtype="<f4").astype(np.float64)
            layers.append(RawLayer((rows, cols), vals.reshape(rows, cols)))
            continue
        if k == 1:
            raise DecodeError(f"layer {li}: K = 1 is not a valid table")
        table = np.frombuffer(r.take(4 * k, f"layer {li} centroids"), dtype="<f4").astype(np.float64)
        if table[0] != 0.0:
            raise DecodeError(f"layer {li}: first centroid is {table[0]}, expected 0")
        bits = index_bits(k)
        idx = unpack_indices(r.take((n * bits + 7) // 8, f"layer {li} indices"), n, bits)
        if n and idx.max() >= k:
            raise IndexOverflowError(f"layer {li}: index {idx.max()} >= K = {k}")
        layers.append(CompressedLayer((rows, cols), table, idx))
    biases = []
    for li in range(n_layers):
        (blen,) = struct.unpack("<I", r.take(4, f"bias {li} length"))
        biases.append(np.frombuffer(r.take(4 * blen, f"bias {li}"), dtype="<f4").astype(np.float64))
    if r.pos != len(data):
        raise DecodeError(f"{len(data) - r.pos} trailing bytes after model")
    return CompressedModel(client_id, rnd, layers, biases)
