"""Binary spike frames and their packed wire representation.

A frame holds one timestep of spikes for a (channels, height, width)
volume. In memory it is a dense uint8 array of 0/1 values; on the wire it
is bit-packed LSB-first within each byte, row-major and channel-major,
with any padding bits in the final byte forced to zero.
"""

from __future__ import annotations

import numpy as np


class SpikeFrame:
    """One timestep of binary spikes for a (c, h, w) volume."""

    __slots__ = ("dims", "data")

    def __init__(self, data: np.ndarray):
        arr = np.asarray(data, dtype=np.uint8)
        if arr.ndim != 3:
            raise ValueError(f"spike frame must be 3-d (c, h, w), got shape {arr.shape}")
        if arr.size and arr.max() > 1:
            raise ValueError("spike frame values must be 0 or 1")
        self.data = arr
        self.dims = arr.shape

    @classmethod
    def zeros(cls, dims: tuple[int, int, int]) -> "SpikeFrame":
        return cls(np.zeros(dims, dtype=np.uint8))

    @property
    def bit_count(self) -> int:
        return int(self.data.size)

    @property
    def packed_nbytes(self) -> int:
        return (self.bit_count + 7) // 8

    def pack(self) -> bytes:
        """Bit-pack LSB-first; padding bits in the last byte are zero."""
        return np.packbits(self.data.reshape(-1), bitorder="little").tobytes()

    @classmethod
    def unpack(cls, dims: tuple[int, int, int], payload: bytes) -> "SpikeFrame":
        c, h, w = dims
        nbits = c * h * w
        nbytes = (nbits + 7) // 8
        if len(payload) != nbytes:
            raise ValueError(f"expected {nbytes} payload bytes for dims {dims}, got {len(payload)}")
        raw = np.frombuffer(payload, dtype=np.uint8)
        bits = np.unpackbits(raw, bitorder="little")
        if bits[nbits:].any():
            raise ValueError("nonzero padding bits in packed spike frame")
        return cls(bits[:nbits].reshape(dims))

    def count(self) -> int:
        return int(self.data.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpikeFrame):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.data, other.data)

    def __repr__(self) -> str:
        return f"SpikeFrame(dims={self.dims}, spikes={self.count()})"
