"""Membrane ping-pong banks and the kernel-slot weight region.

The membrane store is two equal halves that alternate read/write roles
every timestep: the activation unit reads last step's potentials from one
half while writing updated potentials to the other. Role violations are
counted rather than silently tolerated so a strict run can assert the
protocol held.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import KERNEL_SLOT_BYTES, MemoryMap


class CapacityError(ValueError):
    """A tensor does not fit the memory region it is being placed into."""


class ProtocolViolation(RuntimeError):
    """A ping-pong half was accessed against its current role."""


class PingPongBank:
    """Two-half membrane store with per-timestep role toggling."""

    def __init__(self, entries: int):
        if entries < 1:
            raise ValueError("bank needs at least one membrane word")
        self.entries = entries
        self.halves = [
            np.zeros(entries, dtype=np.int16),
            np.zeros(entries, dtype=np.int16),
        ]
        self._read_half = 0
        self.read_conflicts = 0
        self.write_conflicts = 0

    @property
    def read_half_index(self) -> int:
        return self._read_half

    @property
    def write_half_index(self) -> int:
        return 1 - self._read_half

    def raw_read(self, half: int, count: int) -> np.ndarray:
        """Read `count` membrane words from a half, counting role violations."""
        if half == self.write_half_index:
            self.read_conflicts += 1
        return self.halves[half][:count].copy()

    def raw_write(self, half: int, values: np.ndarray) -> None:
        if half == self.read_half_index:
            self.write_conflicts += 1
        vals = np.asarray(values, dtype=np.int16)
        if vals.size > self.entries:
            raise CapacityError(
                f"{vals.size} membrane words exceed bank half of {self.entries}"
            )
        self.halves[half][: vals.size] = vals

    def read_membranes(self, count: int) -> np.ndarray:
        """Previous-step potentials, from whichever half currently holds them."""
        return self.raw_read(self.read_half_index, count)

    def write_membranes(self, values: np.ndarray) -> None:
        self.raw_write(self.write_half_index, values)

    def tick(self) -> None:
        """Swap read/write roles at a timestep boundary; contents untouched."""
        self._read_half = 1 - self._read_half

    @property
    def conflicts(self) -> int:
        return self.read_conflicts + self.write_conflicts

    def assert_clean(self) -> None:
        if self.conflicts:
            raise ProtocolViolation(
                f"{self.read_conflicts} read / {self.write_conflicts} write "
                "accesses hit a ping-pong half against its role"
            )


def pingpong_tick(bank: PingPongBank) -> PingPongBank:
    """Functional wrapper over PingPongBank.tick for symmetry with the scalar ops."""
    bank.tick()
    return bank


@dataclass(frozen=True)
class KernelSlot:
    kernel_index: int
    slot: int
    offset: int
    nbytes: int


@dataclass(frozen=True)
class WeightImage:
    """Packed little-endian INT8 image of one weight-region staging."""

    image: bytes
    slots: tuple[KernelSlot, ...]


def _layer_kernel_blobs(layer) -> list[bytes]:
    """Split a layer's weights into the byte blobs staged one per slot.

    Convolution kernels map one (out_ch, in_ch) slice per slot; fully
    connected rows are chopped into slot-sized chunks.
    """
    w = layer.weights_i8
    if layer.kind == "conv":
        out_ch, in_ch = w.shape[0], w.shape[1]
        return [
            np.ascontiguousarray(w[o, i]).tobytes()
            for o in range(out_ch)
            for i in range(in_ch)
        ]
    if layer.kind == "fc":
        blobs = []
        for row in w:
            raw = np.ascontiguousarray(row).tobytes()
            blobs.extend(
                raw[off : off + KERNEL_SLOT_BYTES]
                for off in range(0, len(raw), KERNEL_SLOT_BYTES)
            )
        return blobs
    raise ValueError(f"layer kind {layer.kind!r} stages no weights")


def _pack_batch(blobs: list[bytes], first_index: int, mem: MemoryMap) -> WeightImage:
    if len(blobs) > mem.kernel_slots:
        raise CapacityError(
            f"{len(blobs)} kernels exceed the {mem.kernel_slots} slots "
            f"of the {mem.weight_bytes}-byte weight region"
        )
    slots = []
    image = bytearray(mem.weight_bytes)
    for i, blob in enumerate(blobs):
        if len(blob) > KERNEL_SLOT_BYTES:
            raise CapacityError(
                f"kernel {first_index + i} needs {len(blob)} bytes; "
                f"slots hold {KERNEL_SLOT_BYTES}"
            )
        offset = i * KERNEL_SLOT_BYTES
        image[offset : offset + len(blob)] = blob
        slots.append(KernelSlot(first_index + i, i, offset, len(blob)))
    return WeightImage(bytes(image), tuple(slots))


def load_layer_weights(layer, mem: MemoryMap) -> WeightImage:
    """Stage a layer's kernels into the weight region in one pass.

    Fails with CapacityError if the layer needs more slots than the region
    has or any kernel exceeds one slot.
    """
    return _pack_batch(_layer_kernel_blobs(layer), 0, mem)


def stage_weight_batches(layer, mem: MemoryMap) -> list[WeightImage]:
    """Stage a layer's kernels in as many region-sized batches as needed."""
    blobs = _layer_kernel_blobs(layer)
    return [
        _pack_batch(blobs[i : i + mem.kernel_slots], i, mem)
        for i in range(0, len(blobs), mem.kernel_slots)
    ] or [_pack_batch([], 0, mem)]
