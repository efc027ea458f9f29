"""Architectural parameters of the simulated accelerator."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .neurons import NeuronMode

logger = logging.getLogger(__name__)

KERNEL_SLOT_BYTES = 128

# Reference clock and grid of the hardware configuration the cycle model
# is calibrated against.
REFERENCE_CLOCK_HZ = 100_000_000
REFERENCE_PE_COUNT = 64


@dataclass(frozen=True)
class MemoryMap:
    """On-chip buffer capacities in bytes.

    The membrane region is split into two equal ping-pong halves. The
    weight region is organised as fixed 128-byte kernel slots.
    """

    spike_in_bytes: int = 128
    residual_bytes: int = 131072
    membrane_bytes: int = 65536
    weight_bytes: int = 8192
    output_bytes: int = 57344

    @property
    def membrane_half_bytes(self) -> int:
        return self.membrane_bytes // 2

    @property
    def membrane_half_entries(self) -> int:
        # 16-bit membrane words
        return self.membrane_half_bytes // 2

    @property
    def kernel_slots(self) -> int:
        return self.weight_bytes // KERNEL_SLOT_BYTES


@dataclass(frozen=True)
class SiaConfig:
    """Simulation configuration: PE grid, clock, memory map, and model knobs."""

    pe_rows: int = 8
    pe_cols: int = 8
    clock_hz: int = REFERENCE_CLOCK_HZ
    ops_per_pe_cycle: int = 6
    mem: MemoryMap = field(default_factory=MemoryMap)
    mode: NeuronMode = field(default_factory=NeuronMode)
    # Host<->accelerator streaming rate used by the transfer cost model.
    stream_bytes_per_cycle: int = 4
    transfer_model: bool = True
    # When set, aggregation is assumed to pipeline behind the PE array and
    # per-layer totals take max(pe, aggregation) instead of their sum.
    overlap_aggregation: bool = False
    strict: bool = False

    def __post_init__(self):
        if self.pe_rows < 1 or self.pe_cols < 1:
            raise ValueError("PE grid must be at least 1x1")
        if self.clock_hz <= 0:
            raise ValueError("clock_hz must be positive")
        if self.pe_count != REFERENCE_PE_COUNT:
            logger.warning(
                "non-reference PE grid %dx%d (%d PEs); cycle model is calibrated for 64",
                self.pe_rows,
                self.pe_cols,
                self.pe_count,
            )

    @property
    def pe_count(self) -> int:
        return self.pe_rows * self.pe_cols


def peak_throughput(cfg: SiaConfig) -> float:
    """Peak throughput in GOPS: every PE retiring its full op bundle each cycle."""
    return cfg.pe_count * cfg.ops_per_pe_cycle * cfg.clock_hz / 1e9
