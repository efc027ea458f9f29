"""Processing-element datapath: multiplier-free spike-weight accumulation.

Each PE holds three weight registers feeding three multiplexers and one
adder. A spike bit selects between its weight and zero, so a kernel row is
consumed three synapses per clock cycle. Wider rows take multiple passes;
one extra cycle hands the finished partial sum to the aggregation core.
"""

from __future__ import annotations

from dataclasses import dataclass

from .neurons import sat16

MUX_LANES = 3
SUPPORTED_KERNEL_SIZES = (1, 3, 5, 7, 11)


@dataclass(frozen=True)
class PeState:
    """Accumulator and staged weight registers of one PE."""

    psum: int = 0
    w1: int = 0
    w2: int = 0
    w3: int = 0


def pe_row_accumulate(state: PeState, spikes, weights) -> PeState:
    """One PE clock cycle: mux-select up to three weights and accumulate.

    The partial sum saturates at the 16-bit bounds instead of wrapping.
    """
    if len(spikes) != MUX_LANES or len(weights) != MUX_LANES:
        raise ValueError(f"PE consumes exactly {MUX_LANES} synapses per cycle")
    acc = state.psum
    for s, w in zip(spikes, weights):
        acc += int(w) if s else 0
    return PeState(sat16(acc), int(weights[0]), int(weights[1]), int(weights[2]))


def cycles_per_window(k: int) -> int:
    """PE cycles to convolve one k x k window: per-row mux passes plus handoff."""
    if k not in SUPPORTED_KERNEL_SIZES:
        raise ValueError(f"unsupported kernel size {k}; supported: {SUPPORTED_KERNEL_SIZES}")
    return k * ((k + MUX_LANES - 1) // MUX_LANES) + 1


def pe_convolve_window(spike_window, kernel) -> tuple[int, int]:
    """Convolve one binary window with an INT8 kernel on a single PE.

    Returns (psum, cycles). The partial sum is the exact integer dot
    product; the cycle count is independent of spike content because the
    event-driven selection happens inside the fixed mux schedule.
    """
    k = len(spike_window)
    cycles = cycles_per_window(k)
    if len(kernel) != k:
        raise ValueError("kernel and spike window sizes differ")
    state = PeState()
    for row, wrow in zip(spike_window, kernel):
        if len(row) != k or len(wrow) != k:
            raise ValueError("ragged window or kernel row")
        for start in range(0, k, MUX_LANES):
            sbits = [0, 0, 0]
            wvals = [0, 0, 0]
            for lane in range(MUX_LANES):
                col = start + lane
                if col < k:
                    sbits[lane] = int(row[col])
                    wvals[lane] = int(wrow[col])
            state = pe_row_accumulate(state, sbits, wvals)
    return state.psum, cycles
