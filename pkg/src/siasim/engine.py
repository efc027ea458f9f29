"""Layer-sequential execution engine with cycle accounting.

Functional model: integer spike-weight accumulation (exactly the PE mux
datapath, vectorized), fixed-point batchnorm and bias in the aggregation
core, then the IF/LIF membrane update against the layer threshold, with
membrane state round-tripping through a ping-pong bank each timestep.

Cycle model: each PE-array pass computes one 8x8 spatial tile of one
output channel for one input channel, so a convolution costs
ceil(oh/8) * ceil(ow/8) * out_ch * in_ch window-schedules. Fully connected
layers run as one output neuron per PE at three synapses per cycle.
Aggregation costs one cycle per output neuron and host streaming is
charged at a configurable bytes-per-cycle rate, kept in a separate stall
counter so functional results never depend on it.

Layers execute to completion over all timesteps before the next layer
starts, mirroring the stream-layer-then-compute flow of the hardware; the
result is identical to a timestep-outer schedule.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import SiaConfig
from .convert import QuantizedLayer
from .frames import SpikeFrame
from .memory import CapacityError, PingPongBank, ProtocolViolation, stage_weight_batches
from .neurons import I16_MAX, I16_MIN, if_step, lif_step, sat16
from .pe import MUX_LANES, cycles_per_window

logger = logging.getLogger(__name__)

CYCLE_MODEL = "row-pass-3mux"


class DimensionError(ValueError):
    """Layer and input spike dimensions disagree."""


@dataclass
class LayerStats:
    """Cycle-ledger entry and spike accounting for one layer."""

    name: str
    kind: str
    output_dims: tuple[int, int, int]
    neurons: int
    timesteps: int = 0
    pe_busy_cycles: int = 0
    aggregation_cycles: int = 0
    memory_stall_cycles: int = 0
    total_cycles: int = 0
    counted_ops: int = 0
    spikes_emitted: int = 0

    def add(self, other: "LayerStats") -> None:
        self.timesteps += other.timesteps
        self.pe_busy_cycles += other.pe_busy_cycles
        self.aggregation_cycles += other.aggregation_cycles
        self.memory_stall_cycles += other.memory_stall_cycles
        self.total_cycles += other.total_cycles
        self.counted_ops += other.counted_ops
        self.spikes_emitted += other.spikes_emitted

    @property
    def spike_rate(self) -> float:
        steps = self.neurons * self.timesteps
        return self.spikes_emitted / steps if steps else 0.0

    def latency_s(self, clock_hz: int) -> float:
        return self.total_cycles / clock_hz

    def to_dict(self, clock_hz: int) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "output_dims": list(self.output_dims),
            "neurons": self.neurons,
            "timesteps": self.timesteps,
            "pe_busy_cycles": self.pe_busy_cycles,
            "aggregation_cycles": self.aggregation_cycles,
            "memory_stall_cycles": self.memory_stall_cycles,
            "total_cycles": self.total_cycles,
            "counted_ops": self.counted_ops,
            "spikes_emitted": self.spikes_emitted,
            "spike_rate": self.spike_rate,
            "latency_s": self.latency_s(clock_hz),
        }


@dataclass
class RunReport:
    """Everything a completed run exposes for reporting."""

    timesteps: int
    clock_hz: int
    pe_count: int
    transfer_model: bool
    cycle_model: str
    ops_per_pe_cycle: int = 6
    per_layer: list[LayerStats] = field(default_factory=list)
    output_spike_counts: list[int] = field(default_factory=list)

    @property
    def total_cycles(self) -> int:
        return sum(s.total_cycles for s in self.per_layer)

    @property
    def latency_s(self) -> float:
        return self.total_cycles / self.clock_hz

    @property
    def counted_ops(self) -> int:
        return sum(s.counted_ops for s in self.per_layer)

    @property
    def effective_gops(self) -> float:
        return self.counted_ops / self.latency_s / 1e9 if self.total_cycles else 0.0

    @property
    def peak_gops(self) -> float:
        return self.pe_count * self.ops_per_pe_cycle * self.clock_hz / 1e9

    @property
    def predicted_class(self) -> int:
        if not self.output_spike_counts:
            return -1
        # np.argmax breaks ties toward the lowest class index.
        return int(np.argmax(np.asarray(self.output_spike_counts)))

    def to_dict(self) -> dict:
        peak = self.peak_gops
        return {
            "timesteps": self.timesteps,
            "clock_hz": self.clock_hz,
            "pe_count": self.pe_count,
            "transfer_model": self.transfer_model,
            "cycle_model": self.cycle_model,
            "per_layer": [s.to_dict(self.clock_hz) for s in self.per_layer],
            "totals": {
                "total_cycles": self.total_cycles,
                "latency_s": self.latency_s,
                "counted_ops": self.counted_ops,
                "effective_gops": self.effective_gops,
                "peak_gops": peak,
                "pe_efficiency_gops": peak / self.pe_count if self.pe_count else 0.0,
                "utilization": self.effective_gops / peak if peak else 0.0,
            },
            "output_spike_counts": self.output_spike_counts,
            "predicted_class": self.predicted_class,
        }


def rshift_round(value, bits: int):
    """Arithmetic right shift with round-half-up bias; works on ints and arrays."""
    if bits == 0:
        return value
    return (value + (1 << (bits - 1))) >> bits


def aggregate(
    psum: int,
    layer: QuantizedLayer,
    u_prev: int,
    residual: Optional[int] = None,
    channel: int = 0,
) -> tuple[int, int]:
    """Aggregation-core step for one neuron.

    Host-provided residual partial sums add in before batchnorm; the bias
    adds after it, and the combined drive feeds the membrane update.
    """
    acc = sat16(psum + (residual if residual is not None else 0))
    g = int(layer.g_fx[channel])
    const = int(layer.h_fx[channel]) + int(layer.bias_fx[channel])
    bn = rshift_round(acc * g, layer.frac_g) + rshift_round(const, layer.frac_h)
    bn = sat16(bn)
    if layer.mode.kind == "LIF":
        return lif_step(u_prev, bn, layer.theta, layer.mode.leak_shift)
    return if_step(u_prev, bn, layer.theta)


def _sat16_array(values: np.ndarray) -> np.ndarray:
    return np.clip(values, I16_MIN, I16_MAX)


def _conv_psums(bits: np.ndarray, w_i8: np.ndarray, stride: int, pad: int) -> np.ndarray:
    c = bits.shape[0]
    out_ch, _, k, _ = w_i8.shape
    padded = np.pad(bits, ((0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    oh, ow = win.shape[1], win.shape[2]
    cols = win.transpose(1, 2, 0, 3, 4).reshape(oh * ow, c * k * k).astype(np.int64)
    wmat = w_i8.reshape(out_ch, c * k * k).astype(np.int64)
    return (cols @ wmat.T).T.reshape(out_ch, oh, ow)


def conv_output_dims(layer: QuantizedLayer, in_dims: tuple[int, int, int]) -> tuple[int, int, int]:
    _, h, w = in_dims
    k, s = layer.kernel, layer.stride
    pad = k // 2  # same-padding with zero spikes
    oh = (h + 2 * pad - k) // s + 1
    ow = (w + 2 * pad - k) // s + 1
    return (layer.out_channels, oh, ow)


def layer_output_dims(layer: QuantizedLayer, in_dims: tuple[int, int, int]) -> tuple[int, int, int]:
    if layer.kind == "conv":
        return conv_output_dims(layer, in_dims)
    if layer.kind == "fc":
        return (layer.weights_i8.shape[0], 1, 1)
    if layer.kind in ("avgpool", "maxpool"):
        c, h, w = in_dims
        p = layer.pool
        return (c, h // p, w // p)
    return in_dims


def _check_layer_fits(layer: QuantizedLayer, out_dims: tuple[int, int, int], cfg: SiaConfig) -> None:
    _, oh, ow = out_dims
    # The membrane region streams one output-channel map at a time; a map
    # that cannot fit a ping-pong half cannot be scheduled at all.
    channel_map = oh * ow if layer.kind == "conv" else out_dims[0]
    if channel_map > cfg.mem.membrane_half_entries:
        raise CapacityError(
            f"{layer.name}: {channel_map} membrane words per channel map exceed "
            f"a ping-pong half of {cfg.mem.membrane_half_entries}"
        )
    out_bytes = (out_dims[0] * oh * ow + 7) // 8
    if out_bytes > cfg.mem.output_bytes:
        raise CapacityError(
            f"{layer.name}: {out_bytes} output spike bytes per timestep exceed "
            f"the {cfg.mem.output_bytes}-byte output region"
        )


def _pe_cost(layer: QuantizedLayer, in_dims, out_dims, cfg: SiaConfig) -> tuple[int, int]:
    """(pe_busy_cycles, counted_ops) for one timestep of one layer."""
    if layer.kind == "conv":
        in_ch = in_dims[0]
        out_ch, oh, ow = out_dims
        k = layer.kernel
        passes = math.ceil(oh / cfg.pe_rows) * math.ceil(ow / cfg.pe_cols) * out_ch * in_ch
        busy = passes * cycles_per_window(k)
        accumulate_cycles = k * math.ceil(k / MUX_LANES)
        ops = cfg.ops_per_pe_cycle * accumulate_cycles * oh * ow * out_ch * in_ch
        return busy, ops
    out_n, in_n = layer.weights_i8.shape
    passes = math.ceil(out_n / cfg.pe_count)
    busy = passes * (math.ceil(in_n / MUX_LANES) + 1)
    ops = cfg.ops_per_pe_cycle * math.ceil(in_n / MUX_LANES) * out_n
    return busy, ops


def _stream_cycles(nbytes: int, cfg: SiaConfig) -> int:
    return math.ceil(nbytes / cfg.stream_bytes_per_cycle)


def run_layer(
    layer: QuantizedLayer,
    in_spikes: SpikeFrame,
    states: PingPongBank,
    cfg: SiaConfig,
    residual: Optional[np.ndarray] = None,
    stage_weights: bool = True,
) -> tuple[SpikeFrame, LayerStats]:
    """Execute one timestep of one compute layer.

    Reads previous potentials from the bank's read half, writes updated
    potentials to the write half, and returns the output spikes plus the
    cycle-ledger entry for this step. The caller toggles the bank at
    timestep boundaries.
    """
    if not layer.is_compute:
        raise DimensionError(f"{layer.name}: kind {layer.kind!r} runs on the host, not the array")
    in_dims = in_spikes.dims
    if layer.kind == "conv":
        if in_dims[0] != layer.weights_i8.shape[1]:
            raise DimensionError(
                f"{layer.name}: expects {layer.weights_i8.shape[1]} input channels, "
                f"frame has {in_dims[0]}"
            )
    else:
        wanted = layer.weights_i8.shape[1]
        if in_spikes.bit_count != wanted:
            raise DimensionError(
                f"{layer.name}: expects {wanted} inputs, frame has {in_spikes.bit_count}"
            )
    out_dims = layer_output_dims(layer, in_dims)
    _check_layer_fits(layer, out_dims, cfg)
    n_neurons = int(np.prod(out_dims))

    if layer.kind == "conv":
        psum = _conv_psums(in_spikes.data, layer.weights_i8, layer.stride, layer.kernel // 2)
    else:
        psum = (
            layer.weights_i8.astype(np.int64) @ in_spikes.data.reshape(-1).astype(np.int64)
        ).reshape(out_dims)

    if residual is not None:
        residual = np.asarray(residual, dtype=np.int64)
        if residual.shape != psum.shape:
            raise DimensionError(
                f"{layer.name}: residual shape {residual.shape} != psum shape {psum.shape}"
            )
        if residual.size * 2 > cfg.mem.residual_bytes:
            raise CapacityError(
                f"{layer.name}: residual of {residual.size * 2} bytes exceeds "
                f"the {cfg.mem.residual_bytes}-byte residual region"
            )
        psum = psum + residual
    acc = _sat16_array(psum)

    g = layer.g_fx.astype(np.int64).reshape(-1, 1, 1)
    const = layer.h_fx.astype(np.int64) + layer.bias_fx.astype(np.int64)
    const = rshift_round(const, layer.frac_h).reshape(-1, 1, 1)
    bn = _sat16_array(rshift_round(acc * g, layer.frac_g) + const)

    u_prev = states.read_membranes(n_neurons).astype(np.int64).reshape(out_dims)
    if layer.mode.kind == "LIF":
        u_prev = u_prev - (u_prev >> layer.mode.leak_shift)
    u2 = _sat16_array(u_prev + bn)
    spikes = (u2 >= layer.theta).astype(np.uint8)
    u_next = u2 - layer.theta * spikes.astype(np.int64)
    states.write_membranes(u_next.reshape(-1).astype(np.int16))

    out = SpikeFrame(spikes)
    busy, ops = _pe_cost(layer, in_dims, out_dims, cfg)
    agg = n_neurons
    stall = 0
    if cfg.transfer_model:
        stall += _stream_cycles(in_spikes.packed_nbytes, cfg)
        stall += _stream_cycles(out.packed_nbytes, cfg)
        if residual is not None:
            stall += _stream_cycles(residual.size * 2, cfg)
        if stage_weights:
            batches = stage_weight_batches(layer, cfg.mem)
            stall += _stream_cycles(sum(s.nbytes for b in batches for s in b.slots), cfg)
    elif stage_weights:
        # Capacity validation still applies when transfer costs are off.
        stage_weight_batches(layer, cfg.mem)
    if cfg.overlap_aggregation:
        total = max(busy, agg) + stall
    else:
        total = busy + agg + stall
    stats = LayerStats(
        name=layer.name,
        kind=layer.kind,
        output_dims=out_dims,
        neurons=n_neurons,
        timesteps=1,
        pe_busy_cycles=busy,
        aggregation_cycles=agg,
        memory_stall_cycles=stall,
        total_cycles=total,
        counted_ops=ops,
        spikes_emitted=out.count(),
    )
    return out, stats


def _host_pool(layer: QuantizedLayer, frame: SpikeFrame, state: Optional[np.ndarray]):
    """Host-side pooling: OR for max, unit-weight IF with theta=p*p for average."""
    p = layer.pool
    c, h, w = frame.dims
    win = np.lib.stride_tricks.sliding_window_view(frame.data, (p, p), axis=(1, 2))
    win = win[:, ::p, ::p]
    if layer.kind == "maxpool":
        out = win.max(axis=(3, 4)).astype(np.uint8)
        return SpikeFrame(out), state
    sums = win.sum(axis=(3, 4), dtype=np.int64)
    if state is None:
        state = np.zeros(sums.shape, dtype=np.int64)
    state = state + sums
    spikes = (state >= p * p).astype(np.uint8)
    state = state - (p * p) * spikes.astype(np.int64)
    return SpikeFrame(spikes), state


def run_network(
    net: list[QuantizedLayer],
    frames: list[SpikeFrame],
    cfg: SiaConfig,
    residuals: Optional[dict[int, np.ndarray]] = None,
) -> RunReport:
    """Run a converted network over a T-timestep spike input.

    `residuals`, when given, maps a layer index to a (T, out_ch, oh, ow)
    array of host-precomputed partial sums injected before batchnorm at
    that layer. Deterministic: identical inputs produce identical reports.
    """
    timesteps = len(frames)
    if timesteps < 1:
        raise ValueError("need at least one input timestep")
    dims = frames[0].dims
    if any(f.dims != dims for f in frames):
        raise DimensionError("input frames must share one shape")
    residuals = residuals or {}

    report = RunReport(
        timesteps=timesteps,
        clock_hz=cfg.clock_hz,
        pe_count=cfg.pe_count,
        transfer_model=cfg.transfer_model,
        cycle_model=CYCLE_MODEL,
        ops_per_pe_cycle=cfg.ops_per_pe_cycle,
    )
    current = list(frames)
    for index, layer in enumerate(net):
        in_dims = current[0].dims
        out_dims = layer_output_dims(layer, in_dims)
        n_neurons = int(np.prod(out_dims))
        totals = LayerStats(layer.name, layer.kind, out_dims, n_neurons)
        layer_res = residuals.get(index)
        if layer_res is not None and len(layer_res) != timesteps:
            raise DimensionError(
                f"{layer.name}: residuals cover {len(layer_res)} of {timesteps} timesteps"
            )

        if not layer.is_compute:
            # Pooling and residual markers execute on the host and cost no
            # accelerator cycles; residual merging itself happens through
            # psum injection at the downstream compute layer.
            pool_state = None
            outputs = []
            for t in range(timesteps):
                if layer.kind in ("avgpool", "maxpool"):
                    frame, pool_state = _host_pool(layer, current[t], pool_state)
                else:
                    frame = current[t]
                totals.timesteps += 1
                totals.spikes_emitted += frame.count()
                outputs.append(frame)
            report.per_layer.append(totals)
            current = outputs
            continue

        bank = PingPongBank(n_neurons)
        outputs = []
        last_written: Optional[np.ndarray] = None
        for t in range(timesteps):
            if cfg.strict and last_written is not None:
                readback = bank.read_membranes(n_neurons)
                if not np.array_equal(readback, last_written):
                    raise ProtocolViolation(
                        f"{layer.name}: membrane readback at step {t} does not match "
                        f"the values written at step {t - 1}"
                    )
            try:
                frame, stats = run_layer(
                    layer,
                    current[t],
                    bank,
                    cfg,
                    residual=None if layer_res is None else layer_res[t],
                    stage_weights=(t == 0),
                )
            except (CapacityError, DimensionError) as exc:
                raise type(exc)(f"layer {index} timestep {t}: {exc}") from exc
            last_written = bank.halves[bank.write_half_index][:n_neurons].copy()
            bank.tick()
            totals.add(stats)
            outputs.append(frame)
        if cfg.strict:
            bank.assert_clean()
        elif bank.conflicts:
            logger.warning("%s: %d ping-pong protocol conflicts", layer.name, bank.conflicts)
        report.per_layer.append(totals)
        current = outputs

    counts = np.zeros(int(np.prod(current[0].dims)), dtype=np.int64)
    for frame in current:
        counts += frame.data.reshape(-1)
    report.output_spike_counts = [int(x) for x in counts]
    return report


__all__ = [
    "CYCLE_MODEL",
    "DimensionError",
    "LayerStats",
    "RunReport",
    "aggregate",
    "conv_output_dims",
    "layer_output_dims",
    "rshift_round",
    "run_layer",
    "run_network",
]
