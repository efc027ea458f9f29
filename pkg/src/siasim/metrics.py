"""Evaluation artifacts: latency tables, spike-rate profiles, accuracy curves.

All emitters are pure functions of a completed RunReport and produce
byte-stable CSV/JSON so identical runs diff clean. Latency tables keep
compute and host-transfer cycles in separate columns.
"""

from __future__ import annotations

import json

from .config import SiaConfig
from .engine import RunReport, run_network
from .frames import SpikeFrame


def report_json(report: RunReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def report_csv(report: RunReport) -> str:
    lines = [
        "layer,kind,output_dims,neurons,timesteps,pe_busy_cycles,aggregation_cycles,"
        "memory_stall_cycles,total_cycles,counted_ops,spikes_emitted,spike_rate,latency_ms"
    ]
    for s in report.per_layer:
        dims = "x".join(str(d) for d in s.output_dims)
        lines.append(
            f"{s.name},{s.kind},{dims},{s.neurons},{s.timesteps},{s.pe_busy_cycles},"
            f"{s.aggregation_cycles},{s.memory_stall_cycles},{s.total_cycles},"
            f"{s.counted_ops},{s.spikes_emitted},{s.spike_rate:.6f},"
            f"{1e3 * s.latency_s(report.clock_hz):.3f}"
        )
    return "\n".join(lines) + "\n"


def spike_rate_profile(report: RunReport) -> list[tuple[str, float]]:
    """Per-layer spike rates plus the neuron-step weighted network average."""
    rows = [(s.name, s.spike_rate) for s in report.per_layer]
    steps = sum(s.neurons * s.timesteps for s in report.per_layer)
    spikes = sum(s.spikes_emitted for s in report.per_layer)
    rows.append(("network", spikes / steps if steps else 0.0))
    return rows


def spike_rate_csv(report: RunReport) -> str:
    lines = ["layer,spike_rate"]
    lines += [f"{name},{rate:.6f}" for name, rate in spike_rate_profile(report)]
    return "\n".join(lines) + "\n"


def spike_rate_dat(report: RunReport) -> str:
    """gnuplot-friendly: layer index, rate, name."""
    rows = spike_rate_profile(report)[:-1]
    lines = ["# layer_index spike_rate name"]
    lines += [f"{i} {rate:.6f} {name}" for i, (name, rate) in enumerate(rows)]
    return "\n".join(lines) + "\n"


def latency_table(report: RunReport, clock_hz: int | None = None) -> list[dict]:
    """Per-layer latency rows in execution order, milliseconds at the given clock."""
    clock = clock_hz or report.clock_hz
    rows = []
    for s in report.per_layer:
        compute = s.pe_busy_cycles + s.aggregation_cycles
        rows.append(
            {
                "layer": s.name,
                "output_size": "x".join(str(d) for d in s.output_dims),
                "cycles": s.total_cycles,
                "compute_ms": 1e3 * compute / clock,
                "transfer_ms": 1e3 * s.memory_stall_cycles / clock,
                "total_ms": 1e3 * s.total_cycles / clock,
            }
        )
    return rows


def latency_csv(report: RunReport, clock_hz: int | None = None) -> str:
    lines = ["layer,output_size,cycles,compute_ms,transfer_ms,total_ms"]
    for row in latency_table(report, clock_hz):
        lines.append(
            f"{row['layer']},{row['output_size']},{row['cycles']},"
            f"{row['compute_ms']:.3f},{row['transfer_ms']:.3f},{row['total_ms']:.3f}"
        )
    return "\n".join(lines) + "\n"


def accuracy_curve(
    net,
    dataset: list[tuple[SpikeFrame, int]],
    t_values: list[int],
    cfg: SiaConfig,
) -> list[tuple[int, float]]:
    """Classification accuracy as a function of encoding timesteps.

    Inputs are constant-rate encoded: each base frame repeats for T steps.
    Prediction is the argmax of accumulated output spike counts, ties going
    to the lowest class index.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    curve = []
    for t in t_values:
        if t < 1:
            raise ValueError(f"timestep counts must be >= 1, got {t}")
        correct = 0
        for frame, label in dataset:
            report = run_network(net, [frame] * t, cfg)
            correct += int(report.predicted_class == label)
        curve.append((t, correct / len(dataset)))
    return curve


def accuracy_csv(curve: list[tuple[int, float]]) -> str:
    lines = ["timesteps,accuracy"]
    lines += [f"{t},{acc:.6f}" for t, acc in curve]
    return "\n".join(lines) + "\n"


def accuracy_dat(curve: list[tuple[int, float]]) -> str:
    lines = ["# timesteps accuracy"]
    lines += [f"{t} {acc:.6f}" for t, acc in curve]
    return "\n".join(lines) + "\n"
