"""Reduced-precision spiking neuron semantics.

Scalar reference implementations of the integrate-and-fire update rules,
the quantized staircase activation, and the closed-form spike-count oracle.
All membrane arithmetic is signed 16-bit and saturating (never wrapping).
These functions are the ground truth the vectorized simulator datapath is
tested against; they are pure and safe to call from any thread.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

I16_MIN = -32768
I16_MAX = 32767


class OracleSaturationError(ValueError):
    """The spike-count oracle would hit 16-bit saturation and is invalid."""


@dataclass(frozen=True)
class NeuronMode:
    """Activation mode of the aggregation core: plain or leaky IF."""

    kind: str = "IF"
    leak_shift: int = 4

    def __post_init__(self):
        if self.kind not in ("IF", "LIF"):
            raise ValueError(f"unknown neuron mode {self.kind!r}")
        if not 0 <= self.leak_shift <= 15:
            raise ValueError(f"leak_shift must be in [0, 15], got {self.leak_shift}")


@dataclass(frozen=True)
class QuantActParams:
    """Staircase activation: `levels` steps of size `step / levels`, saturating at `step`."""

    levels: int
    step: float

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step}")


def sat16(value: int) -> int:
    """Clamp to signed 16-bit range."""
    if value > I16_MAX:
        return I16_MAX
    if value < I16_MIN:
        return I16_MIN
    return value


def heaviside_spike(u: int, theta: int) -> int:
    """Threshold comparison; the boundary u == theta fires.

    Fixing the boundary as firing keeps the reset-by-subtraction
    conservation identity exact.
    """
    if theta <= 0:
        raise ValueError(f"threshold must be positive, got {theta}")
    return 1 if u >= theta else 0


def if_step(u: int, current: int, theta: int) -> tuple[int, int]:
    """One integrate-and-fire update with reset-by-subtraction.

    Returns (spike, next membrane). At most one spike per step; charge
    above the threshold carries over to later steps.
    """
    if theta <= 0:
        raise ValueError(f"threshold must be positive, got {theta}")
    u2 = u + current
    if u2 > I16_MAX:
        u2 = I16_MAX
    elif u2 < I16_MIN:
        u2 = I16_MIN
    if u2 >= theta:
        return 1, u2 - theta
    return 0, u2


def lif_step(u: int, current: int, theta: int, leak_shift: int) -> tuple[int, int]:
    """Leaky variant: decay the stored potential, then integrate-and-fire.

    The leak is multiplier-free: u - (u >> leak_shift) with an arithmetic
    shift, so shift 0 drains the membrane completely each step.
    """
    if not 0 <= leak_shift <= 15:
        raise ValueError(f"leak_shift must be in [0, 15], got {leak_shift}")
    leaked = u - (u >> leak_shift)  # Python >> is arithmetic for negative ints
    return if_step(leaked, current, theta)


def spike_count_oracle(u0: int, current: int, theta: int, steps: int) -> int:
    """Closed-form spike count for a constant-current IF neuron.

    Valid for nonnegative drive with no saturation during the run; raises
    OracleSaturationError otherwise so a silently-wrong count can never be
    used as a test expectation. For current < theta the count has a closed
    form; denser drive falls back to the per-step recursion.
    """
    if theta <= 0:
        raise ValueError(f"threshold must be positive, got {theta}")
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    if current < 0:
        raise ValueError(f"oracle requires nonnegative current, got {current}")
    # Resets only ever subtract, so the reset-free running sum is an upper
    # bound on the membrane; if it stays representable the run cannot saturate.
    if u0 + steps * current > I16_MAX or u0 < I16_MIN:
        raise OracleSaturationError(
            f"u0={u0}, current={current}, steps={steps} would saturate 16-bit state"
        )
    if current < theta:
        return min(max((u0 + steps * current) // theta, 0), steps)
    spikes = 0
    u = u0
    for _ in range(steps):
        s, u = if_step(u, current, theta)
        spikes += s
    return spikes


def quantized_relu(v: float, act: QuantActParams) -> float:
    """L-level staircase activation saturating at the step size.

    Uses floor quantization. The 1e-9 nudge keeps exact level boundaries
    (and re-quantized outputs) on the upper step despite FP rounding, which
    makes the function idempotent on its own outputs.
    """
    n = math.floor(v * act.levels / act.step + 1e-9)
    if n < 0:
        n = 0
    elif n > act.levels:
        n = act.levels
    return act.step * n / act.levels
