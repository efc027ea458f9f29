"""Conversion of pre-trained ANN parameters into executable spiking layers.

Pipeline per layer: quantize weights to INT8 with a per-layer scale,
fold batch normalization into affine (G, H) coefficients, encode the
coefficients as 16-bit fixed point, and replace the staircase activation
with an integrate-and-fire threshold.

Scale chain. One input spike to a layer carries `input_scale` of real
activation; the layer's own outputs carry `step / levels` each. The
simulator keeps membranes in raw weight-accumulation units (one LSB equals
`q_w * input_scale` of real value), so the datapath multiplier is the fold
coefficient with the weight scale divided back out, per-step constants are
divided by `levels * q_w * input_scale`, and the threshold becomes
`step / (levels * q_w * input_scale)`. With that chain, a constant-rate
input driven for `levels` timesteps reproduces the staircase activation
level exactly, independent of the actual timestep count used at inference.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .neurons import I16_MAX, I16_MIN, NeuronMode, QuantActParams

logger = logging.getLogger(__name__)

SATURATION_WARN_FRACTION = 0.01


class ConversionError(ValueError):
    """A layer could not be converted; carries the layer index when known."""


class ThresholdUnderflowError(ConversionError):
    """The integer threshold rounded to zero or below."""


@dataclass(frozen=True)
class BatchNormStats:
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if np.any(np.asarray(self.var) < 0):
            raise ValueError("negative batchnorm variance")


@dataclass(frozen=True)
class AnnLayerParams:
    """One pre-trained layer as exported from the training framework.

    `kind` is one of conv / fc / avgpool / maxpool / residual_add. Weight
    layout is (out_ch, in_ch, k, k) for conv and (out, in) for fc. The bias
    is applied after batch normalization, matching the aggregation core.
    """

    kind: str
    weights: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    bn: Optional[BatchNormStats] = None
    act: Optional[QuantActParams] = None
    kernel: int = 0
    stride: int = 1
    pool: int = 0
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("conv", "fc", "avgpool", "maxpool", "residual_add"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv":
            if self.weights is None or self.weights.ndim != 4:
                raise ValueError("conv layer needs (out_ch, in_ch, k, k) weights")
            if self.weights.shape[2] != self.kernel or self.weights.shape[3] != self.kernel:
                raise ValueError("conv weight shape disagrees with kernel size")
        if self.kind == "fc" and (self.weights is None or self.weights.ndim != 2):
            raise ValueError("fc layer needs (out, in) weights")
        if self.kind in ("avgpool", "maxpool") and self.pool < 1:
            raise ValueError("pool layers need a positive window size")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0] if self.weights is not None else 0


@dataclass(frozen=True)
class QuantizedLayer:
    """One network layer as the accelerator executes it.

    g_fx / h_fx / bias_fx are per-output-channel 16-bit fixed-point vectors
    at frac_g / frac_h fractional bits; theta is an integer threshold in raw
    accumulation units. Pooling and residual markers carry no weights and
    cost no accelerator cycles.
    """

    kind: str
    name: str
    weights_i8: Optional[np.ndarray] = None
    q_w: float = 1.0
    g_fx: Optional[np.ndarray] = None
    h_fx: Optional[np.ndarray] = None
    bias_fx: Optional[np.ndarray] = None
    frac_g: int = 8
    frac_h: int = 8
    theta: int = 1
    mode: NeuronMode = field(default_factory=NeuronMode)
    act: Optional[QuantActParams] = None
    kernel: int = 0
    stride: int = 1
    pool: int = 0
    input_scale: float = 1.0
    weight_saturation: float = 0.0

    def __post_init__(self):
        if self.kind in ("conv", "fc"):
            if self.theta <= 0:
                raise ValueError(f"threshold must be positive, got {self.theta}")
            if self.weights_i8 is None:
                raise ValueError(f"{self.kind} layer needs INT8 weights")

    @property
    def out_channels(self) -> int:
        return self.weights_i8.shape[0] if self.weights_i8 is not None else 0

    @property
    def is_compute(self) -> bool:
        return self.kind in ("conv", "fc")


def quantize_weights(weights: np.ndarray, q_w: float) -> np.ndarray:
    """Quantize real weights to INT8 by w / q_w, rounding half away from zero."""
    if not q_w > 0:
        raise ValueError(f"weight scale must be positive, got {q_w}")
    scaled = np.asarray(weights, dtype=np.float64) / q_w
    rounded = np.trunc(scaled + np.copysign(0.5, scaled))
    clipped = np.clip(rounded, -128, 127)
    sat = weight_saturation_fraction(weights, q_w)
    if sat > SATURATION_WARN_FRACTION:
        logger.warning("weight quantization clipped %.2f%% of elements", 100 * sat)
    return clipped.astype(np.int8)


def weight_saturation_fraction(weights: np.ndarray, q_w: float) -> float:
    scaled = np.asarray(weights, dtype=np.float64) / q_w
    rounded = np.trunc(scaled + np.copysign(0.5, scaled))
    if rounded.size == 0:
        return 0.0
    return float(np.mean((rounded < -128) | (rounded > 127)))


def fold_batchnorm(layer: AnnLayerParams, q_w: float) -> tuple[np.ndarray, np.ndarray]:
    """Fold batchnorm into (G, H) so that y_int * G + H == batchnorm(y_int * q_w).

    y_int is the integer weight accumulation and y_int * q_w the real
    pre-activation. Layers without batchnorm fold to the identity
    (G = q_w, H = 0).
    """
    if not q_w > 0:
        raise ValueError(f"weight scale must be positive, got {q_w}")
    out_ch = layer.out_channels
    if layer.bn is None:
        return np.full(out_ch, q_w, dtype=np.float64), np.zeros(out_ch, dtype=np.float64)
    bn = layer.bn
    denom_sq = np.asarray(bn.var, dtype=np.float64) + bn.eps
    if np.any(denom_sq <= 0):
        raise ConversionError("batchnorm variance + eps must be positive")
    denom = np.sqrt(denom_sq)
    gamma = np.asarray(bn.gamma, dtype=np.float64)
    g = gamma * q_w / denom
    h = np.asarray(bn.beta, dtype=np.float64) - np.asarray(bn.mean, dtype=np.float64) * gamma / denom
    return g, h


def to_fixed_point(values, frac_bits: int) -> np.ndarray:
    """Encode reals as 16-bit fixed point with round-half-even, clipping at the rails."""
    if not 0 <= frac_bits <= 15:
        raise ValueError(f"frac_bits must be in [0, 15], got {frac_bits}")
    scaled = np.rint(np.asarray(values, dtype=np.float64) * (1 << frac_bits))
    clipped = np.clip(scaled, I16_MIN, I16_MAX)
    n_clip = int(np.sum(scaled != clipped))
    if n_clip:
        logger.warning("%d fixed-point values clipped to the 16-bit range", n_clip)
    return clipped.astype(np.int16)


def _fit_frac_bits(values: np.ndarray, requested: int) -> int:
    """Largest fractional-bit count <= requested that avoids 16-bit clipping."""
    mag = float(np.max(np.abs(values))) if np.asarray(values).size else 0.0
    frac = requested
    while frac > 0 and mag * (1 << frac) > I16_MAX:
        frac -= 1
    return frac


def assign_threshold(act: QuantActParams, q_w: float, input_scale: float) -> int:
    """Integer firing threshold in raw accumulation units.

    One output spike stands for step/levels of real activation; dividing by
    the raw-unit value q_w * input_scale expresses that in membrane LSBs.
    """
    if not q_w > 0 or not input_scale > 0:
        raise ValueError("scales must be positive")
    theta = int(to_fixed_point(act.step / (act.levels * q_w * input_scale), 0)[()])
    if theta <= 0:
        raise ThresholdUnderflowError(
            f"threshold {act.step}/({act.levels}*{q_w}*{input_scale}) rounds to {theta}"
        )
    return theta


def convert_network(
    layers: list[AnnLayerParams],
    scales: list[float],
    timesteps: int = 8,
    input_scale: float = 1.0,
    mode: NeuronMode | None = None,
    frac_g: int = 8,
    frac_h: int = 8,
) -> list[QuantizedLayer]:
    """Convert a trained parameter stack into accelerator-executable layers.

    `scales` supplies the per-layer weight quantization scale for compute
    layers (pooling / residual markers take a placeholder). `timesteps` is
    recorded as the network's default encoding length; the conversion math
    itself does not depend on it.
    """
    if timesteps < 1:
        raise ValueError(f"timesteps must be >= 1, got {timesteps}")
    if len(scales) != len(layers):
        raise ValueError(f"{len(layers)} layers but {len(scales)} weight scales")
    mode = mode or NeuronMode()

    converted: list[QuantizedLayer] = []
    q_in = input_scale
    prev_channels: Optional[int] = None
    for index, layer in enumerate(layers):
        name = layer.name or f"{layer.kind}{index}"
        try:
            if layer.kind not in ("conv", "fc"):
                converted.append(
                    QuantizedLayer(kind=layer.kind, name=name, pool=layer.pool, input_scale=q_in)
                )
                continue
            if layer.act is None:
                raise ConversionError("compute layer missing activation parameters")
            if (
                layer.kind == "conv"
                and prev_channels is not None
                and layer.weights.shape[1] != prev_channels
            ):
                raise ConversionError(
                    f"expects {layer.weights.shape[1]} input channels, "
                    f"previous layer emits {prev_channels}"
                )
            q_w = float(scales[index])
            w_i8 = quantize_weights(layer.weights, q_w)
            g, h = fold_batchnorm(layer, q_w)
            # Raw-unit datapath: divide the weight scale back out of G and
            # express the per-step constants in membrane LSBs. The BN
            # constant and the post-BN bias inject 1/levels of their total
            # every timestep.
            step_unit = layer.act.levels * q_w * q_in
            g_dp = g / q_w
            h_dp = h / step_unit
            bias = (
                np.asarray(layer.bias, dtype=np.float64)
                if layer.bias is not None
                else np.zeros(layer.out_channels)
            )
            bias_dp = bias / step_unit
            theta = assign_threshold(layer.act, q_w, q_in)
            # Coefficients must fit the 16-bit registers; drop fractional
            # bits per layer rather than clip, which would corrupt channels.
            fg = _fit_frac_bits(g_dp, frac_g)
            fh = _fit_frac_bits(np.concatenate([h_dp, bias_dp]), frac_h)
            if (fg, fh) != (frac_g, frac_h):
                logger.info("%s: fractional bits narrowed to g=%d, h=%d", name, fg, fh)
            converted.append(
                QuantizedLayer(
                    kind=layer.kind,
                    name=name,
                    weights_i8=w_i8,
                    q_w=q_w,
                    g_fx=to_fixed_point(g_dp, fg),
                    h_fx=to_fixed_point(h_dp, fh),
                    bias_fx=to_fixed_point(bias_dp, fh),
                    frac_g=fg,
                    frac_h=fh,
                    theta=theta,
                    mode=mode,
                    act=layer.act,
                    kernel=layer.kernel,
                    stride=layer.stride,
                    input_scale=q_in,
                    weight_saturation=weight_saturation_fraction(layer.weights, q_w),
                )
            )
            q_in = layer.act.step / layer.act.levels
            if layer.kind == "conv":
                prev_channels = layer.out_channels
            else:
                prev_channels = None
        except ConversionError as exc:
            raise ConversionError(f"layer {index} ({name}): {exc}") from exc
        except ValueError as exc:
            raise ConversionError(f"layer {index} ({name}): {exc}") from exc
    return converted
