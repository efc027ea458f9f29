"""Seeded synthetic networks, inputs, and the real-arithmetic reference forward.

Everything here is deterministic given the RNG seed, so tests and CLI
benchmarks run with zero external data. The reference forward evaluates
the quantized network in FP64 (dequantized INT8 weights, exact batchnorm,
staircase activations); the spiking engine is expected to approach it as
the encoding window grows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .convert import (
    AnnLayerParams,
    BatchNormStats,
    QuantizedLayer,
    convert_network,
    quantize_weights,
)
from .frames import SpikeFrame
from .neurons import NeuronMode, QuantActParams


@dataclass(frozen=True)
class ToyModel:
    """A generated parameter stack plus the encoding it was calibrated for."""

    layers: list[AnnLayerParams]
    scales: list[float]
    input_scale: float
    in_dims: tuple[int, int, int]

    def forward(self, frame: SpikeFrame) -> np.ndarray:
        return quantized_ann_forward(self.layers, self.scales, frame, self.input_scale)

    def convert(self, timesteps: int = 8, **kwargs) -> list[QuantizedLayer]:
        return convert_network(
            self.layers, self.scales, timesteps=timesteps,
            input_scale=self.input_scale, **kwargs,
        )


def random_frames(rng: np.random.Generator, dims, timesteps: int, rate: float = 0.5):
    return [
        SpikeFrame((rng.random(dims) < rate).astype(np.uint8)) for _ in range(timesteps)
    ]


def constant_frames(frame: SpikeFrame, timesteps: int) -> list[SpikeFrame]:
    return [frame] * timesteps


def _qrelu_array(v: np.ndarray, act: QuantActParams) -> np.ndarray:
    n = np.floor(v * act.levels / act.step + 1e-9)
    return np.clip(n, 0, act.levels) * act.step / act.levels


def _conv2d_same(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    k = w.shape[2]
    pad = k // 2
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    return np.einsum("cijkl,ockl->oij", win, w)


def _pool(x: np.ndarray, p: int, kind: str) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(x, (p, p), axis=(1, 2))[:, ::p, ::p]
    if kind == "maxpool":
        return win.max(axis=(3, 4))
    return win.mean(axis=(3, 4))


def _forward_layer(layer: AnnLayerParams, q_w: float, a: np.ndarray) -> np.ndarray:
    """One layer of the quantized reference network on real activations."""
    if layer.kind in ("avgpool", "maxpool"):
        return _pool(a, layer.pool, layer.kind)
    if layer.kind == "residual_add":
        return a
    w_deq = quantize_weights(layer.weights, q_w).astype(np.float64) * q_w
    if layer.kind == "conv":
        v = _conv2d_same(a, w_deq, layer.stride)
    else:
        v = w_deq @ a.reshape(-1)
    if layer.bn is not None:
        denom = np.sqrt(np.asarray(layer.bn.var, dtype=np.float64) + layer.bn.eps)
        shape = (-1, 1, 1) if v.ndim == 3 else (-1,)
        v = (v - layer.bn.mean.reshape(shape)) / denom.reshape(shape) * layer.bn.gamma.reshape(
            shape
        ) + layer.bn.beta.reshape(shape)
    if layer.bias is not None:
        v = v + layer.bias.reshape((-1, 1, 1) if v.ndim == 3 else (-1,))
    return _qrelu_array(v, layer.act)


def quantized_ann_forward(
    layers: list[AnnLayerParams],
    scales: list[float],
    frame: SpikeFrame,
    input_scale: float = 1.0,
) -> np.ndarray:
    """Reference output activations for a constant-rate encoded input.

    An always-on input pixel stands for `levels * input_scale` of real
    activation, matching the spiking encoding used by the engine.
    """
    first_levels = next(l.act.levels for l in layers if l.act is not None)
    a = frame.data.astype(np.float64) * first_levels * input_scale
    for layer, scale in zip(layers, scales):
        a = _forward_layer(layer, scale, a)
    return a.reshape(-1)


def make_toy_ann(
    seed: int = 0,
    in_dims: tuple[int, int, int] = (1, 8, 8),
    channels: tuple[int, ...] = (4, 4),
    classes: int = 3,
    levels: int = 16,
    input_scale: Optional[float] = None,
    with_bias: bool = True,
) -> ToyModel:
    """Random conv stack plus a classifier head, with calibrated step sizes.

    Step sizes are set from the positive pre-activation spread on a held
    calibration batch, the way a trained network would have learned them,
    so converted thresholds land well inside the 16-bit range. The default
    input scale of 1/levels keeps an always-on pixel at unit activation,
    which gives the first layer a finely resolved threshold.
    """
    if input_scale is None:
        input_scale = 1.0 / levels
    rng = np.random.default_rng(seed)
    cal = [
        (rng.random(in_dims) < rng.uniform(0.3, 0.7)).astype(np.float64)
        for _ in range(16)
    ]
    acts = [x * levels * input_scale for x in cal]

    layers: list[AnnLayerParams] = []
    scales: list[float] = []
    prev_ch = in_dims[0]
    q_in = input_scale
    for i, out_ch in enumerate(channels):
        w = rng.normal(0.0, 1.0, size=(out_ch, prev_ch, 3, 3))
        q_w = float(np.max(np.abs(w)) / 127.0)
        pre = [
            _conv2d_same(a, quantize_weights(w, q_w).astype(np.float64) * q_w, 1)
            for a in acts
        ]
        stacked = np.stack(pre)
        mean = stacked.mean(axis=(0, 2, 3))
        var = stacked.var(axis=(0, 2, 3)) + 1e-3
        bn = BatchNormStats(
            gamma=rng.uniform(0.8, 1.2, size=out_ch),
            beta=rng.uniform(0.0, 0.3, size=out_ch),
            mean=mean,
            var=var,
        )
        bias = rng.uniform(-0.1, 0.1, size=out_ch) if with_bias else None
        layer = AnnLayerParams(
            kind="conv", weights=w, bias=bias, bn=bn, act=QuantActParams(levels, 1.0),
            kernel=3, stride=1, name=f"conv{i + 1}",
        )
        step = _snap_step(_calibrate_step(layer, q_w, acts), levels, q_w, q_in)
        layer = AnnLayerParams(
            kind="conv", weights=w, bias=bias, bn=bn, act=QuantActParams(levels, step),
            kernel=3, stride=1, name=f"conv{i + 1}",
        )
        layers.append(layer)
        scales.append(q_w)
        acts = [_forward_layer(layer, q_w, a) for a in acts]
        prev_ch = out_ch
        q_in = step / levels

    n_features = prev_ch * in_dims[1] * in_dims[2]
    w = rng.normal(0.0, 1.0, size=(classes, n_features)) / np.sqrt(n_features)
    q_w = float(np.max(np.abs(w)) / 127.0)
    head = AnnLayerParams(
        kind="fc", weights=w, bias=None, act=QuantActParams(levels, 1.0),
        name="fc_head",
    )
    step = _snap_step(_calibrate_step(head, q_w, acts), levels, q_w, q_in)
    head = AnnLayerParams(
        kind="fc", weights=w, bias=None, act=QuantActParams(levels, step),
        name="fc_head",
    )
    layers.append(head)
    scales.append(q_w)
    return ToyModel(layers, scales, input_scale, in_dims)


def _snap_step(step: float, levels: int, q_w: float, q_in: float) -> float:
    """Snap a calibrated step onto the integer-threshold grid.

    The converted threshold is step / (levels * q_w * q_in) rounded to an
    integer; redefining the step on that grid removes threshold rounding
    error without moving it far from its calibrated value.
    """
    unit = levels * q_w * q_in
    return max(1, round(step / unit)) * unit


def _calibrate_step(layer: AnnLayerParams, q_w: float, acts: list[np.ndarray]) -> float:
    probe = AnnLayerParams(
        kind=layer.kind, weights=layer.weights, bias=layer.bias, bn=layer.bn,
        act=QuantActParams(layer.act.levels, 1e9), kernel=layer.kernel,
        stride=layer.stride, name=layer.name,
    )
    # With a huge step the staircase is identity-on-positives / zero-on-
    # negatives, which exposes the raw clipped pre-activations.
    pre = np.concatenate([_forward_layer(probe, q_w, a).reshape(-1) for a in acts])
    positive = pre[pre > 0]
    if positive.size == 0:
        return 1.0
    return float(np.quantile(positive, 0.9))


def make_margin_dataset(
    toy: ToyModel,
    seed: int = 0,
    count: int = 12,
    margin_levels: float = 2.5,
    max_tries: int = 2000,
) -> list[tuple[SpikeFrame, int]]:
    """Inputs whose reference top-1 margin is at least `margin_levels` steps.

    Labels are the reference argmax, so the reference classifier is correct
    on this set by construction.
    """
    rng = np.random.default_rng(seed)
    head = toy.layers[-1]
    level_value = head.act.step / head.act.levels
    dataset: list[tuple[SpikeFrame, int]] = []
    for _ in range(max_tries):
        if len(dataset) >= count:
            break
        frame = SpikeFrame(
            (rng.random(toy.in_dims) < rng.uniform(0.2, 0.8)).astype(np.uint8)
        )
        out = toy.forward(frame)
        order = np.sort(out)[::-1]
        if len(order) > 1 and (order[0] - order[1]) >= margin_levels * level_value:
            dataset.append((frame, int(np.argmax(out))))
    if len(dataset) < count:
        raise RuntimeError(
            f"only {len(dataset)}/{count} margin-separated inputs in {max_tries} tries"
        )
    return dataset


def bench_conv_layer(
    k: int,
    out_ch: int = 64,
    in_ch: int = 3,
    theta: int = 64,
    seed: int = 0,
    mode: Optional[NeuronMode] = None,
) -> QuantizedLayer:
    """Standalone convolution layer with identity coefficients for sweeps."""
    rng = np.random.default_rng(seed)
    w = rng.integers(-128, 128, size=(out_ch, in_ch, k, k), dtype=np.int64).astype(np.int8)
    return QuantizedLayer(
        kind="conv",
        name=f"conv{k}x{k}x{out_ch}",
        weights_i8=w,
        q_w=1.0,
        g_fx=np.full(out_ch, 256, dtype=np.int16),
        h_fx=np.zeros(out_ch, dtype=np.int16),
        bias_fx=np.zeros(out_ch, dtype=np.int16),
        theta=theta,
        mode=mode or NeuronMode(),
        act=QuantActParams(8, float(theta * 8)),
        kernel=k,
        stride=1,
    )


def make_toy_network(seed: int = 0, timesteps: int = 8, **kwargs):
    """Convenience: calibrated toy parameters plus their converted spiking form."""
    toy = make_toy_ann(seed, **kwargs)
    return toy, toy.convert(timesteps=timesteps)
