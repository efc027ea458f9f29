"""Checkpoint reading and bundle assembly.

The exporter performs no quantization: it ships FP32 tensors together with
the learned level counts, step sizes, and weight scales, so the simulator's
conversion stage remains the single implementation of the quantizer math.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .spec import COMPUTE_KINDS, ExportError, ExportSpec, LayerSpec
from .writer import BundleWriter

BN_SUFFIXES = {
    "bn_gamma": ".weight",
    "bn_beta": ".bias",
    "bn_mean": ".running_mean",
    "bn_var": ".running_var",
}


def read_checkpoint(path) -> dict[str, np.ndarray]:
    state = torch.load(Path(path), map_location="cpu", weights_only=True)
    if hasattr(state, "state_dict"):
        state = state.state_dict()
    if not isinstance(state, dict):
        raise ExportError(f"{path}: checkpoint is not a state dict")
    out = {}
    for key, value in state.items():
        if isinstance(value, torch.Tensor):
            out[key] = value.detach().cpu().numpy().astype(np.float32)
    return out


def _fetch(state: dict, layer: str, key: str) -> np.ndarray:
    if key not in state:
        raise ExportError(f"layer {layer}: checkpoint has no tensor {key!r}")
    return state[key]


def _gather_compute_tensors(state: dict, layer: LayerSpec) -> tuple[dict, int]:
    weights = _fetch(state, layer.name, layer.weights)
    if layer.kind == "conv":
        if weights.ndim != 4:
            raise ExportError(
                f"layer {layer.name}: conv weights must be 4-d, got shape {weights.shape}"
            )
        if weights.shape[2] != weights.shape[3]:
            raise ExportError(
                f"layer {layer.name}: only square kernels supported, got {weights.shape[2:]}"
            )
        kernel = int(weights.shape[2])
    else:
        if weights.ndim != 2:
            raise ExportError(
                f"layer {layer.name}: fc weights must be 2-d, got shape {weights.shape}"
            )
        kernel = 0
    out_ch = int(weights.shape[0])

    tensors: dict[str, np.ndarray] = {"weights": weights}
    if layer.bias:
        bias = _fetch(state, layer.name, layer.bias)
        if bias.shape != (out_ch,):
            raise ExportError(
                f"layer {layer.name}: bias shape {bias.shape} does not match {out_ch} outputs"
            )
        tensors["bias"] = bias
    if not layer.identity_batchnorm:
        for tname, suffix in BN_SUFFIXES.items():
            arr = _fetch(state, layer.name, layer.batchnorm + suffix)
            if arr.shape != (out_ch,):
                raise ExportError(
                    f"layer {layer.name}: {layer.batchnorm + suffix} has shape "
                    f"{arr.shape}, expected ({out_ch},)"
                )
            tensors[tname] = arr
    return tensors, kernel


def export(spec: ExportSpec, out=None) -> tuple[Path, Path]:
    """Write the bundle for `spec`; returns (manifest path, blob path)."""
    base = out or spec.out
    if base is None:
        raise ExportError("no output base path given (spec 'out' or --out)")
    state = read_checkpoint(spec.checkpoint)
    writer = BundleWriter(spec.input_scale)
    for layer in spec.layers:
        if layer.kind in COMPUTE_KINDS:
            tensors, kernel = _gather_compute_tensors(state, layer)
            writer.add_layer(
                layer.name,
                layer.kind,
                tensors,
                kernel=kernel,
                stride=layer.stride,
                q_w=layer.q_w,
                act_levels=layer.levels,
                act_step=layer.step,
                bn_eps=None if layer.identity_batchnorm else layer.eps,
            )
        else:
            writer.add_layer(layer.name, layer.kind, {}, pool=layer.pool)
    return writer.write(base)
