"""Export specification: which checkpoint tensors become which bundle layers.

A spec is a YAML or JSON document:

    checkpoint: model.pt
    input_scale: 0.0625
    layers:
      - name: conv1
        kind: conv
        weights: features.0.weight
        bias: features.0.bias          # optional
        batchnorm: features.1          # key prefix, or "identity"
        eps: 1.0e-5
        levels: 16
        step: 1.25
        q_w: 0.02
        stride: 1
      - name: pool1
        kind: maxpool
        pool: 2
      - name: head
        kind: fc
        weights: classifier.weight
        batchnorm: identity
        levels: 16
        step: 2.0
        q_w: 0.015

Compute layers must state their batchnorm mapping explicitly, either a key
prefix (providing weight/bias/running_mean/running_var) or "identity".
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

COMPUTE_KINDS = ("conv", "fc")
POOL_KINDS = ("avgpool", "maxpool")
ALL_KINDS = COMPUTE_KINDS + POOL_KINDS + ("residual_add",)


class ExportError(ValueError):
    """Spec or checkpoint problem; the message names the offending layer."""


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    weights: Optional[str] = None
    bias: Optional[str] = None
    batchnorm: Optional[str] = None
    eps: float = 1e-5
    levels: int = 0
    step: float = 0.0
    q_w: float = 0.0
    stride: int = 1
    pool: int = 0

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise ExportError(f"layer {self.name}: unsupported op kind {self.kind!r}")
        if self.kind in COMPUTE_KINDS:
            if not self.weights:
                raise ExportError(f"layer {self.name}: compute layer needs a weights key")
            if self.batchnorm is None:
                raise ExportError(
                    f"layer {self.name}: state a batchnorm mapping or 'identity'"
                )
            if self.levels < 1 or self.step <= 0 or self.q_w <= 0:
                raise ExportError(
                    f"layer {self.name}: levels, step, and q_w must all be positive"
                )
        if self.kind in POOL_KINDS and self.pool < 1:
            raise ExportError(f"layer {self.name}: pool layers need a window size")

    @property
    def identity_batchnorm(self) -> bool:
        return self.batchnorm in (None, "identity")


@dataclass(frozen=True)
class ExportSpec:
    checkpoint: Path
    layers: tuple[LayerSpec, ...]
    input_scale: float = 1.0
    out: Optional[Path] = None

    def __post_init__(self):
        if not self.layers:
            raise ExportError("spec lists no layers")
        if self.input_scale <= 0:
            raise ExportError(f"input_scale must be positive, got {self.input_scale}")
        names = [l.name for l in self.layers]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise ExportError(f"duplicate layer names: {sorted(dupes)}")


def load_spec(path) -> ExportSpec:
    path = Path(path)
    doc = yaml.safe_load(path.read_text())
    if not isinstance(doc, dict):
        raise ExportError(f"{path}: spec must be a mapping")
    try:
        layers = tuple(LayerSpec(**entry) for entry in doc.get("layers", []))
    except TypeError as exc:
        raise ExportError(f"{path}: bad layer entry: {exc}") from exc
    checkpoint = doc.get("checkpoint")
    if not checkpoint:
        raise ExportError(f"{path}: spec needs a checkpoint path")
    out = doc.get("out")
    return ExportSpec(
        checkpoint=(path.parent / checkpoint),
        layers=layers,
        input_scale=float(doc.get("input_scale", 1.0)),
        out=(path.parent / out) if out else None,
    )
