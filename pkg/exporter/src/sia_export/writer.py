"""Parameter-bundle writer implementing the documented on-disk layout.

Bundle = `<base>.manifest.json` plus `<base>.weights.bin`. The manifest is
canonical JSON (two-space indent, sorted keys, trailing newline); tensor
payloads are little-endian float32, concatenated in layer order with the
per-layer tensor order weights, bias, bn_gamma, bn_beta, bn_mean, bn_var,
each carrying its offset, byte length, and CRC-32 in the manifest. This
module is deliberately independent of the simulator package: matching the
published layout byte-for-byte is the contract.
"""

from __future__ import annotations

import json
import zlib
from pathlib import Path
from typing import Optional

import numpy as np

FORMAT_VERSION = 1
TENSOR_ORDER = ("weights", "bias", "bn_gamma", "bn_beta", "bn_mean", "bn_var")


class BundleWriter:
    def __init__(self, input_scale: float):
        self.input_scale = input_scale
        self.entries: list[dict] = []
        self.chunks: list[bytes] = []
        self.offset = 0

    def _add_tensor(self, array: np.ndarray) -> dict:
        raw = np.ascontiguousarray(array.astype("<f4")).tobytes()
        entry = {
            "dtype": "f32",
            "shape": [int(d) for d in array.shape],
            "offset": self.offset,
            "nbytes": len(raw),
            "crc32": zlib.crc32(raw) & 0xFFFFFFFF,
        }
        self.chunks.append(raw)
        self.offset += len(raw)
        return entry

    def add_layer(
        self,
        name: str,
        kind: str,
        tensors: dict[str, Optional[np.ndarray]],
        kernel: int = 0,
        stride: int = 1,
        pool: int = 0,
        q_w: float = 1.0,
        act_levels: Optional[int] = None,
        act_step: Optional[float] = None,
        bn_eps: Optional[float] = None,
    ) -> None:
        refs = {}
        for tname in TENSOR_ORDER:
            arr = tensors.get(tname)
            if arr is not None:
                refs[tname] = self._add_tensor(arr)
        self.entries.append(
            {
                "name": name,
                "kind": kind,
                "kernel": kernel,
                "stride": stride,
                "pool": pool,
                "q_w": float(q_w),
                "act_levels": act_levels,
                "act_step": act_step,
                "bn_eps": bn_eps,
                "tensors": refs,
            }
        )

    def manifest_bytes(self) -> bytes:
        manifest = {
            "format_version": FORMAT_VERSION,
            "model_kind": "ann",
            "endianness": "little",
            "input_scale": self.input_scale,
            "layers": self.entries,
        }
        return (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode()

    def blob_bytes(self) -> bytes:
        return b"".join(self.chunks)

    def write(self, base) -> tuple[Path, Path]:
        manifest = Path(str(base) + ".manifest.json")
        blob = Path(str(base) + ".weights.bin")
        manifest.write_bytes(self.manifest_bytes())
        blob.write_bytes(self.blob_bytes())
        return manifest, blob
