"""On-disk formats for parameter bundles, converted networks, and spike inputs.

A network lives in two files: `<name>.manifest.json` (human-inspectable
metadata: layer descriptors, scales, thresholds, tensor offsets and
checksums) and `<name>.weights.bin` (the raw tensor payloads, little-endian,
concatenated in manifest order). Spike inputs live in `<name>.spikes.bin`
with a fixed 28-byte header followed by the bit-packed payload, one
LSB-first ceil(bits/8)-byte block per timestep.

Loads validate structure before touching payload bytes and never allocate
more than the manifest declares.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .convert import AnnLayerParams, BatchNormStats, QuantizedLayer
from .frames import SpikeFrame
from .neurons import NeuronMode, QuantActParams

FORMAT_VERSION = 1
SPIKE_MAGIC = b"SIAS"
_SPIKE_HEADER = struct.Struct("<4sHHIIIII")

_DTYPES = {"i8": "<i1", "i16": "<i2", "f32": "<f4"}


class ModelIOError(Exception):
    """Base error for model file problems."""


class FormatVersionError(ModelIOError):
    pass


class ChecksumError(ModelIOError):
    pass


class StructureError(ModelIOError):
    """Manifest or payload structure is inconsistent (bounds, overlap, truncation)."""


def manifest_path(base) -> Path:
    return Path(str(base) + ".manifest.json")


def weights_path(base) -> Path:
    return Path(str(base) + ".weights.bin")


def spikes_path(base) -> Path:
    return Path(str(base) + ".spikes.bin")


class _BlobWriter:
    def __init__(self):
        self.chunks: list[bytes] = []
        self.offset = 0

    def add(self, array: np.ndarray, dtype: str) -> dict:
        raw = np.ascontiguousarray(array.astype(_DTYPES[dtype])).tobytes()
        entry = {
            "dtype": dtype,
            "shape": list(array.shape),
            "offset": self.offset,
            "nbytes": len(raw),
            "crc32": zlib.crc32(raw) & 0xFFFFFFFF,
        }
        self.chunks.append(raw)
        self.offset += len(raw)
        return entry

    def blob(self) -> bytes:
        return b"".join(self.chunks)


class _BlobReader:
    def __init__(self, manifest: dict, blob: bytes):
        self.blob = blob
        spans = []
        for layer in manifest["layers"]:
            for name, entry in layer.get("tensors", {}).items():
                spans.append((layer["name"], name, entry))
        spans.sort(key=lambda s: s[2]["offset"])
        prev_end = 0
        for lname, tname, entry in spans:
            dtype = entry.get("dtype")
            if dtype not in _DTYPES:
                raise StructureError(f"{lname}.{tname}: unknown dtype {dtype!r}")
            itemsize = np.dtype(_DTYPES[dtype]).itemsize
            expected = int(np.prod(entry["shape"], dtype=np.int64)) * itemsize
            if entry["nbytes"] != expected:
                raise StructureError(
                    f"{lname}.{tname}: {entry['nbytes']} bytes declared, "
                    f"shape needs {expected}"
                )
            if entry["offset"] < 0 or entry["offset"] < prev_end:
                raise StructureError(f"{lname}.{tname}: overlapping or negative offset")
            end = entry["offset"] + entry["nbytes"]
            if end > len(blob):
                raise StructureError(
                    f"{lname}.{tname}: tensor ends at {end}, blob holds {len(blob)} bytes"
                )
            prev_end = end

    def read(self, where: str, entry: dict) -> np.ndarray:
        raw = self.blob[entry["offset"] : entry["offset"] + entry["nbytes"]]
        if (zlib.crc32(raw) & 0xFFFFFFFF) != entry["crc32"]:
            raise ChecksumError(f"{where}: payload checksum mismatch")
        arr = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]])
        return arr.reshape(entry["shape"]).copy()


def _manifest_bytes(manifest: dict) -> bytes:
    return (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode()


def _declared_extent(manifest: dict) -> int:
    end = 0
    for layer in manifest["layers"]:
        for entry in layer.get("tensors", {}).values():
            end = max(end, int(entry["offset"]) + int(entry["nbytes"]))
    return end


def _load_manifest(data: bytes, expect_kind: str) -> dict:
    try:
        manifest = json.loads(data)
    except json.JSONDecodeError as exc:
        raise StructureError(f"manifest is not valid JSON: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"format version {version}, supported: {FORMAT_VERSION}")
    if manifest.get("model_kind") != expect_kind:
        raise StructureError(
            f"model kind {manifest.get('model_kind')!r}, expected {expect_kind!r}"
        )
    if manifest.get("endianness", "little") != "little":
        raise StructureError("payloads must be little-endian")
    return manifest


# --- converted (spiking) networks -------------------------------------------


def network_to_bytes(
    net: list[QuantizedLayer], timesteps: int = 8, input_scale: float = 1.0
) -> tuple[bytes, bytes]:
    writer = _BlobWriter()
    layers = []
    for layer in net:
        entry = {
            "name": layer.name,
            "kind": layer.kind,
            "kernel": layer.kernel,
            "stride": layer.stride,
            "pool": layer.pool,
            "q_w": layer.q_w,
            "theta": layer.theta,
            "mode": layer.mode.kind,
            "leak_shift": layer.mode.leak_shift,
            "frac_g": layer.frac_g,
            "frac_h": layer.frac_h,
            "act_levels": layer.act.levels if layer.act else None,
            "act_step": layer.act.step if layer.act else None,
            "input_scale": layer.input_scale,
            "weight_saturation": layer.weight_saturation,
            "tensors": {},
        }
        if layer.is_compute:
            entry["tensors"] = {
                "weights_i8": writer.add(layer.weights_i8, "i8"),
                "g_fx": writer.add(layer.g_fx, "i16"),
                "h_fx": writer.add(layer.h_fx, "i16"),
                "bias_fx": writer.add(layer.bias_fx, "i16"),
            }
        layers.append(entry)
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_kind": "snn",
        "endianness": "little",
        "default_timesteps": timesteps,
        "input_scale": input_scale,
        "layers": layers,
    }
    return _manifest_bytes(manifest), writer.blob()


def network_from_bytes(manifest_data: bytes, blob: bytes) -> tuple[list[QuantizedLayer], dict]:
    manifest = _load_manifest(manifest_data, "snn")
    reader = _BlobReader(manifest, blob)
    net = []
    for entry in manifest["layers"]:
        kind = entry["kind"]
        mode = NeuronMode(entry["mode"], entry["leak_shift"])
        act = (
            QuantActParams(entry["act_levels"], entry["act_step"])
            if entry.get("act_levels")
            else None
        )
        if kind in ("conv", "fc"):
            tensors = entry["tensors"]
            net.append(
                QuantizedLayer(
                    kind=kind,
                    name=entry["name"],
                    weights_i8=reader.read(entry["name"], tensors["weights_i8"]).astype(np.int8),
                    q_w=entry["q_w"],
                    g_fx=reader.read(entry["name"], tensors["g_fx"]).astype(np.int16),
                    h_fx=reader.read(entry["name"], tensors["h_fx"]).astype(np.int16),
                    bias_fx=reader.read(entry["name"], tensors["bias_fx"]).astype(np.int16),
                    frac_g=entry["frac_g"],
                    frac_h=entry["frac_h"],
                    theta=entry["theta"],
                    mode=mode,
                    act=act,
                    kernel=entry["kernel"],
                    stride=entry["stride"],
                    input_scale=entry["input_scale"],
                    weight_saturation=entry.get("weight_saturation", 0.0),
                )
            )
        else:
            net.append(
                QuantizedLayer(
                    kind=kind,
                    name=entry["name"],
                    pool=entry["pool"],
                    input_scale=entry["input_scale"],
                )
            )
    meta = {
        "default_timesteps": manifest["default_timesteps"],
        "input_scale": manifest["input_scale"],
    }
    return net, meta


def save_network(base, net: list[QuantizedLayer], timesteps: int = 8, input_scale: float = 1.0) -> None:
    manifest_data, blob = network_to_bytes(net, timesteps, input_scale)
    manifest_path(base).write_bytes(manifest_data)
    weights_path(base).write_bytes(blob)


def load_network(base) -> tuple[list[QuantizedLayer], dict]:
    """Load a converted network; load(save(x)) is bit-for-bit x."""
    manifest_data = manifest_path(base).read_bytes()
    manifest = _load_manifest(manifest_data, "snn")
    blob = _read_blob(weights_path(base), manifest)
    return network_from_bytes(manifest_data, blob)


def _read_blob(path: Path, manifest: dict) -> bytes:
    extent = _declared_extent(manifest)
    with open(path, "rb") as fh:
        blob = fh.read(extent)
    if len(blob) < extent:
        raise StructureError(f"{path.name}: blob truncated at {len(blob)}/{extent} bytes")
    return blob


# --- pre-trained parameter bundles -------------------------------------------


def ann_to_bytes(
    layers: list[AnnLayerParams], scales: list[float], input_scale: float = 1.0
) -> tuple[bytes, bytes]:
    if len(layers) != len(scales):
        raise ValueError(f"{len(layers)} layers but {len(scales)} scales")
    writer = _BlobWriter()
    entries = []
    for layer, scale in zip(layers, scales):
        entry = {
            "name": layer.name,
            "kind": layer.kind,
            "kernel": layer.kernel,
            "stride": layer.stride,
            "pool": layer.pool,
            "q_w": float(scale),
            "act_levels": layer.act.levels if layer.act else None,
            "act_step": layer.act.step if layer.act else None,
            "bn_eps": layer.bn.eps if layer.bn else None,
            "tensors": {},
        }
        if layer.weights is not None:
            entry["tensors"]["weights"] = writer.add(layer.weights, "f32")
        if layer.bias is not None:
            entry["tensors"]["bias"] = writer.add(layer.bias, "f32")
        if layer.bn is not None:
            entry["tensors"]["bn_gamma"] = writer.add(layer.bn.gamma, "f32")
            entry["tensors"]["bn_beta"] = writer.add(layer.bn.beta, "f32")
            entry["tensors"]["bn_mean"] = writer.add(layer.bn.mean, "f32")
            entry["tensors"]["bn_var"] = writer.add(layer.bn.var, "f32")
        entries.append(entry)
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_kind": "ann",
        "endianness": "little",
        "input_scale": input_scale,
        "layers": entries,
    }
    return _manifest_bytes(manifest), writer.blob()


def ann_from_bytes(
    manifest_data: bytes, blob: bytes
) -> tuple[list[AnnLayerParams], list[float], dict]:
    manifest = _load_manifest(manifest_data, "ann")
    reader = _BlobReader(manifest, blob)
    layers, scales = [], []
    for entry in manifest["layers"]:
        tensors = entry.get("tensors", {})

        def tensor(name: str) -> Optional[np.ndarray]:
            ref = tensors.get(name)
            return None if ref is None else reader.read(entry["name"], ref).astype(np.float64)

        bn = None
        if entry.get("bn_eps") is not None:
            bn = BatchNormStats(
                gamma=tensor("bn_gamma"),
                beta=tensor("bn_beta"),
                mean=tensor("bn_mean"),
                var=tensor("bn_var"),
                eps=entry["bn_eps"],
            )
        act = (
            QuantActParams(entry["act_levels"], entry["act_step"])
            if entry.get("act_levels")
            else None
        )
        layers.append(
            AnnLayerParams(
                kind=entry["kind"],
                weights=tensor("weights"),
                bias=tensor("bias"),
                bn=bn,
                act=act,
                kernel=entry["kernel"],
                stride=entry["stride"],
                pool=entry["pool"],
                name=entry["name"],
            )
        )
        scales.append(entry["q_w"])
    meta = {"input_scale": manifest.get("input_scale", 1.0)}
    return layers, scales, meta


def save_ann(
    base, layers: list[AnnLayerParams], scales: list[float], input_scale: float = 1.0
) -> None:
    manifest_data, blob = ann_to_bytes(layers, scales, input_scale)
    manifest_path(base).write_bytes(manifest_data)
    weights_path(base).write_bytes(blob)


def load_ann(base) -> tuple[list[AnnLayerParams], list[float], dict]:
    manifest_data = manifest_path(base).read_bytes()
    manifest = _load_manifest(manifest_data, "ann")
    blob = _read_blob(weights_path(base), manifest)
    return ann_from_bytes(manifest_data, blob)


# --- spike input files --------------------------------------------------------


@dataclass(frozen=True)
class SpikeInputFile:
    """Bit-packed spike tensor for T timesteps of one (c, h, w) volume."""

    timesteps: int
    dims: tuple[int, int, int]
    payload: bytes

    def __post_init__(self):
        c, h, w = self.dims
        per_step = (c * h * w + 7) // 8
        if len(self.payload) != self.timesteps * per_step:
            raise StructureError(
                f"payload holds {len(self.payload)} bytes, "
                f"{self.timesteps} steps of {per_step} expected"
            )


def encode_input(frames: list[SpikeFrame]) -> SpikeInputFile:
    if not frames:
        raise ValueError("need at least one frame")
    dims = frames[0].dims
    if any(f.dims != dims for f in frames):
        raise ValueError("frames must share one shape")
    payload = b"".join(f.pack() for f in frames)
    return SpikeInputFile(len(frames), dims, payload)


def decode_input(sif: SpikeInputFile) -> list[SpikeFrame]:
    c, h, w = sif.dims
    per_step = (c * h * w + 7) // 8
    return [
        SpikeFrame.unpack(sif.dims, sif.payload[t * per_step : (t + 1) * per_step])
        for t in range(sif.timesteps)
    ]


def spikes_to_bytes(sif: SpikeInputFile) -> bytes:
    c, h, w = sif.dims
    header = _SPIKE_HEADER.pack(
        SPIKE_MAGIC,
        FORMAT_VERSION,
        0,
        sif.timesteps,
        c,
        h,
        w,
        zlib.crc32(sif.payload) & 0xFFFFFFFF,
    )
    return header + sif.payload


def spikes_from_bytes(data: bytes) -> SpikeInputFile:
    if len(data) < _SPIKE_HEADER.size:
        raise StructureError("spike file shorter than its header")
    magic, version, _, timesteps, c, h, w, crc = _SPIKE_HEADER.unpack_from(data)
    if magic != SPIKE_MAGIC:
        raise StructureError(f"bad spike file magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"spike format version {version}, supported: {FORMAT_VERSION}")
    per_step = (c * h * w + 7) // 8
    expected = timesteps * per_step
    payload = data[_SPIKE_HEADER.size :]
    if len(payload) != expected:
        raise StructureError(f"spike payload holds {len(payload)} bytes, expected {expected}")
    if (zlib.crc32(payload) & 0xFFFFFFFF) != crc:
        raise ChecksumError("spike payload checksum mismatch")
    return SpikeInputFile(timesteps, (c, h, w), payload)


def write_spikes(base, frames: list[SpikeFrame]) -> None:
    spikes_path(base).write_bytes(spikes_to_bytes(encode_input(frames)))


def read_spikes(base) -> list[SpikeFrame]:
    return decode_input(spikes_from_bytes(spikes_path(base).read_bytes()))
