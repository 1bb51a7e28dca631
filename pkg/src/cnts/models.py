"""Reconstructor and detector window networks, plus the binary checkpoint format.

Checkpoint layout::

    b"CNTS1"
    uint32 LE  header length in bytes
    header     UTF-8 JSON: kind, window, dims, activations, norm, config_digest
    payload    float64 LE, per layer: weight row-major, then bias
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import NormStats, WindowBatch
from .errors import (
    CheckpointError,
    CheckpointKindError,
    CheckpointPayloadError,
    CheckpointVersionError,
    ShapeError,
)
from .numerics import DenseNetParams, init_params, param_count, predict

MAGIC = b"CNTS1"


@dataclass
class WindowModel:
    """A dense network mapping length-l windows to length-l outputs.

    ``norm`` records the z-score statistics the model was trained under, so
    raw series can be scored without carrying them separately.
    """

    net: DenseNetParams
    norm: NormStats | None = None
    config_digest: str = ""

    kind = "?"

    def __post_init__(self):
        dims = self.net.dims
        if dims[0] != dims[-1]:
            raise ShapeError(f"{type(self).__name__} must map l -> l, got dims {dims}")

    @property
    def window(self) -> int:
        return self.net.dims[0]

    def _apply(self, batch: WindowBatch | np.ndarray) -> np.ndarray:
        windows = batch.windows if isinstance(batch, WindowBatch) else np.asarray(batch, dtype=np.float64)
        if windows.ndim != 2 or windows.shape[1] != self.window:
            raise ShapeError(f"{self.kind}: windows of shape {windows.shape}, model expects width {self.window}")
        return predict(self.net, windows)

    def copy(self):
        return type(self)(self.net.copy(), self.norm, self.config_digest)

    def equals(self, other) -> bool:
        return type(self) is type(other) and self.net.equals(other.net) and self.norm == other.norm


class ReconstructorModel(WindowModel):
    kind = "R"


class DetectorModel(WindowModel):
    kind = "D"


def reconstruct(model: ReconstructorModel, batch: WindowBatch | np.ndarray) -> np.ndarray:
    return model._apply(batch)


def detect(model: DetectorModel, batch: WindowBatch | np.ndarray) -> np.ndarray:
    """Raw per-position anomaly scores (logit scale)."""
    return model._apply(batch)


def default_hidden(l: int) -> tuple[int, int]:
    return (4 * l, 2 * l)


def make_reconstructor(l: int, hidden: Sequence[int] | None = None, seed: int = 0) -> ReconstructorModel:
    hidden = default_hidden(l) if hidden is None else tuple(hidden)
    dims = [l, *hidden, l]
    acts = ["tanh"] * len(hidden) + ["identity"]
    return ReconstructorModel(init_params(dims, acts, seed))


def make_detector(l: int, hidden: Sequence[int] | None = None, seed: int = 0) -> DetectorModel:
    hidden = default_hidden(l) if hidden is None else tuple(hidden)
    dims = [l, *hidden, l]
    acts = ["relu"] * len(hidden) + ["identity"]
    return DetectorModel(init_params(dims, acts, seed))


_KINDS = {"R": ReconstructorModel, "D": DetectorModel}


def save_checkpoint(model: WindowModel, path) -> None:
    header = {
        "kind": model.kind,
        "window": model.window,
        "dims": model.net.dims,
        "activations": model.net.activations,
        "norm": None if model.norm is None else [model.norm.mean, model.norm.std],
        "config_digest": model.config_digest,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = model.net.flat().astype("<f8").tobytes()
    Path(path).write_bytes(MAGIC + struct.pack("<I", len(blob)) + blob + payload)


def load_checkpoint(path, expect: str | None = None) -> WindowModel:
    """Load a checkpoint; ``expect`` ("R" or "D") enforces the model kind."""
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointVersionError(f"{path}: not a {MAGIC.decode()} checkpoint")
    pos = len(MAGIC)
    if len(raw) < pos + 4:
        raise CheckpointPayloadError(f"{path}: truncated header")
    (hlen,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if len(raw) < pos + hlen:
        raise CheckpointPayloadError(f"{path}: truncated header")
    try:
        header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from None
    pos += hlen

    kind = header.get("kind")
    if kind not in _KINDS:
        raise CheckpointKindError(f"{path}: unknown model kind {kind!r}")
    if expect is not None and kind != expect:
        raise CheckpointKindError(f"{path}: holds a {kind} model, expected {expect}")
    dims, acts = header["dims"], header["activations"]
    if len(acts) != len(dims) - 1 or dims[0] != header["window"]:
        raise CheckpointError(f"{path}: inconsistent header {header}")

    body = raw[pos:]
    expected = param_count(dims)
    if len(body) != 8 * expected:
        raise CheckpointPayloadError(f"{path}: payload holds {len(body)} bytes, dims imply {8 * expected}")
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    net = DenseNetParams.from_flat(dims, acts, flat)
    norm = None if header["norm"] is None else NormStats(*header["norm"])
    return _KINDS[kind](net, norm, header.get("config_digest", ""))
