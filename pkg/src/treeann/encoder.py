"""Affine query encoder: phi(q) = W q + b."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, IoFailure, MagicMismatch, NonFiniteValue, TruncatedFile, VersionUnsupported

ENC_MAGIC = b"JTRE"
ENC_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


@dataclass(eq=False)
class QueryEncoder:
    weight: np.ndarray  # (D_out, D_in) float32
    bias: np.ndarray  # (D_out,) float32
    trainable: bool = True

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float32)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float32)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionMismatch(f"weight {self.weight.shape} / bias {self.bias.shape} mismatch")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise NonFiniteValue("encoder parameters must be finite")

    @classmethod
    def identity(cls, dim: int, out_dim: int | None = None, trainable: bool = True) -> "QueryEncoder":
        out_dim = dim if out_dim is None else out_dim
        return cls(np.eye(out_dim, dim, dtype=np.float32), np.zeros(out_dim, dtype=np.float32), trainable)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def encode(self, features) -> np.ndarray:
        """Encode one feature vector (or a batch of rows) in float64."""
        x = np.asarray(features, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise DimensionMismatch(f"query features have dim {x.shape[-1]}, encoder expects {self.in_dim}")
        w = self.weight.astype(np.float64)
        b = self.bias.astype(np.float64)
        if x.ndim == 1:
            return (w * x).sum(axis=1) + b
        return np.stack([(w * row).sum(axis=1) for row in x]) + b

    def copy(self) -> "QueryEncoder":
        return QueryEncoder(self.weight.copy(), self.bias.copy(), self.trainable)


def save_encoder(encoder: QueryEncoder, path) -> None:
    """magic "JTRE" | version u32 | D_out u32 | D_in u32 | trainable u32 | f32 weight | f32 bias."""
    data = _HEADER.pack(ENC_MAGIC, ENC_VERSION, encoder.out_dim, encoder.in_dim, int(encoder.trainable))
    data += encoder.weight.astype("<f4").tobytes() + encoder.bias.astype("<f4").tobytes()
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_encoder(path) -> QueryEncoder:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise TruncatedFile(f"{path}: header truncated")
    magic, version, d_out, d_in, trainable = _HEADER.unpack_from(raw)
    if magic != ENC_MAGIC:
        raise MagicMismatch(f"{path}: not an encoder file")
    if version != ENC_VERSION:
        raise VersionUnsupported(f"{path}: encoder version {version} not supported")
    expected = _HEADER.size + 4 * (d_out * d_in + d_out)
    if len(raw) != expected:
        raise TruncatedFile(f"{path}: expected {expected} bytes, found {len(raw)}")
    body = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    weight = body[: d_out * d_in].reshape(d_out, d_in)
    bias = body[d_out * d_in:]
    return QueryEncoder(weight.copy(), bias.copy(), bool(trainable))
