"""Dense numeric kernel shared by every layer.

All arrays are float64 numpy arrays. float32 only appears when weights are
written to disk.
"""
from __future__ import annotations

from collections.abc import Iterator, Mapping

import numpy as np

from ppfmatch.errors import NonFiniteError, ShapeError, WeightsError

FORMAT_VERSION = 1


def as_tensor(x, ndim: int | None = None, name: str = "tensor") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    return arr


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values produced in {where}")
    return x


def linear(x, W, bias=None) -> np.ndarray:
    """``x @ W (+ bias)`` over the last axis of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise ShapeError(f"linear: cannot multiply {x.shape} by {W.shape}")
    out = x @ W
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (W.shape[1],):
            raise ShapeError(f"linear: bias shape {bias.shape} != ({W.shape[1]},)")
        out = out + bias
    return out


def softmax_rows(x) -> np.ndarray:
    """Softmax along the last axis, max-shifted for stability."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] == 0:
        raise ShapeError("softmax_rows: empty rows")
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logsumexp(x, axis: int = -1) -> np.ndarray:
    """log(sum(exp(x))) along ``axis``; an all ``-inf`` slice gives ``-inf``."""
    x = np.asarray(x, dtype=np.float64)
    peak = np.max(x, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - peak), axis=axis, keepdims=True)) + peak
    return np.squeeze(out, axis=axis)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    c = x.shape[-1]
    if np.shape(gain) != (c,) or np.shape(bias) != (c,):
        raise ShapeError(f"layer_norm: gain/bias must have shape ({c},)")
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    return gain * centered / np.sqrt(var + eps) + bias


def relu(x) -> np.ndarray:
    return np.maximum(x, 0.0)


class ModelWeights(Mapping):
    """Immutable name -> tensor mapping.

    Names are dotted paths such as ``enc.block1.aal.pam.W_Q``; ``scope``
    returns the sub-mapping under a prefix with the prefix stripped.
    """

    def __init__(self, tensors: Mapping[str, np.ndarray], config_hash: str = "",
                 format_version: int = FORMAT_VERSION):
        frozen = {}
        for name, value in tensors.items():
            arr = np.array(value, dtype=np.float64)
            arr.setflags(write=False)
            frozen[name] = arr
        self._tensors = dict(sorted(frozen.items()))
        self.config_hash = config_hash
        self.format_version = format_version

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._tensors[name]
        except KeyError:
            raise KeyError(f"missing weight tensor {name!r}") from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def __repr__(self) -> str:
        return f"ModelWeights({len(self)} tensors, config_hash={self.config_hash[:12]!r})"

    def scope(self, prefix: str) -> dict[str, np.ndarray]:
        head = prefix.rstrip(".") + "."
        return {k[len(head):]: v for k, v in self._tensors.items() if k.startswith(head)}

    def replace(self, **updates: np.ndarray) -> "ModelWeights":
        """Copy with some tensors swapped; keyword names use ``__`` for dots."""
        return self.with_tensors({k.replace("__", "."): v for k, v in updates.items()})

    def with_tensors(self, updates: Mapping[str, np.ndarray]) -> "ModelWeights":
        merged = dict(self._tensors)
        for name, value in updates.items():
            if name not in merged:
                raise KeyError(f"unknown weight tensor {name!r}")
            value = np.asarray(value, dtype=np.float64)
            if value.shape != merged[name].shape:
                raise ShapeError(f"{name}: shape {value.shape} != {merged[name].shape}")
            merged[name] = value
        return ModelWeights(merged, self.config_hash, self.format_version)

    def validate(self, expected: Mapping[str, tuple[int, ...]]) -> None:
        missing = sorted(set(expected) - set(self._tensors))
        extra = sorted(set(self._tensors) - set(expected))
        if missing or extra:
            raise WeightsError(f"weight names do not match config: missing={missing[:5]} extra={extra[:5]}")
        for name, shape in expected.items():
            if self._tensors[name].shape != tuple(shape):
                raise WeightsError(f"{name}: shape {self._tensors[name].shape} != expected {tuple(shape)}")
        slack = [n for n in self._tensors if n.endswith("slack_alpha")]
        if len(slack) != 1:
            raise WeightsError(f"expected exactly one slack_alpha tensor, found {len(slack)}")
