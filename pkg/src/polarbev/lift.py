"""Lift step: scale per-pixel image features by a categorical depth distribution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from polarbev.errors import ConfigError

NORM_TOL = 1e-6


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Dense (C, A, B) feature array; read-only after construction."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ConfigError(f"FeatureMap needs a 3D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ConfigError("FeatureMap entries must be finite")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @classmethod
    def zeros(cls, channels: int, a: int, b: int) -> "FeatureMap":
        return cls(np.zeros((channels, a, b)))


@dataclass(frozen=True, eq=False)
class DepthDistribution:
    """Per-pixel probabilities over depth bins, shape (N_D, H_F, W_F).

    ``mode="normalize"`` divides each pixel column by its sum; ``mode="strict"``
    rejects columns whose sum deviates from 1 by more than ``NORM_TOL``.
    """

    data: np.ndarray
    mode: str = "normalize"

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ConfigError(f"DepthDistribution needs a 3D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise ConfigError("depth probabilities must be finite and non-negative")
        total = arr.sum(axis=0)
        if self.mode == "normalize":
            if np.any(total <= 0):
                raise ConfigError("depth column with zero mass cannot be normalized")
            arr = arr / total
        elif self.mode == "strict":
            if np.any(np.abs(total - 1.0) > NORM_TOL) or np.any(arr > 1.0):
                raise ConfigError("depth distribution is not normalized")
        else:
            raise ConfigError(f"unknown validation mode {self.mode!r}")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def n_bins(self) -> int:
        return self.data.shape[0]


def as_array(x) -> np.ndarray:
    return x.data if isinstance(x, (FeatureMap, DepthDistribution)) else np.asarray(x, dtype=np.float64)


def lift_features(img, depth) -> np.ndarray:
    """Outer product over depth: ``out[c, k, i, j] = img[c, i, j] * depth[k, i, j]``."""
    f = as_array(img)
    d = as_array(depth)
    if f.ndim != 3 or d.ndim != 3 or f.shape[1:] != d.shape[1:]:
        raise ConfigError(f"spatial shapes differ: features {f.shape}, depth {d.shape}")
    return f[:, None, :, :] * d[None, :, :, :]
