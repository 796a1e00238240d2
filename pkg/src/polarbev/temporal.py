"""Temporal alignment of cached polar BEV maps through a Cartesian proxy."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from polarbev.errors import ConfigError, DomainError
from polarbev.lift import FeatureMap, as_array
from polarbev.polar_grid import PolarGridSpec, cart_to_cyl

DEFAULT_HISTORY = 8
# fractional sample indices this close to an integer are snapped onto the lattice
SNAP_TOL = 1e-9


@dataclass(frozen=True)
class Pose2D:
    """Absolute planar ego pose: ego-frame points map to world by R(yaw) p + (x, y)."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s], [s, c]])

    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True, eq=False)
class EgoMotion:
    """Planar rigid map from current-frame to previous-frame coordinates."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64)
        t = np.array(self.translation, dtype=np.float64).reshape(2)
        if R.shape != (2, 2):
            raise ConfigError("rotation must be 2x2")
        if not np.allclose(R.T @ R, np.eye(2), rtol=0, atol=1e-9) or np.linalg.det(R) <= 0:
            raise ConfigError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "EgoMotion":
        return cls(np.eye(2), np.zeros(2))

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0)) -> "EgoMotion":
        return cls(Pose2D(yaw=yaw).rotation(), translation)

    @classmethod
    def between(cls, previous: Pose2D, current: Pose2D) -> "EgoMotion":
        """Motion taking ``current`` ego coordinates to ``previous`` ego coordinates."""
        Rp = previous.rotation()
        R = Rp.T @ current.rotation()
        t = Rp.T @ (current.translation() - previous.translation())
        # re-orthonormalize: products of trig matrices drift by a few ulp
        ang = math.atan2(R[1, 0], R[0, 0])
        return cls(Pose2D(yaw=ang).rotation(), t)

    def inverse(self) -> "EgoMotion":
        return EgoMotion(self.rotation.T, -self.rotation.T @ self.translation)


def index_to_polar(i, j, spec: PolarGridSpec):
    """Lower-corner polar coordinates of bin (i, j)."""
    i_arr = np.asarray(i, dtype=np.float64)
    j_arr = np.asarray(j, dtype=np.float64)
    if np.any((i_arr < 0) | (i_arr >= spec.n_theta) | (j_arr < 0) | (j_arr >= spec.n_r)):
        raise DomainError(f"bin index ({i}, {j}) outside grid {spec.shape}")
    theta = -math.pi + i_arr * spec.delta_theta
    r = spec.r_min + j_arr * spec.delta_r
    if theta.ndim == 0:
        return float(theta), float(r)
    return theta, r


def polar_to_cart(theta, r):
    theta = np.asarray(theta, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if np.any(r < 0):
        raise DomainError("radius must be non-negative")
    x, y = r * np.cos(theta), r * np.sin(theta)
    if x.ndim == 0:
        return float(x), float(y)
    return x, y


def ego_compensate(p, motion: EgoMotion):
    """Apply ``R p + T`` to (..., 2) points (or an (x, y) pair)."""
    p = np.asarray(p, dtype=np.float64)
    out = p @ motion.rotation.T + motion.translation
    if out.ndim == 1:
        return float(out[0]), float(out[1])
    return out


def _snap(f: np.ndarray) -> np.ndarray:
    near = np.rint(f)
    return np.where(np.abs(f - near) <= SNAP_TOL, near, f)


def sample_polar(data: np.ndarray, fi: np.ndarray, fj: np.ndarray, out_of_range: str = "zero"):
    """Bilinear sample of (C, N_theta, N_r) at fractional indices, wrapping in theta."""
    n_theta, n_r = data.shape[1:]
    fi = _snap(fi)
    fj = _snap(fj)
    if out_of_range == "clamp":
        fj = np.clip(fj, 0.0, n_r - 1)
    elif out_of_range != "zero":
        raise ConfigError(f"unknown out-of-range policy {out_of_range!r}")
    i0f = np.floor(fi)
    j0f = np.floor(fj)
    wi = fi - i0f
    wj = fj - j0f
    i0 = i0f.astype(np.int64) % n_theta
    i1 = (i0 + 1) % n_theta
    j0 = j0f.astype(np.int64)
    j1 = j0 + 1

    def corner(ii, jj, w):
        ok = (jj >= 0) & (jj < n_r)
        vals = data[:, ii, np.clip(jj, 0, n_r - 1)]
        return np.where(ok & (w != 0), vals * w, 0.0)

    return (corner(i0, j0, (1 - wi) * (1 - wj)) + corner(i1, j0, wi * (1 - wj))
            + corner(i0, j1, (1 - wi) * wj) + corner(i1, j1, wi * wj))


def warp_polar_feature(prev, motion: EgoMotion, spec: PolarGridSpec,
                       out_of_range: str = "zero") -> FeatureMap:
    """Resample a previous-frame polar map into the current frame.

    Each current bin center goes polar -> Cartesian -> previous frame ->
    polar -> fractional index, and the previous map is sampled bilinearly
    there. Azimuth wraps; radial samples off the grid follow ``out_of_range``.
    """
    data = as_array(prev)
    if data.ndim != 3 or data.shape[1:] != spec.shape:
        raise ConfigError(f"feature map shape {data.shape} does not match grid {spec.shape}")
    ii, jj = np.meshgrid(np.arange(spec.n_theta) + 0.5, np.arange(spec.n_r) + 0.5, indexing="ij")
    theta = -math.pi + ii * spec.delta_theta
    r = spec.r_min + jj * spec.delta_r
    x, y = polar_to_cart(theta, r)
    q = ego_compensate(np.stack([x, y], axis=-1), motion)
    theta_p, r_p, _ = cart_to_cyl(np.concatenate([q, np.zeros(q.shape[:-1] + (1,))], axis=-1))
    fi = (theta_p + math.pi) / spec.delta_theta - 0.5
    fj = (r_p - spec.r_min) / spec.delta_r - 0.5
    return FeatureMap(sample_polar(data, fi, fj, out_of_range))


class FeatureHistory:
    """Ring buffer of recent polar maps with the absolute poses they were taken at."""

    def __init__(self, spec: PolarGridSpec, max_len: int = DEFAULT_HISTORY):
        if max_len < 1:
            raise ConfigError("history length must be >= 1")
        self.spec = spec
        self.max_len = max_len
        self._entries: deque = deque(maxlen=max_len)

    def __len__(self) -> int:
        return len(self._entries)

    def push(self, timestamp: float, fmap: FeatureMap, pose: Pose2D) -> None:
        if self._entries:
            last_t, last_map, _ = self._entries[-1]
            if timestamp <= last_t:
                raise ConfigError("history timestamps must be strictly increasing")
            if fmap.shape != last_map.shape:
                raise ConfigError("history maps must share one shape")
        if fmap.shape[1:] != self.spec.shape:
            raise ConfigError("map does not match the history grid")
        self._entries.append((timestamp, fmap, pose))

    def aligned(self, current_pose: Pose2D, out_of_range: str = "zero") -> list[FeatureMap]:
        """Every cached map warped straight to ``current_pose``, newest first."""
        snapshot = list(self._entries)
        return [
            warp_polar_feature(fmap, EgoMotion.between(pose, current_pose), self.spec, out_of_range)
            for _, fmap, pose in reversed(snapshot)
        ]


@dataclass(frozen=True, eq=False)
class FusionWeights:
    """Per-bin linear map over concatenated channels (a 1x1 convolution)."""

    matrix: np.ndarray  # (C_out, C * (T + 1))
    bias: np.ndarray | None = None

    @classmethod
    def identity(cls, channels: int, n_history: int = 0) -> "FusionWeights":
        m = np.zeros((channels, channels * (n_history + 1)))
        m[:, :channels] = np.eye(channels)
        return cls(m)

    @classmethod
    def average(cls, channels: int, n_history: int) -> "FusionWeights":
        m = np.tile(np.eye(channels), (1, n_history + 1)) / (n_history + 1)
        return cls(m)


def fuse_history(current, history: Sequence, weights: FusionWeights) -> FeatureMap:
    """Channel-concatenate [current, aligned history...] and apply ``weights`` per bin."""
    cur = as_array(current)
    maps = [cur] + [as_array(h) for h in history]
    if any(m.shape != cur.shape for m in maps):
        raise ConfigError("history maps must match the current map shape")
    stacked = np.concatenate(maps, axis=0)
    W = np.asarray(weights.matrix, dtype=np.float64)
    if W.ndim != 2 or W.shape[1] != stacked.shape[0]:
        raise ConfigError(f"weights {W.shape} incompatible with {stacked.shape[0]} input channels")
    out = np.einsum("oc,cab->oab", W, stacked)
    if weights.bias is not None:
        b = np.asarray(weights.bias, dtype=np.float64)
        if b.shape != (W.shape[0],):
            raise ConfigError("bias length must equal output channels")
        out += b[:, None, None]
    return FeatureMap(out)
