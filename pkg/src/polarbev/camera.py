"""Pinhole camera model, frustum lattice, and 2D ground-truth projection.

Coordinates follow the usual conventions: ego frame is x forward, y left,
z up; camera frame is x right, y down, z along the optical axis. ``K`` is a
4x4 intrinsic matrix whose third row passes depth through, so that
``K @ T @ [x, y, z, 1] = [u*d, v*d, d, 1]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from polarbev.errors import BehindCameraError, ConfigError, DomainError

EPS_DEPTH = 1e-6
DEFAULT_DEPTH_BINS = tuple(np.arange(1.0, 60.0, 1.0))
_RIGID_TOL = 1e-6

_BOTTOM = np.array([0.0, 0.0, 0.0, 1.0])


@dataclass(frozen=True, eq=False)
class CameraModel:
    """One calibrated view.

    Attributes:
        intrinsics: (4, 4) matrix ``K`` in pixels.
        extrinsics: (4, 4) rigid matrix ``T`` mapping ego to camera coordinates.
        image_size: (height, width) in pixels.
    """

    intrinsics: np.ndarray
    extrinsics: np.ndarray
    image_size: tuple[int, int]

    def __post_init__(self):
        K = np.array(self.intrinsics, dtype=np.float64)
        T = np.array(self.extrinsics, dtype=np.float64)
        if K.shape != (4, 4) or T.shape != (4, 4):
            raise ConfigError(f"K and T must be 4x4, got {K.shape} and {T.shape}")
        if not np.allclose(K[3], _BOTTOM, atol=0.0):
            raise ConfigError("bottom row of K must be (0, 0, 0, 1)")
        if not np.allclose(T[3], _BOTTOM, atol=0.0):
            raise ConfigError("bottom row of T must be (0, 0, 0, 1)")
        if abs(np.linalg.det(K)) < 1e-12:
            raise np.linalg.LinAlgError("intrinsic matrix K is singular")
        R = T[:3, :3]
        if not np.allclose(R.T @ R, np.eye(3), atol=_RIGID_TOL) or np.linalg.det(R) <= 0:
            raise ConfigError("extrinsic rotation block must be a proper rotation")
        h, w = (int(s) for s in self.image_size)
        if h < 1 or w < 1:
            raise ConfigError(f"image_size must be positive, got {self.image_size}")
        K.flags.writeable = False
        T.flags.writeable = False
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "extrinsics", T)
        object.__setattr__(self, "image_size", (h, w))

    @classmethod
    def from_pinhole(cls, fx, fy, cx, cy, extrinsics=None, image_size=(900, 1600)):
        K = np.eye(4)
        K[0, 0], K[1, 1], K[0, 2], K[1, 2] = fx, fy, cx, cy
        T = np.eye(4) if extrinsics is None else extrinsics
        return cls(K, T, tuple(image_size))

    @property
    def height(self) -> int:
        return self.image_size[0]

    @property
    def width(self) -> int:
        return self.image_size[1]

    @property
    def principal_point(self) -> tuple[float, float]:
        return float(self.intrinsics[0, 2]), float(self.intrinsics[1, 2])

    def cam_to_ego(self) -> np.ndarray:
        return rigid_inverse(self.extrinsics)

    def optical_axis(self) -> np.ndarray:
        """Unit viewing direction expressed in the ego frame."""
        return self.cam_to_ego()[:3, :3] @ np.array([0.0, 0.0, 1.0])

    def center(self) -> np.ndarray:
        """Camera center in the ego frame."""
        return self.cam_to_ego()[:3, 3].copy()

    def with_extrinsics(self, extrinsics: np.ndarray) -> "CameraModel":
        return CameraModel(self.intrinsics, extrinsics, self.image_size)

    def to_dict(self) -> dict:
        h, w = self.image_size
        return {
            "K": [float(v) for v in self.intrinsics.ravel()],
            "T": [float(v) for v in self.extrinsics.ravel()],
            "width": w,
            "height": h,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        try:
            K = np.asarray(d["K"], dtype=np.float64)
            T = np.asarray(d["T"], dtype=np.float64)
            size = (int(d["height"]), int(d["width"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed camera entry: {exc}") from exc
        if K.size != 16 or T.size != 16:
            raise ConfigError("K and T must each hold 16 numbers")
        return cls(K.reshape(4, 4), T.reshape(4, 4), size)


@dataclass(frozen=True, eq=False)
class FrustumLattice:
    points: np.ndarray  # (3, N_D, H_F, W_F) of (u, v, d)
    depth_bins: tuple[float, ...]
    stride: float

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.points.shape[1:]

    @property
    def n_nodes(self) -> int:
        n_d, h, w = self.shape
        return n_d * h * w


@dataclass(frozen=True)
class BBox2D:
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    center: tuple[float, float]


def rigid_inverse(T: np.ndarray) -> np.ndarray:
    R = T[:3, :3]
    out = np.eye(4)
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ T[:3, 3]
    return out


def yaw_matrix(angle: float) -> np.ndarray:
    """4x4 rotation about ego z."""
    c, s = np.cos(angle), np.sin(angle)
    M = np.eye(4)
    M[:2, :2] = [[c, -s], [s, c]]
    return M


def look_extrinsics(position: Sequence[float], yaw: float, pitch: float = 0.0) -> np.ndarray:
    """Ego->camera transform for a camera at ``position`` looking at azimuth ``yaw``.

    Positive pitch tilts the optical axis upward.
    """
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    forward = np.array([cy * cp, sy * cp, sp])
    right = np.array([sy, -cy, 0.0])
    down = np.cross(forward, right)
    R_ego_cam = np.column_stack([right, down, forward])
    cam_to_ego = np.eye(4)
    cam_to_ego[:3, :3] = R_ego_cam
    cam_to_ego[:3, 3] = position
    return rigid_inverse(cam_to_ego)


def unproject_pixel(p, cam: CameraModel) -> np.ndarray:
    """Lift pixel coordinates with depth to ego-frame 3D points.

    ``p`` is (..., 3) holding (u, v, d); returns (..., 3) holding (x, y, z).
    """
    p = np.asarray(p, dtype=np.float64)
    d = p[..., 2]
    if np.any(~(d > 0)):
        raise DomainError("depth must be positive")
    M = np.linalg.inv(cam.extrinsics) @ np.linalg.inv(cam.intrinsics)
    hom = np.stack([p[..., 0] * d, p[..., 1] * d, d, np.ones_like(d)], axis=-1)
    out = hom @ M.T
    return out[..., :3]


def project_point(p, cam: CameraModel, eps_depth: float = EPS_DEPTH) -> np.ndarray:
    """Project ego-frame points to (u, v, d). Inverse of :func:`unproject_pixel`."""
    p = np.asarray(p, dtype=np.float64)
    hom = np.concatenate([p, np.ones(p.shape[:-1] + (1,))], axis=-1)
    q = hom @ (cam.intrinsics @ cam.extrinsics).T
    d = q[..., 2]
    if np.any(~(d > eps_depth)):
        raise BehindCameraError("point lies behind the camera")
    return np.stack([q[..., 0] / d, q[..., 1] / d, d], axis=-1)


def generate_frustum(feature_size, stride: float, depth_bins=DEFAULT_DEPTH_BINS) -> FrustumLattice:
    h, w = (int(s) for s in feature_size)
    if h < 1 or w < 1 or stride < 1:
        raise ConfigError("feature size and stride must be >= 1")
    bins = np.asarray(depth_bins, dtype=np.float64).ravel()
    if bins.size == 0:
        raise ConfigError("depth_bins is empty")
    if np.any(bins <= 0) or np.any(np.diff(bins) <= 0):
        raise ConfigError("depth_bins must be positive and strictly increasing")
    n_d = bins.size
    u = (np.arange(w) + 0.5) * stride
    v = (np.arange(h) + 0.5) * stride
    points = np.empty((3, n_d, h, w))
    points[0] = u[None, None, :]
    points[1] = v[None, :, None]
    points[2] = bins[:, None, None]
    points.flags.writeable = False
    return FrustumLattice(points, tuple(float(b) for b in bins), float(stride))


def box_corners(box) -> np.ndarray:
    """(8, 3) ego-frame corners of a Cartesian box; ``l`` runs along the heading."""
    l, w, h = box.l, box.w, box.h
    local = np.array(
        [[sx * l / 2, sy * w / 2, sz * h / 2]
         for sx in (1, -1) for sy in (1, -1) for sz in (1, -1)]
    )
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ R.T + np.array([box.x, box.y, box.z])


def project_box3d_to_bbox2d(box, cam: CameraModel, clip: bool = True,
                            eps_depth: float = EPS_DEPTH) -> BBox2D | None:
    """Axis-aligned 2D hull of a projected 3D box, or None when not visible.

    Only corners in front of the camera are used. The returned center is the
    projection of the 3D center and is never clipped.
    """
    corners = box_corners(box)
    hom = np.concatenate([corners, np.ones((8, 1))], axis=1)
    q = hom @ (cam.intrinsics @ cam.extrinsics).T
    front = q[:, 2] > eps_depth
    if not front.any():
        return None
    uv = q[front, :2] / q[front, 2:3]
    x0, y0 = uv.min(axis=0)
    x1, y1 = uv.max(axis=0)
    if clip:
        h, w = cam.image_size
        x0, x1 = np.clip([x0, x1], 0.0, w)
        y0, y1 = np.clip([y0, y1], 0.0, h)
        if x1 <= x0 or y1 <= y0:
            return None

    c = np.array([box.x, box.y, box.z, 1.0]) @ (cam.intrinsics @ cam.extrinsics).T
    if c[2] > eps_depth:
        center = (float(c[0] / c[2]), float(c[1] / c[2]))
    else:
        center = (float("nan"), float("nan"))
    return BBox2D(float(x0), float(y0), float(x1), float(y1), center)


def load_rig(path) -> list[CameraModel]:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read rig {path}: {exc}") from exc
    return rig_from_json(doc)


def rig_from_json(doc) -> list[CameraModel]:
    if not isinstance(doc, list) or not doc:
        raise ConfigError("rig document must be a nonempty JSON array")
    return [CameraModel.from_dict(entry) for entry in doc]


def dump_rig(rig: Sequence[CameraModel], path) -> None:
    Path(path).write_text(json.dumps([cam.to_dict() for cam in rig], indent=1))
