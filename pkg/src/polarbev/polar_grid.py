"""Polar and Cartesian BEV grids and the Splat sum-pooling kernel.

The fast path precomputes a :class:`PoolingIndex` (frustum node -> BEV bin,
sorted by bin) once per rig and lattice, then reduces every bin's contiguous
interval with a compiled kernel. Work is split across bins only; inside a bin
the accumulation order is the index order, so the result does not depend on
the thread count.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

from polarbev.camera import CameraModel, FrustumLattice, unproject_pixel
from polarbev.errors import ConfigError
from polarbev.lift import FeatureMap

if "NUMBA_THREADING_LAYER" not in os.environ:
    # the bundled TBB is too old on some hosts; workqueue is always available
    numba.config.THREADING_LAYER = "workqueue"

PBIX_MAGIC = b"PBIX"
PBIX_VERSION = 1
# coordinates this many ulps below a bin edge count as on it (exact lattice points)
EDGE_ULPS = 8


@dataclass(frozen=True)
class PolarGridSpec:
    n_theta: int = 256
    n_r: int = 64
    r_min: float = 1.0
    r_max: float = 65.0

    def __post_init__(self):
        if self.n_theta < 1 or self.n_r < 1:
            raise ConfigError("n_theta and n_r must be >= 1")
        if not 0 <= self.r_min < self.r_max:
            raise ConfigError("need 0 <= r_min < r_max")

    @property
    def delta_theta(self) -> float:
        return 2 * math.pi / self.n_theta

    @property
    def delta_r(self) -> float:
        return (self.r_max - self.r_min) / self.n_r

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_theta, self.n_r)

    @property
    def n_bins(self) -> int:
        return self.n_theta * self.n_r

    def bin_ids(self, points: np.ndarray) -> np.ndarray:
        theta, r, _ = cart_to_cyl(points)
        return polar_bin_ids(theta, r, self)

    def to_dict(self) -> dict:
        return {"kind": "polar", "n_theta": self.n_theta, "n_r": self.n_r,
                "r_min": self.r_min, "r_max": self.r_max}


@dataclass(frozen=True)
class CartGridSpec:
    n_x: int = 128
    n_y: int = 128
    x_min: float = -65.0
    x_max: float = 65.0
    y_min: float = -65.0
    y_max: float = 65.0

    def __post_init__(self):
        if self.n_x < 1 or self.n_y < 1:
            raise ConfigError("n_x and n_y must be >= 1")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ConfigError("grid bounds must satisfy min < max")

    @property
    def delta_x(self) -> float:
        return (self.x_max - self.x_min) / self.n_x

    @property
    def delta_y(self) -> float:
        return (self.y_max - self.y_min) / self.n_y

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_x, self.n_y)

    @property
    def n_bins(self) -> int:
        return self.n_x * self.n_y

    def bin_ids(self, points: np.ndarray) -> np.ndarray:
        return cart_bin_ids(points[..., 0], points[..., 1], self)

    def to_dict(self) -> dict:
        return {"kind": "cart", "n_x": self.n_x, "n_y": self.n_y,
                "x_min": self.x_min, "x_max": self.x_max,
                "y_min": self.y_min, "y_max": self.y_max}


GridSpec = PolarGridSpec | CartGridSpec


def grid_spec_from_dict(d: dict) -> GridSpec:
    d = dict(d)
    kind = d.pop("kind", "polar")
    try:
        if kind == "polar":
            return PolarGridSpec(**d)
        if kind == "cart":
            return CartGridSpec(**d)
    except TypeError as exc:
        raise ConfigError(f"bad grid spec fields: {exc}") from exc
    raise ConfigError(f"unknown grid kind {kind!r}")


def cart_to_cyl(p) -> tuple:
    """(x, y, z) -> (theta, r, z). ``theta`` is 0 at the origin."""
    p = np.asarray(p, dtype=np.float64)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    r = np.hypot(x, y)
    theta = np.where(r == 0, 0.0, np.arctan2(y, x))
    if theta.ndim == 0:
        return float(theta), float(r), float(z)
    return theta, r, z


def _edge_floor(u, scale: float) -> np.ndarray:
    """floor(u), treating values a few ulps (of ``scale``) below an edge as on it."""
    k = np.floor(u)
    k = np.where(k + 1 - u <= EDGE_ULPS * np.finfo(float).eps * scale, k + 1, k)
    return k.astype(np.int64)


def polar_bin_ids(theta, r, spec: PolarGridSpec) -> np.ndarray:
    """Flattened bin id ``i * n_r + j`` per sample, -1 where dropped."""
    theta = np.asarray(theta, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    i = _edge_floor((theta + math.pi) / spec.delta_theta, spec.n_theta)
    # half-open [-pi, pi): pi wraps to 0, rounding just below pi stays in the last bin
    i = np.where(theta >= math.pi, 0, np.clip(i, 0, spec.n_theta - 1))
    j = _edge_floor((r - spec.r_min) / spec.delta_r, spec.r_max / spec.delta_r)
    ok = (r >= spec.r_min) & (r < spec.r_max) & (j >= 0) & (j < spec.n_r)
    return np.where(ok, i * spec.n_r + j, -1)


def polar_bin_index(theta: float, r: float, spec: PolarGridSpec):
    """Bin (i, j) containing (theta, r), or None when r is out of range.

    The azimuth range is half-open: theta = pi lands in bin 0.
    """
    b = int(polar_bin_ids(theta, r, spec))
    return None if b < 0 else divmod(b, spec.n_r)


def cart_bin_ids(x, y, spec: CartGridSpec) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    i = _edge_floor((x - spec.x_min) / spec.delta_x, max(abs(spec.x_min), abs(spec.x_max)) / spec.delta_x)
    j = _edge_floor((y - spec.y_min) / spec.delta_y, max(abs(spec.y_min), abs(spec.y_max)) / spec.delta_y)
    ok = ((x >= spec.x_min) & (x < spec.x_max) & (y >= spec.y_min) & (y < spec.y_max)
          & (i >= 0) & (i < spec.n_x) & (j >= 0) & (j < spec.n_y))
    return np.where(ok, i * spec.n_y + j, -1)


def cart_bin_index(x: float, y: float, spec: CartGridSpec):
    b = int(cart_bin_ids(x, y, spec))
    return None if b < 0 else divmod(b, spec.n_y)


@dataclass(frozen=True, eq=False)
class PoolingIndex:
    """Precomputed node -> bin assignment sorted by (bin, camera, node).

    Node ids are global: ``camera * nodes_per_camera + (k * H_F + i) * W_F + j``.
    """

    grid_shape: tuple[int, int]
    n_cameras: int
    nodes_per_camera: int
    node_ids: np.ndarray  # (M,) sorted assigned nodes
    bin_ids: np.ndarray  # (M,) non-decreasing
    interval_bins: np.ndarray
    interval_starts: np.ndarray
    interval_lengths: np.ndarray

    @property
    def n_bins(self) -> int:
        return self.grid_shape[0] * self.grid_shape[1]

    @property
    def n_nodes(self) -> int:
        return self.n_cameras * self.nodes_per_camera

    @property
    def n_assigned(self) -> int:
        return int(self.node_ids.size)

    @property
    def n_dropped(self) -> int:
        return self.n_nodes - self.n_assigned

    @classmethod
    def from_assignment(cls, bins: np.ndarray, grid_shape, n_cameras, nodes_per_camera):
        """Build from a per-node bin array (node order, -1 = dropped)."""
        bins = np.asarray(bins, dtype=np.int64)
        if bins.size != n_cameras * nodes_per_camera:
            raise ConfigError("assignment length does not match node count")
        n_bins = grid_shape[0] * grid_shape[1]
        if np.any(bins >= n_bins):
            raise ConfigError("bin id out of range")
        kept = np.flatnonzero(bins >= 0)
        order = np.argsort(bins[kept], kind="stable")
        node_ids = kept[order]
        return cls._from_sorted(bins[node_ids], node_ids, grid_shape, n_cameras, nodes_per_camera)

    @classmethod
    def _from_sorted(cls, bin_ids, node_ids, grid_shape, n_cameras, nodes_per_camera):
        uniq, starts, counts = np.unique(bin_ids, return_index=True, return_counts=True)
        return cls(
            grid_shape=tuple(int(s) for s in grid_shape),
            n_cameras=int(n_cameras),
            nodes_per_camera=int(nodes_per_camera),
            node_ids=np.ascontiguousarray(node_ids, dtype=np.int64),
            bin_ids=np.ascontiguousarray(bin_ids, dtype=np.int64),
            interval_bins=uniq.astype(np.int64),
            interval_starts=starts.astype(np.int64),
            interval_lengths=counts.astype(np.int64),
        )

    def save(self, path) -> None:
        """Write the PBIX sidecar: magic, u32 version, then (bin, node) u32 pairs."""
        pairs = np.empty((self.n_assigned, 2), dtype="<u4")
        pairs[:, 0] = self.bin_ids
        pairs[:, 1] = self.node_ids
        with open(path, "wb") as fh:
            fh.write(PBIX_MAGIC)
            fh.write(struct.pack("<I", PBIX_VERSION))
            fh.write(pairs.tobytes())

    @classmethod
    def load(cls, path, grid_shape, n_cameras: int, nodes_per_camera: int) -> "PoolingIndex":
        raw = Path(path).read_bytes()
        if raw[:4] != PBIX_MAGIC:
            raise ConfigError(f"{path}: not a PBIX file")
        (version,) = struct.unpack("<I", raw[4:8])
        if version != PBIX_VERSION:
            raise ConfigError(f"{path}: unsupported PBIX version {version}")
        body = raw[8:]
        if len(body) % 8:
            raise ConfigError(f"{path}: truncated pair table")
        pairs = np.frombuffer(body, dtype="<u4").reshape(-1, 2).astype(np.int64)
        bin_ids, node_ids = pairs[:, 0], pairs[:, 1]
        n_bins = grid_shape[0] * grid_shape[1]
        if np.any(bin_ids >= n_bins) or np.any(node_ids >= n_cameras * nodes_per_camera):
            raise ConfigError(f"{path}: ids out of range for the given grid/lattice")
        db, dn = np.diff(bin_ids), np.diff(node_ids)
        if np.any(db < 0) or np.any((db == 0) & (dn <= 0)):
            raise ConfigError(f"{path}: pairs are not sorted by (bin, node)")
        return cls._from_sorted(bin_ids, node_ids, grid_shape, n_cameras, nodes_per_camera)


def frustum_points_ego(frustum: FrustumLattice, cam: CameraModel) -> np.ndarray:
    """(N_D*H_F*W_F, 3) ego-frame points of one camera, in node order."""
    uvd = np.moveaxis(frustum.points, 0, -1).reshape(-1, 3)
    return unproject_pixel(uvd, cam)


def build_pooling_index(frustum: FrustumLattice, cams: Sequence[CameraModel],
                        spec: GridSpec) -> PoolingIndex:
    if not cams:
        raise ConfigError("need at least one camera")
    per_cam = [spec.bin_ids(frustum_points_ego(frustum, cam)) for cam in cams]
    return PoolingIndex.from_assignment(
        np.concatenate(per_cam), spec.shape, len(cams), frustum.n_nodes
    )


def _stack_feats(frustum_feats, n_cameras: int, nodes_per_camera: int) -> np.ndarray:
    if isinstance(frustum_feats, np.ndarray) and frustum_feats.ndim == 5:
        feats = frustum_feats
    else:
        feats = np.stack([np.asarray(f, dtype=np.float64) for f in frustum_feats])
    if feats.ndim != 5 or feats.shape[0] != n_cameras:
        raise ConfigError(f"expected {n_cameras} cameras of (C, N_D, H_F, W_F) features")
    n_cam, c = feats.shape[:2]
    if int(np.prod(feats.shape[2:])) != nodes_per_camera:
        raise ConfigError("frustum feature lattice does not match the pooling index")
    # (N_cam, C, L) -> (C, N_cam * L), global node order
    return np.ascontiguousarray(
        feats.reshape(n_cam, c, -1).transpose(1, 0, 2).reshape(c, -1), dtype=np.float64
    )


@numba.njit(parallel=True, cache=True)
def _reduce_intervals(feats, node_ids, bins, starts, lengths, out):
    n_chan = feats.shape[0]
    for t in numba.prange(bins.shape[0]):
        s = starts[t]
        e = s + lengths[t]
        b = bins[t]
        for c in range(n_chan):
            acc = 0.0
            for q in range(s, e):
                acc += feats[c, node_ids[q]]
            out[c, b] = acc


def splat_pool(frustum_feats, index: PoolingIndex, spec: GridSpec | None = None) -> FeatureMap:
    """Sum-pool frustum features into the arrayed (C, A, B) BEV map."""
    if spec is not None and tuple(spec.shape) != index.grid_shape:
        raise ConfigError("grid spec does not match the pooling index")
    feats = _stack_feats(frustum_feats, index.n_cameras, index.nodes_per_camera)
    out = np.zeros((feats.shape[0], index.n_bins))
    _reduce_intervals(feats, index.node_ids, index.interval_bins,
                      index.interval_starts, index.interval_lengths, out)
    return FeatureMap(out.reshape(feats.shape[0], *index.grid_shape))


def splat_pool_bruteforce(frustum_feats, frustum: FrustumLattice,
                          cams: Sequence[CameraModel], spec: GridSpec) -> FeatureMap:
    """Reference pooling: bin every node directly and scatter-add in node order."""
    feats = _stack_feats(frustum_feats, len(cams), frustum.n_nodes)
    c = feats.shape[0]
    out = np.zeros((c, spec.n_bins))
    eps = np.finfo(float).eps

    def cell(u, scale):
        k = np.floor(u)
        return np.where(k + 1 - u <= EDGE_ULPS * eps * scale, k + 1, k).astype(np.int64)

    for n, cam in enumerate(cams):
        pts = frustum_points_ego(frustum, cam)
        x, y = pts[:, 0], pts[:, 1]
        if isinstance(spec, PolarGridSpec):
            theta = np.arctan2(y, x)
            theta[(x == 0) & (y == 0)] = 0.0
            r = np.sqrt(x * x + y * y)
            i = cell((theta + np.pi) / (2 * np.pi / spec.n_theta), spec.n_theta)
            i = np.where(theta >= np.pi, 0, np.minimum(i, spec.n_theta - 1))
            dr = (spec.r_max - spec.r_min) / spec.n_r
            j = cell((r - spec.r_min) / dr, spec.r_max / dr)
            keep = (r >= spec.r_min) & (r < spec.r_max) & (j < spec.n_r)
            flat = i * spec.n_r + j
        else:
            sx = max(abs(spec.x_min), abs(spec.x_max)) / spec.delta_x
            sy = max(abs(spec.y_min), abs(spec.y_max)) / spec.delta_y
            i = cell((x - spec.x_min) / spec.delta_x, sx)
            j = cell((y - spec.y_min) / spec.delta_y, sy)
            keep = (i >= 0) & (i < spec.n_x) & (j >= 0) & (j < spec.n_y)
            keep &= (x >= spec.x_min) & (x < spec.x_max) & (y >= spec.y_min) & (y < spec.y_max)
            flat = i * spec.n_y + j
        lo = n * frustum.n_nodes
        vals = feats[:, lo:lo + frustum.n_nodes][:, keep]
        for ch in range(c):
            np.add.at(out[ch], flat[keep], vals[ch])
    return FeatureMap(out.reshape(c, *spec.shape))
