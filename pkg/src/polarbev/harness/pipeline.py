"""End-to-end pipeline runs and the rotation experiments built on them."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from polarbev.camera import CameraModel, FrustumLattice, generate_frustum
from polarbev.codec import (
    BoxPolar,
    HeatmapTarget,
    azimuth_rotate_cart,
    decode_polar,
    encode_polar,
    make_heatmap_target,
    apply_sae,
)
from polarbev.errors import ConfigError, DegenerateCenterError, InvariantViolation
from polarbev.harness.scene import SyntheticScene, is_evenly_spaced, rotate_rig, synthesize_views
from polarbev.lift import FeatureMap, lift_features
from polarbev.polar_grid import (
    CartGridSpec,
    GridSpec,
    PolarGridSpec,
    PoolingIndex,
    build_pooling_index,
    splat_pool,
)
from polarbev.temporal import FeatureHistory, FusionWeights, fuse_history

log = logging.getLogger(__name__)

EXACT_TOL = 1e-5
LATTICE_TOL = 1e-9
MASS_RTOL = 1e-5

REVOLVE_NOTE = "synthetic revolve: same images on a turned rig; structural analog, not metric"

# six-camera view labels in rig order (camera 0 forward, counter-clockwise)
RIG_VIEWS = ("FRONT", "FRONT LEFT", "BACK LEFT", "BACK", "BACK RIGHT", "FRONT RIGHT")


def revolve_rig(rig: Sequence[CameraModel], k_slots: int) -> list[CameraModel]:
    """Turn every camera by ``k_slots`` rig spacings so camera n takes camera n+k's azimuth.

    Cameras are indexed by increasing azimuth, so positive ``k_slots`` turns
    counter-clockwise seen from above.
    """
    n = len(rig)
    if not is_evenly_spaced(rig):
        raise ConfigError("revolving needs an evenly spaced rig")
    return rotate_rig(rig, 2 * math.pi * k_slots / n)


def revolved_view_order(views: Sequence[str], k_slots: int) -> list[str]:
    """Image source per slot once every camera has moved ``k_slots`` places along ``views``.

    With the nuScenes views listed clockwise and the vehicle turned one slot
    clockwise this gives ['BACK LEFT', 'FRONT LEFT', 'FRONT', 'FRONT RIGHT',
    'BACK RIGHT', 'BACK'].
    """
    n = len(views)
    k = k_slots % n
    return list(views[n - k:]) + list(views[:n - k])


def pool_views(feats, depths, frustum: FrustumLattice, index: PoolingIndex) -> FeatureMap:
    frustum_feats = np.stack([lift_features(f, d) for f, d in zip(feats, depths)])
    return splat_pool(frustum_feats, index)


def assigned_mass(feats, depths, index: PoolingIndex) -> float:
    """Total lifted feature mass over the nodes the index keeps."""
    flat = np.stack([lift_features(f, d) for f, d in zip(feats, depths)])
    n_cam, c = flat.shape[:2]
    flat = flat.reshape(n_cam, c, -1).transpose(1, 0, 2).reshape(c, -1)
    return float(flat[:, index.node_ids].sum())


def bev_for(scene: SyntheticScene, objects_ego, spec: GridSpec,
            rig: Sequence[CameraModel] | None = None,
            index: PoolingIndex | None = None) -> FeatureMap:
    rig = scene.rig if rig is None else rig
    frustum = generate_frustum(scene.feature_size, scene.stride, scene.depth_bins)
    if index is None:
        index = build_pooling_index(frustum, rig, spec)
    feats, depths = synthesize_views(scene, objects_ego, rig)
    return pool_views(feats, depths, frustum, index)


def heatmap_logits(target: HeatmapTarget, gain: float = 8.0) -> FeatureMap:
    """Foreground attention logits derived from the class heatmaps."""
    fg = target.data.max(axis=0, keepdims=True)
    return FeatureMap(gain * fg - gain / 2)


@dataclass(eq=False)
class PipelineResult:
    frames: list[FeatureMap]  # single-frame polar BEV per timestamp
    fused: FeatureMap
    output: FeatureMap  # after attention reweighting
    boxes: list[BoxPolar]
    heatmap: HeatmapTarget
    decoded: list
    n_dropped: int
    masses: list[tuple[float, float]] = field(default_factory=list)  # (BEV, assigned frustum)


def run_pipeline(scene: SyntheticScene, spec: PolarGridSpec, frames: int | None = None,
                 sae: str = "none", history: int = 8, check: bool = True,
                 index: PoolingIndex | None = None) -> PipelineResult:
    """Lift, splat, fuse history, reweight, and encode targets for the last frame.

    History maps are warped straight to the current pose and averaged with the
    current map. ``sae`` is ``"none"`` or ``"heatmap"`` (logits from the
    ground-truth heatmap). A cached ``index`` must come from the same rig,
    lattice, and grid.
    """
    if not isinstance(spec, PolarGridSpec):
        raise ConfigError("run_pipeline needs a polar grid")
    frames = len(scene.trajectory) if frames is None else frames
    if not 1 <= frames <= len(scene.trajectory):
        raise ConfigError(f"frames must be in [1, {len(scene.trajectory)}]")
    frustum = generate_frustum(scene.feature_size, scene.stride, scene.depth_bins)
    if index is None:
        index = build_pooling_index(frustum, scene.rig, spec)
    elif index.grid_shape != spec.shape or index.n_nodes != len(scene.rig) * frustum.n_nodes:
        raise ConfigError("cached pooling index does not match this scene and grid")
    if index.n_assigned + index.n_dropped != len(scene.rig) * frustum.n_nodes:
        raise InvariantViolation("pooling index lost nodes")

    cache = FeatureHistory(spec, history)
    per_frame, masses = [], []
    fused = None
    for f in range(frames):
        t, pose = scene.trajectory[f]
        feats, depths = synthesize_views(scene, scene.objects_at(f))
        bev = pool_views(feats, depths, frustum, index)
        mass = assigned_mass(feats, depths, index)
        total = float(bev.data.sum())
        masses.append((total, mass))
        if check and abs(total - mass) > MASS_RTOL * max(abs(mass), 1.0):
            raise InvariantViolation(f"frame {f}: BEV mass {total} != frustum mass {mass}")
        aligned = cache.aligned(pose)
        fused = fuse_history(bev, aligned, FusionWeights.average(scene.channels, len(aligned)))
        cache.push(t, bev, pose)
        per_frame.append(bev)

    boxes = []
    for b in scene.objects_at(frames - 1):
        try:
            boxes.append(encode_polar(b))
        except DegenerateCenterError:
            log.warning("object at the ego origin cannot be polar-encoded; skipped")
    target = make_heatmap_target(boxes, spec, scene.n_classes)
    if sae == "heatmap":
        output = apply_sae(fused, heatmap_logits(target))
    elif sae == "none":
        output = fused
    else:
        raise ConfigError(f"unknown sae mode {sae!r}")
    return PipelineResult(per_frame, fused, output, boxes, target,
                          [decode_polar(b) for b in boxes], index.n_dropped, masses)


# ------------------------------------------------------------ equivariance


def best_shift_residual(ref: np.ndarray, moved: np.ndarray, axes=(1, 2)) -> tuple[float, int, int]:
    """Smallest max-abs residual between ``moved`` and any circular shift of ``ref``."""
    best = (math.inf, 0, 0)
    for axis in axes:
        for s in range(ref.shape[axis]):
            res = float(np.max(np.abs(moved - np.roll(ref, s, axis=axis))))
            if res < best[0]:
                best = (res, axis, s)
    return best


@dataclass
class EquivarianceReport:
    delta: float
    k_bins: float
    mode: str  # "exact" or "interpolated"
    polar_residual: float
    cart_residual: float
    tolerance: float
    degenerate: bool
    polar_peak: float
    cart_peak: float

    @property
    def polar_ok(self) -> bool:
        return self.degenerate or self.polar_residual < self.tolerance

    header = ("delta", "polar_residual", "cart_residual", "k_bins", "mode", "tolerance", "degenerate")

    def row(self) -> tuple:
        return (repr(self.delta), repr(self.polar_residual), repr(self.cart_residual),
                repr(self.k_bins), self.mode, repr(self.tolerance), int(self.degenerate))


def offlattice_residual(ref: np.ndarray, moved: np.ndarray, k: float) -> float:
    """Largest violation of what a fractional azimuth shift must preserve.

    A turn by ``k`` bins leaves every radius unchanged, so per-ring totals
    over theta are conserved. With non-negative features each rotated bin
    also collects only nodes from the two original bins it straddles.
    """
    ring = float(np.max(np.abs(moved.sum(axis=1) - ref.sum(axis=1))))
    if np.any(ref < 0):
        return ring
    lo = math.floor(k)
    bracket = np.roll(ref, lo, axis=1) + np.roll(ref, lo + 1, axis=1)
    return max(ring, float(np.max(moved - bracket, initial=0.0)))


def compare_rotation(polar_ref, polar_rot, cart_ref, cart_rot, delta: float,
                     spec_polar: PolarGridSpec) -> EquivarianceReport:
    k = delta / spec_polar.delta_theta
    k_int = round(k)
    if abs(k - k_int) < LATTICE_TOL:
        mode = "exact"
        polar_res = float(np.max(np.abs(polar_rot - np.roll(polar_ref, k_int, axis=1))))
        tol = EXACT_TOL
    else:
        mode = "interpolated"
        polar_res = offlattice_residual(polar_ref, polar_rot, k)
        tol = EXACT_TOL * max(1.0, float(np.max(np.abs(polar_ref.sum(axis=1)))))
    cart_res = best_shift_residual(cart_ref, cart_rot)[0]
    degenerate = bool(np.ptp(polar_ref) == 0 and np.ptp(cart_ref) == 0)
    return EquivarianceReport(delta, k, mode, polar_res, cart_res, tol, degenerate,
                              float(np.max(np.abs(polar_ref))), float(np.max(np.abs(cart_ref))))


def equivariance_report(scene: SyntheticScene, spec_polar: PolarGridSpec,
                        spec_cart: CartGridSpec, delta: float) -> EquivarianceReport:
    """Rotate rig and objects jointly by ``delta`` and compare both BEV maps to shifts of the originals.

    Uses the objects of the first trajectory frame. When ``delta`` is not a
    whole number of azimuth bins no bin shift exists, so the polar check
    covers ring totals and the two-bin bracket with a tolerance scaled to the
    ring mass, and the report is flagged ``interpolated``.
    """
    objects = scene.objects_at(0)
    turned = [azimuth_rotate_cart(b, delta) for b in objects]
    rig_rot = rotate_rig(scene.rig, delta)
    polar_ref = bev_for(scene, objects, spec_polar).data
    polar_rot = bev_for(scene, turned, spec_polar, rig_rot).data
    cart_ref = bev_for(scene, objects, spec_cart).data
    cart_rot = bev_for(scene, turned, spec_cart, rig_rot).data
    return compare_rotation(polar_ref, polar_rot, cart_ref, cart_rot, delta, spec_polar)


@dataclass
class RevolveRow:
    k: int
    report: EquivarianceReport
    views: str

    header = ("k", "delta_deg", "k_bins", "mode", "polar_residual", "tolerance",
              "cart_residual", "polar_peak", "cart_peak", "views")

    def row(self) -> tuple:
        r = self.report
        return (self.k, repr(math.degrees(r.delta)), repr(r.k_bins), r.mode,
                repr(r.polar_residual), repr(r.tolerance), repr(r.cart_residual),
                repr(r.polar_peak), repr(r.cart_peak), self.views)


def revolve_test(scene: SyntheticScene, k_slots: int, spec_polar: PolarGridSpec,
                 spec_cart: CartGridSpec) -> RevolveRow:
    """Keep every camera's image but mount it ``k_slots`` places further round the rig.

    This is the rig-and-scene joint rotation seen from the BEV side: the polar
    map must shift along theta (exactly when the revolve angle is a whole
    number of azimuth bins), the Cartesian map has no such symmetry.
    """
    n = len(scene.rig)
    delta = 2 * math.pi * k_slots / n
    frustum = generate_frustum(scene.feature_size, scene.stride, scene.depth_bins)
    feats, depths = synthesize_views(scene, scene.objects_at(0))
    rig_rev = revolve_rig(scene.rig, k_slots)

    def bev(rig, spec):
        return pool_views(feats, depths, frustum, build_pooling_index(frustum, rig, spec)).data

    report = compare_rotation(bev(scene.rig, spec_polar), bev(rig_rev, spec_polar),
                              bev(scene.rig, spec_cart), bev(rig_rev, spec_cart), delta, spec_polar)
    labels = list(RIG_VIEWS) if n == len(RIG_VIEWS) else [f"CAM{i}" for i in range(n)]
    return RevolveRow(k_slots, report, "|".join(revolved_view_order(labels, k_slots)))
