"""Polar parameterization of 3D boxes, heatmap targets, and attention reweighting."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from polarbev.errors import ConfigError, DegenerateCenterError, DomainError
from polarbev.lift import FeatureMap, as_array
from polarbev.polar_grid import PolarGridSpec

log = logging.getLogger(__name__)

EPS_R = 1e-6
MIN_OVERLAP = 0.1
MIN_RADIUS = 1


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    w = math.pi - math.fmod(math.pi - a, 2 * math.pi)
    if w <= -math.pi:
        w += 2 * math.pi
    elif w > math.pi:
        w -= 2 * math.pi
    return w


def angle_diff(a: float, b: float) -> float:
    """Smallest signed difference a - b modulo 2 pi."""
    return math.remainder(a - b, 2 * math.pi)


@dataclass(frozen=True)
class BoxCart:
    x: float
    y: float
    z: float
    w: float
    l: float  # noqa: E741
    h: float
    yaw: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    class_id: int = 0

    def __post_init__(self):
        if not (self.w > 0 and self.l > 0 and self.h > 0):
            raise ConfigError("box dimensions must be positive")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def params(self) -> tuple:
        return (self.x, self.y, self.z, self.w, self.l, self.h, self.yaw, self.vx, self.vy)


@dataclass(frozen=True)
class BoxPolar:
    theta: float
    r: float
    z: float
    w: float
    l: float  # noqa: E741
    h: float
    yaw: float = 0.0
    v_theta: float = 0.0
    v_r: float = 0.0
    class_id: int = 0

    def __post_init__(self):
        if not (self.w > 0 and self.l > 0 and self.h > 0):
            raise ConfigError("box dimensions must be positive")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def params(self) -> tuple:
        return (self.theta, self.r, self.z, self.w, self.l, self.h, self.yaw, self.v_theta, self.v_r)


def encode_polar(box: BoxCart, eps_r: float = EPS_R) -> BoxPolar:
    r = math.hypot(box.x, box.y)
    if r <= eps_r:
        raise DegenerateCenterError(f"box center radius {r} too close to the origin")
    theta = math.atan2(box.y, box.x)
    speed = math.hypot(box.vx, box.vy)
    if speed == 0.0:
        v_theta = v_r = 0.0
    else:
        rel = math.atan2(box.vy, box.vx) - theta
        v_r = speed * math.cos(rel)
        v_theta = speed * math.sin(rel)
    return BoxPolar(theta, r, box.z, box.w, box.l, box.h, box.yaw - theta,
                    v_theta, v_r, box.class_id)


def decode_polar(box: BoxPolar) -> BoxCart:
    if not box.r > 0:
        raise DomainError("polar box needs r > 0")
    c, s = math.cos(box.theta), math.sin(box.theta)
    return BoxCart(
        box.r * c, box.r * s, box.z, box.w, box.l, box.h,
        box.yaw + box.theta,
        box.v_r * c - box.v_theta * s,
        box.v_r * s + box.v_theta * c,
        box.class_id,
    )


def azimuth_rotate_cart(box: BoxCart, delta: float) -> BoxCart:
    """Rotate a box rigidly about the ego z axis."""
    c, s = math.cos(delta), math.sin(delta)
    return replace(
        box,
        x=c * box.x - s * box.y,
        y=s * box.x + c * box.y,
        yaw=box.yaw + delta,
        vx=c * box.vx - s * box.vy,
        vy=s * box.vx + c * box.vy,
    )


# ---------------------------------------------------------------- heatmaps


def gaussian_radius(height: float, width: float, min_overlap: float = MIN_OVERLAP) -> float:
    """CornerNet/CenterPoint radius keeping IoU >= min_overlap under center jitter."""
    a1 = 1
    b1 = height + width
    c1 = width * height * (1 - min_overlap) / (1 + min_overlap)
    r1 = (b1 + math.sqrt(b1 ** 2 - 4 * a1 * c1)) / 2

    a2 = 4
    b2 = 2 * (height + width)
    c2 = (1 - min_overlap) * width * height
    r2 = (b2 + math.sqrt(b2 ** 2 - 4 * a2 * c2)) / 2

    a3 = 4 * min_overlap
    b3 = -2 * min_overlap * (height + width)
    c3 = (min_overlap - 1) * width * height
    r3 = (b3 + math.sqrt(b3 ** 2 - 4 * a3 * c3)) / 2
    return min(r1, r2, r3)


@dataclass(eq=False)
class HeatmapTarget:
    data: np.ndarray  # (K, N_theta, N_r)
    centers: list = field(default_factory=list)  # (c_theta, c_r) per rendered box
    offsets: list = field(default_factory=list)  # (o_theta, o_r) in bin units
    radii: list = field(default_factory=list)
    class_ids: list = field(default_factory=list)
    box_indices: list = field(default_factory=list)
    skipped: list = field(default_factory=list)


def continuous_bin(theta: float, r: float, spec: PolarGridSpec) -> tuple[float, float]:
    return (theta + math.pi) / spec.delta_theta, (r - spec.r_min) / spec.delta_r


def footprint_bins(box: BoxPolar, spec: PolarGridSpec) -> tuple[float, float]:
    """Box footprint extent along (theta, r) in bin units."""
    c, s = abs(math.cos(box.yaw)), abs(math.sin(box.yaw))
    radial = box.l * c + box.w * s
    tangential = box.l * s + box.w * c
    return tangential / (box.r * spec.delta_theta), radial / spec.delta_r


def render_gaussian(canvas: np.ndarray, ci: int, cj: int, radius: int, wrap: bool = True) -> None:
    """Max-composite a unit-peak Gaussian at (ci, cj) into a 2D canvas in place."""
    n_a, n_b = canvas.shape
    sigma = (2 * radius + 1) / 6
    d = np.arange(-radius, radius + 1)
    g = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2 * sigma * sigma))
    rows = ci + d
    if wrap:
        rows = rows % n_a
        rows_ok = np.ones_like(rows, dtype=bool)
    else:
        rows_ok = (rows >= 0) & (rows < n_a)
    cols = cj + d
    cols_ok = (cols >= 0) & (cols < n_b)
    rr, cc = rows[rows_ok], cols[cols_ok]
    patch = g[np.ix_(rows_ok, cols_ok)]
    sub = canvas[np.ix_(rr, cc)]
    canvas[np.ix_(rr, cc)] = np.maximum(sub, patch)


def make_heatmap_target(boxes: Sequence[BoxPolar], spec: PolarGridSpec, n_classes: int,
                        min_overlap: float = MIN_OVERLAP) -> HeatmapTarget:
    heat = np.zeros((n_classes, spec.n_theta, spec.n_r))
    target = HeatmapTarget(heat)
    for n, box in enumerate(boxes):
        if not 0 <= box.class_id < n_classes:
            raise ConfigError(f"class id {box.class_id} outside [0, {n_classes})")
        if not spec.r_min <= box.r < spec.r_max:
            log.warning("box %d at r=%.3f outside radial range; skipped", n, box.r)
            target.skipped.append(n)
            continue
        ct, cr = continuous_bin(box.theta, box.r, spec)
        ci, cj = math.floor(ct), math.floor(cr)
        o_t, o_r = ct - ci, cr - cj
        ci %= spec.n_theta
        h_bins, w_bins = footprint_bins(box, spec)
        radius = max(MIN_RADIUS, int(gaussian_radius(h_bins, w_bins, min_overlap)))
        render_gaussian(heat[box.class_id], ci, cj, radius)
        target.centers.append((ci, cj))
        target.offsets.append((o_t, o_r))
        target.radii.append(radius)
        target.class_ids.append(box.class_id)
        target.box_indices.append(n)
    return target


def apply_sae(F, logits) -> FeatureMap:
    """Reweight features by ``1 + sigmoid(logits)`` per spatial location."""
    f = as_array(F)
    m = as_array(logits)
    if m.ndim != 3 or m.shape[0] != 1 or m.shape[1:] != f.shape[1:]:
        raise ConfigError(f"logits {m.shape} do not match features {f.shape}")
    return FeatureMap((1.0 + expit(m)) * f)


# ---------------------------------------------------------------- JSON lines

_CART_KEYS = [f.name for f in fields(BoxCart)]
_POLAR_KEYS = [f.name for f in fields(BoxPolar)]


def box_to_json(box: BoxCart | BoxPolar) -> str:
    tag = "cart" if isinstance(box, BoxCart) else "polar"
    return json.dumps({"param": tag, **asdict(box)})


def box_from_json(line: str | dict) -> BoxCart | BoxPolar:
    try:
        d = json.loads(line) if isinstance(line, str) else dict(line)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"bad box JSON: {exc}") from exc
    tag = d.pop("param", "cart")
    cls, keys = {"cart": (BoxCart, _CART_KEYS), "polar": (BoxPolar, _POLAR_KEYS)}.get(tag, (None, None))
    if cls is None:
        raise ConfigError(f"unknown parameterization tag {tag!r}")
    missing = set(keys) - set(d) - {"class_id"}
    if missing or set(d) - set(keys):
        raise ConfigError(f"{tag} box fields mismatch: missing {sorted(missing)}")
    d["class_id"] = int(d.get("class_id", 0))
    return cls(**d)


def write_boxes_jsonl(boxes: Iterable, path) -> None:
    with open(path, "w") as fh:
        for b in boxes:
            fh.write(box_to_json(b) + "\n")


def read_boxes_jsonl(path) -> list:
    with open(path) as fh:
        return [box_from_json(line) for line in fh if line.strip()]
