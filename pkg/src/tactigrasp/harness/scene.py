"""Synthetic RGBD detection fixture: a depth image and object mask seen from
the detection pose, produced by ray casting a box or lying cylinder on the
ground plane."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import (
    CAMERA_PERMUTATION,
    CameraIntrinsics,
    EndEffectorPose,
    HandEyeTransform,
    Workspace,
    camera_to_base_matrix,
    rot_x,
    rot_z,
)
from .config import ObjectSpec, ScenarioConfig

DEFAULT_INTRINSICS = CameraIntrinsics(615.0, 615.0, 320.0, 240.0, 640, 480)
GROUND_ROUGHNESS_MM = {"tiled": 0.0, "grass": 3.0, "stone_soil": 5.0}

# camera axes in the base frame when looking straight down:
# optical axis -> -z, image columns -> -y, image rows -> -x
_CAMERA_IN_BASE = np.array([[0.0, 0.0, -1.0], [0.0, -1.0, 0.0], [-1.0, 0.0, 0.0]])


def detection_pose(center=(0.45, 0.0), height_m: float = 0.60) -> EndEffectorPose:
    return EndEffectorPose(rot_x(180.0), np.array([center[0], center[1], height_m]))


def default_hand_eye() -> HandEyeTransform:
    m = np.eye(4)
    m[:3, :3] = rot_x(180.0).T @ _CAMERA_IN_BASE
    m[:3, 3] = (0.0, 0.06, 0.03)
    return HandEyeTransform(m)


@dataclass
class SceneFixture:
    depth: np.ndarray  # uint16, mm
    mask: np.ndarray  # uint8, 255 on the object
    intrinsics: CameraIntrinsics
    ee_pose: EndEffectorPose
    hand_eye: HandEyeTransform
    workspace: Workspace


def _ray_directions(K: CameraIntrinsics, cam_rot: np.ndarray) -> np.ndarray:
    v, u = np.mgrid[0 : K.height, 0 : K.width].astype(float)
    rays = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)
    # metres travelled in base frame per mm of depth
    return rays @ CAMERA_PERMUTATION.T @ cam_rot.T / 1000.0


def _hit_box(o, dirs, spec: ObjectSpec):
    half = np.array([spec.length_mm, spec.width_mm, spec.height_mm]) / 2000.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o) / dirs
        t2 = (half - o) / dirs
    tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
    hit = (tmax >= tmin) & (tmin > 0)
    return np.where(hit, tmin, np.inf)


def _hit_cylinder(o, dirs, spec: ObjectSpec):
    r = spec.width_mm / 2000.0
    half_len = spec.length_mm / 2000.0
    # axis along local x, centre at z = 0 in the shifted local frame
    oy, oz = o[1], o[2]
    dy, dz = dirs[..., 1], dirs[..., 2]
    a = dy * dy + dz * dz
    b = 2 * (oy * dy + oz * dz)
    c = oy * oy + oz * oz - r * r
    disc = b * b - 4 * a * c
    with np.errstate(invalid="ignore", divide="ignore"):
        t = (-b - np.sqrt(disc)) / (2 * a)
    x = o[0] + t * dirs[..., 0]
    hit = (disc >= 0) & (t > 0) & (np.abs(x) <= half_len)
    return np.where(hit, t, np.inf)


def render_scene(cfg: ScenarioConfig, intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS,
                 ee: EndEffectorPose | None = None, hand_eye: HandEyeTransform | None = None,
                 workspace: Workspace | None = None) -> SceneFixture:
    ee = ee or detection_pose()
    hand_eye = hand_eye or default_hand_eye()
    workspace = workspace or Workspace()
    t = camera_to_base_matrix(ee, hand_eye)
    origin = t[:3, 3]
    dirs = _ray_directions(intrinsics, t[:3, :3])

    # ground plane z = 0
    with np.errstate(divide="ignore"):
        t_ground = np.where(dirs[..., 2] < 0, -origin[2] / dirs[..., 2], np.inf)

    spec = cfg.object
    yaw = rot_z(spec.yaw_deg)
    centre_z = (spec.height_mm if spec.shape == "box" else spec.width_mm) / 2000.0
    centre = np.array([spec.position_m[0], spec.position_m[1], centre_z])
    o_local = yaw.T @ (origin - centre)
    d_local = dirs @ yaw
    if spec.shape == "box":
        t_obj = _hit_box(o_local, d_local, spec)
    else:
        t_obj = _hit_cylinder(o_local, d_local, spec)

    on_object = t_obj < t_ground
    depth_mm = np.where(on_object, t_obj, t_ground)
    rng = np.random.default_rng([cfg.seed, 17])
    rough = GROUND_ROUGHNESS_MM[cfg.environment]
    if rough > 0:
        depth_mm = depth_mm + np.where(on_object, 0.0, rng.uniform(-rough, rough, depth_mm.shape))
    depth = np.where(np.isfinite(depth_mm), np.rint(depth_mm), 0).clip(0, 65535).astype(np.uint16)
    mask = on_object.astype(np.uint8) * np.uint8(255)

    f = cfg.faults
    if f.invalid_depth_fraction > 0:
        ys, xs = np.nonzero(on_object)
        k = int(round(f.invalid_depth_fraction * len(ys)))
        pick = rng.choice(len(ys), size=k, replace=False)
        depth[ys[pick], xs[pick]] = 0
    if f.corrupt_mask:
        mask[:] = 0
    return SceneFixture(depth, mask, intrinsics, ee, hand_eye, workspace)
