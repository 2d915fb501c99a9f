"""Depth deprojection, camera-to-base transforms and top-down grasp points.

Depth arrives in millimetres; camera points leave `deproject` in metres and
every later transform works in metres. Grasp openings are reported in mm.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

# axis permutation applied after the pinhole back-projection
CAMERA_PERMUTATION = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
PRE_POSITION_OFFSET_M = 0.100
CLASSES = ("cardboard", "plastic", "metal", "glass")


class InvalidDepthError(ValueError):
    pass


class EmptyCloudError(ValueError):
    pass


class ObjectTooWideError(ValueError):
    pass


class DegenerateGeometryError(ValueError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


def _check_rotation(r: np.ndarray, tol: float = 1e-9) -> None:
    if r.shape != (3, 3):
        raise ValueError("rotation must be 3x3")
    if not np.allclose(r.T @ r, np.eye(3), atol=tol, rtol=0):
        raise ValueError("rotation is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > tol:
        raise ValueError("rotation determinant is not +1")


@dataclass(frozen=True)
class EndEffectorPose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        p = np.asarray(self.translation, dtype=float).reshape(3)
        _check_rotation(r)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", p)

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class HandEyeTransform:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float).reshape(4, 4)
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=1e-12, rtol=0):
            raise ValueError("bottom row of a rigid transform must be [0 0 0 1]")
        _check_rotation(m[:3, :3])
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "HandEyeTransform":
        return cls(np.eye(4))


def rot_x(deg: float) -> np.ndarray:
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(deg: float) -> np.ndarray:
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(deg: float) -> np.ndarray:
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def deproject_mm(x: float, y: float, d: float, K: CameraIntrinsics) -> np.ndarray:
    """Pixel plus depth (mm) to a camera point in mm."""
    if d <= 0:
        raise InvalidDepthError(f"invalid depth {d} at pixel ({x}, {y})")
    if not (0 <= x < K.width and 0 <= y < K.height):
        raise ValueError(f"pixel ({x}, {y}) outside {K.width}x{K.height} image")
    ray = np.array([(x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0])
    return CAMERA_PERMUTATION @ ray * d


def deproject(x: float, y: float, d: float, K: CameraIntrinsics) -> np.ndarray:
    """Pixel plus depth (mm) to a camera point in metres."""
    return deproject_mm(x, y, d, K) / 1000.0


def reproject(point_m: np.ndarray, K: CameraIntrinsics) -> tuple[float, float, float]:
    """Inverse of `deproject`: camera point (m) to (x, y, depth mm)."""
    ray = CAMERA_PERMUTATION.T @ (np.asarray(point_m, dtype=float) * 1000.0)
    d = ray[2]
    return K.fx * ray[0] / d + K.cx, K.fy * ray[1] / d + K.cy, d


def camera_to_base_matrix(ee: EndEffectorPose, hte: HandEyeTransform) -> np.ndarray:
    return ee.matrix @ hte.matrix


def camera_to_base(points: np.ndarray, ee: EndEffectorPose, hte: HandEyeTransform) -> np.ndarray:
    """Map camera-frame points (m), shape (3,) or (N, 3), into the base frame."""
    pts = np.asarray(points, dtype=float)
    t = camera_to_base_matrix(ee, hte)
    out = pts.reshape(-1, 3) @ t[:3, :3].T + t[:3, 3]
    return out.reshape(pts.shape)


@dataclass
class SegmentedCloud:
    points: np.ndarray
    class_label: str = "cardboard"
    mask_id: str = ""
    masked_pixels: int = 0

    @property
    def valid_fraction(self) -> float:
        return len(self.points) / self.masked_pixels if self.masked_pixels else 0.0

    def transformed(self, ee: EndEffectorPose, hte: HandEyeTransform) -> "SegmentedCloud":
        return SegmentedCloud(
            camera_to_base(self.points, ee, hte), self.class_label, self.mask_id, self.masked_pixels
        )


def segment_cloud(mask: np.ndarray, depth: np.ndarray, K: CameraIntrinsics,
                  label: str = "cardboard", mask_id: str = "") -> SegmentedCloud:
    """Deproject every masked pixel with a valid (non-zero) depth."""
    mask = np.asarray(mask).astype(bool)
    depth = np.asarray(depth)
    if mask.shape != depth.shape:
        raise ValueError(f"mask {mask.shape} and depth {depth.shape} differ in size")
    ys, xs = np.nonzero(mask)
    d = depth[ys, xs].astype(float)
    keep = d > 0
    ys, xs, d = ys[keep], xs[keep], d[keep]
    if d.size == 0:
        raise EmptyCloudError("no masked pixel has a valid depth")
    rays = np.stack([(xs - K.cx) / K.fx, (ys - K.cy) / K.fy, np.ones_like(d)], axis=1)
    pts = (rays * d[:, None]) @ CAMERA_PERMUTATION.T / 1000.0
    return SegmentedCloud(pts, label, mask_id, int(mask.sum()))


@dataclass(frozen=True)
class GraspCandidate:
    p1: np.ndarray
    p2: np.ndarray
    approach: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -1.0]))

    @property
    def opening_required_mm(self) -> float:
        return float(np.linalg.norm(self.p1 - self.p2) * 1000.0)

    @property
    def midpoint(self) -> np.ndarray:
        return (self.p1 + self.p2) / 2.0

    def pre_position(self, offset_m: float = PRE_POSITION_OFFSET_M) -> np.ndarray:
        return self.midpoint - self.approach * offset_m


def compute_grasp(points: np.ndarray | SegmentedCloud, max_opening_mm: float = 140.0,
                  slab_fraction: float = 0.05, contact_band_m: float = 0.002,
                  vertical: np.ndarray = (0.0, 0.0, 1.0)) -> GraspCandidate:
    """Top-down antipodal contact pair on a cloud expressed in a gravity-aligned frame.

    Principal axes come from the second moments of the cloud projected on the
    plane normal to `vertical`. The pair lies on the plane through the centroid
    normal to the major axis, at the two extremes of the minor axis among
    points in a slab of half-width `slab_fraction` of the major extent.
    """
    pts = points.points if isinstance(points, SegmentedCloud) else np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("cloud must be an (N, 3) array")
    if len(pts) < 50:
        raise DegenerateGeometryError(f"cloud has {len(pts)} points, need at least 50")
    if not np.isfinite(pts).all():
        raise ValueError("cloud contains non-finite points")
    up = np.asarray(vertical, dtype=float)
    up = up / np.linalg.norm(up)
    # orthonormal basis (e1, e2) of the horizontal plane
    helper = np.array([1.0, 0.0, 0.0]) if abs(up[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(up, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(up, e1)
    centroid = pts.mean(axis=0)
    rel = pts - centroid
    planar = np.stack([rel @ e1, rel @ e2], axis=1)
    cov = planar.T @ planar / len(pts)
    evals, evecs = np.linalg.eigh(cov)
    scale = max(evals[-1], 1e-300)
    if evals[0] <= 1e-12 * scale or evals[-1] <= 1e-18:
        raise DegenerateGeometryError("cloud has rank < 2 in the horizontal plane")
    major = evecs[0, 1] * e1 + evecs[1, 1] * e2
    minor = np.cross(up, major)
    along = rel @ major
    across = rel @ minor
    height = rel @ up
    extent = along.max() - along.min()
    half_width = slab_fraction * extent
    slab = np.abs(along) <= half_width
    # sparse clouds can leave the nominal slab empty; widen until it is not
    while slab.sum() < 2 and half_width < extent:
        half_width *= 2.0
        slab = np.abs(along) <= half_width
    if slab.sum() < 2:
        raise DegenerateGeometryError("cutting slab holds fewer than two points")
    a, h = across[slab], height[slab]
    lo, hi = a.min(), a.max()
    z_lo = h[a <= lo + contact_band_m].mean()
    z_hi = h[a >= hi - contact_band_m].mean()
    p1 = centroid + lo * minor + z_lo * up
    p2 = centroid + hi * minor + z_hi * up
    grasp = GraspCandidate(p1, p2, -up)
    if grasp.opening_required_mm > max_opening_mm:
        raise ObjectTooWideError(
            f"required opening {grasp.opening_required_mm:.1f} mm exceeds {max_opening_mm} mm"
        )
    return grasp


@dataclass(frozen=True)
class Workspace:
    """Axis-aligned reachable rectangle in the base frame, closed on all sides."""

    center: tuple[float, float] = (0.45, 0.0)
    size_mm: tuple[float, float] = (600.0, 500.0)
    z_band: tuple[float, float] = (-0.05, 0.30)

    def contains(self, p) -> bool:
        x, y, z = (float(v) for v in np.asarray(p).reshape(3))
        hx, hy = self.size_mm[0] / 2000.0, self.size_mm[1] / 2000.0
        cx, cy = self.center
        # small slack absorbs mm <-> m rounding on the boundary
        eps = 1e-12
        return (abs(x - cx) <= hx + eps and abs(y - cy) <= hy + eps
                and self.z_band[0] - eps <= z <= self.z_band[1] + eps)


def check_workspace(p, workspace: Workspace | None = None) -> bool:
    return (workspace or Workspace()).contains(p)


def write_xyz(path: str | os.PathLike, points: np.ndarray) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for x, y, z in np.asarray(points, dtype=float).reshape(-1, 3):
            fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")


def read_xyz(path: str | os.PathLike) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="ascii").splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 'x y z'")
        rows.append([float(v) for v in parts])
    return np.array(rows, dtype=float).reshape(-1, 3)


@dataclass(frozen=True)
class Calibration:
    intrinsics: CameraIntrinsics
    hand_eye: HandEyeTransform
    workspace: Workspace

    def to_dict(self) -> dict:
        k = self.intrinsics
        return {
            "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
                           "width": k.width, "height": k.height},
            "hand_eye": [float(v) for v in self.hand_eye.matrix.reshape(-1)],
            "workspace": {"center": list(self.workspace.center),
                          "size_mm": list(self.workspace.size_mm),
                          "z_band": list(self.workspace.z_band)},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Calibration":
        k = data["intrinsics"]
        intr = CameraIntrinsics(float(k["fx"]), float(k["fy"]), float(k["cx"]), float(k["cy"]),
                                int(k["width"]), int(k["height"]))
        hte = HandEyeTransform(np.array(data.get("hand_eye", np.eye(4).reshape(-1)), dtype=float))
        ws = data.get("workspace", {})
        workspace = Workspace(tuple(ws.get("center", (0.45, 0.0))),
                              tuple(ws.get("size_mm", (600.0, 500.0))),
                              tuple(ws.get("z_band", (-0.05, 0.30))))
        return cls(intr, hte, workspace)


def load_calibration(path: str | os.PathLike) -> Calibration:
    return Calibration.from_dict(yaml.safe_load(Path(path).read_text(encoding="utf-8")))


def save_calibration(path: str | os.PathLike, calib: Calibration) -> None:
    Path(path).write_text(yaml.safe_dump(calib.to_dict(), sort_keys=False), encoding="utf-8")
