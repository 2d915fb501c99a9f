"""Synthetic tactile image renderer.

A frame is a static per-unit background (the lit elastomer) plus, while in
contact, an elliptical imprint carrying the object's surface texture. Slip
moves or rotates the imprint; squeezing harder makes it slightly larger and
brighter. Sensor noise is uniform and seeded per (seed, unit, frame index), so
any frame can be regenerated independently of render order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..tactile_image import FRAME_HEIGHT, FRAME_WIDTH, TactileFrame

UNIT_INDEX = {"A": 0, "B": 1}
UNIT_TINT = {"A": (0.55, 1.0, 0.85), "B": (0.80, 0.95, 0.60)}


@dataclass(frozen=True)
class ImprintState:
    """Pose and load of the contact imprint; `present=False` means no contact."""

    present: bool = False
    depth: int = 0
    dx: float = 0.0
    dy: float = 0.0
    angle: float = 0.0


NO_CONTACT = ImprintState()


@dataclass(frozen=True)
class SurfaceTexture:
    period_px: float = 22.0
    orientation_deg: float = 30.0
    amplitude: float = 35.0


@dataclass(frozen=True)
class RenderParams:
    height: int = FRAME_HEIGHT
    width: int = FRAME_WIDTH
    semi_x: float = 60.0
    semi_y: float = 80.0
    growth_px_per_step: float = 0.5
    base_amplitude: float = 70.0
    amplitude_per_step: float = 2.0
    amplitude_steps_cap: int = 10
    edge_px: float = 4.0
    noise: int = 5


def _background(unit: str, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    k = UNIT_INDEX[unit]
    r = 60 + 40 * xx / w + 6 * np.sin(yy / 37.0 + k)
    g = 80 + 30 * yy / h + 5 * np.cos(xx / 29.0 - k)
    b = 115 + 10 * k + 8 * np.sin((xx + yy) / 53.0)
    return np.stack([r, g, b], axis=-1)


@lru_cache(maxsize=8)
def _cached_background(unit: str, h: int, w: int) -> np.ndarray:
    bg = _background(unit, h, w)
    bg.setflags(write=False)
    return bg


@lru_cache(maxsize=8)
def _grid(h: int, w: int):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    return yy, xx


class TactileRenderer:
    """Renders frames for one sensor unit."""

    def __init__(self, unit: str, seed: int, texture: SurfaceTexture | None = None,
                 params: RenderParams | None = None, mirror: bool = False):
        self.unit = unit
        self.seed = int(seed)
        self.texture = texture or SurfaceTexture()
        self.params = params or RenderParams()
        # the opposite fingertip sees lateral motion mirrored
        self.mirror = mirror
        self._cache: dict[ImprintState, np.ndarray] = {}

    def clean(self, state: ImprintState) -> np.ndarray:
        """Noise-free float image for an imprint state."""
        hit = self._cache.get(state)
        if hit is not None:
            return hit
        p = self.params
        img = _cached_background(self.unit, p.height, p.width).copy()
        if state.present:
            img += self._imprint(state)[..., None] * np.asarray(UNIT_TINT[self.unit], np.float32)
        if len(self._cache) > 256:
            self._cache.clear()
        self._cache[state] = img
        return img

    def _imprint(self, state: ImprintState) -> np.ndarray:
        p, tex = self.params, self.texture
        yy, xx = _grid(p.height, p.width)
        dx = -state.dx if self.mirror else state.dx
        ang = -state.angle if self.mirror else state.angle
        cx = p.width / 2.0 + dx
        cy = p.height / 2.0 + state.dy
        t = np.radians(ang)
        c, s = np.cos(t), np.sin(t)
        u = (xx - cx) * c + (yy - cy) * s
        v = -(xx - cx) * s + (yy - cy) * c
        depth = max(state.depth, 0)
        ax = p.semi_x + p.growth_px_per_step * depth
        ay = p.semi_y + p.growth_px_per_step * depth
        # signed distance-like radius, ~1 on the boundary
        rho = np.sqrt((u / ax) ** 2 + (v / ay) ** 2)
        edge = np.clip((1.0 - rho) * min(ax, ay) / p.edge_px, 0.0, 1.0)
        phi = np.radians(tex.orientation_deg)
        w = u * np.cos(phi) + v * np.sin(phi)
        stripes = tex.amplitude * np.tanh(3.0 * np.sin(2 * np.pi * w / tex.period_px))
        amp = p.base_amplitude + p.amplitude_per_step * min(depth, p.amplitude_steps_cap)
        return (edge * (amp + stripes)).astype(np.float32)

    def frame(self, state: ImprintState, index: int, timestamp: int | None = None) -> TactileFrame:
        img = self.clean(state)
        n = self.params.noise
        if n > 0:
            rng = np.random.default_rng([self.seed, UNIT_INDEX[self.unit], index])
            noisy = img + rng.integers(-n, n + 1, size=img.shape, dtype=np.int16)
        else:
            noisy = img.copy()
        np.rint(noisy, out=noisy)
        np.clip(noisy, 0, 255, out=noisy)
        px = noisy.astype(np.uint8)
        ts = timestamp if timestamp is not None else frame_timestamp(index)
        return TactileFrame(px, ts, self.unit, image_id=f"{self.unit}{index:06d}")

    def reference(self, index: int = -1) -> TactileFrame:
        """A no-contact frame used as the contact provider's reference."""
        return self.frame(NO_CONTACT, index & 0x7FFFFFFF, timestamp=0)


def frame_timestamp(index: int, fps: float = 30.0) -> int:
    return int(round(index * 1000.0 / fps))
