"""Tactile frame preprocessing: grayscale, frame differencing, binary opening.

The slip evidence image is built from a short window of frames:

    gray -> |last - first| -> threshold -> opening -> binary image

and summarised by its mean pixel value ("brightness").
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

FRAME_HEIGHT = 320
FRAME_WIDTH = 240
UNITS = ("A", "B")


class ShapeMismatchError(ValueError):
    """Frames or images that must share dimensions do not."""


@dataclass(frozen=True)
class TactileFrame:
    """One RGB image from a tactile sensor unit."""

    pixels: np.ndarray
    timestamp: int = 0
    unit: str = "A"
    image_id: str | None = None

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"tactile frame must be HxWx3, got {px.shape}")
        if px.dtype != np.uint8:
            raise ValueError(f"tactile frame must be uint8, got {px.dtype}")
        if self.unit not in UNITS:
            raise ValueError(f"unknown sensor unit {self.unit!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[:2]


Frame = Union[TactileFrame, np.ndarray]


@dataclass(frozen=True)
class FrameSequence:
    """A fixed-length window of frames from one unit, oldest first.

    Frames may be TactileFrames or already converted 2-D gray arrays.
    """

    frames: tuple
    unit: str = "A"
    timestamps: tuple = ()
    length: int = 4

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if len(self.frames) != self.length:
            raise ValueError(f"sequence needs {self.length} frames, got {len(self.frames)}")
        if not self.timestamps:
            stamps = tuple(
                f.timestamp if isinstance(f, TactileFrame) else i
                for i, f in enumerate(self.frames)
            )
            object.__setattr__(self, "timestamps", stamps)
        if any(b <= a for a, b in zip(self.timestamps, self.timestamps[1:])):
            raise ValueError("timestamps must be strictly increasing")
        shapes = {_shape2d(f) for f in self.frames}
        if len(shapes) != 1:
            raise ShapeMismatchError(f"frames differ in size: {sorted(shapes)}")

    @property
    def image_id(self) -> str | None:
        last = self.frames[-1]
        return last.image_id if isinstance(last, TactileFrame) else None


@dataclass(frozen=True)
class StructuringElement:
    """Boolean neighbourhood mask anchored at its centre cell."""

    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 2 or m.shape[0] % 2 == 0 or m.shape[1] % 2 == 0:
            raise ValueError(f"structuring element needs odd dimensions, got {m.shape}")
        if not m.any():
            raise ValueError("structuring element has no active cell")
        object.__setattr__(self, "mask", m)

    @classmethod
    def square(cls, size: int = 5) -> "StructuringElement":
        return cls(np.ones((size, size), dtype=bool))

    @classmethod
    def rectangle(cls, height: int, width: int) -> "StructuringElement":
        return cls(np.ones((height, width), dtype=bool))

    @classmethod
    def disk(cls, radius: int) -> "StructuringElement":
        yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
        return cls(yy * yy + xx * xx <= radius * radius)

    @classmethod
    def cross(cls, size: int = 3) -> "StructuringElement":
        m = np.zeros((size, size), dtype=bool)
        m[size // 2, :] = True
        m[:, size // 2] = True
        return cls(m)

    @property
    def anchor(self) -> tuple[int, int]:
        return self.mask.shape[0] // 2, self.mask.shape[1] // 2

    @property
    def is_rectangle(self) -> bool:
        return bool(self.mask.all())

    def __eq__(self, other):
        if not isinstance(other, StructuringElement):
            return NotImplemented
        return self.mask.shape == other.mask.shape and bool((self.mask == other.mask).all())

    def __hash__(self):
        return hash((self.mask.shape, self.mask.tobytes()))

    def offsets(self) -> list[tuple[int, int]]:
        ay, ax = self.anchor
        return [(int(y) - ay, int(x) - ax) for y, x in zip(*np.nonzero(self.mask))]


@dataclass(frozen=True)
class FilterConfig:
    threshold: int = 25
    kernel: StructuringElement = field(default_factory=StructuringElement.square)
    sequence_length: int = 4

    def __post_init__(self):
        if not 0 <= self.threshold <= 255:
            raise ValueError(f"binarisation threshold out of range: {self.threshold}")
        if self.sequence_length < 2:
            raise ValueError("sequence length must be at least 2")


@dataclass(frozen=True)
class FilteredImage:
    """Binary slip-evidence image; every pixel is 0 or 255."""

    pixels: np.ndarray
    image_id: str | None = None

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 2 or px.dtype != np.uint8:
            raise ValueError("filtered image must be a 2-D uint8 array")
        if not ((px == 0) | (px == 255)).all():
            raise ValueError("filtered image must be binary (0/255)")

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


def _shape2d(frame: Frame) -> tuple[int, int]:
    px = frame.pixels if isinstance(frame, TactileFrame) else np.asarray(frame)
    return tuple(px.shape[:2])


def to_grayscale(frame: Frame) -> np.ndarray:
    """Luma conversion 0.299 R + 0.587 G + 0.114 B, rounded half up.

    Integer arithmetic keeps the rounding exact. 2-D input is taken to be
    gray already and returned as uint8.
    """
    px = frame.pixels if isinstance(frame, TactileFrame) else np.asarray(frame)
    if px.ndim == 2:
        return px.astype(np.uint8, copy=False)
    if px.ndim != 3 or px.shape[2] != 3:
        raise ValueError(f"expected HxWx3 RGB, got {px.shape}")
    rgb = px.astype(np.uint32)
    acc = rgb[..., 0] * 299 + rgb[..., 1] * 587 + rgb[..., 2] * 114 + 500
    return np.minimum(acc // 1000, 255).astype(np.uint8)


def frame_difference(seq: FrameSequence | Sequence[Frame]) -> np.ndarray:
    """Absolute gray-level change between the last and first frame."""
    frames = seq.frames if isinstance(seq, FrameSequence) else tuple(seq)
    if len(frames) < 2:
        raise ValueError("need at least two frames")
    first = to_grayscale(frames[0])
    last = to_grayscale(frames[-1])
    if first.shape != last.shape:
        raise ShapeMismatchError(f"frame sizes differ: {first.shape} vs {last.shape}")
    diff = np.abs(last.astype(np.int16) - first.astype(np.int16))
    return diff.astype(np.uint8)


def _shift_reduce(img: np.ndarray, offsets, combine, start: bool) -> np.ndarray:
    """Combine shifted copies of a background-padded boolean image."""
    h, w = img.shape
    py = max(abs(dy) for dy, _ in offsets)
    px = max(abs(dx) for _, dx in offsets)
    padded = np.zeros((h + 2 * py, w + 2 * px), dtype=bool)
    padded[py : py + h, px : px + w] = img
    out = np.full((h, w), start, dtype=bool)
    for dy, dx in offsets:
        combine(out, padded[py + dy : py + dy + h, px + dx : px + dx + w], out=out)
    return out


def _apply(img: np.ndarray, kernel: StructuringElement, erode: bool) -> np.ndarray:
    combine = np.logical_and if erode else np.logical_or
    sign = 1 if erode else -1
    if kernel.is_rectangle:
        # a full rectangle separates into a row pass and a column pass
        ry, rx = kernel.anchor
        rows = [(0, sign * dx) for dx in range(-rx, rx + 1)]
        cols = [(sign * dy, 0) for dy in range(-ry, ry + 1)]
        return _shift_reduce(_shift_reduce(img, rows, combine, erode), cols, combine, erode)
    offsets = [(sign * dy, sign * dx) for dy, dx in kernel.offsets()]
    return _shift_reduce(img, offsets, combine, erode)


def _as_bool(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got {img.shape}")
    return img.astype(bool, copy=False)


def erode(img: np.ndarray, kernel: StructuringElement) -> np.ndarray:
    """Binary erosion; pixels outside the image count as background."""
    return _apply(_as_bool(img), kernel, erode=True)


def dilate(img: np.ndarray, kernel: StructuringElement) -> np.ndarray:
    """Binary dilation by the reflected element; background padding."""
    return _apply(_as_bool(img), kernel, erode=False)


def morphological_open(img: np.ndarray, kernel: StructuringElement | None = None) -> np.ndarray:
    """Erosion followed by dilation. Returns a uint8 0/255 image."""
    kernel = kernel or StructuringElement.square()
    opened = dilate(erode(img, kernel), kernel)
    return opened.astype(np.uint8) * np.uint8(255)


def binarize(img: np.ndarray, threshold: int) -> np.ndarray:
    return np.asarray(img) >= threshold


def filter_image(seq: FrameSequence | Sequence[Frame], cfg: FilterConfig | None = None) -> FilteredImage:
    cfg = cfg or FilterConfig()
    if not isinstance(seq, FrameSequence):
        seq = FrameSequence(tuple(seq), length=cfg.sequence_length)
    diff = frame_difference(seq)
    opened = morphological_open(binarize(diff, cfg.threshold), cfg.kernel)
    return FilteredImage(opened, image_id=seq.image_id)


def brightness(img: FilteredImage | np.ndarray) -> float:
    """Mean pixel value of the image."""
    px = img.pixels if isinstance(img, FilteredImage) else np.asarray(img)
    if px.size == 0:
        raise ValueError("brightness of an empty image is undefined")
    return float(px.mean(dtype=np.float64))
