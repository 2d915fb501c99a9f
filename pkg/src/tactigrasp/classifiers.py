"""Contact and slip classifiers over pluggable score providers.

A score provider maps an image to a score in [0, 1]. Trained networks are not
bundled; providers are either the synthetic reference-difference model or a
table of recorded scores keyed by image id.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, runtime_checkable

import numpy as np

from .tactile_image import (
    FilterConfig,
    FilteredImage,
    FrameSequence,
    ShapeMismatchError,
    TactileFrame,
    brightness,
    filter_image,
)

SLIP_METHODS = ("brightness", "cnn")


class ProviderError(RuntimeError):
    """A score provider could not score an image."""


class ConfigurationError(ValueError):
    pass


@runtime_checkable
class ScoreProvider(Protocol):
    unit: str | None
    task: str

    def score(self, image) -> float: ...


@dataclass(frozen=True)
class ClassifierConfig:
    contact_threshold: Mapping[str, float] = field(
        default_factory=lambda: {"A": 0.5, "B": 0.5}
    )
    slip_method: str = "brightness"
    slip_threshold_brightness: float = 10.0
    slip_threshold_cnn: float = 0.5
    filter: FilterConfig = field(default_factory=FilterConfig)

    def __post_init__(self):
        thr = self.contact_threshold
        if isinstance(thr, (int, float)):
            thr = {"A": float(thr), "B": float(thr)}
        object.__setattr__(self, "contact_threshold", dict(thr))
        for unit, t in self.contact_threshold.items():
            if not 0.0 <= t <= 1.0:
                raise ConfigurationError(f"contact threshold for {unit} outside [0,1]: {t}")
        if self.slip_method not in SLIP_METHODS:
            raise ConfigurationError(f"unknown slip method {self.slip_method!r}")
        if not 0.0 <= self.slip_threshold_brightness <= 255.0:
            raise ConfigurationError("brightness threshold outside [0,255]")
        if not 0.0 <= self.slip_threshold_cnn <= 1.0:
            raise ConfigurationError("cnn threshold outside [0,1]")

    def contact_threshold_for(self, unit: str) -> float:
        try:
            return self.contact_threshold[unit]
        except KeyError:
            raise ConfigurationError(f"no contact threshold for unit {unit!r}") from None


def normalize_input(frame: TactileFrame | np.ndarray) -> np.ndarray:
    px = frame.pixels if isinstance(frame, TactileFrame) else np.asarray(frame)
    return px.astype(np.float64) / 255.0


def _checked(provider: ScoreProvider, image) -> float:
    try:
        s = float(provider.score(image))
    except ProviderError:
        raise
    except Exception as exc:  # provider internals are opaque
        raise ProviderError(f"provider failed: {exc}") from exc
    if not (0.0 <= s <= 1.0) or math.isnan(s):
        raise ProviderError(f"provider returned score outside [0,1]: {s}")
    return s


def contact_classify(frame: TactileFrame, provider: ScoreProvider, cfg: ClassifierConfig) -> int:
    """1 if the provider's contact score reaches the unit threshold."""
    if provider.task != "contact":
        raise ConfigurationError(f"provider task is {provider.task!r}, expected 'contact'")
    if provider.unit is not None and provider.unit != frame.unit:
        raise ConfigurationError(f"provider for unit {provider.unit} given a unit {frame.unit} frame")
    return int(_checked(provider, frame) >= cfg.contact_threshold_for(frame.unit))


def fuse_contact(a: int, b: int) -> int:
    return int(bool(a) and bool(b))


def fuse_slip(a: int, b: int) -> int:
    return int(bool(a) or bool(b))


@dataclass(frozen=True)
class SlipDecision:
    label: int
    value: float
    image: FilteredImage


def slip_evaluate(
    seq: FrameSequence,
    cfg: ClassifierConfig,
    method: str | None = None,
    provider: ScoreProvider | None = None,
) -> SlipDecision:
    """Slip label together with the statistic it was thresholded on."""
    method = method or cfg.slip_method
    if method not in SLIP_METHODS:
        raise ConfigurationError(f"unknown slip method {method!r}")
    if method == "cnn" and provider is None:
        raise ConfigurationError("cnn slip detection needs a score provider")
    psi = filter_image(seq, cfg.filter)
    if method == "brightness":
        value = brightness(psi)
        return SlipDecision(int(value >= cfg.slip_threshold_brightness), value, psi)
    value = _checked(provider, psi)
    return SlipDecision(int(value >= cfg.slip_threshold_cnn), value, psi)


def slip_detect(
    seq: FrameSequence,
    method: str | None = None,
    provider: ScoreProvider | None = None,
    cfg: ClassifierConfig | None = None,
) -> int:
    return slip_evaluate(seq, cfg or ClassifierConfig(), method, provider).label


@dataclass(frozen=True)
class SyntheticContactProvider:
    """Logistic score on the mean absolute difference from a no-contact frame.

    score = 1 / (1 + exp(-gain * (madiff - midpoint)))
    """

    reference: np.ndarray
    unit: str | None = None
    gain: float = 0.5
    midpoint: float = 8.0
    task: str = "contact"

    def mean_abs_diff(self, image) -> float:
        px = image.pixels if hasattr(image, "pixels") else np.asarray(image)
        if px.shape != self.reference.shape:
            raise ShapeMismatchError(f"image {px.shape} vs reference {self.reference.shape}")
        return float(np.abs(px.astype(np.int16) - self.reference.astype(np.int16)).mean())

    def score(self, image) -> float:
        z = -self.gain * (self.mean_abs_diff(image) - self.midpoint)
        # exp overflow guard for very large negative margins
        if z > 700:
            return 0.0
        return 1.0 / (1.0 + math.exp(z))


def synthetic_contact_provider(reference: TactileFrame, gain: float = 0.5, midpoint: float = 8.0):
    return SyntheticContactProvider(reference.pixels, reference.unit, gain, midpoint)


class OracleProvider:
    """Recorded scores looked up by image id."""

    def __init__(self, table: Mapping[str, float], unit: str | None = None, task: str = "contact"):
        for image_id, s in table.items():
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"score for {image_id!r} outside [0,1]: {s}")
        self._table = dict(table)
        self.unit = unit
        self.task = task

    def __len__(self) -> int:
        return len(self._table)

    def score(self, image) -> float:
        image_id = image if isinstance(image, str) else getattr(image, "image_id", None)
        if image_id is None:
            raise ProviderError("image carries no id")
        try:
            return self._table[image_id]
        except KeyError:
            raise ProviderError(f"no recorded score for image {image_id!r}") from None

    @classmethod
    def from_csv(cls, source: str | os.PathLike | io.TextIOBase, unit=None, task="contact"):
        if isinstance(source, (str, os.PathLike)):
            text = Path(source).read_text(encoding="utf-8")
        else:
            text = source.read()
        return cls(parse_score_table(text), unit=unit, task=task)


def parse_score_table(text: str) -> dict[str, float]:
    """Parse an `image_id,score` CSV, rejecting duplicates and bad rows."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        return {}
    if [h.strip() for h in header] != ["image_id", "score"]:
        raise ValueError(f"score table header must be image_id,score; got {header}")
    table: dict[str, float] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise ValueError(f"line {lineno}: expected 2 fields, got {len(row)}")
        image_id, raw = row[0].strip(), row[1].strip()
        if not image_id:
            raise ValueError(f"line {lineno}: empty image id")
        if image_id in table:
            raise ValueError(f"line {lineno}: duplicate image id {image_id!r}")
        try:
            s = float(raw)
        except ValueError:
            raise ValueError(f"line {lineno}: score {raw!r} is not a number") from None
        if not 0.0 <= s <= 1.0:
            raise ValueError(f"line {lineno}: score {s} outside [0,1]")
        table[image_id] = s
    return table


def oracle_provider(table, unit=None, task="contact") -> OracleProvider:
    if isinstance(table, Mapping):
        return OracleProvider(table, unit, task)
    return OracleProvider.from_csv(table, unit, task)
