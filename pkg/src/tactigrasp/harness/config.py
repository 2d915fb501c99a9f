"""Scenario configuration (YAML) for simulated episodes and experiments.

Schema, all sections optional::

    seed: 7
    environment: tiled            # tiled | stone_soil | grass
    object:
      class: cardboard            # cardboard | plastic | metal | glass
      shape: box                  # box | cylinder
      width_mm: 60                # graspable dimension
      length_mm: 110
      height_mm: 40               # boxes only; cylinders use width
      weight_g: 120
      friction: 0.6
      hold_depth: null            # override of the weight/friction rule
      position_m: [0.45, 0.0]
      yaw_deg: 0
      texture: {period_px: 24, orientation_deg: 75}
    sensor: {noise: 5, slip_px: 10}
    filter: {threshold: 25, kernel: 5, sequence_length: 4}
    classifier: {contact_threshold: 0.5, slip_method: brightness,
                 slip_threshold_brightness: 10, slip_threshold_cnn: 0.5}
    controller: {contact_count_threshold: null, max_steps: 255}
    timeline: {burst_delay_frames: 15, burst_period_frames: 45, falls_after: 3,
               lift_iterations: 30, transport_iterations: 90}
    faults: {invalid_depth_fraction: 0.0, corrupt_mask: false}
"""

from __future__ import annotations

import copy
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from ..classifiers import ClassifierConfig
from ..geometry import CLASSES
from ..metrics import ENVIRONMENTS
from ..tactile_image import FilterConfig, StructuringElement

GRIP_G_PER_STEP = 40.0

# weight and friction proxies per class; glass is the heaviest
CLASS_DEFAULTS = {
    "cardboard": dict(shape="box", width_mm=60.0, length_mm=110.0, height_mm=40.0,
                      weight_g=120.0, friction=0.60, texture=(24.0, 75.0)),
    "plastic": dict(shape="cylinder", width_mm=65.0, length_mm=180.0, height_mm=65.0,
                    weight_g=100.0, friction=0.45, texture=(22.0, 80.0)),
    "metal": dict(shape="cylinder", width_mm=66.0, length_mm=115.0, height_mm=66.0,
                  weight_g=110.0, friction=0.50, texture=(20.0, 90.0)),
    "glass": dict(shape="cylinder", width_mm=70.0, length_mm=118.0, height_mm=70.0,
                  weight_g=160.0, friction=0.55, texture=(26.0, 70.0)),
}


def hold_depth_for(weight_g: float, friction: float, grip_g_per_step: float = GRIP_G_PER_STEP) -> int:
    """Squeeze steps past first touch needed so two-finger friction carries the weight."""
    return max(1, math.ceil(weight_g / (2.0 * friction * grip_g_per_step) - 1e-9))


@dataclass(frozen=True)
class ObjectSpec:
    cls: str = "cardboard"
    shape: str = "box"
    width_mm: float = 60.0
    length_mm: float = 110.0
    height_mm: float = 40.0
    weight_g: float = 120.0
    friction: float = 0.6
    hold_depth: int | None = None
    position_m: tuple[float, float] = (0.45, 0.0)
    yaw_deg: float = 0.0
    texture_period_px: float = 24.0
    texture_orientation_deg: float = 75.0

    def __post_init__(self):
        if self.cls not in CLASSES:
            raise ValueError(f"unknown object class {self.cls!r}")
        if self.shape not in ("box", "cylinder"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if min(self.width_mm, self.length_mm, self.height_mm) <= 0:
            raise ValueError("object dimensions must be positive")

    @classmethod
    def for_class(cls, name: str, **overrides) -> "ObjectSpec":
        if name not in CLASS_DEFAULTS:
            raise ValueError(f"unknown object class {name!r}")
        d = dict(CLASS_DEFAULTS[name])
        period, orient = d.pop("texture")
        d.update(texture_period_px=period, texture_orientation_deg=orient)
        d.update(overrides)
        return cls(cls=name, **d)

    @property
    def required_hold_depth(self) -> int:
        if self.hold_depth is not None:
            return int(self.hold_depth)
        return hold_depth_for(self.weight_g, self.friction)


@dataclass(frozen=True)
class SensorSpec:
    noise: int = 5
    slip_px: float = 10.0
    chatter_depth: int = 6


@dataclass(frozen=True)
class TimelineSpec:
    burst_delay_frames: int = 15
    burst_period_frames: int = 45
    falls_after: int = 3
    lift_iterations: int = 30
    transport_iterations: int = 90
    approach_margin_mm: float = 20.0


@dataclass(frozen=True)
class FaultSpec:
    invalid_depth_fraction: float = 0.0
    corrupt_mask: bool = False


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    environment: str = "tiled"
    object: ObjectSpec = field(default_factory=ObjectSpec)
    sensor: SensorSpec = field(default_factory=SensorSpec)
    filter: FilterConfig = field(default_factory=FilterConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    contact_count_threshold: int | None = None
    max_steps: int = 255
    timeline: TimelineSpec = field(default_factory=TimelineSpec)
    faults: FaultSpec = field(default_factory=FaultSpec)

    def __post_init__(self):
        if self.environment not in ENVIRONMENTS:
            raise ValueError(f"unknown environment {self.environment!r}")

    @property
    def contact_count(self) -> int:
        if self.contact_count_threshold is not None:
            return self.contact_count_threshold
        return 4 if self.object.cls == "glass" else 3

    def with_object(self, **changes) -> "ScenarioConfig":
        return replace(self, object=replace(self.object, **changes))

    # ---- (de)serialisation ----

    @classmethod
    def from_dict(cls, data: dict | None) -> "ScenarioConfig":
        data = copy.deepcopy(data or {})
        known = {"seed", "environment", "object", "sensor", "filter", "classifier",
                 "controller", "timeline", "faults"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")

        obj = data.get("object") or {}
        name = obj.pop("class", "cardboard")
        tex = obj.pop("texture", None) or {}
        if "position_m" in obj:
            obj["position_m"] = tuple(obj["position_m"])
        if "period_px" in tex:
            obj["texture_period_px"] = tex["period_px"]
        if "orientation_deg" in tex:
            obj["texture_orientation_deg"] = tex["orientation_deg"]
        _check_keys("object", obj, ObjectSpec)
        object_spec = ObjectSpec.for_class(name, **obj)

        f = data.get("filter") or {}
        _check_keys("filter", f, {"threshold", "kernel", "sequence_length"})
        filter_cfg = FilterConfig(threshold=int(f.get("threshold", 25)),
                                  kernel=StructuringElement.square(int(f.get("kernel", 5))),
                                  sequence_length=int(f.get("sequence_length", 4)))
        c = data.get("classifier") or {}
        _check_keys("classifier", c, {"contact_threshold", "slip_method",
                                      "slip_threshold_brightness", "slip_threshold_cnn"})
        classifier = ClassifierConfig(filter=filter_cfg, **c)
        ctl = data.get("controller") or {}
        _check_keys("controller", ctl, {"contact_count_threshold", "max_steps"})
        sensor = data.get("sensor") or {}
        _check_keys("sensor", sensor, SensorSpec)
        timeline = data.get("timeline") or {}
        _check_keys("timeline", timeline, TimelineSpec)
        faults = data.get("faults") or {}
        _check_keys("faults", faults, FaultSpec)
        return cls(
            seed=int(data.get("seed", 0)),
            environment=data.get("environment", "tiled"),
            object=object_spec,
            sensor=SensorSpec(**sensor),
            filter=filter_cfg,
            classifier=classifier,
            contact_count_threshold=ctl.get("contact_count_threshold"),
            max_steps=int(ctl.get("max_steps", 255)),
            timeline=TimelineSpec(**timeline),
            faults=FaultSpec(**faults),
        )

    def to_dict(self) -> dict:
        o = self.object
        c = self.classifier
        return {
            "seed": self.seed,
            "environment": self.environment,
            "object": {
                "class": o.cls, "shape": o.shape, "width_mm": o.width_mm,
                "length_mm": o.length_mm, "height_mm": o.height_mm, "weight_g": o.weight_g,
                "friction": o.friction, "hold_depth": o.hold_depth,
                "position_m": list(o.position_m), "yaw_deg": o.yaw_deg,
                "texture": {"period_px": o.texture_period_px,
                            "orientation_deg": o.texture_orientation_deg},
            },
            "sensor": _as_dict(self.sensor),
            "filter": {"threshold": self.filter.threshold,
                       "kernel": int(self.filter.kernel.mask.shape[0]),
                       "sequence_length": self.filter.sequence_length},
            "classifier": {"contact_threshold": dict(c.contact_threshold),
                           "slip_method": c.slip_method,
                           "slip_threshold_brightness": c.slip_threshold_brightness,
                           "slip_threshold_cnn": c.slip_threshold_cnn},
            "controller": {"contact_count_threshold": self.contact_count_threshold,
                           "max_steps": self.max_steps},
            "timeline": _as_dict(self.timeline),
            "faults": _as_dict(self.faults),
        }


def _as_dict(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def _check_keys(section: str, data: dict, allowed) -> None:
    names = {f.name for f in fields(allowed)} if hasattr(allowed, "__dataclass_fields__") else set(allowed)
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown keys in [{section}]: {sorted(unknown)}")


def load_scenario(path: str | os.PathLike) -> ScenarioConfig:
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if data is not None and not isinstance(data, dict):
        raise ValueError(f"{path}: scenario must be a mapping")
    return ScenarioConfig.from_dict(data)


def dump_scenario(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
