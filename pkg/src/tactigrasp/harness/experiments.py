"""Desk-scale experiments: slip compensation on/off, contact-count sweep and
slip-detection accuracy on scripted instabilities."""

from __future__ import annotations

import csv
import math
import statistics
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..classifiers import ClassifierConfig, slip_evaluate
from ..geometry import CLASSES
from ..metrics import ConfusionCounts, accuracy
from ..tactile_image import FrameSequence, brightness, filter_image
from .config import ObjectSpec, ScenarioConfig
from .episode import WaypointScript, run_carry, run_grasp
from .render import ImprintState, RenderParams, SurfaceTexture, TactileRenderer
from .sim import World, make_world

LIFT_SECONDS = 15.0
FPS = 30.0


# ---- slip compensation -------------------------------------------------


def slip_comp_scenario(seed: int = 0) -> ScenarioConfig:
    """Plastic bottle with a little water: one step heavier than the count-3 grip."""
    obj = ObjectSpec.for_class("plastic", weight_g=105.0)
    return ScenarioConfig(seed=seed, object=obj)


@dataclass
class LiftRun:
    cls: str
    count: int
    compensate: bool
    grasp_step: int
    hold_step: int
    slip_events: int
    fell: bool
    fall_time_s: float | None
    final_step: int
    timeline: list = field(default_factory=list)

    @property
    def retained(self) -> bool:
        return not self.fell


def _touch_step(cfg: ScenarioConfig) -> int:
    g = make_world(cfg, 0, 0).gripper
    return math.ceil(g.step_for_opening(cfg.object.width_mm) - 1e-9)


def lift_run(cfg: ScenarioConfig, compensate: bool = True, count: int | None = None,
             seconds: float = LIFT_SECONDS) -> LiftRun:
    """Grasp with the contact gate, then hold through a lift of `seconds`."""
    touch = _touch_step(cfg)
    world = make_world(cfg, touch, max(0, touch - 10))
    count = count or cfg.contact_count
    grasp = run_grasp(world, cfg, count)
    if grasp.outcome != "grasped":
        raise RuntimeError(f"grasp failed before lift: {grasp.outcome}")
    grasp_step = world.gripper.step
    stride = cfg.filter.sequence_length - 1
    iterations = int(round(seconds * FPS / stride))
    lift_start = world.t
    carry = run_carry(world, cfg, WaypointScript([("lift", iterations), ("hold_end", 1)]),
                      compensate=compensate, keep_snapshots=0)
    fall = next((e.frame for e in world.events if e.event == "fall"), None)
    timeline, total = [], 0
    for row in carry.trace:
        total += row.fused or 0
        t = (row.iteration + 1) * stride / FPS
        timeline.append((row.iteration, round(t, 4), row.fused, total, row.gripper_step,
                         int(fall is not None and lift_start + (row.iteration + 1) * stride >= fall)))
    return LiftRun(cfg.object.cls, count, compensate, grasp_step, world.obj.required_hold_step,
                   carry.slip_events, world.fallen,
                   None if fall is None else round((fall - lift_start) / FPS, 4),
                   world.gripper.step, timeline)


def experiment_slip_compensation(cfg: ScenarioConfig | None = None, compensate: bool = True,
                                 seconds: float = LIFT_SECONDS) -> LiftRun:
    return lift_run(cfg or slip_comp_scenario(), compensate=compensate, seconds=seconds)


# ---- contact-count sweep ----------------------------------------------


@dataclass
class SweepResult:
    runs: list
    minimal: dict

    def rows(self):
        for r in self.runs:
            yield (r.cls, r.count, r.grasp_step, r.hold_step, r.slip_events, int(r.fell),
                   int(r.slip_events <= 1 and not r.fell))


def is_stable(run: LiftRun) -> bool:
    return run.slip_events <= 1 and not run.fell


def experiment_contact_sweep(counts=(1, 2, 3, 4, 5, 6), classes=CLASSES, seed: int = 0,
                             seconds: float = LIFT_SECONDS) -> SweepResult:
    runs, minimal = [], {}
    for name in classes:
        cfg = ScenarioConfig(seed=seed, object=ObjectSpec.for_class(name))
        for n in counts:
            run = lift_run(cfg, compensate=True, count=n, seconds=seconds)
            runs.append(run)
            if is_stable(run) and name not in minimal:
                minimal[name] = n
    return SweepResult(runs, minimal)


# ---- slip-detection accuracy ------------------------------------------

# Three test objects, each perturbed 15 times: 5 translations along the image
# x axis, 5 along y and 5 rotations about the contact centre. Magnitudes are
# px for translations and degrees for rotations.
ACCURACY_OBJECTS = {
    "bottle": dict(texture=SurfaceTexture(22.0, 40.0),
                   tx=(8, 10, 12, 9, 11), ty=(10, 12, 14, 11, 13), rot=(12, 14, 10, 9, 13)),
    "can": dict(texture=SurfaceTexture(20.0, 90.0),
                tx=(18, 20, 16, 14, 22), ty=(6, 8, 10, 9, 7), rot=(10, 12, 14, 11, 13)),
    "box": dict(texture=SurfaceTexture(26.0, 65.0),
                tx=(12, 14, 13, 16, 10), ty=(6, 8, 10, 12, 11), rot=(12, 14, 13, 16, 9)),
}
RELAX_FRACTION = 0.4
QUIET_WINDOWS = 3
CONTACT_DEPTH = 3


@dataclass(frozen=True)
class Instability:
    obj: str
    kind: str
    magnitude: float
    window: int


def build_instability_stream(obj: str, spec: dict, quiet: int = QUIET_WINDOWS,
                             relax: float = RELAX_FRACTION):
    """Per-frame imprint states plus the instability list.

    Windows are 3 frames long and share end frames. Each instability moves the
    imprint within one window; the following window relaxes a fraction of it.
    """
    states = [ImprintState(True, CONTACT_DEPTH)]
    dx = dy = ang = 0.0
    instabilities = []
    schedule = [(k, m) for k in ("tx", "ty", "rot") for m in spec[k]]

    def hold(windows):
        for _ in range(3 * windows):
            states.append(states[-1])

    def move(ddx, ddy, dang):
        nonlocal dx, dy, ang
        # two transitions of motion, then one at rest
        for frac in (0.5, 1.0):
            states.append(ImprintState(True, CONTACT_DEPTH, dx + frac * ddx, dy + frac * ddy,
                                       ang + frac * dang))
        dx, dy, ang = dx + ddx, dy + ddy, ang + dang
        states.append(states[-1])

    hold(quiet)
    for i, (kind, m) in enumerate(schedule):
        sign = 1.0 if i % 2 == 0 else -1.0
        delta = {"tx": (sign * m, 0.0, 0.0), "ty": (0.0, sign * m, 0.0),
                 "rot": (0.0, 0.0, sign * m)}[kind]
        instabilities.append(Instability(obj, kind, float(m), (len(states) - 1) // 3))
        move(*delta)
        move(*(-relax * v for v in delta))
        hold(quiet)
    return states, instabilities


@dataclass
class AccuracyRow:
    unit: str
    method: str
    threshold: float
    detected: int
    instabilities: int
    false_positives: int
    accuracy: float


@dataclass
class AccuracyReport:
    rows: list
    window_values: dict
    median_ms: float
    windows: int
    seconds: float

    def get(self, unit: str, threshold: float) -> AccuracyRow:
        return next(r for r in self.rows if r.unit == unit and r.threshold == threshold)


def experiment_slip_accuracy(thresholds=(5.0, 10.0, 15.0), seed: int = 0, noise: int = 5,
                             objects: dict | None = None) -> AccuracyReport:
    """Brightness-method accuracy per sensor over the scripted instabilities.

    Accuracy counts each instability as one trial (detected if any window
    covering its motion is flagged). Flags on windows without motion are
    reported as false positives.
    """
    t0 = time.perf_counter()
    objects = objects or ACCURACY_OBJECTS
    values: dict = {}
    timings = []
    truth_windows: dict = {}
    for obj, spec in objects.items():
        states, insts = build_instability_stream(obj, spec)
        truth_windows[obj] = {i.window: i for i in insts}
        for unit in ("A", "B"):
            r = TactileRenderer(unit, seed, spec["texture"], RenderParams(noise=noise),
                                mirror=unit == "B")
            frames = [r.frame(s, i) for i, s in enumerate(states)]
            vals = []
            for w in range((len(frames) - 1) // 3):
                seq = FrameSequence(tuple(frames[3 * w : 3 * w + 4]), unit=unit)
                start = time.perf_counter()
                v = brightness(filter_image(seq))
                timings.append(time.perf_counter() - start)
                vals.append(v)
            values[(obj, unit)] = vals
    rows = []
    for unit in ("A", "B"):
        for t in thresholds:
            detected = fp = total = 0
            for obj in objects:
                vals = values[(obj, unit)]
                truth = truth_windows[obj]
                for w, v in enumerate(vals):
                    if w in truth:
                        total += 1
                        detected += v >= t
                    elif v >= t:
                        fp += 1
            counts = ConfusionCounts(tp=detected, fn=total - detected)
            rows.append(AccuracyRow(unit, "brightness", t, detected, total, fp, accuracy(counts)))
    n = len(timings)
    return AccuracyReport(rows, values, statistics.median(timings) * 1000.0, n,
                          time.perf_counter() - t0)


# ---- CSV writers ------------------------------------------------------


def _write(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_lift_timeline(path, run: LiftRun) -> None:
    _write(path, ["iteration", "time_s", "slip", "cumulative_slips", "gripper_step", "fallen"],
           run.timeline)


def write_sweep(path, sweep: SweepResult) -> None:
    _write(path, ["class", "contact_count", "grasp_step", "hold_step", "slip_events", "fell",
                  "stable"], sweep.rows())


def write_accuracy(path, report: AccuracyReport) -> None:
    _write(path, ["unit", "method", "threshold", "detected", "instabilities", "false_positives",
                  "accuracy"],
           [(r.unit, r.method, r.threshold, r.detected, r.instabilities, r.false_positives,
             f"{r.accuracy:.6f}") for r in report.rows])
