"""One simulated pickup: detect, compute the grasp, grasp on contact, carry
with slip compensation, release. Every module fault is mapped to a failure
stage instead of aborting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import pnm
from ..classifiers import synthetic_contact_provider
from ..controller import (
    ControllerConfig,
    GraspPhaseResult,
    check_robot_in_release_pose,
    grasp_contact_loop,
    grasp_slip_loop,
    release_loop,
    write_trace_csv,
    TraceRow,
)
from ..geometry import (
    DegenerateGeometryError,
    EmptyCloudError,
    GraspCandidate,
    ObjectTooWideError,
    check_workspace,
    compute_grasp,
    segment_cloud,
)
from ..metrics import EpisodeOutcome
from .config import ScenarioConfig, dump_scenario
from .render import frame_timestamp
from .scene import render_scene
from .sim import World, make_world

MIN_MASK_PIXELS = 50
MIN_VALID_DEPTH_FRACTION = 0.5


class WaypointScript:
    """Fixed sequence of (tag, iterations); advanced once per control iteration."""

    def __init__(self, schedule):
        self.schedule = list(schedule)
        self.ticks = 0

    @property
    def current(self) -> str:
        t = self.ticks
        for tag, n in self.schedule:
            if t < n:
                return tag
            t -= n
        return self.schedule[-1][0]

    def advance(self) -> str:
        self.ticks += 1
        return self.current


def transport_script(cfg: ScenarioConfig) -> WaypointScript:
    tl = cfg.timeline
    return WaypointScript([("lift", tl.lift_iterations), ("transport", tl.transport_iterations),
                           (f"container_{cfg.object.cls}", 1)])


@dataclass
class EpisodeResult:
    outcome: EpisodeOutcome
    config: ScenarioConfig
    phases: dict = field(default_factory=dict)
    grasp: GraspCandidate | None = None
    world: World | None = None
    notes: list = field(default_factory=list)

    @property
    def slip_events(self) -> int:
        slip = self.phases.get("carry")
        return slip.slip_events if slip else 0


def contact_providers(world: World):
    return tuple(synthetic_contact_provider(world.renderers[u].reference()) for u in "AB")


def run_grasp(world: World, cfg: ScenarioConfig, count: int | None = None) -> GraspPhaseResult:
    world.reset_reads()
    ctl = ControllerConfig(contact_count_threshold=count or cfg.contact_count, max_steps=cfg.max_steps)
    return grasp_contact_loop([world.contact_source(u) for u in "AB"], contact_providers(world),
                              world.gripper, ctl, cfg.classifier)


def run_carry(world: World, cfg: ScenarioConfig, script: WaypointScript,
              compensate: bool = True, keep_snapshots: int = 4) -> GraspPhaseResult:
    world.lift()
    world.reset_reads()
    target = script.schedule[-1][0]
    total = sum(n for _, n in script.schedule)
    ctl = ControllerConfig(max_steps=cfg.max_steps,
                           max_loop_iterations=max(cfg.max_steps + 16, total + 1))
    length = cfg.filter.sequence_length
    return grasp_slip_loop(
        [world.sequence_source(u, length) for u in "AB"],
        world.gripper,
        lambda: check_robot_in_release_pose(script.advance, target),
        ctl, cfg.classifier, compensate=compensate, keep_snapshots=keep_snapshots,
    )


def run_release(world: World, cfg: ScenarioConfig) -> GraspPhaseResult:
    world.place()
    world.reset_reads()
    ctl = ControllerConfig(max_steps=cfg.max_steps, task="release")
    return release_loop([world.contact_source(u) for u in "AB"], contact_providers(world),
                        world.gripper, ctl, cfg.classifier)


def _fail(cfg, stage, note, **kw) -> EpisodeResult:
    out = EpisodeOutcome(cfg.environment, cfg.object.cls, 1, False, stage)
    return EpisodeResult(out, cfg, notes=[note], **kw)


def run_episode(cfg: ScenarioConfig, attempt: int = 1) -> EpisodeResult:
    scene = render_scene(cfg)
    if int((scene.mask > 0).sum()) < MIN_MASK_PIXELS:
        return _fail(cfg, "detection", "no object mask")
    try:
        cloud = segment_cloud(scene.mask, scene.depth, scene.intrinsics, cfg.object.cls)
    except EmptyCloudError as exc:
        return _fail(cfg, "rgbd_reconstruction", str(exc))
    if cloud.valid_fraction < MIN_VALID_DEPTH_FRACTION:
        return _fail(cfg, "rgbd_reconstruction",
                     f"only {cloud.valid_fraction:.0%} of object pixels have depth")
    base_cloud = cloud.transformed(scene.ee_pose, scene.hand_eye)
    try:
        grasp = compute_grasp(base_cloud)
    except (ObjectTooWideError, DegenerateGeometryError) as exc:
        return _fail(cfg, "grasp_points", str(exc))
    if not check_workspace(grasp.midpoint, scene.workspace):
        return _fail(cfg, "grasp_points", "grasp outside workspace", grasp=grasp)

    probe = make_world(cfg, 0, 0).gripper
    touch_step = math.ceil(probe.step_for_opening(cfg.object.width_mm) - 1e-9)
    open_mm = min(probe.span_mm, grasp.opening_required_mm + cfg.timeline.approach_margin_mm)
    start_step = max(0, math.floor(probe.step_for_opening(open_mm)))
    if touch_step < 0:
        return _fail(cfg, "grasp_points", "object wider than the gripper span", grasp=grasp)
    if start_step >= touch_step:
        return _fail(cfg, "grasp_points", "pre-grasp opening narrower than the object", grasp=grasp)

    world = make_world(cfg, touch_step, start_step)
    result = EpisodeResult(EpisodeOutcome(cfg.environment, cfg.object.cls, attempt), cfg,
                           grasp=grasp, world=world)
    result.notes.append(f"pre_position={np.round(grasp.pre_position(), 4).tolist()}")

    grasp_phase = run_grasp(world, cfg)
    result.phases["grasp"] = grasp_phase
    if grasp_phase.outcome != "grasped":
        result.outcome = EpisodeOutcome(cfg.environment, cfg.object.cls, attempt, False,
                                        "contact_detection")
        return result

    carry = run_carry(world, cfg, transport_script(cfg))
    result.phases["carry"] = carry
    release = run_release(world, cfg)
    result.phases["release"] = release
    if world.fallen or carry.outcome != "grasped" or release.outcome != "released":
        result.outcome = EpisodeOutcome(cfg.environment, cfg.object.cls, attempt, False,
                                        "contact_detection")
    return result


def run_batch(configs) -> list[EpisodeOutcome]:
    """Episodes are independent; each carries its own seed."""
    return [run_episode(c).outcome for c in configs]


def write_episode(result: EpisodeResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenario.yaml").write_text(dump_scenario(result.config), encoding="utf-8")

    rows, events, n = [], [], 0
    for phase, res in result.phases.items():
        events.append(("", "", phase, "phase_start", f"iteration={n}"))
        for r in res.trace:
            rows.append(TraceRow(n, r.label_a, r.label_b, r.fused, r.gripper_step, r.event))
            n += 1
        events.append(("", "", phase, "phase_end", res.outcome))
    write_trace_csv(out / "trace.csv", rows)
    if result.world is not None:
        events += [(e.frame, frame_timestamp(e.frame), "world", e.event, e.detail)
                   for e in result.world.events]
    with open(out / "events.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "time_ms", "source", "event", "detail"])
        w.writerows(events)

    o = result.outcome
    summary = [
        ("environment", o.environment), ("class", o.cls), ("attempt", o.attempt),
        ("success", int(o.success)), ("failure_stage", o.failure_stage),
        ("slip_events", result.slip_events),
    ]
    if result.grasp is not None:
        summary.append(("opening_required_mm", f"{result.grasp.opening_required_mm:.3f}"))
    if result.world is not None:
        summary += [("final_step", result.world.gripper.step), ("fallen", int(result.world.fallen))]
    for phase, res in result.phases.items():
        summary.append((f"{phase}_outcome", res.outcome))
        summary.append((f"{phase}_steps", res.steps_taken))
    summary += [("note", n) for n in result.notes]
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", "value"])
        w.writerows(summary)

    carry = result.phases.get("carry")
    if carry is not None:
        for it, unit, img in carry.snapshots:
            pnm.write(out / f"psi_{it:04d}_{unit}.pgm", img.pixels)
