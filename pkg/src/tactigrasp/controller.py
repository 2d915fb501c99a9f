"""Closed-loop grasp, release and slip-compensation loops for a stepwise gripper.

Each loop iteration samples the latest image(s) from both fingertip sensors,
classifies per unit, fuses the two labels and moves the gripper by at most one
motor step. Contact is fused with AND, slip with OR.
"""

from __future__ import annotations

import csv
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .classifiers import (
    ClassifierConfig,
    ProviderError,
    ScoreProvider,
    contact_classify,
    fuse_contact,
    fuse_slip,
    slip_evaluate,
)
from .tactile_image import FilteredImage, FrameSequence, TactileFrame

GRIPPER_SPAN_MM = 140.0

GRASPED = "grasped"
RELEASED = "released"
FAULT_NO_CONTACT = "fault_fully_closed_no_contact"
FAULT_SLIP_LIMIT = "fault_fully_closed_slip"
FAULT_PROVIDER = "fault_provider"
TIMEOUT = "timeout"

TRACE_HEADER = ("iteration", "label_A", "label_B", "fused", "gripper_step", "event")


class Gripper:
    """Two-finger gripper driven one motor step at a time (0 = fully open)."""

    def __init__(self, step: int = 0, max_steps: int = 255, span_mm: float = GRIPPER_SPAN_MM):
        if max_steps < 1:
            raise ValueError("max_steps must be positive")
        if not 0 <= step <= max_steps:
            raise ValueError(f"step {step} outside [0, {max_steps}]")
        self.step = step
        self.max_steps = max_steps
        self.span_mm = span_mm
        self.commands = 0

    def opening_mm(self, step: int | None = None) -> float:
        s = self.step if step is None else step
        return self.span_mm * (1.0 - s / self.max_steps)

    def step_for_opening(self, opening_mm: float) -> float:
        return self.max_steps * (1.0 - opening_mm / self.span_mm)

    def close(self, n: int = 1) -> bool:
        """Close by n steps; refuses (returns False) if it would pass the limit."""
        if self.step + n > self.max_steps:
            return False
        self.step += n
        self.commands += 1
        return True

    def open(self, n: int = 1) -> bool:
        if self.step - n < 0:
            return False
        self.step -= n
        self.commands += 1
        return True

    @property
    def fully_closed(self) -> bool:
        return self.step == self.max_steps

    def __repr__(self):
        return f"Gripper(step={self.step}, max_steps={self.max_steps})"


@dataclass(frozen=True)
class ControllerConfig:
    contact_count_threshold: int = 3
    max_loop_iterations: int | None = None
    max_steps: int = 255
    task: str = "grasp"

    def __post_init__(self):
        if self.contact_count_threshold < 1:
            raise ValueError("contact_count_threshold must be >= 1")
        if self.max_loop_iterations is None:
            object.__setattr__(self, "max_loop_iterations", self.max_steps + 16)
        if self.max_loop_iterations <= self.max_steps:
            raise ValueError("max_loop_iterations must exceed max_steps")
        if self.task not in ("grasp", "release"):
            raise ValueError(f"unknown task {self.task!r}")


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    label_a: int | None
    label_b: int | None
    fused: int | None
    gripper_step: int
    event: str

    def as_tuple(self):
        return (self.iteration, self.label_a, self.label_b, self.fused, self.gripper_step, self.event)


@dataclass
class GraspPhaseResult:
    outcome: str
    steps_taken: int = 0
    slip_events: int = 0
    trace: list[TraceRow] = field(default_factory=list)
    snapshots: list[tuple[int, str, FilteredImage]] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def ok(self) -> bool:
        return self.outcome in (GRASPED, RELEASED)


class LatestValue:
    """Single-slot mailbox: producers overwrite, readers never block."""

    def __init__(self, value=None):
        self._lock = threading.Lock()
        self._value = value
        self.version = 0

    def put(self, value) -> None:
        with self._lock:
            self._value = value
            self.version += 1

    def get(self):
        with self._lock:
            return self._value

    __call__ = get


def _contact_labels(sources, providers, ccfg):
    labels = []
    for source, provider in zip(sources, providers):
        frame: TactileFrame = source()
        labels.append(contact_classify(frame, provider, ccfg))
    return labels


def grasp_contact_loop(
    sources: Sequence[Callable[[], TactileFrame]],
    providers: Sequence[ScoreProvider],
    gripper: Gripper,
    cfg: ControllerConfig | None = None,
    ccfg: ClassifierConfig | None = None,
) -> GraspPhaseResult:
    """Close one step per fused no-contact until contact is seen on
    `contact_count_threshold` consecutive iterations."""
    cfg = cfg or ControllerConfig()
    ccfg = ccfg or ClassifierConfig()
    result = GraspPhaseResult(outcome=TIMEOUT)
    streak = 0
    for it in range(cfg.max_loop_iterations):
        try:
            la, lb = _contact_labels(sources, providers, ccfg)
        except ProviderError:
            result.trace.append(TraceRow(it, None, None, None, gripper.step, "fault"))
            result.outcome = FAULT_PROVIDER
            return result
        fused = fuse_contact(la, lb)
        if fused:
            streak += 1
            if streak >= cfg.contact_count_threshold:
                result.trace.append(TraceRow(it, la, lb, fused, gripper.step, "grasped"))
                result.outcome = GRASPED
                return result
            result.trace.append(TraceRow(it, la, lb, fused, gripper.step, "hold"))
            continue
        streak = 0
        if not gripper.close(1):
            result.trace.append(TraceRow(it, la, lb, fused, gripper.step, "fault"))
            result.outcome = FAULT_NO_CONTACT
            return result
        result.steps_taken += 1
        result.trace.append(TraceRow(it, la, lb, fused, gripper.step, "close"))
    return result


def release_loop(
    sources: Sequence[Callable[[], TactileFrame]],
    providers: Sequence[ScoreProvider],
    gripper: Gripper,
    cfg: ControllerConfig | None = None,
    ccfg: ClassifierConfig | None = None,
) -> GraspPhaseResult:
    """Open one step per fused contact; done at the first fused no-contact."""
    cfg = cfg or ControllerConfig(task="release")
    ccfg = ccfg or ClassifierConfig()
    result = GraspPhaseResult(outcome=TIMEOUT)
    for it in range(cfg.max_loop_iterations):
        try:
            la, lb = _contact_labels(sources, providers, ccfg)
        except ProviderError:
            result.trace.append(TraceRow(it, None, None, None, gripper.step, "fault"))
            result.outcome = FAULT_PROVIDER
            return result
        fused = fuse_contact(la, lb)
        if not fused:
            result.trace.append(TraceRow(it, la, lb, fused, gripper.step, "released"))
            result.outcome = RELEASED
            return result
        if gripper.open(1):
            result.steps_taken += 1
            result.trace.append(TraceRow(it, la, lb, fused, gripper.step, "open"))
        else:
            result.trace.append(TraceRow(it, la, lb, fused, gripper.step, "blocked"))
    return result


def check_robot_in_release_pose(pose_source, target: str) -> bool:
    """True iff the pose source's current waypoint tag is the release waypoint."""
    current = pose_source() if callable(pose_source) else pose_source
    return current == target


def grasp_slip_loop(
    sources: Sequence[Callable[[], FrameSequence]],
    gripper: Gripper,
    in_release_pose: Callable[[], bool],
    cfg: ControllerConfig | None = None,
    ccfg: ClassifierConfig | None = None,
    method: str | None = None,
    providers: Sequence[ScoreProvider] | None = None,
    compensate: bool = True,
    keep_snapshots: int = 0,
) -> GraspPhaseResult:
    """Hold an object until the release pose, closing one step per slip.

    `compensate=False` still detects and counts slips but never moves the
    gripper. Up to `keep_snapshots` filtered images of detected slips are kept.
    """
    cfg = cfg or ControllerConfig()
    ccfg = ccfg or ClassifierConfig()
    method = method or ccfg.slip_method
    providers = providers or (None, None)
    result = GraspPhaseResult(outcome=TIMEOUT)
    for it in range(cfg.max_loop_iterations):
        decisions = []
        try:
            for source, provider in zip(sources, providers):
                decisions.append(slip_evaluate(source(), ccfg, method, provider))
        except ProviderError:
            result.trace.append(TraceRow(it, None, None, None, gripper.step, "fault"))
            result.outcome = FAULT_PROVIDER
            return result
        la, lb = decisions[0].label, decisions[1].label
        fused = fuse_slip(la, lb)
        event = "stable"
        if fused:
            result.slip_events += 1
            for unit, d in zip("AB", decisions):
                if d.label and len(result.snapshots) < keep_snapshots:
                    result.snapshots.append((it, unit, d.image))
            if not compensate:
                event = "slip"
            elif gripper.close(1):
                result.steps_taken += 1
                event = "compensate"
            else:
                result.trace.append(TraceRow(it, la, lb, fused, gripper.step, "fault"))
                result.outcome = FAULT_SLIP_LIMIT
                return result
        result.trace.append(TraceRow(it, la, lb, fused, gripper.step, event))
        if in_release_pose():
            result.outcome = GRASPED
            return result
    return result


def write_trace_csv(path, rows: Sequence[TraceRow]) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in rows:
            w.writerow(["" if v is None else v for v in r.as_tuple()])
