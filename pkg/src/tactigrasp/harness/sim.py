"""Deterministic world model: gripper, held object and both tactile streams.

Time advances in camera frames (30 fps). Slip physics is a burst model: while
the object is lifted and the grip is shallower than the object's hold step,
it slips by a fixed displacement every `burst_period_frames`. Each burst that
is not answered by a closing step counts against the object; after
`falls_after` unanswered bursts it falls. While the fingers are still closing
on the object (not lifted) a light grip chatters: at depth k past first touch
the imprint is present for k + 1 frames, then gone for one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..controller import Gripper
from ..tactile_image import FrameSequence, TactileFrame
from .config import ScenarioConfig
from .render import NO_CONTACT, ImprintState, RenderParams, SurfaceTexture, TactileRenderer


@dataclass
class SimObject:
    touch_step: int
    hold_depth: int
    chatter_depth: int = 6
    falls_after: int = 3

    @property
    def required_hold_step(self) -> int:
        return self.touch_step + self.hold_depth


@dataclass(frozen=True)
class WorldEvent:
    frame: int
    event: str
    detail: str = ""


@dataclass
class World:
    obj: SimObject
    gripper: Gripper
    renderers: dict
    slip_vector: tuple[float, float] = (0.0, 10.0)
    burst_delay: int = 15
    burst_period: int = 45
    t: int = 0
    lifted: bool = False
    fallen: bool = False
    uncompensated: int = 0
    events: list[WorldEvent] = field(default_factory=list)

    def __post_init__(self):
        self.offset = (0.0, 0.0)
        self.next_burst: int | None = None
        self._last_step = self.gripper.step
        self._depth_since = 0
        self._reads = {u: 0 for u in self.renderers}
        self._frames: dict = {}
        self.states: list[ImprintState] = [self._imprint()]

    # ---- dynamics ----

    @property
    def secure(self) -> bool:
        return self.gripper.step >= self.obj.required_hold_step

    def lift(self) -> None:
        self.lifted = True
        self.next_burst = self.t + self.burst_delay
        self.events.append(WorldEvent(self.t, "lift"))

    def place(self) -> None:
        self.lifted = False
        self.next_burst = None
        self._depth_since = self.t
        self.events.append(WorldEvent(self.t, "place"))

    def reset_reads(self) -> None:
        self._reads = {u: 0 for u in self.renderers}

    def advance(self, n: int = 1) -> None:
        for _ in range(n):
            self.t += 1
            self._update()
            self.states.append(self._imprint())

    def _update(self) -> None:
        step = self.gripper.step
        if step != self._last_step:
            if step > self._last_step and self.lifted and not self.fallen and self.uncompensated:
                self.uncompensated -= 1
                self.events.append(WorldEvent(self.t, "compensated", f"step={step}"))
            self._last_step = step
            self._depth_since = self.t
        if (self.lifted and not self.fallen and self.next_burst is not None
                and self.t >= self.next_burst):
            self.next_burst += self.burst_period
            if not self.secure:
                ox, oy = self.offset
                self.offset = (ox + self.slip_vector[0], oy + self.slip_vector[1])
                self.uncompensated += 1
                self.events.append(WorldEvent(self.t, "burst", f"uncompensated={self.uncompensated}"))
                if self.uncompensated >= self.obj.falls_after:
                    self.fallen = True
                    self.events.append(WorldEvent(self.t, "fall"))

    def _imprint(self) -> ImprintState:
        if self.fallen:
            return NO_CONTACT
        depth = self.gripper.step - self.obj.touch_step
        if depth < 0:
            return NO_CONTACT
        if not self.lifted and depth < self.obj.chatter_depth:
            phase = (self.t - self._depth_since) % (depth + 2)
            if phase == depth + 1:
                return NO_CONTACT
        return ImprintState(True, depth, self.offset[0], self.offset[1])

    # ---- sensing ----

    def _sample(self, unit: str, frames: int) -> None:
        # the first unit read in an iteration moves time forward
        if self._reads[unit] >= max(self._reads.values()):
            self.advance(frames)
        self._reads[unit] += 1

    def frame_at(self, unit: str, index: int) -> TactileFrame:
        # consecutive windows share their end frame; keep a few recent ones
        key = (unit, index)
        hit = self._frames.get(key)
        if hit is None:
            hit = self.renderers[unit].frame(self.states[index], index)
            if len(self._frames) >= 16:
                self._frames.pop(next(iter(self._frames)))
            self._frames[key] = hit
        return hit

    def contact_source(self, unit: str):
        def latest() -> TactileFrame:
            self._sample(unit, 1)
            return self.frame_at(unit, self.t)
        return latest

    def sequence_source(self, unit: str, length: int = 4):
        stride = length - 1

        def latest() -> FrameSequence:
            self._sample(unit, stride)
            idx = range(self.t - stride, self.t + 1)
            return FrameSequence(tuple(self.frame_at(unit, max(i, 0)) for i in idx),
                                 unit=unit, length=length)
        return latest


def make_renderers(cfg: ScenarioConfig) -> dict:
    tex = SurfaceTexture(cfg.object.texture_period_px, cfg.object.texture_orientation_deg)
    params = RenderParams(noise=cfg.sensor.noise)
    return {
        "A": TactileRenderer("A", cfg.seed, tex, params),
        "B": TactileRenderer("B", cfg.seed, tex, params, mirror=True),
    }


def make_world(cfg: ScenarioConfig, touch_step: int, start_step: int) -> World:
    obj = SimObject(touch_step=touch_step, hold_depth=cfg.object.required_hold_depth,
                    chatter_depth=cfg.sensor.chatter_depth, falls_after=cfg.timeline.falls_after)
    gripper = Gripper(step=start_step, max_steps=cfg.max_steps)
    return World(obj, gripper, make_renderers(cfg), slip_vector=(0.0, cfg.sensor.slip_px),
                 burst_delay=cfg.timeline.burst_delay_frames,
                 burst_period=cfg.timeline.burst_period_frames)
