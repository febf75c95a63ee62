"""Deterministic 10 Hz microsimulation of a 4-leg, 8-lane intersection.

One lane per movement (a protected left and a through lane per approach),
Poisson arrivals per movement, and a Newell-type kinematic-wave follower:
each vehicle drives at ``min(v_free, w * (gap - jam) / jam)`` where ``gap``
is the spacing to its leader.  A red or yellow signal acts as a stationary
obstacle one jam spacing behind the stop bar, so the front vehicle rolls to
a stop exactly at the bar and queued vehicles stack at jam spacing.

Vehicles enter at ``approach_length`` (outside the communication range),
are removed well past the stop bar, and can never cross on red: a blocked
leader's speed decays with distance and reaches zero at the bar.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .domain import ALL_PHASES, BsmRecord, ScenarioConfig

_TRIM_MARGIN = 40.0   # m past the stop bar before a vehicle stops mattering
_GAP_EPS = 1e-9


class SimulationError(RuntimeError):
    """Internal consistency fault: overlap, red crossing, or lost vehicles."""


@dataclass
class Vehicle:
    """Snapshot view of one vehicle's state (the world stores arrays)."""

    id: int
    phase: int
    position: float
    speed: float
    entry_time: float
    exit_time: float | None
    free_flow_travel_time: float


@dataclass
class ArrivalProcess:
    """Seeded Poisson arrival stream for one movement."""

    rate: float                    # veh/h
    rng: np.random.Generator

    def next_gap(self) -> float:
        if self.rate <= 0:
            return math.inf
        return float(self.rng.exponential(3600.0 / self.rate))


class _Lane:
    """Struct-of-arrays storage; index 0 is the vehicle closest to the bar."""

    __slots__ = ("ids", "pos", "spd", "entry", "exit")

    def __init__(self):
        self.ids: list[int] = []
        self.pos: list[float] = []
        self.spd: list[float] = []
        self.entry: list[float] = []
        self.exit: list[float | None] = []


class World:
    """Mutable simulation state, stepped synchronously one tick at a time."""

    def __init__(self, config: ScenarioConfig,
                 trajectory_writer: Callable[[str], None] | None = None):
        self.config = config
        self.tick = 0
        self.lanes: dict[int, _Lane] = {p: _Lane() for p in ALL_PHASES}
        self.backlog: dict[int, list[tuple[int, float]]] = {p: [] for p in ALL_PHASES}
        self.arrivals: dict[int, ArrivalProcess] = {}
        self.next_arrival: dict[int, float] = {}
        for phase in ALL_PHASES:
            proc = ArrivalProcess(
                rate=config.rate_for(phase),
                rng=np.random.default_rng([config.rng_seed, phase]),
            )
            self.arrivals[phase] = proc
            self.next_arrival[phase] = proc.next_gap()
        self.spawned = 0
        self.departed = 0
        self.departed_delay = 0.0
        self.crossings: dict[int, list[float]] = {p: [] for p in ALL_PHASES}
        self._hasher = hashlib.sha256()
        self._next_id = 0
        self._fftt = config.approach_length / config.free_flow_speed
        self._trajectory_writer = trajectory_writer

    @property
    def now(self) -> float:
        return self.tick * self.config.dt

    @property
    def free_flow_travel_time(self) -> float:
        return self._fftt

    def in_network(self) -> int:
        on_road = sum(
            sum(1 for p in lane.pos if p >= 0) for lane in self.lanes.values()
        )
        queued = sum(len(b) for b in self.backlog.values())
        return on_road + queued

    def check_conservation(self) -> bool:
        return self.spawned == self.departed + self.in_network()

    def arrival_digest(self) -> str:
        return self._hasher.hexdigest()

    # -- stepping ----------------------------------------------------------

    def step(self, green_phases: Iterable[int]) -> None:
        """Advance the world by one tick under the given set of green phases."""
        cfg = self.config
        green = green_phases if isinstance(green_phases, (set, frozenset)) else set(green_phases)
        dt = cfg.dt
        t_next = (self.tick + 1) * dt
        vf = cfg.free_flow_speed
        jam = cfg.jam_spacing
        w_over_jam = cfg.wave_speed / jam

        for phase in ALL_PHASES:
            if self.next_arrival[phase] <= t_next:
                self._spawn_due(phase, t_next)

        for phase in ALL_PHASES:
            lane = self.lanes[phase]
            n = len(lane.pos)
            if n:
                green_p = phase in green
                pos = lane.pos
                spd = lane.spd
                prev_old = 0.0
                prev_new = 0.0
                for i in range(n):
                    p = pos[i]
                    if i == 0:
                        v = vf
                    else:
                        v = w_over_jam * (p - prev_old - jam)
                        if v > vf:
                            v = vf
                        elif v < 0.0:
                            v = 0.0
                    if p >= 0.0 and not green_p:
                        # blocked signal: stationary obstacle at the stop bar
                        v_bar = w_over_jam * p
                        if v_bar < v:
                            v = v_bar
                    new_p = p - v * dt
                    if p >= 0.0 and new_p < 0.0:
                        if not green_p:
                            raise SimulationError(
                                f"vehicle {lane.ids[i]} crossed phase {phase} stop bar on red"
                            )
                        lane.exit[i] = t_next
                        self.departed += 1
                        self.departed_delay += (t_next - lane.entry[i]) - self._fftt
                        self.crossings[phase].append(t_next)
                    if i and new_p - prev_new < jam - _GAP_EPS:
                        raise SimulationError(
                            f"spacing fault on phase {phase}: gap {new_p - prev_new:.3f} m"
                        )
                    pos[i] = new_p
                    spd[i] = v
                    prev_old = p
                    prev_new = new_p
                while lane.pos and lane.pos[0] < -_TRIM_MARGIN:
                    lane.ids.pop(0)
                    lane.pos.pop(0)
                    lane.spd.pop(0)
                    lane.entry.pop(0)
                    lane.exit.pop(0)
            self._admit(phase)

        self.tick += 1
        if self._trajectory_writer is not None:
            self._write_trajectories()

    def _spawn_due(self, phase: int, t_next: float) -> None:
        proc = self.arrivals[phase]
        while self.next_arrival[phase] <= t_next:
            at = self.next_arrival[phase]
            vid = self._next_id
            self._next_id += 1
            self.backlog[phase].append((vid, at))
            self.spawned += 1
            self._hasher.update(f"{phase}:{at!r};".encode())
            self.next_arrival[phase] = at + proc.next_gap()

    def _admit(self, phase: int) -> None:
        cfg = self.config
        lane = self.lanes[phase]
        queue = self.backlog[phase]
        while queue:
            gap = cfg.approach_length - lane.pos[-1] if lane.pos else math.inf
            if gap < cfg.jam_spacing:
                break
            vid, at = queue.pop(0)
            speed = min(cfg.free_flow_speed,
                        max(0.0, cfg.wave_speed * (gap - cfg.jam_spacing) / cfg.jam_spacing))
            lane.ids.append(vid)
            lane.pos.append(cfg.approach_length)
            lane.spd.append(speed)
            lane.entry.append(at)
            lane.exit.append(None)

    def _write_trajectories(self) -> None:
        t = self.now
        write = self._trajectory_writer
        for phase in ALL_PHASES:
            lane = self.lanes[phase]
            for i in range(len(lane.pos)):
                write(f"TRAJ {lane.ids[i]} {t:.1f} {lane.pos[i]!r} {lane.spd[i]!r} {phase}\n")

    def place_vehicle(self, phase: int, position: float, speed: float = 0.0,
                      entry_time: float | None = None) -> int:
        """Insert a vehicle directly (scenario setup); keeps lane ordering."""
        lane = self.lanes[phase]
        vid = self._next_id
        self._next_id += 1
        idx = 0
        while idx < len(lane.pos) and lane.pos[idx] < position:
            idx += 1
        lane.ids.insert(idx, vid)
        lane.pos.insert(idx, position)
        lane.spd.insert(idx, speed)
        lane.entry.insert(idx, self.now if entry_time is None else entry_time)
        lane.exit.insert(idx, None)
        self.spawned += 1
        return vid

    # -- observation -------------------------------------------------------

    def emit_bsms(self) -> list[BsmRecord]:
        """Broadcasts heard by the roadside unit this tick.

        Exactly the vehicles between the stop bar and the communication
        range appear; vehicles past the bar have left the approach.
        """
        t = self.now
        rng = self.config.comm_range
        out: list[BsmRecord] = []
        for phase in ALL_PHASES:
            lane = self.lanes[phase]
            for i in range(len(lane.pos)):
                p = lane.pos[i]
                if p < 0.0:
                    continue
                if p > rng:
                    break   # positions ascend; everything later is farther
                out.append(BsmRecord(str(lane.ids[i]), t, p, lane.spd[i], phase))
        return out

    def vehicles(self) -> list[Vehicle]:
        out = []
        for phase in ALL_PHASES:
            lane = self.lanes[phase]
            for i in range(len(lane.pos)):
                out.append(Vehicle(lane.ids[i], phase, lane.pos[i], lane.spd[i],
                                   lane.entry[i], lane.exit[i], self._fftt))
        return out

    def total_delay(self) -> float:
        """Accumulated delay through the current instant.

        Departed vehicles contribute travel time minus free-flow time;
        vehicles still in the network contribute the delay accrued so far,
        and vehicles waiting to enter contribute their full wait.
        """
        t = self.now
        cfg = self.config
        total = self.departed_delay
        for phase in ALL_PHASES:
            lane = self.lanes[phase]
            for i in range(len(lane.pos)):
                if lane.exit[i] is not None:
                    continue
                traveled = cfg.approach_length - lane.pos[i]
                total += max(0.0, (t - lane.entry[i]) - traveled / cfg.free_flow_speed)
            for _vid, at in self.backlog[phase]:
                total += t - at
        return total

    def vd_by_phase(self) -> dict[int, float]:
        """Summed accrued delay of in-range vehicles, per phase."""
        t = self.now
        cfg = self.config
        out = {}
        for phase in ALL_PHASES:
            lane = self.lanes[phase]
            acc = 0.0
            for i in range(len(lane.pos)):
                p = lane.pos[i]
                if p < 0.0 or p > cfg.comm_range:
                    continue
                traveled = cfg.approach_length - p
                acc += max(0.0, (t - lane.entry[i]) - traveled / cfg.free_flow_speed)
            out[phase] = acc
        return out

    def fr_by_phase(self) -> dict[int, float]:
        """Stop-bar crossings in the trailing window, scaled to veh/h."""
        t = self.now
        window = self.config.flow_rate_window
        out = {}
        for phase in ALL_PHASES:
            events = self.crossings[phase]
            cutoff = t - window
            while events and events[0] <= cutoff:
                events.pop(0)
            out[phase] = len(events) * 3600.0 / window
        return out
