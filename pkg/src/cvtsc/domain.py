"""Core intersection vocabulary: phases, rings, barriers, messages, timing plans.

Phase numbering follows the standard North American dual-ring convention:
through movements are 2/4/6/8, protected lefts are 1/3/5/7, ring 1 holds
phases 1-4, ring 2 holds 5-8, and a barrier groups the four compatible
phases of one street (major: 1/2/5/6, minor: 3/4/7/8).
"""

from __future__ import annotations

from dataclasses import dataclass, field

GREEN = "green"
YELLOW = "yellow"
RED = "red"

ALL_PHASES = (1, 2, 3, 4, 5, 6, 7, 8)
THROUGH_PHASES = frozenset((2, 4, 6, 8))
LEFT_TURN_PHASES = frozenset((1, 3, 5, 7))
RING_1 = frozenset((1, 2, 3, 4))
RING_2 = frozenset((5, 6, 7, 8))
MAJOR_BARRIER = frozenset((1, 2, 5, 6))
MINOR_BARRIER = frozenset((3, 4, 7, 8))
BARRIERS = ("major", "minor")

# (barrier, ring) -> the two phases served there, odd (left-turn) phase first.
BARRIER_RING_PHASES = {
    ("major", 1): (1, 2),
    ("major", 2): (5, 6),
    ("minor", 1): (3, 4),
    ("minor", 2): (7, 8),
}


class InputError(ValueError):
    """Raised when a caller hands in a value outside the documented domain."""


def check_phase(phase: int) -> int:
    if phase not in RING_1 and phase not in RING_2:
        raise InputError(f"phase must be in 1..8, got {phase!r}")
    return phase


def ring_of(phase: int) -> int:
    check_phase(phase)
    return 1 if phase in RING_1 else 2


def barrier_of(phase: int) -> str:
    check_phase(phase)
    return "major" if phase in MAJOR_BARRIER else "minor"


def other_barrier(barrier: str) -> str:
    if barrier not in BARRIERS:
        raise InputError(f"unknown barrier {barrier!r}")
    return "minor" if barrier == "major" else "major"


def partner_of(phase: int) -> int:
    """The phase served by the same ring within the same barrier."""
    a, b = BARRIER_RING_PHASES[(barrier_of(phase), ring_of(phase))]
    return b if phase == a else a


def eta_of(position: float, speed: float, floor_speed: float = 1.0) -> float:
    """Estimated arrival time at the stop bar: distance over (floored) speed.

    Stopped vehicles would otherwise have an undefined arrival time, so the
    speed is clamped from below at ``floor_speed``.
    """
    if position < 0:
        raise InputError(f"position must be nonnegative, got {position}")
    if floor_speed <= 0:
        raise InputError(f"floor_speed must be positive, got {floor_speed}")
    return position / max(speed, floor_speed)


@dataclass(frozen=True)
class BsmRecord:
    """One 10 Hz kinematic broadcast from a (possibly fabricated) vehicle.

    ``position`` is lane-linear distance to the stop bar in meters.
    ``is_falsified`` is ground-truth bookkeeping only; nothing on the
    controller side may read it.
    """

    vehicle_id: str
    timestamp: float
    position: float
    speed: float
    phase: int
    is_falsified: bool = False

    def __post_init__(self):
        if self.position < 0:
            raise InputError(f"BSM position must be >= 0, got {self.position}")
        if self.speed < 0:
            raise InputError(f"BSM speed must be >= 0, got {self.speed}")
        check_phase(self.phase)


@dataclass(frozen=True)
class SpatRecord:
    """Signal state broadcast: per-phase color and remaining seconds."""

    timestamp: float
    states: tuple[str, ...]     # indexed by phase - 1
    remaining: tuple[float, ...]

    def state_of(self, phase: int) -> str:
        return self.states[check_phase(phase) - 1]

    def remaining_of(self, phase: int) -> float:
        return self.remaining[check_phase(phase) - 1]


@dataclass(frozen=True)
class TimingPlan:
    """Green allocation for one barrier.

    ``g_d1``/``g_d2`` are the lead greens of ring 1 / ring 2, ``g_g1``/``g_g2``
    the lag greens.  ``sequence`` names the lead phase of each ring.
    """

    g_d1: float
    g_d2: float
    g_g1: float
    g_g2: float
    sequence: tuple[int, int]
    barrier: str
    transition: float = 4.0

    def greens(self) -> tuple[float, float, float, float]:
        return (self.g_d1, self.g_d2, self.g_g1, self.g_g2)

    def green_of(self, phase: int) -> float:
        seq = self.sequence
        ring = ring_of(phase)
        lead = seq[ring - 1]
        if phase == lead:
            return self.g_d1 if ring == 1 else self.g_d2
        if phase == partner_of(lead):
            return self.g_g1 if ring == 1 else self.g_g2
        raise InputError(f"phase {phase} not in barrier {self.barrier}")

    @property
    def ring_sums(self) -> tuple[float, float]:
        return (self.g_d1 + self.g_g1, self.g_d2 + self.g_g2)

    @property
    def barrier_length(self) -> float:
        """Wall-clock barrier duration: ring-1 greens plus both transitions."""
        return self.g_d1 + self.g_g1 + 2.0 * self.transition


@dataclass
class ScenarioConfig:
    """Every constant the simulation, controller, and feature pipeline use.

    Defaults are the desk-scale study values: 400 veh/h per movement, 300 m
    communication range, 15.65 m/s free flow, greens in [5, 30] s, 4 s
    transitions, 10 Hz stepping.  The remaining fields pin choices the study
    leaves open (approach geometry, car-following parameters, feature
    windows) so that every run is fully reproducible from this object.
    """

    demand: float = 400.0               # veh/h per movement
    comm_range: float = 300.0           # m
    free_flow_speed: float = 15.65      # m/s
    g_min: float = 5.0                  # s
    g_max: float = 30.0                 # s
    transition_time: float = 4.0        # s, yellow + red clearance
    sim_resolution: int = 10            # Hz
    rng_seed: int = 1
    duration_hours: float = 1.0
    approach_length: float = 600.0      # m, entry happens outside comm range
    jam_spacing: float = 7.0            # m, Newell-type follower
    wave_speed: float = 5.0             # m/s, backward wave
    saturation_headway: float = 2.0     # s, controller's service model
    eta_floor_speed: float = 1.0        # m/s, arrival-time clamp
    headway_cap: float = 300.0          # s, HW feature when < 2 movers
    flow_rate_window: float = 300.0     # s, trailing window for FR
    objective: str = "delay"            # "delay" or "queue"
    demand_overrides: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.sim_resolution <= 0:
            raise InputError("sim_resolution must be positive")
        if self.objective not in ("delay", "queue"):
            raise InputError(f"objective must be 'delay' or 'queue', got {self.objective!r}")

    @property
    def dt(self) -> float:
        return 1.0 / self.sim_resolution

    def rate_for(self, phase: int) -> float:
        return float(self.demand_overrides.get(phase, self.demand))


@dataclass(frozen=True)
class PlanVerdict:
    ok: bool
    violation: str | None = None

    def __bool__(self) -> bool:
        return self.ok


_RING_TOL = 1e-6


def validate_plan(plan: TimingPlan, config: ScenarioConfig) -> PlanVerdict:
    """Accept a plan iff every structural invariant holds.

    The verdict names the first violated constraint; it never raises.
    """
    if plan.barrier not in BARRIERS:
        return PlanVerdict(False, f"unknown barrier {plan.barrier!r}")
    names = ("g_d1", "g_d2", "g_g1", "g_g2")
    for name, g in zip(names, plan.greens()):
        if g < config.g_min - _RING_TOL:
            return PlanVerdict(False, f"{name} = {g} below g_min = {config.g_min}")
        if g > config.g_max + _RING_TOL:
            return PlanVerdict(False, f"{name} = {g} above g_max = {config.g_max}")
    s1, s2 = plan.ring_sums
    if abs(s1 - s2) > _RING_TOL:
        return PlanVerdict(False, f"ring sums differ: {s1} vs {s2}")
    lead1, lead2 = plan.sequence
    for ring, lead in ((1, lead1), (2, lead2)):
        if lead not in RING_1 and lead not in RING_2:
            return PlanVerdict(False, f"sequence phase {lead!r} is not a phase")
        if ring_of(lead) != ring:
            return PlanVerdict(False, f"sequence phase {lead} is not in ring {ring}")
        if barrier_of(lead) != plan.barrier:
            return PlanVerdict(False, f"sequence phase {lead} is not in barrier {plan.barrier}")
    return PlanVerdict(True)


def format_bsm_line(rec: BsmRecord) -> str:
    """One BSM event-log line; timestamps are fixed point at 0.1 s."""
    return (
        f"BSM {rec.vehicle_id} {rec.timestamp:.1f} {rec.position!r} "
        f"{rec.speed!r} {rec.phase} {int(rec.is_falsified)}"
    )


def format_spat_line(rec: SpatRecord) -> str:
    cells = " ".join(
        f"{state[0]}:{rem:.1f}" for state, rem in zip(rec.states, rec.remaining)
    )
    return f"SPAT {rec.timestamp:.1f} {cells}"
