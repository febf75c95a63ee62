"""Barrier-timing controller: snapshot ETAs in, executable timing plan out.

At the start of every barrier the controller snapshots all in-range
broadcasts, converts each vehicle to an arrival-time estimate, and solves a
two-level program on a 1-second grid:

* lower level - given a barrier and its wall-clock length, enumerate the
  lead/lag split and phase order per ring and keep the one minimizing the
  predicted objective: a deterministic queue discharge of the snapshot
  against the candidate green windows at the configured saturation
  headway.  Vehicles already stopped at the approach (speed below the
  arrival-time floor) count as arrived; moving vehicles arrive at their
  snapshot ETA.  Vehicles not served within a window accrue delay to the
  end of a fixed planning horizon of two maximum-length barriers;
* upper level - enumerate the lengths of two consecutive stages (the
  current barrier, then the other street's barrier fed by the same
  snapshot), minimize the combined objective, and execute only stage 1,
  recording stage 2's length and phase order.

Ties are resolved totally: smallest total objective, then smallest stage-1
and stage-2 lengths, then per ring the smallest lead green and the odd
(left-turn) phase leading.  The controller is therefore a deterministic
function of the snapshot and the configuration; vehicle identities and the
falsified-data bookkeeping flag are never consulted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .domain import (
    ALL_PHASES,
    BARRIER_RING_PHASES,
    GREEN,
    RED,
    YELLOW,
    BsmRecord,
    InputError,
    ScenarioConfig,
    SpatRecord,
    TimingPlan,
    eta_of,
    other_barrier,
    validate_plan,
)


@dataclass(frozen=True)
class SnapshotEntry:
    vehicle_id: str
    eta: float
    position: float
    speed: float


@dataclass(frozen=True)
class Snapshot:
    """All broadcasts heard at one optimization instant, grouped by phase."""

    timestamp: float
    per_phase: Mapping[int, tuple[SnapshotEntry, ...]]

    @classmethod
    def from_bsms(cls, bsms: Iterable[BsmRecord], timestamp: float,
                  config: ScenarioConfig) -> "Snapshot":
        grouped: dict[int, list[SnapshotEntry]] = {p: [] for p in ALL_PHASES}
        for rec in bsms:
            grouped[rec.phase].append(SnapshotEntry(
                rec.vehicle_id,
                eta_of(rec.position, rec.speed, config.eta_floor_speed),
                rec.position,
                rec.speed,
            ))
        return cls(timestamp, {p: tuple(v) for p, v in grouped.items()})

    def etas_of(self, phase: int) -> list[float]:
        return [e.eta for e in self.per_phase.get(phase, ())]

    def arrivals_of(self, phase: int, floor_speed: float) -> list[float]:
        """Service-model arrival times: stopped vehicles have arrived."""
        return [
            0.0 if e.speed < floor_speed else e.eta
            for e in self.per_phase.get(phase, ())
        ]


@dataclass(frozen=True)
class DpStage:
    """One stage of the two-stage program: a barrier and a candidate length."""

    index: int
    barrier: str
    barrier_length: int    # wall-clock seconds, greens plus both transitions


@dataclass(frozen=True)
class LowerLevelResult:
    greens_by_phase: dict[int, int]
    sequence: tuple[int, int]
    delay: float


@dataclass(frozen=True)
class OptimizationResult:
    plan: TimingPlan
    stage2: DpStage
    stage2_sequence: tuple[int, int]
    predicted_delay: float


class _PhaseGrid:
    """Window objective table for one phase's service-model arrivals.

    With sorted arrival times e_0 <= ... <= e_{n-1} and saturation
    headway h, service times under a green window starting at s follow
    dep_i = max(e_i, dep_{i-1} + h) with dep_{-1} = s - h, which closes to
    dep_i = i*h + max(s, max_{j<=i}(e_j - j*h)).  A vehicle is served iff
    dep_i < s + g; served vehicles contribute dep_i - e_i, unserved ones
    max(0, horizon - e_i) (or a count of 1 under the queue objective).
    """

    def __init__(self, arrivals: Sequence[float], headway: float, horizon: float,
                 s_count: int, g_lo: int, g_hi: int, objective: str):
        self.g_lo = g_lo
        n = len(arrivals)
        g_count = g_hi - g_lo + 1
        if n == 0:
            self.table = np.zeros((s_count, g_count))
            return
        e = np.sort(np.asarray(arrivals, dtype=float))
        idx = np.arange(n, dtype=float)
        m = np.maximum.accumulate(e - idx * headway)
        eta_prefix = np.concatenate(([0.0], np.cumsum(e)))
        leftover = np.maximum(horizon - e, 0.0)
        unserved = np.concatenate((np.cumsum(leftover[::-1])[::-1], [0.0]))
        g_arr = np.arange(g_lo, g_hi + 1, dtype=float)
        table = np.empty((s_count, g_count))
        for s in range(s_count):
            dep = idx * headway + np.maximum(float(s), m)
            served = np.searchsorted(dep, float(s) + g_arr, side="left")
            if objective == "queue":
                table[s] = n - served
            else:
                dep_prefix = np.concatenate(([0.0], np.cumsum(dep)))
                table[s] = (dep_prefix[served] - eta_prefix[served]) + unserved[served]
        self.table = table

    def cost(self, start: int, green: int) -> float:
        return float(self.table[start, green - self.g_lo])


class BarrierOptimizer:
    """Config-bound solver; build once and reuse across optimizations."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.g_min = int(round(config.g_min))
        self.g_max = int(round(config.g_max))
        self.trans = int(round(config.transition_time))
        self.length_min = 2 * self.g_min + 2 * self.trans
        self.length_max = 2 * self.g_max + 2 * self.trans
        # unserved arrivals accrue to this horizon: the two planned stages
        # plus the latest observable arrival estimate, so every snapshot
        # vehicle keeps weight in the objective
        self.horizon = float(
            2 * self.length_max
            + config.comm_range / config.eta_floor_speed
        )
        self._s_count = self.length_max + self.g_max + self.trans + 1

    # -- shared machinery ----------------------------------------------------

    def _grids(self, snapshot: Snapshot) -> dict[int, _PhaseGrid]:
        return {
            phase: _PhaseGrid(
                snapshot.arrivals_of(phase, self.config.eta_floor_speed),
                self.config.saturation_headway,
                self.horizon,
                self._s_count,
                self.g_min,
                self.g_max,
                self.config.objective,
            )
            for phase in ALL_PHASES
        }

    def _check_length(self, barrier_length: int) -> int:
        length = int(barrier_length)
        if length != barrier_length or not self.length_min <= length <= self.length_max:
            raise InputError(
                f"barrier length must be an integer in "
                f"[{self.length_min}, {self.length_max}], got {barrier_length!r}"
            )
        return length

    def _split_bounds(self, green_sum: int) -> range:
        lo = max(self.g_min, green_sum - self.g_max)
        hi = min(self.g_max, green_sum - self.g_min)
        return range(lo, hi + 1)

    # -- lower level -----------------------------------------------------------

    def lower_level(self, snapshot: Snapshot, barrier: str, barrier_length: int,
                    offset: int = 0,
                    grids: dict[int, _PhaseGrid] | None = None) -> LowerLevelResult:
        """Best split and phase order for one barrier of the given length.

        Candidates are enumerated at 1 s granularity; ties fall to the
        smallest lead green, then to the odd phase leading.
        """
        length = self._check_length(barrier_length)
        if grids is None:
            grids = self._grids(snapshot)
        green_sum = length - 2 * self.trans
        greens: dict[int, int] = {}
        sequence = []
        total = 0.0
        for ring in (1, 2):
            odd, even = BARRIER_RING_PHASES[(barrier, ring)]
            best = None
            for g_lead in self._split_bounds(green_sum):
                g_lag = green_sum - g_lead
                lag_start = offset + g_lead + self.trans
                for lead, lag in ((odd, even), (even, odd)):
                    d = grids[lead].cost(offset, g_lead) + grids[lag].cost(lag_start, g_lag)
                    if best is None or d < best[0]:
                        best = (d, g_lead, g_lag, lead, lag)
            d, g_lead, g_lag, lead, lag = best
            greens[lead] = g_lead
            greens[lag] = g_lag
            sequence.append(lead)
            total += d
        return LowerLevelResult(greens, tuple(sequence), total)

    # -- upper level -----------------------------------------------------------

    def _ring_table(self, grids, barrier: str, ring: int,
                    offsets: np.ndarray, green_sums: np.ndarray) -> np.ndarray:
        """Minimum ring cost over (lead choice, split) for every (offset, sum)."""
        odd, even = BARRIER_RING_PHASES[(barrier, ring)]
        table = np.full((len(offsets), len(green_sums)), np.inf)
        for lead, lag in ((odd, even), (even, odd)):
            lead_grid = grids[lead].table
            lag_grid = grids[lag].table
            for g_lead in range(self.g_min, self.g_max + 1):
                g_lag = green_sums - g_lead
                valid = (g_lag >= self.g_min) & (g_lag <= self.g_max)
                if not valid.any():
                    continue
                lag_starts = offsets + g_lead + self.trans
                lead_cost = lead_grid[offsets, g_lead - self.g_min]
                block = lag_grid[np.ix_(lag_starts, g_lag[valid] - self.g_min)]
                cand = lead_cost[:, None] + block
                table[:, valid] = np.minimum(table[:, valid], cand)
        return table

    def optimize(self, snapshot: Snapshot, barrier: str,
                 lengths1: Sequence[int] | None = None,
                 lengths2: Sequence[int] | None = None) -> OptimizationResult:
        """Two-stage length enumeration; returns the executable stage-1 plan."""
        grids = self._grids(snapshot)
        full = range(self.length_min, self.length_max + 1)
        l1 = np.array(sorted(self._check_length(x) for x in (lengths1 or full)), dtype=int)
        l2 = np.array(sorted(self._check_length(x) for x in (lengths2 or full)), dtype=int)
        second = other_barrier(barrier)
        sums1 = l1 - 2 * self.trans
        sums2 = l2 - 2 * self.trans
        zero = np.zeros(1, dtype=int)
        stage1 = sum(
            self._ring_table(grids, barrier, ring, zero, sums1)[0] for ring in (1, 2)
        )
        stage2 = sum(
            self._ring_table(grids, second, ring, l1, sums2) for ring in (1, 2)
        )
        total = stage1[:, None] + stage2
        flat = int(np.argmin(total))           # first minimum: smallest L1, then L2
        i, j = divmod(flat, total.shape[1])
        len1 = int(l1[i])
        len2 = int(l2[j])
        low1 = self.lower_level(snapshot, barrier, len1, 0, grids)
        low2 = self.lower_level(snapshot, second, len2, len1, grids)
        lead1, lead2 = low1.sequence
        plan = TimingPlan(
            g_d1=float(low1.greens_by_phase[lead1]),
            g_d2=float(low1.greens_by_phase[lead2]),
            g_g1=float(low1.greens_by_phase[_lag_of(barrier, 1, lead1)]),
            g_g2=float(low1.greens_by_phase[_lag_of(barrier, 2, lead2)]),
            sequence=low1.sequence,
            barrier=barrier,
            transition=float(self.trans),
        )
        return OptimizationResult(
            plan=plan,
            stage2=DpStage(2, second, len2),
            stage2_sequence=low2.sequence,
            predicted_delay=float(total[i, j]),
        )


def _lag_of(barrier: str, ring: int, lead: int) -> int:
    a, b = BARRIER_RING_PHASES[(barrier, ring)]
    return b if lead == a else a


def lower_level(snapshot: Snapshot, barrier: str, barrier_length: int,
                config: ScenarioConfig, offset: int = 0) -> LowerLevelResult:
    return BarrierOptimizer(config).lower_level(snapshot, barrier, barrier_length, offset)


def upper_level(snapshot: Snapshot, barrier: str, config: ScenarioConfig,
                lengths1: Sequence[int] | None = None,
                lengths2: Sequence[int] | None = None) -> OptimizationResult:
    return BarrierOptimizer(config).optimize(snapshot, barrier, lengths1, lengths2)


class PlanExecution:
    """Tick-level actuation of one validated plan.

    Per ring: lead green, transition, lag green, transition.  Both rings
    share the barrier boundary because the plan's ring sums are equal.
    """

    def __init__(self, plan: TimingPlan, start_tick: int, config: ScenarioConfig):
        verdict = validate_plan(plan, config)
        if not verdict:
            raise InputError(f"refusing to execute invalid plan: {verdict.violation}")
        self.plan = plan
        self.start_tick = start_tick
        self.config = config
        res = config.sim_resolution
        self._trans = int(round(plan.transition * res))
        self._lead = (int(round(plan.g_d1 * res)), int(round(plan.g_d2 * res)))
        sums = (int(round((plan.g_d1 + plan.g_g1) * res)),
                int(round((plan.g_d2 + plan.g_g2) * res)))
        if sums[0] != sums[1]:
            raise InputError(f"ring sums desynchronized in ticks: {sums}")
        self._sum = sums[0]
        self._lag = (sums[0] - self._lead[0], sums[1] - self._lead[1])
        self.duration_ticks = self._sum + 2 * self._trans
        lead1, lead2 = plan.sequence
        self._ring_phases = (
            (lead1, _lag_of(plan.barrier, 1, lead1)),
            (lead2, _lag_of(plan.barrier, 2, lead2)),
        )

    @property
    def end_tick(self) -> int:
        return self.start_tick + self.duration_ticks

    def executed_greens(self) -> tuple[float, float, float, float]:
        dt = self.config.dt
        return (self._lead[0] * dt, self._lead[1] * dt,
                self._lag[0] * dt, self._lag[1] * dt)

    def green_set(self, tick: int) -> frozenset[int]:
        rel = tick - self.start_tick
        if not 0 <= rel < self.duration_ticks:
            return frozenset()
        active = []
        for ring in (0, 1):
            lead_end = self._lead[ring]
            lag_start = lead_end + self._trans
            lag_end = lag_start + self._lag[ring]
            if rel < lead_end:
                active.append(self._ring_phases[ring][0])
            elif lag_start <= rel < lag_end:
                active.append(self._ring_phases[ring][1])
        return frozenset(active)

    def spat(self, tick: int) -> SpatRecord:
        rel = tick - self.start_tick
        dt = self.config.dt
        states = [RED] * 8
        remaining = [0.0] * 8
        barrier_end = self.duration_ticks
        for phase in ALL_PHASES:
            states[phase - 1] = RED
            remaining[phase - 1] = (barrier_end - rel) * dt
        for ring in (0, 1):
            lead, lag = self._ring_phases[ring]
            lead_end = self._lead[ring]
            lead_yellow_end = lead_end + self._trans
            lag_end = lead_yellow_end + self._lag[ring]
            if rel < lead_end:
                states[lead - 1] = GREEN
                remaining[lead - 1] = (lead_end - rel) * dt
            elif rel < lead_yellow_end:
                states[lead - 1] = YELLOW
                remaining[lead - 1] = (lead_yellow_end - rel) * dt
            if rel < lead_yellow_end:
                states[lag - 1] = RED
                remaining[lag - 1] = (lead_yellow_end - rel) * dt
            elif rel < lag_end:
                states[lag - 1] = GREEN
                remaining[lag - 1] = (lag_end - rel) * dt
            else:
                states[lag - 1] = YELLOW
                remaining[lag - 1] = (barrier_end - rel) * dt
        return SpatRecord(tick * dt, tuple(states), tuple(remaining))

    def spat_stream(self):
        for tick in range(self.start_tick, self.end_tick):
            yield self.spat(tick)


def execute(plan: TimingPlan, config: ScenarioConfig, start_tick: int = 0) -> PlanExecution:
    return PlanExecution(plan, start_tick, config)
