"""Falsified-message crafting against a learned timing-plan predictor.

At every optimization instant the adversary observes the same broadcasts
the roadside unit hears, summarizes them into the 8-feature vector
[eta x 4 roles, nav x 4 roles], and searches for the injection that
maximizes the L2 distance between the surrogate's plan for the observed
features and its plan for the altered features.

Two falsification modes exist, both solved by exact enumeration of their
small feasible sets:

* arrival-time mode: exactly one fabricated vehicle, whose injected
  arrival estimate is drawn from a finite candidate set learned from
  historical observations (per lead/lag role);
* count mode: up to ``budget`` fabricated vehicles spread over the four
  roles, perturbing only the vehicle counts at the feature level.

Chosen actions are then realized as kinematically consistent broadcast
records so the real controller ingests them alongside genuine traffic.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .controller import Snapshot
from .domain import BsmRecord, InputError, ScenarioConfig
from .features import ROLES, conventional_roles, extract, roles_for

log = logging.getLogger(__name__)

_P2_SPEED_LADDER = (10.0, 5.0, 2.0, 1.0)   # preferred speeds for realization
_P3_CRAWL_SPEED = 0.5                      # slow queue-adjacent fabrication


@dataclass(frozen=True)
class CandidateEtaSets:
    """Finite sets of admissible injected arrival estimates per role."""

    t_lead: tuple[float, ...]
    t_lag: tuple[float, ...]

    def __post_init__(self):
        for name, values in (("t_lead", self.t_lead), ("t_lag", self.t_lag)):
            if not values:
                raise InputError(f"{name} must be nonempty")
            if any(v < 0 for v in values):
                raise InputError(f"{name} values must be nonnegative")

    @classmethod
    def from_samples(cls, lead_samples: Sequence[float], lag_samples: Sequence[float],
                     count: int = 10, cap: float = 300.0) -> "CandidateEtaSets":
        """Decile summaries of observed per-vehicle arrival estimates.

        Samples beyond ``cap`` are dropped first: an attacker can see from
        the broadcast signal timing that arrivals beyond the longest
        observed barrier never influence the plan they land in.
        """
        def deciles(samples):
            arr = np.asarray(samples, dtype=float)
            if arr.size == 0:
                raise InputError("cannot build candidate sets from no samples")
            kept = arr[arr <= cap]
            if kept.size == 0:
                kept = np.array([cap])
            qs = np.quantile(kept, np.linspace(0.1, 1.0, count))
            return tuple(sorted({round(float(q), 3) for q in qs}))

        return cls(deciles(lead_samples), deciles(lag_samples))


@dataclass(frozen=True)
class AttackAction:
    """One solved injection: per-role counts, injected estimates, outcome."""

    mode: str                                  # "eta" or "nav"
    deltas: tuple[int, int, int, int]
    taus: tuple[float, float, float, float]
    x_a: tuple[float, ...]
    predicted_dissimilarity: float

    @property
    def total_injected(self) -> int:
        return sum(self.deltas)


@dataclass
class AttackRecord:
    """Attack-log row: observation, action, and realized effect."""

    timestamp: float
    mode: str
    x_o: tuple[float, ...]
    action: AttackAction
    eta_residual: float = 0.0
    realized_delta: float | None = None

    def to_line(self) -> str:
        vec = lambda vals: ",".join(repr(float(v)) for v in vals)
        realized = "-" if self.realized_delta is None else repr(self.realized_delta)
        return (
            f"{self.timestamp:.1f} {self.mode} xo={vec(self.x_o)} "
            f"deltas={','.join(str(d) for d in self.action.deltas)} "
            f"taus={vec(self.action.taus)} xa={vec(self.action.x_a)} "
            f"dissim={self.action.predicted_dissimilarity!r} "
            f"residual={self.eta_residual!r} realized={realized}"
        )


def dissimilarity(plan_a, plan_b) -> float:
    """L2 distance between two 4-component green-time predictions."""
    a = np.asarray(plan_a, dtype=float)
    b = np.asarray(plan_b, dtype=float)
    if a.shape != b.shape:
        raise InputError(f"plan shapes differ: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def solve_p2(x_o, model, t_lead: Sequence[float], t_lag: Sequence[float]) -> AttackAction:
    """Single-vehicle arrival-time falsification, solved exactly.

    Enumerates every (role, candidate estimate) pair; the altered features
    add the estimate to the role's summed arrival time and one to its
    count.  Ties fall to the smallest role index, then smallest estimate.
    """
    x_o = np.asarray(x_o, dtype=float)
    f_o = model.predict_plan(x_o)
    best: tuple[float, int, float, np.ndarray] | None = None
    for role in range(4):
        taus = t_lead if role < 2 else t_lag
        for tau in sorted(taus):
            if tau < 0:
                raise InputError("injected arrival estimates must be nonnegative")
            x_a = x_o.copy()
            x_a[role] += tau
            x_a[4 + role] += 1.0
            d = dissimilarity(f_o, model.predict_plan(x_a))
            if best is None or d > best[0]:
                best = (d, role, tau, x_a)
    d, role, tau, x_a = best
    deltas = tuple(1 if r == role else 0 for r in range(4))
    taus_out = tuple(tau if r == role else 0.0 for r in range(4))
    return AttackAction("eta", deltas, taus_out, tuple(x_a), d)


def enumerate_budget_allocations(budget: int) -> list[tuple[int, int, int, int]]:
    """All nonnegative 4-tuples with sum <= budget, smallest totals first."""
    if budget < 0:
        raise InputError("budget must be nonnegative")
    allocs = [
        t for t in itertools.product(range(budget + 1), repeat=4)
        if sum(t) <= budget
    ]
    allocs.sort(key=lambda t: (sum(t), t))
    return allocs


def solve_p3(x_o, model, budget: int = 10) -> AttackAction:
    """Count falsification under a trajectory budget, solved exactly.

    Arrival-time components stay fixed; every count allocation with total
    at most ``budget`` is scored.  Ties fall to the fewest injected
    vehicles, then the lexicographically smallest allocation.
    """
    x_o = np.asarray(x_o, dtype=float)
    f_o = model.predict_plan(x_o)
    best: tuple[float, tuple[int, ...], np.ndarray] | None = None
    for deltas in enumerate_budget_allocations(budget):
        x_a = x_o.copy()
        for role, d in enumerate(deltas):
            x_a[4 + role] += d
        score = dissimilarity(f_o, model.predict_plan(x_a))
        if best is None or score > best[0]:
            best = (score, deltas, x_a)
    score, deltas, x_a = best
    return AttackAction("nav", deltas, (0.0,) * 4, tuple(x_a), score)


def queue_tails_from_bsms(bsms: Iterable[BsmRecord], floor_speed: float = 1.0
                          ) -> dict[int, float]:
    """Farthest stopped-vehicle position per phase, from broadcasts alone."""
    tails: dict[int, float] = {}
    for rec in bsms:
        if rec.speed < floor_speed:
            tails[rec.phase] = max(tails.get(rec.phase, 0.0), rec.position)
    return tails


def synthesize_falsified_bsms(action: AttackAction, t_now: float,
                              role_phases: Mapping[str, int],
                              queue_tails: Mapping[int, float],
                              config: ScenarioConfig,
                              id_tag: str = "fake") -> tuple[list[BsmRecord], float]:
    """Realize an action as broadcast records; returns (records, residual).

    Arrival-time mode places the single vehicle at position = estimate x
    speed, choosing a speed for which the division round-trips exactly;
    estimates beyond what the communication range allows fall back to the
    nearest realizable value (logged).  Count mode parks slow vehicles at
    jam spacing behind the observed queue tail, so their unavoidable
    arrival-time contribution (the returned residual) stays small.
    """
    records: list[BsmRecord] = []
    residual = 0.0
    floor = config.eta_floor_speed
    roles = [role_phases[r] for r in ROLES]
    if action.mode == "eta":
        role = action.deltas.index(1)
        tau = action.taus[role]
        realizable_max = config.comm_range / floor
        tau_real = min(tau, realizable_max)
        if tau_real != tau:
            log.warning("injected estimate %.1f s unrealizable in range; using %.1f s",
                        tau, tau_real)
        for speed in _P2_SPEED_LADDER:
            position = tau_real * speed
            if (speed <= config.free_flow_speed and position <= config.comm_range
                    and (position / max(speed, floor) if speed else 0.0) == tau_real):
                break
        else:
            speed = floor
            position = min(tau_real * floor, config.comm_range)
        records.append(BsmRecord(f"{id_tag}-0", t_now, position, speed,
                                 roles[role], is_falsified=True))
        residual = (position / max(speed, floor)) - tau
    elif action.mode == "nav":
        k = 0
        jam = config.jam_spacing
        for role, count in enumerate(action.deltas):
            if count == 0:
                continue
            phase = roles[role]
            tail = queue_tails.get(phase, 0.0)
            positions = [tail + jam * (i + 1) for i in range(count)]
            if positions[-1] > config.comm_range:
                log.warning("no room behind phase %d queue; placing from range edge", phase)
                positions = [config.comm_range - jam * i for i in range(count)]
                if positions[-1] < 0:
                    raise InputError(
                        f"cannot place {count} vehicles inside the communication range"
                    )
            for position in positions:
                records.append(BsmRecord(f"{id_tag}-{k}", t_now, position,
                                         _P3_CRAWL_SPEED, phase, is_falsified=True))
                residual += position / floor
                k += 1
    else:
        raise InputError(f"unknown attack mode {action.mode!r}")
    return records, residual


class Attacker:
    """In-loop adversary: observe broadcasts, solve, and inject per barrier.

    Features are indexed by barrier role, so the attacker needs the coming
    barrier's phase order before the controller announces it; it reuses
    the last order observed (via signal broadcasts) for the same barrier,
    defaulting to the odd-phase-leads convention.
    """

    def __init__(self, model, mode: str, config: ScenarioConfig,
                 budget: int = 10, eta_sets: CandidateEtaSets | None = None):
        if mode not in ("eta", "nav"):
            raise InputError(f"unknown attack mode {mode!r}")
        if mode == "eta":
            if eta_sets is None:
                if not (model.t_lead and model.t_lag):
                    raise InputError("eta attacks need candidate arrival-estimate sets")
                eta_sets = CandidateEtaSets(model.t_lead, model.t_lag)
        self.model = model
        self.mode = mode
        self.config = config
        self.budget = budget
        self.eta_sets = eta_sets
        self._last_sequence: dict[str, tuple[int, int]] = {}
        self._announced: dict[str, tuple[int, int]] = {}
        self._counter = 0

    def role_guess(self, barrier: str) -> dict[str, int]:
        seq = self._announced.get(barrier) or self._last_sequence.get(barrier)
        if seq is None:
            return conventional_roles(barrier)
        return roles_for(barrier, seq)

    def observe_execution(self, barrier: str, sequence: tuple[int, int]) -> None:
        self._last_sequence[barrier] = sequence
        self._announced.pop(barrier, None)

    def observe_announcement(self, barrier: str, sequence: tuple[int, int]) -> None:
        """Controller broadcasts the arranged order of the coming barrier."""
        self._announced[barrier] = sequence

    def forge(self, bsms: Sequence[BsmRecord], t: float, barrier: str
              ) -> tuple[list[BsmRecord], AttackRecord]:
        roles = self.role_guess(barrier)
        snapshot = Snapshot.from_bsms(bsms, t, self.config)
        x_o = extract(snapshot, roles, self.config).attack_vector()
        if self.mode == "eta":
            action = solve_p2(x_o, self.model, self.eta_sets.t_lead, self.eta_sets.t_lag)
        else:
            action = solve_p3(x_o, self.model, self.budget)
        tails = queue_tails_from_bsms(bsms, self.config.eta_floor_speed)
        self._counter += 1
        fakes, residual = synthesize_falsified_bsms(
            action, t, roles, tails, self.config, id_tag=f"fake{self._counter}"
        )
        record = AttackRecord(t, self.mode, tuple(x_o), action, residual)
        return fakes, record

    def pseudo_optimal(self, record: AttackRecord) -> np.ndarray:
        return self.model.predict_plan(np.asarray(record.x_o))
