"""Per-phase traffic features computed from broadcast snapshots.

Definitions used throughout the toolkit (everything is per phase, over the
vehicles inside communication range that have not crossed the stop bar):

* ``ql``  - queue length: vehicles slower than the arrival-time floor speed.
* ``nav`` - number of approaching vehicles: every in-range vehicle.
* ``hw``  - mean time headway between moving vehicles, measured as the gap
  between consecutive arrival-time estimates; capped when fewer than two
  vehicles are moving.
* ``eta`` - summed arrival-time estimates (floored speeds), so appending
  one vehicle with estimate tau adds exactly tau.
* ``vd``  - summed accrued delay of in-range vehicles (aux input).
* ``fr``  - stop-bar crossings over a trailing window, in veh/h (aux input).

Features are arranged by barrier role: ``d1``/``d2`` are the ring-1/ring-2
lead phases, ``g1``/``g2`` the lags.  The attack-facing layout is the
8-vector [eta_d1, eta_d2, eta_g1, eta_g2, nav_d1, nav_d2, nav_g1, nav_g2].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .domain import BARRIER_RING_PHASES, ScenarioConfig, partner_of
from .controller import Snapshot

FEATURE_KINDS = ("ql", "nav", "hw", "eta", "vd", "fr")
ROLES = ("d1", "d2", "g1", "g2")
RING_ROLES = {1: ("d1", "g1"), 2: ("d2", "g2")}


@dataclass(frozen=True)
class PhaseFeatures:
    ql: float
    nav: float
    hw: float
    eta: float
    vd: float
    fr: float

    def get(self, kind: str) -> float:
        return getattr(self, kind)


@dataclass(frozen=True)
class PhaseAux:
    """World-side quantities a single snapshot cannot carry."""

    vd: Mapping[int, float]
    fr: Mapping[int, float]


@dataclass(frozen=True)
class FeatureVector:
    """One observation: per-role features plus the role-to-phase mapping."""

    role_phases: tuple[int, int, int, int]          # aligned with ROLES
    by_role: tuple[PhaseFeatures, PhaseFeatures, PhaseFeatures, PhaseFeatures]

    def phase_of(self, role: str) -> int:
        return self.role_phases[ROLES.index(role)]

    def features_of(self, role: str) -> PhaseFeatures:
        return self.by_role[ROLES.index(role)]

    def attack_vector(self) -> np.ndarray:
        """[eta x 4 roles, nav x 4 roles] as float64."""
        etas = [f.eta for f in self.by_role]
        navs = [f.nav for f in self.by_role]
        return np.array(etas + navs, dtype=float)

    def columns(self, kinds: Sequence[str]) -> list[float]:
        """Kind-major, role-minor flattening; the audit-log column order."""
        return [self.by_role[r].get(kind) for kind in kinds for r in range(4)]

    def ring_columns(self, kinds: Sequence[str], ring: int) -> list[float]:
        """Same flattening restricted to one ring's (lead, lag) roles."""
        idx = [ROLES.index(role) for role in RING_ROLES[ring]]
        return [self.by_role[r].get(kind) for kind in kinds for r in idx]


def roles_for(barrier: str, sequence: tuple[int, int]) -> dict[str, int]:
    """Map barrier roles to phases given which phase leads each ring."""
    lead1, lead2 = sequence
    for ring, lead in ((1, lead1), (2, lead2)):
        if lead not in BARRIER_RING_PHASES[(barrier, ring)]:
            raise ValueError(f"phase {lead} does not lead ring {ring} of {barrier}")
    return {"d1": lead1, "d2": lead2, "g1": partner_of(lead1), "g2": partner_of(lead2)}


def conventional_roles(barrier: str) -> dict[str, int]:
    """Role mapping under the odd-phase-leads convention."""
    pair1 = BARRIER_RING_PHASES[(barrier, 1)]
    pair2 = BARRIER_RING_PHASES[(barrier, 2)]
    return roles_for(barrier, (pair1[0], pair2[0]))


def extract(snapshot: Snapshot, role_phases: Mapping[str, int],
            config: ScenarioConfig, aux: PhaseAux | None = None) -> FeatureVector:
    """Evaluate every feature kind for the four roles of one barrier."""
    floor = config.eta_floor_speed
    cap = config.headway_cap
    values = []
    for role in ROLES:
        phase = role_phases[role]
        rows = snapshot.per_phase.get(phase, ())
        nav = float(len(rows))
        eta = 0.0
        ql = 0
        moving = []
        for row in rows:
            eta += row.eta
            if row.speed < floor:
                ql += 1
            else:
                moving.append(row.eta)
        if len(moving) < 2:
            hw = cap
        else:
            moving.sort()
            gaps = np.diff(moving)
            hw = min(float(np.mean(gaps)), cap)
        vd = float(aux.vd.get(phase, 0.0)) if aux else 0.0
        fr = float(aux.fr.get(phase, 0.0)) if aux else 0.0
        values.append(PhaseFeatures(float(ql), nav, hw, eta, vd, fr))
    return FeatureVector(
        tuple(role_phases[r] for r in ROLES),
        tuple(values),
    )
