"""Experiment orchestration: campaigns, the four impact experiments, reports.

The closed loop couples the microsimulation to a controller.  At every
barrier boundary it snapshots in-range broadcasts, lets an optional
adversary inject fabricated records, plans the next barrier (either with
the target two-level optimizer or with a trained surrogate standing in as
the controller), logs an audit row, and actuates the plan tick by tick.

Experiments:
  I   - target controller, no attack (benchmark)
  II  - trained surrogate drives the signal, no attack
  III - target controller under single-vehicle arrival-time falsification
  IV  - target controller under budgeted count falsification

All four share arrival streams for a given seed: arrival randomness is
keyed only by (seed, movement), so controller and attacker choices cannot
perturb who shows up when.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .attack import AttackRecord, Attacker, CandidateEtaSets
from .controller import BarrierOptimizer, PlanExecution, Snapshot
from .domain import (
    BARRIER_RING_PHASES,
    InputError,
    ScenarioConfig,
    TimingPlan,
    format_bsm_line,
    format_spat_line,
    other_barrier,
    validate_plan,
)
from .features import (
    FEATURE_KINDS,
    ROLES,
    FeatureVector,
    PhaseAux,
    PhaseFeatures,
    conventional_roles,
    extract,
    roles_for,
)
from .microsim import World
from .surrogate import (
    CvMetrics,
    DecisionTree,
    SfsResult,
    SurrogateModel,
    cross_validate,
    sfs,
)

log = logging.getLogger(__name__)

EXPERIMENT_IDS = ("I", "II", "III", "IV")


class ConfigError(ValueError):
    """Bad or unknown configuration keys."""


class TrainingDataError(RuntimeError):
    """Campaign produced too little signal to train on."""


@dataclass
class SurrogateParams:
    # weighted gain is the training default: the printed unweighted form
    # stops growing after a split or two on this data and badly underfits
    # (DecisionTree itself still defaults to the unweighted form)
    tree_max_depth: int = 8
    tree_min_samples_leaf: int = 5
    weighted_gain: bool = True
    pooled_lead_tree: bool = False
    cv_repeats: int = 10
    cv_train_frac: float = 0.8
    cv_seed: int = 0

    def tree_params(self) -> dict:
        return {
            "max_depth": self.tree_max_depth,
            "min_samples_leaf": self.tree_min_samples_leaf,
            "weighted_gain": self.weighted_gain,
        }


@dataclass
class AttackParams:
    budget: int = 10
    tset_count: int = 10


@dataclass
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    surrogate: SurrogateParams = field(default_factory=SurrogateParams)
    attack: AttackParams = field(default_factory=AttackParams)
    train_hours: float = 30.0
    experiment_hours: float = 2.0
    replications: int = 5


_BOOL_STRINGS = {"true": True, "1": True, "yes": True,
                 "false": False, "0": False, "no": False}


def load_config(path) -> RunConfig:
    """Parse a flat ``key = value`` file; unknown keys fail fast.

    Keys are field names of ScenarioConfig, SurrogateParams, AttackParams,
    or the top-level RunConfig.  '#' starts a comment.
    """
    cfg = RunConfig()
    sections = [cfg.scenario, cfg.surrogate, cfg.attack, cfg]
    owners: dict[str, tuple[object, type]] = {}
    for obj in sections:
        for f in fields(obj):
            if f.name in ("scenario", "surrogate", "attack", "demand_overrides"):
                continue
            owners[f.name] = (obj, f.type)
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in owners:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        obj, _ = owners[key]
        current = getattr(obj, key)
        try:
            if isinstance(current, bool):
                parsed = _BOOL_STRINGS[value.lower()]
            elif isinstance(current, int):
                parsed = int(value)
            elif isinstance(current, float):
                parsed = float(value)
            elif isinstance(current, tuple):
                parsed = tuple(v.strip() for v in value.split(","))
            else:
                parsed = value
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {value!r}") from exc
        setattr(obj, key, parsed)
    cfg.scenario.__post_init__()
    return cfg


# -- audit log ---------------------------------------------------------------

AUDIT_COLUMNS = (
    ["t", "barrier", "seq1", "seq2"]
    + [f"{kind}_{role}" for kind in FEATURE_KINDS for role in ROLES]
    + ["label_total", "label_d1", "label_d2", "predicted_delay"]
)


@dataclass
class AuditRecord:
    """One optimization: features by role, the executed labels, the forecast."""

    timestamp: float
    barrier: str
    sequence: tuple[int, int]
    features: FeatureVector
    label_total: float           # executed lead + lag green (either ring)
    label_leads: tuple[float, float]
    predicted_delay: float

    def to_line(self) -> str:
        cells = [f"{self.timestamp:.1f}", self.barrier,
                 str(self.sequence[0]), str(self.sequence[1])]
        cells += [repr(v) for v in self.features.columns(FEATURE_KINDS)]
        cells += [repr(self.label_total), repr(self.label_leads[0]),
                  repr(self.label_leads[1]), repr(self.predicted_delay)]
        return " ".join(cells)

    @classmethod
    def from_line(cls, line: str) -> "AuditRecord":
        parts = line.split()
        t = float(parts[0])
        barrier = parts[1]
        sequence = (int(parts[2]), int(parts[3]))
        vals = [float(v) for v in parts[4:4 + 24]]
        per_role = []
        for r in range(4):
            kwargs = {kind: vals[k * 4 + r] for k, kind in enumerate(FEATURE_KINDS)}
            per_role.append(PhaseFeatures(**kwargs))
        roles = roles_for(barrier, sequence)
        fv = FeatureVector(tuple(roles[r] for r in ROLES), tuple(per_role))
        tail = [float(v) for v in parts[4 + 24:]]
        return cls(t, barrier, sequence, fv, tail[0], (tail[1], tail[2]), tail[3])


def save_audit(records: Sequence[AuditRecord], path) -> None:
    with open(path, "w") as fh:
        fh.write("# cvtsc-audit v1\n")
        fh.write("# columns: " + " ".join(AUDIT_COLUMNS) + "\n")
        for rec in records:
            fh.write(rec.to_line() + "\n")


def load_audit(path) -> list[AuditRecord]:
    records = []
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        records.append(AuditRecord.from_line(line))
    return records


# -- closed loop -------------------------------------------------------------

@dataclass
class InvariantReport:
    conservation_ok: bool
    min_green: float
    max_green: float
    transitions_ok: bool
    co_green_ok: bool
    arrival_digest: str
    optimizations: int
    mean_barrier_s: float


@dataclass
class DelaySummary:
    experiment: str
    run_id: str
    seed: int
    horizon_hours: float
    total_delay_s: float
    vehicles: int
    delay_per_vehicle_s: float


@dataclass
class RunResult:
    summary: DelaySummary
    audit: list[AuditRecord]
    attacks: list[AttackRecord]
    invariants: InvariantReport
    barrier_seconds: list[float]
    lead_eta_samples: list[float]
    lag_eta_samples: list[float]


@dataclass(frozen=True)
class ExperimentSpec:
    """What to run: controller choice, attack choice, horizon, seed."""

    id: str
    controller_mode: str       # "target" or "surrogate"
    attack_mode: str | None    # None, "eta", "nav"
    duration_hours: float
    seed: int

    _MODES = {
        "I": ("target", None),
        "II": ("surrogate", None),
        "III": ("target", "eta"),
        "IV": ("target", "nav"),
    }

    def __post_init__(self):
        expected = self._MODES.get(self.id)
        if expected is None:
            raise InputError(f"experiment id must be one of {EXPERIMENT_IDS}, got {self.id!r}")
        if (self.controller_mode, self.attack_mode) != expected:
            raise InputError(
                f"experiment {self.id} requires controller/attack {expected}, "
                f"got {(self.controller_mode, self.attack_mode)}"
            )

    @classmethod
    def standard(cls, exp_id: str, duration_hours: float, seed: int) -> "ExperimentSpec":
        mode = cls._MODES.get(exp_id)
        if mode is None:
            raise InputError(f"experiment id must be one of {EXPERIMENT_IDS}, got {exp_id!r}")
        return cls(exp_id, mode[0], mode[1], duration_hours, seed)


def _round_tenth(x: float) -> float:
    return round(float(x), 1)


def plan_from_prediction(greens: np.ndarray, barrier: str,
                         sequence: tuple[int, int],
                         config: ScenarioConfig) -> TimingPlan:
    """Turn a float plan prediction into an executable 0.1 s grid plan."""
    g_min, g_max = config.g_min, config.g_max
    gd1 = min(max(_round_tenth(greens[0]), g_min), g_max)
    gd2 = min(max(_round_tenth(greens[1]), g_min), g_max)
    total = _round_tenth(max(greens[0] + greens[2], greens[1] + greens[3]))
    gg1 = min(max(_round_tenth(total - gd1), g_min), g_max)
    gg2 = min(max(_round_tenth(total - gd2), g_min), g_max)
    target = max(gd1 + gg1, gd2 + gg2)
    for _ in range(2):
        need1 = target - (gd1 + gg1)
        grow = min(need1, g_max - gg1)
        gg1 += grow
        gd1 += need1 - grow
        need2 = target - (gd2 + gg2)
        grow = min(need2, g_max - gg2)
        gg2 += grow
        gd2 += need2 - grow
    plan = TimingPlan(gd1, gd2, gg1, gg2, sequence, barrier,
                      transition=config.transition_time)
    verdict = validate_plan(plan, config)
    if not verdict:
        raise InputError(f"surrogate plan failed validation: {verdict.violation}")
    return plan


class ClosedLoopSim:
    """One seeded run of simulator + controller (+ optional adversary)."""

    def __init__(self, scenario: ScenarioConfig, controller_mode: str = "target",
                 model: SurrogateModel | None = None,
                 attacker: Attacker | None = None,
                 event_stream: io.TextIOBase | None = None,
                 trajectory_stream: io.TextIOBase | None = None):
        if controller_mode not in ("target", "surrogate"):
            raise InputError(f"unknown controller mode {controller_mode!r}")
        if controller_mode == "surrogate" and model is None:
            raise InputError("surrogate control needs a trained model")
        if controller_mode == "surrogate" and attacker is not None:
            raise InputError("surrogate control runs unattacked")
        traj_writer = trajectory_stream.write if trajectory_stream else None
        self.scenario = scenario
        self.world = World(scenario, trajectory_writer=traj_writer)
        self.optimizer = BarrierOptimizer(scenario)
        self.controller_mode = controller_mode
        self.model = model
        self.attacker = attacker
        self.event_stream = event_stream
        self.audit: list[AuditRecord] = []
        self.attacks: list[AttackRecord] = []
        self.barrier_ticks: list[int] = []
        self.lead_eta_samples: list[float] = []
        self.lag_eta_samples: list[float] = []
        self._greens: list[float] = []
        self._transition_ok = True
        self._co_green_ok = True
        self._next_barrier = "major"
        self._exec: PlanExecution | None = None

    def run(self, hours: float, run_id: str = "run", experiment: str = "-") -> RunResult:
        total_ticks = int(round(hours * 3600 * self.scenario.sim_resolution))
        for tick in range(total_ticks):
            if self._exec is None or tick == self._exec.end_tick:
                self._replan(tick)
            if self.event_stream is not None:
                for rec in self.world.emit_bsms():
                    self.event_stream.write(format_bsm_line(rec) + "\n")
                self.event_stream.write(format_spat_line(self._exec.spat(tick)) + "\n")
            self.world.step(self._exec.green_set(tick))
        dt = self.scenario.dt
        barrier_seconds = [t * dt for t in self.barrier_ticks]
        spawned = self.world.spawned
        total_delay = self.world.total_delay()
        summary = DelaySummary(
            experiment=experiment,
            run_id=run_id,
            seed=self.scenario.rng_seed,
            horizon_hours=hours,
            total_delay_s=total_delay,
            vehicles=spawned,
            delay_per_vehicle_s=total_delay / spawned if spawned else 0.0,
        )
        invariants = InvariantReport(
            conservation_ok=self.world.check_conservation(),
            min_green=min(self._greens) if self._greens else math.nan,
            max_green=max(self._greens) if self._greens else math.nan,
            transitions_ok=self._transition_ok,
            co_green_ok=self._co_green_ok,
            arrival_digest=self.world.arrival_digest(),
            optimizations=len(self.audit),
            mean_barrier_s=(sum(barrier_seconds) / len(barrier_seconds))
            if barrier_seconds else math.nan,
        )
        return RunResult(summary, self.audit, self.attacks, invariants,
                         barrier_seconds, self.lead_eta_samples, self.lag_eta_samples)

    # -- one barrier boundary ----------------------------------------------

    def _replan(self, tick: int) -> None:
        scenario = self.scenario
        t = tick * scenario.dt
        barrier = self._next_barrier
        bsms = self.world.emit_bsms()
        attack_rec = None
        fakes: list = []
        if self.attacker is not None:
            fakes, attack_rec = self.attacker.forge(bsms, t, barrier)
        snapshot = Snapshot.from_bsms(list(bsms) + fakes, t, scenario)
        if self.controller_mode == "target":
            result = self.optimizer.optimize(snapshot, barrier)
            plan = result.plan
            predicted = result.predicted_delay
            if self.attacker is not None:
                self.attacker.observe_announcement(result.stage2.barrier,
                                                   result.stage2_sequence)
        else:
            fv_conv = extract(snapshot, conventional_roles(barrier), scenario)
            sequence = []
            for ring in (1, 2):
                odd, even = BARRIER_RING_PHASES[(barrier, ring)]
                ring_cols = fv_conv.ring_columns(self.model.feature_kinds, ring)
                sequence.append(odd if self.model.predict_odd_leads(ring, ring_cols)
                                else even)
            sequence = tuple(sequence)
            roles = roles_for(barrier, sequence)
            fv = extract(snapshot, roles, scenario)
            greens = self.model.predict_plan(fv.attack_vector())
            plan = plan_from_prediction(greens, barrier, sequence, scenario)
            predicted = math.nan
        execution = PlanExecution(plan, tick, scenario)
        roles = roles_for(barrier, plan.sequence)
        aux = PhaseAux(self.world.vd_by_phase(), self.world.fr_by_phase())
        fv = extract(snapshot, roles, scenario, aux)
        self.audit.append(AuditRecord(
            timestamp=t,
            barrier=barrier,
            sequence=plan.sequence,
            features=fv,
            label_total=plan.g_d1 + plan.g_g1,
            label_leads=(plan.g_d1, plan.g_d2),
            predicted_delay=predicted,
        ))
        for role, pool in (("d1", self.lead_eta_samples), ("d2", self.lead_eta_samples),
                           ("g1", self.lag_eta_samples), ("g2", self.lag_eta_samples)):
            pool.extend(snapshot.etas_of(roles[role]))
        if attack_rec is not None:
            f_o = self.attacker.pseudo_optimal(attack_rec)
            attack_rec.realized_delta = float(np.linalg.norm(np.asarray(plan.greens()) - f_o))
            self.attacks.append(attack_rec)
        if self.attacker is not None:
            self.attacker.observe_execution(barrier, plan.sequence)
        self._greens.extend(execution.executed_greens())
        if execution._trans * scenario.dt != scenario.transition_time:
            self._transition_ok = False
        seq_rings = {1 if p in BARRIER_RING_PHASES[(barrier, 1)] else 2
                     for p in plan.sequence}
        if seq_rings != {1, 2}:
            self._co_green_ok = False
        self.barrier_ticks.append(execution.duration_ticks)
        self._exec = execution
        self._next_barrier = other_barrier(barrier)


# -- training ----------------------------------------------------------------

def _matrix(audit: Sequence[AuditRecord], kinds: Sequence[str]) -> np.ndarray:
    return np.array([rec.features.columns(kinds) for rec in audit])


def _ring_matrix(audit: Sequence[AuditRecord], kinds: Sequence[str], ring: int) -> np.ndarray:
    return np.array([rec.features.ring_columns(kinds, ring) for rec in audit])


def _ring_phase_matrix(audit: Sequence[AuditRecord], kinds: Sequence[str],
                       ring: int) -> np.ndarray:
    """Ring features ordered (odd phase, even phase) regardless of sequence."""
    rows = []
    for rec in audit:
        cols = rec.features.ring_columns(kinds, ring)     # (lead, lag) per kind
        if rec.sequence[ring - 1] % 2 == 0:               # even phase led: swap
            cols = [cols[i + 1] if i % 2 == 0 else cols[i - 1]
                    for i in range(len(cols))]
        rows.append(cols)
    return np.array(rows)


def train_surrogate(audit: Sequence[AuditRecord], params: SurrogateParams,
                    scenario: ScenarioConfig,
                    kinds: Sequence[str] = ("eta", "nav"),
                    eta_samples: tuple[Sequence[float], Sequence[float]] | None = None,
                    tset_count: int = 10,
                    tset_cap: float | None = None) -> tuple[SurrogateModel, dict[str, CvMetrics]]:
    """Fit the barrier, lead, and sequence trees on an audit log.

    Returns the model plus cross-validation metrics per regression tree.
    ``tset_cap`` bounds the candidate injected-arrival pools (the longest
    barrier the attacker has observed).
    """
    if len(audit) < 10:
        raise TrainingDataError(f"only {len(audit)} audit rows; need at least 10")
    kinds = tuple(kinds)
    tp = params.tree_params()
    y_total = np.array([rec.label_total for rec in audit])
    X_total = _matrix(audit, kinds)
    tree_barrier = DecisionTree(**tp).fit(X_total, y_total)
    cv = {
        "barrier": cross_validate(X_total, y_total, tp, params.cv_repeats,
                                  params.cv_train_frac, params.cv_seed),
    }
    ring_data = {
        ring: (_ring_matrix(audit, kinds, ring),
               np.array([rec.label_leads[ring - 1] for rec in audit]))
        for ring in (1, 2)
    }
    if params.pooled_lead_tree:
        Xp = np.vstack([ring_data[1][0], ring_data[2][0]])
        yp = np.concatenate([ring_data[1][1], ring_data[2][1]])
        lead_trees: DecisionTree | tuple = DecisionTree(**tp).fit(Xp, yp)
        cv["lead"] = cross_validate(Xp, yp, tp, params.cv_repeats,
                                    params.cv_train_frac, params.cv_seed)
    else:
        t1 = DecisionTree(**tp).fit(*ring_data[1])
        t2 = DecisionTree(**tp).fit(*ring_data[2])
        lead_trees = (t1, t2)
        cv["lead1"] = cross_validate(*ring_data[1], tp, params.cv_repeats,
                                     params.cv_train_frac, params.cv_seed)
        cv["lead2"] = cross_validate(*ring_data[2], tp, params.cv_repeats,
                                     params.cv_train_frac, params.cv_seed)
    seq_trees = tuple(
        DecisionTree(task="classification", **tp).fit(
            _ring_phase_matrix(audit, kinds, ring),
            np.array([float(rec.sequence[ring - 1] % 2) for rec in audit]),
        )
        for ring in (1, 2)
    )
    t_lead: tuple[float, ...] = ()
    t_lag: tuple[float, ...] = ()
    if eta_samples is not None and len(eta_samples[0]) and len(eta_samples[1]):
        if tset_cap is None:
            tset_cap = scenario.comm_range / scenario.eta_floor_speed
        sets = CandidateEtaSets.from_samples(
            eta_samples[0], eta_samples[1], count=tset_count, cap=tset_cap,
        )
        t_lead, t_lag = sets.t_lead, sets.t_lag
    model = SurrogateModel(
        tree_barrier=tree_barrier,
        lead_trees=lead_trees,
        g_min=scenario.g_min,
        g_max=scenario.g_max,
        feature_kinds=kinds,
        t_lead=t_lead,
        t_lag=t_lag,
        seq_trees=seq_trees,
    )
    return model, cv


def sfs_on_audit(audit: Sequence[AuditRecord], params: SurrogateParams
                 ) -> tuple[SfsResult, dict[tuple[str, ...], dict[str, CvMetrics]]]:
    """Run forward selection over the six feature kinds on an audit log.

    The selection error of a kind subset is the mean validation RMSE over
    the three trees (barrier plus the two ring leads).  Full metric rows
    for every evaluated subset are returned for reporting.
    """
    y_total = np.array([rec.label_total for rec in audit])
    y_leads = {ring: np.array([rec.label_leads[ring - 1] for rec in audit])
               for ring in (1, 2)}
    tp = params.tree_params()
    cache: dict[tuple[str, ...], dict[str, CvMetrics]] = {}

    def metrics_for(subset: tuple[str, ...]) -> dict[str, CvMetrics]:
        key = tuple(sorted(subset))
        if key not in cache:
            cache[key] = {
                "barrier": cross_validate(_matrix(audit, key), y_total, tp,
                                          params.cv_repeats, params.cv_train_frac,
                                          params.cv_seed),
                "lead1": cross_validate(_ring_matrix(audit, key, 1), y_leads[1], tp,
                                        params.cv_repeats, params.cv_train_frac,
                                        params.cv_seed),
                "lead2": cross_validate(_ring_matrix(audit, key, 2), y_leads[2], tp,
                                        params.cv_repeats, params.cv_train_frac,
                                        params.cv_seed),
            }
        return cache[key]

    def error_fn(subset: tuple[str, ...]) -> float:
        m = metrics_for(subset)
        return (m["barrier"].rmse + m["lead1"].rmse + m["lead2"].rmse) / 3.0

    result = sfs(FEATURE_KINDS, error_fn)
    return result, cache


def format_sfs_report(result: SfsResult,
                      metrics: dict[tuple[str, ...], dict[str, CvMetrics]]) -> str:
    """Round-by-round selection table with per-tree errors."""
    lines = ["round  feature set                    tree      mae      mape     rmse"]
    selected: list[str] = []
    for rnd in result.rounds:
        for cand in sorted(rnd.errors, key=lambda c: rnd.errors[c]):
            subset = tuple(sorted(selected + [cand]))
            mark = "*" if cand == rnd.chosen else " "
            label = "{" + ",".join(selected + [cand]) + "}"
            for tree_name, m in metrics[subset].items():
                lines.append(
                    f"{rnd.index:>5}{mark} {label:<30} {tree_name:<8} "
                    f"{m.mae:8.3f} {m.mape:8.2f} {m.rmse:8.3f}"
                )
        if rnd.chosen is not None:
            selected.append(rnd.chosen)
    lines.append(f"selected: {{{','.join(result.selected)}}}")
    return "\n".join(lines) + "\n"


@dataclass
class CampaignResult:
    model: SurrogateModel
    audit: list[AuditRecord]
    cv: dict[str, CvMetrics]
    sfs_result: SfsResult
    sfs_metrics: dict
    run: RunResult


def run_training_campaign(config: RunConfig, out_dir=None,
                          run_sfs: bool = True) -> CampaignResult:
    """Simulate under the target controller, then learn its behavior.

    Refuses to train when fewer than 100 optimizations were observed or no
    vehicle ever appeared (nothing to learn from).
    """
    scenario = replace(config.scenario, duration_hours=config.train_hours)
    sim = ClosedLoopSim(scenario, controller_mode="target")
    run = sim.run(config.train_hours, run_id=f"train-s{scenario.rng_seed}")
    if len(run.audit) < 100:
        raise TrainingDataError(
            f"campaign produced {len(run.audit)} optimizations; need at least 100"
        )
    if run.summary.vehicles == 0 or not run.lead_eta_samples:
        raise TrainingDataError("campaign observed no vehicles; no training signal")
    model, cv = train_surrogate(
        run.audit, config.surrogate, scenario,
        eta_samples=(run.lead_eta_samples, run.lag_eta_samples),
        tset_count=config.attack.tset_count,
        tset_cap=max(run.barrier_seconds),
    )
    if run_sfs:
        sfs_result, sfs_metrics = sfs_on_audit(run.audit, config.surrogate)
    else:
        sfs_result, sfs_metrics = SfsResult((), (), math.nan), {}
    result = CampaignResult(model, run.audit, cv, sfs_result, sfs_metrics, run)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "model.txt").write_text(model.to_text())
        save_audit(run.audit, out / "audit.log")
        (out / "cv_report.txt").write_text(format_cv_report(cv))
        if run_sfs:
            (out / "sfs_report.txt").write_text(
                format_sfs_report(sfs_result, sfs_metrics))
    return result


def format_cv_report(cv: dict[str, CvMetrics]) -> str:
    lines = ["tree      mae      mape     rmse"]
    for name in sorted(cv):
        m = cv[name]
        lines.append(f"{name:<8} {m.mae:8.3f} {m.mape:8.2f} {m.rmse:8.3f}")
    return "\n".join(lines) + "\n"


# -- experiments ---------------------------------------------------------------

def run_experiment(spec: ExperimentSpec, config: RunConfig,
                   model: SurrogateModel | None = None,
                   out_dir=None, write_events: bool = False) -> RunResult:
    """Execute one experiment and optionally persist its logs."""
    if spec.id != "I" and model is None:
        raise InputError(f"experiment {spec.id} needs a trained surrogate model")
    scenario = replace(config.scenario, rng_seed=spec.seed,
                       duration_hours=spec.duration_hours)
    attacker = None
    if spec.attack_mode is not None:
        attacker = Attacker(model, spec.attack_mode, scenario,
                            budget=config.attack.budget)
    event_stream = None
    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if write_events:
            event_stream = open(out / "events.log", "w")
    try:
        sim = ClosedLoopSim(
            scenario,
            controller_mode=spec.controller_mode,
            model=model,
            attacker=attacker,
            event_stream=event_stream,
        )
        run_id = f"{spec.id}-s{spec.seed}"
        result = sim.run(spec.duration_hours, run_id=run_id, experiment=spec.id)
    finally:
        if event_stream is not None:
            event_stream.close()
    if out is not None:
        write_summaries([result.summary], out / "summary.csv")
        save_audit(result.audit, out / "audit.log")
        if result.attacks:
            with open(out / "attack.log", "w") as fh:
                fh.write("# cvtsc-attack v1\n")
                for rec in result.attacks:
                    fh.write(rec.to_line() + "\n")
    return result


SUMMARY_COLUMNS = ("experiment", "run_id", "seed", "horizon_hours",
                   "total_delay_s", "vehicles", "delay_per_vehicle_s")


def write_summaries(summaries: Sequence[DelaySummary], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            writer.writerow([s.experiment, s.run_id, s.seed, repr(s.horizon_hours),
                             repr(s.total_delay_s), s.vehicles,
                             repr(s.delay_per_vehicle_s)])


def read_summaries(path) -> list[DelaySummary]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(DelaySummary(
                experiment=row["experiment"],
                run_id=row["run_id"],
                seed=int(row["seed"]),
                horizon_hours=float(row["horizon_hours"]),
                total_delay_s=float(row["total_delay_s"]),
                vehicles=int(row["vehicles"]),
                delay_per_vehicle_s=float(row["delay_per_vehicle_s"]),
            ))
    return out


@dataclass
class ReportRow:
    experiment: str
    runs: int
    mean_delay_s: float
    pct_vs_benchmark: float | None


@dataclass
class Report:
    rows: list[ReportRow]
    has_benchmark: bool

    def table(self) -> str:
        lines = ["experiment  runs  mean_total_delay_s  pct_vs_I"]
        for row in self.rows:
            pct = "      -" if row.pct_vs_benchmark is None else f"{row.pct_vs_benchmark:+7.1f}%"
            lines.append(f"{row.experiment:<10} {row.runs:>5}  {row.mean_delay_s:>18.1f}  {pct}")
        if not self.has_benchmark:
            lines.append("(benchmark experiment I missing: percentage column omitted)")
        return "\n".join(lines) + "\n"

    def plot_rows(self) -> list[tuple[str, float]]:
        return [(row.experiment, row.mean_delay_s) for row in self.rows]


def report(summaries: Sequence[DelaySummary]) -> Report:
    """Aggregate run summaries into the delay-comparison table."""
    if not summaries:
        raise InputError("report needs at least one run summary")
    by_exp: dict[str, list[DelaySummary]] = {}
    for s in summaries:
        by_exp.setdefault(s.experiment, []).append(s)
    benchmark = None
    if "I" in by_exp:
        benchmark = float(np.mean([s.total_delay_s for s in by_exp["I"]]))
    else:
        log.warning("no experiment-I benchmark among summaries; omitting percentages")
    rows = []
    order = [e for e in EXPERIMENT_IDS if e in by_exp]
    order += [e for e in sorted(by_exp) if e not in order]
    for exp in order:
        runs = by_exp[exp]
        mean_delay = float(np.mean([s.total_delay_s for s in runs]))
        pct = None
        if benchmark:
            pct = (mean_delay - benchmark) / benchmark * 100.0
        rows.append(ReportRow(exp, len(runs), mean_delay, pct))
    return Report(rows, benchmark is not None)


def write_plot_data(rep: Report, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("experiment", "mean_total_delay_s"))
        for exp, delay in rep.plot_rows():
            writer.writerow((exp, repr(delay)))
