import pytest
from hypothesis import given
from hypothesis import strategies as st

from cvtsc.domain import (
    ALL_PHASES,
    LEFT_TURN_PHASES,
    MAJOR_BARRIER,
    MINOR_BARRIER,
    RING_1,
    RING_2,
    THROUGH_PHASES,
    BsmRecord,
    InputError,
    ScenarioConfig,
    TimingPlan,
    barrier_of,
    eta_of,
    format_bsm_line,
    partner_of,
    ring_of,
    validate_plan,
)


@pytest.fixture
def config():
    return ScenarioConfig()


class TestEtaOf:
    def test_basic(self):
        assert eta_of(150.0, 15.0) == 10.0

    def test_zero_distance(self):
        assert eta_of(0.0, 12.3) == 0.0
        assert eta_of(0.0, 0.0) == 0.0

    def test_floor_speed_clamp(self):
        assert eta_of(300.0, 0.0, floor_speed=1.0) == 300.0

    def test_negative_position_rejected(self):
        with pytest.raises(InputError):
            eta_of(-1.0, 5.0)

    def test_bad_floor_rejected(self):
        with pytest.raises(InputError):
            eta_of(10.0, 5.0, floor_speed=0.0)

    @given(
        p1=st.floats(0, 300), p2=st.floats(0, 300),
        speed=st.floats(0, 20, allow_nan=False),
    )
    def test_monotone_in_position(self, p1, p2, speed):
        lo, hi = sorted((p1, p2))
        assert eta_of(lo, speed) <= eta_of(hi, speed)

    @given(
        pos=st.floats(0, 300),
        v1=st.floats(1.0, 20), v2=st.floats(1.0, 20),
    )
    def test_nonincreasing_in_speed_above_floor(self, pos, v1, v2):
        lo, hi = sorted((v1, v2))
        assert eta_of(pos, hi) <= eta_of(pos, lo)


class TestPhasePartition:
    def test_through_and_left_partition(self):
        assert THROUGH_PHASES | LEFT_TURN_PHASES == set(ALL_PHASES)
        assert not THROUGH_PHASES & LEFT_TURN_PHASES

    @given(st.sampled_from(ALL_PHASES))
    def test_each_phase_in_one_ring_and_barrier(self, phase):
        assert (phase in RING_1) != (phase in RING_2)
        assert (phase in MAJOR_BARRIER) != (phase in MINOR_BARRIER)
        assert ring_of(phase) in (1, 2)
        assert barrier_of(phase) in ("major", "minor")

    @given(st.sampled_from(ALL_PHASES))
    def test_partner_is_involution(self, phase):
        mate = partner_of(phase)
        assert mate != phase
        assert partner_of(mate) == phase
        assert ring_of(mate) == ring_of(phase)
        assert barrier_of(mate) == barrier_of(phase)

    def test_bad_phase(self):
        with pytest.raises(InputError):
            ring_of(9)


class TestValidatePlan:
    def test_uniform_plan_valid(self, config):
        plan = TimingPlan(10, 10, 10, 10, (1, 5), "major")
        assert validate_plan(plan, config)

    def test_below_g_min(self, config):
        plan = TimingPlan(4, 10, 10, 4, (1, 5), "major")
        verdict = validate_plan(plan, config)
        assert not verdict
        assert "g_d1" in verdict.violation and "g_min" in verdict.violation

    def test_above_g_max(self, config):
        plan = TimingPlan(10, 10, 31, 10, (1, 5), "major")
        verdict = validate_plan(plan, config)
        assert not verdict
        assert "g_g1" in verdict.violation and "g_max" in verdict.violation

    def test_ring_mismatch(self, config):
        verdict = validate_plan(TimingPlan(10, 10, 10, 12, (1, 5), "major"), config)
        assert not verdict
        assert "ring" in verdict.violation

    def test_sequence_wrong_barrier(self, config):
        verdict = validate_plan(TimingPlan(10, 10, 10, 10, (3, 7), "major"), config)
        assert not verdict

    def test_barrier_length(self, config):
        plan = TimingPlan(10, 12, 10, 8, (2, 5), "major")
        assert plan.barrier_length == 28.0
        assert validate_plan(plan, config)

    def test_green_of(self):
        plan = TimingPlan(10, 12, 14, 12, (1, 6), "major")
        assert plan.green_of(1) == 10
        assert plan.green_of(2) == 14
        assert plan.green_of(6) == 12
        assert plan.green_of(5) == 12


class TestRecords:
    def test_bsm_rejects_negative(self):
        with pytest.raises(InputError):
            BsmRecord("v1", 0.0, -2.0, 3.0, 2)
        with pytest.raises(InputError):
            BsmRecord("v1", 0.0, 2.0, -3.0, 2)

    def test_bsm_line_roundtrippable_fields(self):
        rec = BsmRecord("v7", 12.3, 150.25, 14.5, 2, False)
        line = format_bsm_line(rec)
        assert line.split() == ["BSM", "v7", "12.3", "150.25", "14.5", "2", "0"]


class TestScenarioConfig:
    def test_defaults_mirror_study(self, config):
        assert config.demand == 400.0
        assert config.comm_range == 300.0
        assert config.free_flow_speed == 15.65
        assert (config.g_min, config.g_max) == (5.0, 30.0)
        assert config.transition_time == 4.0
        assert config.sim_resolution == 10

    def test_demand_overrides(self):
        cfg = ScenarioConfig(demand_overrides={2: 800.0})
        assert cfg.rate_for(2) == 800.0
        assert cfg.rate_for(4) == 400.0

    def test_bad_objective(self):
        with pytest.raises(InputError):
            ScenarioConfig(objective="throughput")
