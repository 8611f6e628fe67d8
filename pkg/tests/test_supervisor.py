import math

import numpy as np
import pytest

from conftest import sine_cubic_profile
from rtadapt.backstepping import BacksteppingDesign, GainSchedule
from rtadapt.identifier import Estimates
from rtadapt.plant import BlowUpError, PlantParams, SolverConfig
from rtadapt.supervisor import (EventLog, TriggerConfig, check_trigger, mu_lookup, run_adaptive,
                                run_nominal)


class TestMuLookup:
    def test_first_window_starts_at_zero(self):
        assert mu_lookup([0.0, 0.05], 0, TriggerConfig()) == 0.0

    def test_depth_one(self):
        assert mu_lookup([0.0, 0.05, 0.10], 1, TriggerConfig(N_tilde=1)) == 0.05

    def test_depth_two(self):
        assert mu_lookup([0.0, 0.05, 0.10], 1, TriggerConfig(N_tilde=2)) == 0.0

    def test_short_history(self):
        with pytest.raises(ValueError):
            mu_lookup([0.0], 0, TriggerConfig())


class TestTrigger:
    def test_threshold(self):
        assert not check_trigger(3.9, 1.0, 2.0, 1.0)
        assert check_trigger(4.0, 1.0, 2.0, 1.0)

    def test_zero_state_never_triggers(self):
        assert not check_trigger(1e9, 0.0, 2.0, 1.0)

    @pytest.mark.parametrize("kw", [{"T": 0.0}, {"a": 0.0}, {"N_tilde": 0}, {"N_tilde": 1.5}])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            TriggerConfig(**kw)


def test_zero_initial_condition(truth11):
    r = run_adaptive(truth11, np.zeros(100), Estimates(0.1, 1.0), horizon=0.3)
    assert np.all(r.norms == 0.0)
    assert {e.reason for e in r.log.events[1:]} == {"timer"}
    assert np.allclose(np.diff(r.log.taus), 0.05)
    assert np.all(r.theta_hat == 0.1) and np.all(r.c_hat == 1.0)


def test_headline_run_properties(regulation_run):
    r, _ = regulation_run
    taus = r.log.taus
    assert taus[0] == 0.0 and np.all(np.diff(taus) > 0)
    assert np.all(np.diff(taus) <= 0.05 + 1e-12)
    # the schedule size takes two values: N(theta_hat_0) then N(theta)
    assert [e.N for e in r.log.events][:2] == [1, 19]
    assert {e.N for e in r.log.events} == {1, 19}
    # estimates change only at event times
    change = np.flatnonzero(np.diff(r.theta_hat) != 0) + 1
    assert set(np.round(r.times[change], 12)) <= set(np.round(taus, 12))
    assert abs(r.theta_hat[-1] - 11.0) < 0.01


def test_unknown_pair_converges(truth11):
    r = run_adaptive(truth11, sine_cubic_profile, Estimates(0.1, 2.0), horizon=0.2)
    ev = r.log.events
    assert ev[1].set_kind == "Singleton"
    for e in ev[1:3]:
        assert e.c_after == pytest.approx(1.0, abs=0.01)
        assert e.theta_after == pytest.approx(11.0, rel=0.01)


def test_norm_crossing_is_located(truth11):
    # an artificially small overshoot constant forces a crossing inside the first dwell
    base = BacksteppingDesign()

    def tight(theta):
        s = base(theta)
        return GainSchedule(s.theta_hat, s.N, s.k, 1.0, s.omega)

    cfg = TriggerConfig(T=0.05, a=0.01)
    r = run_adaptive(truth11, sine_cubic_profile, Estimates(0.1, 1.0), cfg, tight, horizon=0.011,
                     known_c=True)
    first = r.log.events[1]
    assert first.reason == "norm-crossing"
    assert 0.0 < first.tau < 0.05
    # the sample just before the switch sits on the threshold
    k = np.flatnonzero(r.times == first.tau)[0]
    threshold = 1.0 * (1 + cfg.a) * r.log.events[0].norm
    assert r.norms[k] == pytest.approx(threshold, rel=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_exponential_regulation_random_ic(truth11, seed):
    rng = np.random.default_rng(seed)
    amp = rng.normal(size=6) / np.arange(1, 7)
    amp[0] = math.copysign(max(abs(amp[0]), 0.2), amp[0])

    def u0(x):
        return sum(amp[i] * math.sqrt(2) * np.sin((i + 1) * math.pi * x) for i in range(6))

    r = run_adaptive(truth11, u0, Estimates(0.1, 1.0), horizon=1.0, known_c=True)
    tau2 = r.log.taus[2]
    sel = r.times >= tau2
    rate = -np.polyfit(r.times[sel], np.log(r.norms[sel]), 1)[0]
    assert rate >= BacksteppingDesign()(11.0).omega


def test_event_log_roundtrip(regulation_run, tmp_path):
    r, _ = regulation_run
    path = tmp_path / "events.log"
    r.log.write(path)
    parsed = EventLog.parse(path.read_text())
    assert len(parsed) == len(r.log.events)
    assert float(parsed[1]["theta_after"]) == r.log.events[1].theta_after
    assert parsed[1]["reason"] == "timer" and parsed[0]["reason"] == "start"


class TestNominal:
    def test_certificate(self, truth11):
        s = BacksteppingDesign()(11.0)
        r = run_nominal(truth11, sine_cubic_profile, horizon=1.0, schedule=s)
        bound = s.R * np.exp(-s.omega * r.times) * r.norms[0]
        assert np.all(r.norms <= bound)

    def test_stable_open_loop_decay(self):
        truth = PlantParams(1.0, -2.0, 1.0)
        r = run_nominal(truth, sine_cubic_profile, horizon=1.0, feedback="truncated")
        sel = r.times >= 0.2
        rate = -np.polyfit(r.times[sel], np.log(r.norms[sel]), 1)[0]
        # the 100-point grid shifts the slowest decay rate by about pi^4 dx^2 / 12
        assert rate >= (math.pi**2 + 2.0) * (1 - 1e-3)
        assert np.all(r.trace.U == 0.0)

    def test_full_and_truncated_agree_at_plot_scale(self, truth11):
        # the two nominal loops stay within 2% of ||u0|| of each other at every time
        full = run_nominal(truth11, sine_cubic_profile, horizon=3.0, feedback="full_kernel")
        trunc = run_nominal(truth11, sine_cubic_profile, horizon=3.0, feedback="truncated", N=20)
        assert np.max(np.abs(full.norms - trunc.norms)) < 0.02 * full.norms[0]
        assert full.norms[-1] < 1e-9 and trunc.norms[-1] < 1e-9

    def test_unknown_feedback(self, truth11):
        with pytest.raises(ValueError):
            run_nominal(truth11, sine_cubic_profile, feedback="bogus")

    def test_blowup_carries_partial(self):
        truth = PlantParams(1.0, 40.0, 1.0)
        with pytest.raises(BlowUpError) as info:
            run_adaptive(truth, sine_cubic_profile, Estimates(-1.0, 1.0),
                         design=lambda th: GainSchedule(th, 1, (0.0,), 1e6, 1.0),
                         solver=SolverConfig(blowup=5.0), horizon=2.0)
        assert info.value.partial.log.events[0].reason == "start"
