from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flashgan.errors import ConfigError
from flashgan.threshold import ThresholdConfig, ThresholdState

events = st.lists(st.sampled_from(["round", "fail", "success"]), max_size=200)


class Reference:
    """Plain re-statement of the controller used as an oracle."""

    def __init__(self, p_fail=10):
        self.eta = Fraction(49, 100)
        self.count = 0
        self.p_fail = p_fail

    def apply(self, ev):
        if ev == "round":
            self.eta = min(self.eta + Fraction(4, 100), Fraction(95, 100))
            self.count = 0
        elif ev == "fail":
            self.count += 1
            if self.count == self.p_fail:
                self.eta = max(self.eta - Fraction(5, 1000), Fraction(49, 100))
                self.count = 0


def step(s, ev):
    return {"round": s.round_begin, "fail": s.record_failure, "success": s.record_success}[ev]()


def test_first_round_goes_to_053():
    s = ThresholdState.from_config().round_begin()
    assert s.eta["uu"] == Fraction(53, 100)
    assert s.value("up") == 0.53


def test_tenth_failure_steps_down():
    s = ThresholdState.from_config().with_eta(uu=0.535, up=0.535)
    for _ in range(9):
        s = s.record_failure()
    assert s.eta["uu"] == Fraction(535, 1000) and s.failures == 9
    s = s.record_failure()
    assert s.eta["uu"] == Fraction(53, 100) and s.failures == 0


def test_clamped_at_both_ends():
    s = ThresholdState.from_config()
    for _ in range(30):
        s = s.round_begin()
    assert s.eta["uu"] == Fraction(95, 100)
    for _ in range(10_000):
        s = s.record_failure()
    assert s.eta["up"] == Fraction(49, 100)


def test_bad_config():
    with pytest.raises(ConfigError):
        ThresholdConfig(lower=0.9, upper=0.5)
    with pytest.raises(ConfigError):
        ThresholdConfig(p_fail=0)


def test_dict_round_trip():
    s = ThresholdState.from_config().round_begin().record_failure()
    assert ThresholdState.from_dict(s.to_dict()) == s


@settings(max_examples=500, deadline=None)
@given(events)
def test_matches_reference_machine(seq):
    s, ref = ThresholdState.from_config(), Reference()
    for ev in seq:
        s = step(s, ev)
        ref.apply(ev)
        assert s.eta["uu"] == s.eta["up"] == ref.eta
        assert s.failures == ref.count
        assert Fraction(49, 100) <= s.eta["uu"] <= Fraction(95, 100)
