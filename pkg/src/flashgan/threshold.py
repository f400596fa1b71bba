"""Adaptive edge-dropping thresholds.

Thresholds rise by a fixed step at the start of every collection round and
fall by a smaller step each time ``p_fail`` augmentation failures pile up.
Arithmetic is done on exact fractions so repeated steps never drift.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping

from .errors import ConfigError

SCORED_TYPES = ("uu", "up")


def _exact(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


def _clamp(x: Fraction, lo: Fraction, hi: Fraction) -> Fraction:
    return max(lo, min(hi, x))


@dataclass(frozen=True)
class ThresholdConfig:
    initial: float = 0.49
    increment: float = 0.04
    decrement: float = 0.005
    lower: float = 0.49
    upper: float = 0.95
    p_fail: int = 10
    edge_types: tuple[str, ...] = SCORED_TYPES

    def __post_init__(self):
        if not (0.0 <= self.lower <= self.upper <= 1.0):
            raise ConfigError(f"threshold bounds must satisfy 0 <= lower <= upper <= 1, got [{self.lower}, {self.upper}]")
        if self.p_fail < 1:
            raise ConfigError("p_fail must be >= 1")
        if self.increment < 0 or self.decrement < 0:
            raise ConfigError("threshold steps must be non-negative")


@dataclass(frozen=True)
class ThresholdState:
    """Per-edge-type thresholds plus the shared failure counter."""

    eta: Mapping[str, Fraction]
    failures: int
    zeta: Mapping[str, Fraction]
    delta: Mapping[str, Fraction]
    p_fail: int
    lower: Fraction
    upper: Fraction
    decrements: int = field(default=0, compare=False)

    @classmethod
    def from_config(cls, cfg: ThresholdConfig | None = None, **overrides) -> "ThresholdState":
        cfg = cfg or ThresholdConfig()
        if overrides:
            cfg = replace(cfg, **overrides)
        lo, hi = _exact(cfg.lower), _exact(cfg.upper)
        eta0 = _clamp(_exact(cfg.initial), lo, hi)
        return cls(
            eta={t: eta0 for t in cfg.edge_types},
            failures=0,
            zeta={t: _exact(cfg.increment) for t in cfg.edge_types},
            delta={t: _exact(cfg.decrement) for t in cfg.edge_types},
            p_fail=int(cfg.p_fail),
            lower=lo,
            upper=hi,
        )

    def value(self, etype: str) -> float:
        return float(self.eta[etype])

    def as_floats(self) -> dict[str, float]:
        return {t: float(v) for t, v in self.eta.items()}

    def with_eta(self, **eta: float) -> "ThresholdState":
        new = dict(self.eta)
        for t, v in eta.items():
            new[t] = _clamp(_exact(v), self.lower, self.upper)
        return replace(self, eta=new)

    def round_begin(self) -> "ThresholdState":
        eta = {t: min(v + self.zeta[t], self.upper) for t, v in self.eta.items()}
        return replace(self, eta=eta, failures=0)

    def record_failure(self) -> "ThresholdState":
        f = self.failures + 1
        if f < self.p_fail:
            return replace(self, failures=f)
        eta = {t: max(v - self.delta[t], self.lower) for t, v in self.eta.items()}
        return replace(self, eta=eta, failures=0, decrements=self.decrements + 1)

    def record_success(self) -> "ThresholdState":
        return self

    def to_dict(self) -> dict:
        return {
            "eta": {t: str(v) for t, v in self.eta.items()},
            "failures": self.failures,
            "zeta": {t: str(v) for t, v in self.zeta.items()},
            "delta": {t: str(v) for t, v in self.delta.items()},
            "p_fail": self.p_fail,
            "lower": str(self.lower),
            "upper": str(self.upper),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ThresholdState":
        return cls(
            eta={t: Fraction(v) for t, v in d["eta"].items()},
            failures=int(d["failures"]),
            zeta={t: Fraction(v) for t, v in d["zeta"].items()},
            delta={t: Fraction(v) for t, v in d["delta"].items()},
            p_fail=int(d["p_fail"]),
            lower=Fraction(d["lower"]),
            upper=Fraction(d["upper"]),
        )


def round_begin(s: ThresholdState) -> ThresholdState:
    return s.round_begin()


def record_failure(s: ThresholdState) -> ThresholdState:
    return s.record_failure()


def record_success(s: ThresholdState) -> ThresholdState:
    return s.record_success()
