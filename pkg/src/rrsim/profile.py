"""Parametric wear-timing profiles for resistive memory cells.

Switching a cell (set: all-ones -> all-zeros, reset: the reverse) gets
slower as the cell accumulates switching stress.  A profile captures that
behaviour with one monotone mean curve per operation,

    mean_time(s) = t0 + a * s**p        (s = completed set-reset pairs)

plus a multiplicative lognormal noise term per sample, a per-chip
lognormal spread (chips of the same part number age at slightly different
overall speed), a linear temperature coefficient, and the flat command
timings of the serial interface (buffered writes, no-op writes, optional
software jitter).

All times are seconds; stress is counted in set-reset pairs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from importlib import resources

import numpy as np

from .errors import ConfigurationError

PROFILE_FORMAT = "rrsim-profile"
PROFILE_VERSION = 1

DEFAULT_PROFILE_RESOURCE = "default_mb85as8mt.profile.json"


@dataclass(frozen=True)
class WearCurve:
    """Mean switch time versus accumulated stress: t0 + a * s**p."""

    t0: float          # fresh-cell time, seconds
    a: float           # wear coefficient, seconds per pair**p
    p: float           # wear exponent, >= 1

    def mean(self, stress):
        """Mean switch time at `stress` pairs (scalar or ndarray)."""
        s = np.asarray(stress, dtype=float)
        out = self.t0 + self.a * np.power(s, self.p)
        if out.ndim == 0:
            return float(out)
        return out

    def validate(self):
        if self.t0 <= 0 or self.a <= 0:
            raise ConfigurationError("wear curve times must be positive")
        if self.p < 1:
            raise ConfigurationError("wear exponent must be >= 1")


@dataclass(frozen=True)
class CalibrationProfile:
    """Fitted timing model for one memory part number."""

    set_curve: WearCurve
    reset_curve: WearCurve
    set_sigma: float              # lognormal sigma of a single set sample
    reset_sigma: float            # lognormal sigma of a single reset sample
    buffered_command_time: float  # one buffered all-set or all-reset command
    pair_time: float              # buffered set+reset pair over one buffer
    noop_time: float              # write that toggles no bits
    temp_coeff: float             # fractional mean shift per degC from 25 C
    jitter_max: float             # max uniform software delay when enabled
    endurance_rated: int          # vendor-rated pairs
    endurance_max: int            # pairs after which cells go unreliable
    chip_variation: float         # lognormal sigma of the per-chip speed factor
    temp_rated_min: float = -40.0
    temp_rated_max: float = 85.0
    retention_drift: float = 0.0  # fractional mean shift per day of retention
    bake_drift: float = 0.0       # fractional permanent shift per bake day

    def __post_init__(self):
        self.set_curve.validate()
        self.reset_curve.validate()
        if self.set_sigma < 0 or self.reset_sigma < self.set_sigma:
            raise ConfigurationError("need reset_sigma >= set_sigma >= 0")
        for name in ("buffered_command_time", "pair_time", "noop_time"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.jitter_max < 0 or self.chip_variation < 0:
            raise ConfigurationError("jitter_max and chip_variation must be >= 0")
        if self.endurance_max < self.endurance_rated or self.endurance_rated <= 0:
            raise ConfigurationError("need endurance_max >= endurance_rated > 0")
        if self.temp_rated_min >= self.temp_rated_max:
            raise ConfigurationError("bad rated temperature range")

    # -- mean model ------------------------------------------------------

    def curve(self, op: str) -> WearCurve:
        if op == "set":
            return self.set_curve
        if op == "reset":
            return self.reset_curve
        raise ConfigurationError(f"unknown operation {op!r} (want 'set' or 'reset')")

    def sigma(self, op: str) -> float:
        return self.set_sigma if op == "set" else self.reset_sigma

    def mean_time(self, op: str, stress):
        """Deterministic mean switch time at a stress level (pairs)."""
        return self.curve(op).mean(stress)

    def temp_factor(self, celsius: float) -> float:
        return 1.0 + self.temp_coeff * (celsius - 25.0)

    # -- sampling --------------------------------------------------------

    def sample_times(self, op, stress, rng, scale=1.0):
        """Draw noisy switch times for an array of per-cell stress levels.

        The lognormal factor is mean-corrected so the expected sample equals
        scale * mean_time(stress).  `scale` folds in the chip speed factor
        and any temperature/aging multipliers.
        """
        sig = self.sigma(op)
        mean = self.curve(op).mean(np.asarray(stress, dtype=float))
        noise = np.exp(sig * rng.standard_normal(np.shape(mean)) - 0.5 * sig * sig)
        return scale * mean * noise

    def draw_chip_factor(self, rng) -> float:
        """Per-chip overall speed factor, mean 1."""
        sig = self.chip_variation
        if sig == 0.0:
            return 1.0
        return float(np.exp(sig * rng.standard_normal() - 0.5 * sig * sig))

    def sample_replica_means(self, op, stress, replica_size, count, rng):
        """Means of `replica_size` samples at one stress level, `count` draws.

        Each draw models a fresh chip of this part number measuring one
        replica group, so the chip speed factor varies draw to draw while
        per-sample noise averages down with the group size.
        """
        sig_c = self.chip_variation
        chip = np.exp(sig_c * rng.standard_normal(count) - 0.5 * sig_c * sig_c)
        sig = self.sigma(op)
        z = rng.standard_normal((count, replica_size))
        samples = np.exp(sig * z - 0.5 * sig * sig).mean(axis=1)
        return self.mean_time(op, stress) * chip * samples

    # -- persistence -----------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["format"] = PROFILE_FORMAT
        d["version"] = PROFILE_VERSION
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationProfile":
        if d.get("format") != PROFILE_FORMAT:
            raise ConfigurationError("not a profile file")
        if d.get("version") != PROFILE_VERSION:
            raise ConfigurationError(f"unsupported profile version {d.get('version')}")
        body = {k: v for k, v in d.items() if k not in ("format", "version")}
        try:
            body["set_curve"] = WearCurve(**body["set_curve"])
            body["reset_curve"] = WearCurve(**body["reset_curve"])
            return cls(**body)
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed profile: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "CalibrationProfile":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"profile is not valid JSON: {exc}") from exc
        return cls.from_dict(d)


def save_profile(profile: CalibrationProfile, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(profile.to_json())
        fh.write("\n")


def load_profile(path) -> CalibrationProfile:
    with open(path, "r", encoding="utf-8") as fh:
        return CalibrationProfile.from_json(fh.read())


def default_profile() -> CalibrationProfile:
    """Shipped profile fitted to the MB85AS8MT-class behaviour anchors."""
    text = resources.files("rrsim.data").joinpath(DEFAULT_PROFILE_RESOURCE).read_text()
    return CalibrationProfile.from_json(text)
