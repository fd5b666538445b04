"""Experiment harness: usage aging, retention, attacks, sweeps, cost math.

Every experiment reduces to one question: after some history of wear, do
the per-bit mean switch times of 0-bits and 1-bits still sit on opposite
sides of some cut?  The SeparationReport captures that as the full set of
pairwise gaps between 0-bit and 1-bit means; a positive minimum gap is
equivalent to the existence of a zero-error threshold.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .chip import ChipModel
from .codec import HidingKey, Payload, decode, encode
from .errors import BoundsError, ConfigurationError, UsedCellsWarning

REPORT_COLUMNS = ("sweep_id", "N", "post_stress", "op", "replica_size",
                  "min_distance_s", "ber", "errors")


# ---------------------------------------------------------------------------
# separation metrics
# ---------------------------------------------------------------------------

@dataclass
class SeparationReport:
    """Pairwise 0-bit/1-bit timing gaps plus best-threshold error counts."""

    op: str
    stress_count: int
    post_stress: int
    replica_size: int
    distances: np.ndarray
    min_distance: float
    bit_error_count: int
    ber: float
    decode_ber: float | None = None   # errors of the actual decoder output

    @property
    def separable(self) -> bool:
        return self.min_distance > 0


def min_threshold_errors(means, truth):
    """Fewest bit errors any threshold achieves (bit = mean > cut)."""
    means = np.asarray(means, dtype=float)
    truth = np.asarray(truth, dtype=np.int64)
    order = np.sort(np.unique(means))
    cuts = [order[0] - 1.0]
    cuts.extend(0.5 * (order[:-1] + order[1:]))
    cuts.append(order[-1] + 1.0)
    best = len(truth)
    for cut in cuts:
        errors = int(np.sum((means > cut).astype(np.int64) != truth))
        best = min(best, errors)
    return best


def separation_report(bit_means, truth, op, stress_count, post_stress=0,
                      replica_size=256, decode_bits=None) -> SeparationReport:
    """Score recovered bit means against the true payload."""
    means = np.asarray(bit_means, dtype=float)
    truth_arr = np.asarray(truth, dtype=np.int64)
    zeros = means[truth_arr == 0]
    ones = means[truth_arr == 1]
    if len(zeros) and len(ones):
        distances = (ones[None, :] - zeros[:, None]).ravel()
        min_distance = float(distances.min())
    else:
        distances = np.array([])
        min_distance = float("inf")
    errors = min_threshold_errors(means, truth_arr)
    decode_ber = None
    if decode_bits is not None:
        decode_ber = float(np.mean(np.asarray(decode_bits) != truth_arr))
    return SeparationReport(
        op=op, stress_count=stress_count, post_stress=post_stress,
        replica_size=replica_size, distances=distances,
        min_distance=min_distance, bit_error_count=errors,
        ber=errors / len(truth_arr), decode_ber=decode_ber,
    )


# ---------------------------------------------------------------------------
# usage and environment aging
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UsagePattern:
    """Write-traffic model used to age cells.

    worst_case_toggle writes a value and its complement each cycle, so
    every bit completes exactly one set-reset pair per cycle.  The
    realistic pattern toggles low bits more often than high bits (small
    values dominate real traffic) with per-write toggle probabilities
    tuned so the average cell also gains about one pair per cycle.
    """

    kind: str = "worst_case_toggle"
    # P(bit toggles per write), LSB first; sums to 4 -> 1 pair/cell/cycle.
    toggle_probs: tuple = (0.80, 0.68, 0.58, 0.50, 0.42, 0.36, 0.34, 0.32)
    writes_per_cycle: int = 4

    def __post_init__(self):
        if self.kind not in ("worst_case_toggle", "realistic_random"):
            raise ConfigurationError(f"unknown usage pattern {self.kind!r}")
        if len(self.toggle_probs) != 8:
            raise ConfigurationError("need one toggle probability per bit")
        if any(not 0 < q <= 1 for q in self.toggle_probs):
            raise ConfigurationError("toggle probabilities must be in (0, 1]")

    @property
    def weights(self) -> np.ndarray:
        """Per-bit stress weighting, normalized to sum to one."""
        probs = np.asarray(self.toggle_probs, dtype=float)
        return probs / probs.sum()

    def draw_masks(self, rng, count: int) -> np.ndarray:
        """Sample toggle masks the realistic generator would apply."""
        bits = rng.random((count, 8)) < np.asarray(self.toggle_probs)
        return (bits << np.arange(8)).sum(axis=1).astype(np.uint8)


WORST_CASE = UsagePattern("worst_case_toggle")
REALISTIC = UsagePattern("realistic_random")


def simulate_usage(chip: ChipModel, pattern: UsagePattern, cycles: int,
                   region: tuple[int, int]) -> None:
    """Age `region` = (start, count) with `cycles` pair-equivalents of traffic."""
    start, count = region
    if start < 0 or count < 0 or start + count > chip.geometry.address_count:
        raise BoundsError(f"region [{start}, {start + count}) outside chip")
    if cycles < 0:
        raise ConfigurationError("cycles must be >= 0")
    if cycles == 0 or count == 0:
        return
    addrs = np.arange(start, start + count, dtype=np.int64)
    if pattern.kind == "worst_case_toggle":
        chip.apply_stress_pairs(addrs, cycles)
        return
    # Realistic traffic: per-cell, per-bit binomial transition counts.
    writes = cycles * pattern.writes_per_cycle
    rng = chip.derive_rng(b"usage", addrs[0], addrs[-1], np.int64(cycles),
                          chip.wear_units(addrs))
    transitions = np.zeros(count, dtype=np.int64)
    for q in pattern.toggle_probs:
        transitions += rng.binomial(writes, q, size=count)
    commands = writes * -(-count // chip.geometry.buffer_size)
    chip.apply_transitions(addrs, transitions,
                           commands * chip.profile.buffered_command_time)
    chip.set_values(addrs, rng.integers(0, 256, count, dtype=np.uint8))


def age_retention(chip: ChipModel, duration: float) -> None:
    """Advance the simulated calendar; the default profile drifts nothing."""
    if duration < 0:
        raise ConfigurationError("duration must be >= 0")
    chip.simulated_clock += duration


def bake(chip: ChipModel, celsius: float, duration: float) -> None:
    """Record a thermal soak; permanent drift only if the profile says so."""
    if celsius > chip.profile.temp_rated_max:
        raise ConfigurationError(
            f"bake at {celsius} C exceeds the rated {chip.profile.temp_rated_max} C")
    if duration < 0:
        raise ConfigurationError("duration must be >= 0")
    chip.bake_log.append((celsius, duration))
    chip._bake_days += duration / 86400.0
    chip.simulated_clock += duration


# ---------------------------------------------------------------------------
# attacks
# ---------------------------------------------------------------------------

def attack_wrong_base(chip: ChipModel, key: HidingKey, truth: Payload,
                      offset_mode: str = "case3", op: str = "set"
                      ) -> SeparationReport:
    """Decode with a perturbed base address and score against the truth.

    case1 shifts by half a replica (the wrong groups overlap the true ones
    almost completely), case2 lands mid-footprint (inside the true region),
    case3 shifts by exactly one replica size.  The honest chip state is
    cloned so the attack's measurement wear does not touch the original.
    """
    offsets = {
        "case1": key.replica_size // 2,
        "case2": key.replica_size * (key.payload_length // 2),
        "case3": key.replica_size,
    }
    if offset_mode not in offsets:
        raise ConfigurationError("offset_mode must be case1, case2 or case3")
    offset = max(offsets[offset_mode], 1)
    wrong = HidingKey(
        base_address=key.base_address + offset,
        replica_size=key.replica_size,
        replica_count=key.replica_count,
        rotations=key.rotations,
        payload_length=key.payload_length,
        stress_count=key.stress_count,
    )
    return _scored_decode(chip, wrong, truth, op)


def attack_wrong_key(chip: ChipModel, key: HidingKey, truth: Payload,
                     rng_seed: int = 1, op: str = "set") -> SeparationReport:
    """Decode with freshly drawn random rotations instead of the real ones."""
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    while True:
        rotations = tuple(int(k) for k in
                          rng.integers(0, key.payload_length, key.replica_count))
        if rotations != key.rotations:
            break
    wrong = HidingKey(
        base_address=key.base_address,
        replica_size=key.replica_size,
        replica_count=key.replica_count,
        rotations=rotations,
        payload_length=key.payload_length,
        stress_count=key.stress_count,
    )
    return _scored_decode(chip, wrong, truth, op)


def _scored_decode(chip: ChipModel, key: HidingKey, truth: Payload,
                   op: str) -> SeparationReport:
    twin = chip.clone()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = decode(twin, key, method="kmeans", op=op)
    return separation_report(
        result.bit_means, truth.bits, op=op, stress_count=key.stress_count,
        replica_size=key.replica_size, decode_bits=result.payload.bits)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def sweep_post_hiding(chip_factory, stress_counts, post_grid, op: str = "set",
                      payload: Payload | None = None, base_address: int = 0,
                      replica_size: int = 256) -> list[SeparationReport]:
    """Age an encoded chip along a post-stress grid and report separation.

    For each hiding stress count: one fresh chip is encoded, then every
    grid point ages a clone of that encoded state with worst-case toggle
    traffic and decodes it, so measurement wear never compounds across
    grid points.
    """
    if payload is None:
        payload = Payload.from_hex("0xECE3038B")
    reports = []
    for n in stress_counts:
        chip = chip_factory()
        key = HidingKey(base_address, replica_size, 1, (0,), len(payload), n)
        encode(chip, key, payload)
        region = (key.base_address, key.footprint)
        for s in post_grid:
            twin = chip.clone()
            if s:
                simulate_usage(twin, WORST_CASE, int(s), region)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                result = decode(twin, key, method="kmeans", op=op)
            rep = separation_report(
                result.bit_means, payload.bits, op=op, stress_count=n,
                post_stress=int(s), replica_size=replica_size,
                decode_bits=result.payload.bits)
            reports.append(rep)
    return reports


def stress_tolerance(reports, stress_count: int, max_errors: int = 0) -> int:
    """Largest grid stress sustained before errors first exceed the budget.

    Matches the silicon reading: data "remains separated up to X" when the
    first grid point with more than `max_errors` bit errors is the one
    after X.  Returns 0 when even the first aged point fails.
    """
    rows = sorted((r for r in reports if r.stress_count == stress_count),
                  key=lambda r: r.post_stress)
    if not rows:
        raise ConfigurationError(f"no reports for stress count {stress_count}")
    last_good = 0
    for r in rows:
        if r.bit_error_count > max_errors:
            break
        last_good = r.post_stress
    return last_good


def sweep_replica_size(chip_factory, sizes, op: str = "set",
                       stress_count: int = 15_000,
                       payload: Payload | None = None,
                       rng_seed: int = 0) -> list[SeparationReport]:
    """Encode/decode once per replica size on fresh chips."""
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    reports = []
    for size in sizes:
        pay = payload if payload is not None else Payload.random(32, rng)
        chip = chip_factory()
        key = HidingKey(0, int(size), 1, (0,), len(pay), stress_count)
        encode(chip, key, pay)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            result = decode(chip, key, method="kmeans", op=op)
        reports.append(separation_report(
            result.bit_means, pay.bits, op=op, stress_count=stress_count,
            replica_size=int(size), decode_bits=result.payload.bits))
    return reports


def min_separable_replica(reports) -> int | None:
    """Smallest replica size from which separation holds for all larger sizes."""
    rows = sorted(reports, key=lambda r: r.replica_size)
    threshold = None
    for r in rows:
        if r.separable:
            if threshold is None:
                threshold = r.replica_size
        else:
            threshold = None
    return threshold


def sweep_initial_stress(chip_factory, initial_grid, stress_count: int,
                         ops=("set", "reset"), payload: Payload | None = None,
                         base_address: int = 0, replica_size: int = 256
                         ) -> list[SeparationReport]:
    """Pre-age the footprint with realistic traffic, then hide and decode."""
    if payload is None:
        payload = Payload.from_hex("0xECE3038B")
    reports = []
    for s in initial_grid:
        chip = chip_factory()
        key = HidingKey(base_address, replica_size, 1, (0,), len(payload),
                        stress_count)
        region = (key.base_address, key.footprint)
        if s:
            simulate_usage(chip, REALISTIC, int(s), region)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UsedCellsWarning)
            encode(chip, key, payload)
        for op in ops:
            twin = chip.clone()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                result = decode(twin, key, method="kmeans", op=op)
            reports.append(separation_report(
                result.bit_means, payload.bits, op=op, stress_count=stress_count,
                post_stress=int(s), replica_size=replica_size,
                decode_bits=result.payload.bits))
    return reports


# ---------------------------------------------------------------------------
# pure performance calculators (exact rational arithmetic)
# ---------------------------------------------------------------------------

def _fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, float):
        # Via the shortest decimal repr, so 0.01 means exactly 1/100.
        return Fraction(repr(x))
    raise ConfigurationError(f"cannot interpret {x!r} as an exact number")


def encode_time(stress_pairs, payload_bits, pair_time) -> Fraction:
    """Seconds to hide: pairs x bits x buffered pair time."""
    return _fraction(stress_pairs) * _fraction(payload_bits) * _fraction(pair_time)


def retrieve_time(mean_switch, payload_bits, replica_size) -> Fraction:
    """Seconds to recover: mean switch time x bits x replicas per bit."""
    return _fraction(mean_switch) * _fraction(payload_bits) * _fraction(replica_size)


def endurance_cost(stress_pairs, rated_pairs) -> Fraction:
    """Fraction of rated endurance consumed by hiding."""
    rated = _fraction(rated_pairs)
    if rated <= 0:
        raise ConfigurationError("rated_pairs must be positive")
    return _fraction(stress_pairs) / rated


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------

def write_reports_csv(path, sweep_id: str, reports, seed: int | None = None
                      ) -> None:
    """One plot-ready CSV per sweep, rows in deterministic grid order."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if seed is not None:
            fh.write(f"# rrsim {sweep_id} seed={seed}\n")
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for r in reports:
            writer.writerow([
                sweep_id, r.stress_count, r.post_stress, r.op, r.replica_size,
                repr(r.min_distance), repr(r.ber), r.bit_error_count,
            ])
