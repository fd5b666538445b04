"""Hide bit-strings in cell wear and recover them from timing measurements.

Encoding stresses the cells that map to 1-bits with a configured number of
set-reset pairs, leaving 0-bit cells fresh; decoding measures switch times
over the same footprint, averages them per payload bit, and classifies the
bit means with a threshold or a two-cluster split.

Two address layouts are supported behind one plan abstraction:

* block:  replica_count == 1; payload bit i owns `replica_size`
  consecutive addresses starting at base + i * replica_size.
* rows:   replica_count > 1; each replica is a row of payload_length
  groups of `replica_size` consecutive addresses, and the row is stored
  left-rotated by that replica's secret displacement.  Without the
  rotation list the groups cannot be reassembled.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .chip import ChipGeometry, ChipModel
from .errors import (AmbiguousDecodeWarning, ConfigurationError, EncodeError,
                     FormatError, UsedCellsWarning, WearOutError)
from .profile import CalibrationProfile

KEY_FORMAT = "rrsim-key"
KEY_VERSION = 1


# ---------------------------------------------------------------------------
# payload
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Payload:
    """An ordered bit-string, most significant bit first."""

    bits: tuple

    def __post_init__(self):
        if len(self.bits) < 1:
            raise ConfigurationError("payload must have at least one bit")
        if any(b not in (0, 1) for b in self.bits):
            raise ConfigurationError("payload bits must be 0 or 1")

    def __len__(self):
        return len(self.bits)

    @classmethod
    def from_hex(cls, text: str, length: int | None = None) -> "Payload":
        t = text.strip().lower()
        if t.startswith("0x"):
            t = t[2:]
        if not t or any(c not in "0123456789abcdef" for c in t):
            raise ConfigurationError(f"not a hex payload: {text!r}")
        value = int(t, 16)
        nbits = length if length is not None else 4 * len(t)
        if value >= (1 << nbits):
            raise ConfigurationError("payload value does not fit the bit length")
        return cls(tuple((value >> (nbits - 1 - i)) & 1 for i in range(nbits)))

    def to_hex(self) -> str:
        value = 0
        for b in self.bits:
            value = (value << 1) | b
        nibbles = -(-len(self.bits) // 4)
        return "0x" + format(value, "0{}X".format(nibbles))

    def to_array(self) -> np.ndarray:
        return np.array(self.bits, dtype=np.int64)

    @classmethod
    def random(cls, length: int, rng) -> "Payload":
        return cls(tuple(int(b) for b in rng.integers(0, 2, length)))


def rotate_left(bits, k: int):
    """Left circular rotation by k positions."""
    n = len(bits)
    k %= n
    return tuple(bits[(i + k) % n] for i in range(n))


# ---------------------------------------------------------------------------
# hiding key and address plan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HidingKey:
    """Secret layout recipe; recovery is chance-level without it."""

    base_address: int
    replica_size: int
    replica_count: int
    rotations: tuple
    payload_length: int
    stress_count: int

    def __post_init__(self):
        if self.payload_length < 1:
            raise ConfigurationError("payload_length must be >= 1")
        if self.replica_size < 1 or self.replica_count < 1:
            raise ConfigurationError("replica size and count must be >= 1")
        if self.base_address < 0:
            raise ConfigurationError("base_address must be >= 0")
        if self.stress_count < 0:
            raise ConfigurationError("stress_count must be >= 0")
        if len(self.rotations) != self.replica_count:
            raise ConfigurationError("need one rotation per replica")
        if any(not 0 <= k < self.payload_length for k in self.rotations):
            raise ConfigurationError("rotations must lie in [0, payload_length)")

    @property
    def layout_mode(self) -> str:
        return "block" if self.replica_count == 1 else "rows"

    @property
    def footprint(self) -> int:
        return self.payload_length * self.replica_size * self.replica_count

    def to_json(self) -> str:
        return json.dumps({
            "format": KEY_FORMAT,
            "version": KEY_VERSION,
            "base_address": self.base_address,
            "replica_size": self.replica_size,
            "replica_count": self.replica_count,
            "rotations": list(self.rotations),
            "payload_length": self.payload_length,
            "stress_count": self.stress_count,
            "layout_mode": self.layout_mode,
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "HidingKey":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"key file is not valid JSON: {exc}") from exc
        if d.get("format") != KEY_FORMAT:
            raise FormatError("not a hiding-key file")
        if d.get("version") != KEY_VERSION:
            raise FormatError(f"unsupported key version {d.get('version')}")
        try:
            key = cls(
                base_address=d["base_address"],
                replica_size=d["replica_size"],
                replica_count=d["replica_count"],
                rotations=tuple(d["rotations"]),
                payload_length=d["payload_length"],
                stress_count=d["stress_count"],
            )
        except (KeyError, TypeError, ConfigurationError) as exc:
            raise FormatError(f"malformed key file: {exc}") from exc
        if d.get("layout_mode") != key.layout_mode:
            raise FormatError("layout_mode inconsistent with replica_count")
        return key


def generate_key(payload_length: int, base_address: int, replica_size: int,
                 replica_count: int, stress_count: int, rng_seed: int,
                 geometry: ChipGeometry | None = None,
                 profile: CalibrationProfile | None = None) -> HidingKey:
    """Draw a fresh key with uniform i.i.d. per-replica rotations.

    Warns (but does not fail) when the requested stress count sits under
    the profile's separation threshold for the layout's averaging size.
    """
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    rotations = tuple(int(k) for k in rng.integers(0, payload_length, replica_count))
    key = HidingKey(base_address, replica_size, replica_count, rotations,
                    payload_length, stress_count)
    if geometry is None:
        geometry = ChipGeometry()
    if key.base_address + key.footprint > geometry.address_count:
        raise ConfigurationError(
            f"footprint of {key.footprint} addresses at base {base_address} "
            f"does not fit a chip of {geometry.address_count}")
    if profile is not None:
        from .calibration import min_stress_for_separation
        averaging = key.replica_size * key.replica_count
        needed = min_stress_for_separation(profile, averaging,
                                           confidence_samples=2000, seed=rng_seed)
        if stress_count < needed:
            warnings.warn(
                f"stress_count {stress_count} below the ~{needed} pairs needed "
                f"to separate at averaging size {averaging}; expect bit errors",
                UsedCellsWarning)
    return key


class AddressPlan:
    """Deterministic map from payload-bit positions to chip addresses.

    An optional `permutation` hook scatters the logical layout across the
    footprint window before it touches the chip; this is the plug-in point
    for a stream-cipher address scrambler.  It may be a permutation array
    of length `footprint` or a callable producing one, and whoever holds
    the cipher must supply the same permutation to encode and decode.
    """

    def __init__(self, key: HidingKey, geometry: ChipGeometry,
                 permutation=None):
        if key.base_address + key.footprint > geometry.address_count:
            raise ConfigurationError("plan does not fit the chip")
        self.key = key
        base, R, B = key.base_address, key.replica_size, key.payload_length
        # bit_of_position[j] = payload bit stored at logical offset j
        bit_of_position = np.empty(key.footprint, dtype=np.int64)
        for r, k in enumerate(key.rotations):
            row = r * B * R
            for j in range(B):
                bit_of_position[row + j * R: row + (j + 1) * R] = (j + k) % B
        if permutation is not None:
            perm = np.asarray(permutation(key.footprint)
                              if callable(permutation) else permutation,
                              dtype=np.int64)
            if len(perm) != key.footprint or \
                    not np.array_equal(np.sort(perm), np.arange(key.footprint)):
                raise ConfigurationError(
                    "permutation must rearrange exactly the footprint offsets")
            scattered = np.empty_like(bit_of_position)
            scattered[perm] = bit_of_position
            bit_of_position = scattered
        self.addresses = base + np.arange(key.footprint, dtype=np.int64)
        self.bit_of_address = bit_of_position

    def addresses_for_bit(self, bit: int) -> np.ndarray:
        return self.addresses[self.bit_of_address == bit]

    def bit_means(self, times: np.ndarray) -> np.ndarray:
        """Average the measured times of each payload bit's replicas."""
        b = self.key.payload_length
        sums = np.bincount(self.bit_of_address, weights=times, minlength=b)
        counts = np.bincount(self.bit_of_address, minlength=b)
        return sums / counts


def plan_addresses(key: HidingKey, geometry: ChipGeometry,
                   permutation=None) -> AddressPlan:
    return AddressPlan(key, geometry, permutation)


# ---------------------------------------------------------------------------
# encode
# ---------------------------------------------------------------------------

@dataclass
class EncodeReport:
    """What the hiding run cost, in simulated silicon time and wear."""

    simulated_seconds: float    # stress pairs x payload bits x pair time
    chip_busy_seconds: float    # command time actually consumed on the chip
    pairs_applied: int
    cells_stressed: int
    endurance_fraction: float


def encode(chip: ChipModel, key: HidingKey, payload: Payload,
           permutation=None) -> EncodeReport:
    """Imprint `payload` by stressing the cells mapped to its 1-bits.

    All planned addresses are first initialized to the erased pattern; the
    1-bit cells then receive `key.stress_count` set-reset pairs, applied
    buffer-by-buffer.  Cells holding 0-bits keep their wear untouched.
    """
    if len(payload) != key.payload_length:
        raise ConfigurationError(
            f"payload has {len(payload)} bits, key expects {key.payload_length}")
    plan = AddressPlan(key, chip.geometry, permutation)
    prior = chip.stress_pairs[plan.addresses]
    if prior.mean() > 0:
        warnings.warn(
            f"target cells already carry {prior.mean():.1f} mean pairs of wear",
            UsedCellsWarning)
    busy = _init_to_erased(chip, plan.addresses)
    ones = plan.addresses[payload.to_array()[plan.bit_of_address] == 1]
    try:
        busy += chip.apply_stress_pairs(ones, key.stress_count)
    except WearOutError as exc:
        raise EncodeError("cells wore out during encoding",
                          addresses=exc.addresses) from exc
    model_seconds = key.stress_count * key.payload_length * chip.profile.pair_time
    return EncodeReport(
        simulated_seconds=model_seconds,
        chip_busy_seconds=busy,
        pairs_applied=key.stress_count,
        cells_stressed=len(ones),
        endurance_fraction=key.stress_count / chip.profile.endurance_rated,
    )


def _init_to_erased(chip: ChipModel, addresses: np.ndarray) -> float:
    """Write 0xFF to every address, full buffers first, stragglers bytewise."""
    elapsed = 0.0
    size = chip.geometry.buffer_size
    erased = np.full(size, 0xFF, dtype=np.uint8)
    n_full = len(addresses) // size
    for i in range(n_full):
        elapsed += chip.buffered_write(int(addresses[i * size]), erased)
    for a in addresses[n_full * size:]:
        elapsed += chip.timed_write(int(a), 0xFF).seconds
    return elapsed


# ---------------------------------------------------------------------------
# decode
# ---------------------------------------------------------------------------

@dataclass
class DecodeResult:
    """Recovered bits plus the evidence they were cut from."""

    payload: Payload
    bit_means: np.ndarray
    threshold_used: float
    centroids: tuple | None
    confidence: float           # smallest margin between a bit mean and the cut
    ambiguous: bool
    op: str

    def to_hex(self) -> str:
        return self.payload.to_hex()


def decode(chip: ChipModel, key: HidingKey, method: str = "kmeans",
           threshold: float | None = None, reference_addresses=None,
           op: str = "set", permutation=None) -> DecodeResult:
    """Measure the key's footprint and classify each payload bit.

    method is one of "kmeans" (two-cluster split of the bit means),
    "threshold" (explicit cut, pass `threshold`), or "reference" (cut
    derived from spare fresh-equivalent cells, pass `reference_addresses`).
    Set times are used by default; reset times via op="reset".  A
    `permutation` used at encode time must be supplied again here.
    """
    if op not in ("set", "reset"):
        raise ConfigurationError("op must be 'set' or 'reset'")
    plan = AddressPlan(key, chip.geometry, permutation)
    trace = chip.measure_trace(plan.addresses)
    times = trace.set_times if op == "set" else trace.reset_times
    means = plan.bit_means(times)

    ambiguous = False
    centroids = None
    if method == "kmeans":
        labels, (c0, c1) = kmeans2(means)
        centroids = (c0, c1)
        cut = 0.5 * (c0 + c1)
        bits = labels
        ambiguous = _is_ambiguous(means, labels, c0, c1)
        if ambiguous:
            warnings.warn(
                "cluster separation is within the noise floor; decoded bits "
                "are a best guess", AmbiguousDecodeWarning)
    elif method == "threshold":
        if threshold is None:
            raise ConfigurationError("threshold method needs a threshold value")
        cut = float(threshold)
        bits = (means > cut).astype(np.int64)
    elif method == "reference":
        if reference_addresses is None:
            raise ConfigurationError("reference method needs reference addresses")
        ref = chip.measure_trace(np.asarray(reference_addresses, dtype=np.int64))
        ref_mean = float((ref.set_times if op == "set" else ref.reset_times).mean())
        ratio = (chip.profile.mean_time(op, key.stress_count)
                 / chip.profile.mean_time(op, 0))
        cut = 0.5 * (ref_mean + ref_mean * ratio)
        bits = (means > cut).astype(np.int64)
    else:
        raise ConfigurationError(f"unknown decode method {method!r}")

    return DecodeResult(
        payload=Payload(tuple(int(b) for b in bits)),
        bit_means=means,
        threshold_used=cut,
        centroids=centroids,
        confidence=float(np.abs(means - cut).min()),
        ambiguous=ambiguous,
        op=op,
    )


def _is_ambiguous(means, labels, c0, c1) -> bool:
    """Ambiguous when the centroid gap is within the cluster noise."""
    if c1 <= c0:
        return True
    spread = 0.0
    for lab, c in ((0, c0), (1, c1)):
        member = means[labels == lab]
        if len(member) > 1:
            spread += float(member.std())
    if spread == 0.0:
        # Degenerate single-member clusters: fall back to a relative gap test.
        return (c1 - c0) < 0.05 * c0
    return (c1 - c0) < 2.0 * spread


# ---------------------------------------------------------------------------
# two-cluster tools
# ---------------------------------------------------------------------------

def kmeans2(values):
    """Exact two-means clustering of 1-D values.

    In one dimension the optimal two-cluster partition is a cut between
    adjacent sorted values, so the within-cluster sum of squares can be
    minimized exactly: prefix sums give every cut's SS in one vectorized
    pass and the argmin is the clustering Lloyd's iteration is trying to
    reach (Lloyd from min/max seeds can strand boundary points in a local
    optimum, which would break the agreement with threshold decoding).
    Deterministic; ties resolve to the lowest cut.  Returns
    (labels, (c0, c1)) with c0 <= c1; equal centroids signal that all
    values are identical (a single cluster).
    """
    vals = np.asarray(values, dtype=float)
    if len(vals) < 2:
        raise ConfigurationError("kmeans2 needs at least two values")
    sv = np.sort(vals)
    if sv[0] == sv[-1]:
        v = float(sv[0])
        return np.zeros(len(vals), dtype=np.int64), (v, v)
    n = len(sv)
    csum = np.cumsum(sv)
    csq = np.cumsum(sv * sv)
    ks = np.nonzero(sv[1:] > sv[:-1])[0] + 1   # valid cut positions
    left_ss = csq[ks - 1] - csum[ks - 1] ** 2 / ks
    right_n = n - ks
    right_sum = csum[-1] - csum[ks - 1]
    right_ss = (csq[-1] - csq[ks - 1]) - right_sum ** 2 / right_n
    k = int(ks[np.argmin(left_ss + right_ss)])
    cut = 0.5 * (float(sv[k - 1]) + float(sv[k]))
    labels = (vals > cut).astype(np.int64)
    c0 = float(vals[labels == 0].mean())
    c1 = float(vals[labels == 1].mean())
    return labels, (c0, c1)


def best_threshold(values):
    """Exhaustive midpoint sweep minimizing within-cluster sum of squares.

    The brute-force 1-D oracle for two-cluster splits: every midpoint
    between adjacent sorted values is tried.  Returns (threshold, labels).
    """
    vals = np.asarray(values, dtype=float)
    if len(vals) < 2:
        raise ConfigurationError("need at least two values")
    order = np.sort(vals)
    best = (np.inf, order[0])
    for i in range(len(order) - 1):
        if order[i] == order[i + 1]:
            continue
        cut = 0.5 * (order[i] + order[i + 1])
        low, high = vals[vals <= cut], vals[vals > cut]
        ss = float(((low - low.mean()) ** 2).sum() + ((high - high.mean()) ** 2).sum())
        if ss < best[0]:
            best = (ss, cut)
    cut = best[1]
    return cut, (vals > cut).astype(np.int64)


# ---------------------------------------------------------------------------
# repetition code
# ---------------------------------------------------------------------------

def apply_ecc(payload: Payload, k: int) -> Payload:
    """Repeat every bit k times (k odd); k = 1 is the identity."""
    _check_repetition(k)
    return Payload(tuple(b for b in payload.bits for _ in range(k)))


def strip_ecc(payload: Payload, k: int) -> Payload:
    """Majority-vote each k-bit group back to one bit."""
    _check_repetition(k)
    if len(payload) % k:
        raise ConfigurationError("encoded length is not a multiple of k")
    bits = payload.to_array().reshape(-1, k)
    return Payload(tuple(int(v) for v in (bits.sum(axis=1) * 2 > k)))


def _check_repetition(k: int):
    if k < 1 or k % 2 == 0:
        raise ConfigurationError("repetition factor must be odd and >= 1")


def save_key(key: HidingKey, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(key.to_json())
        fh.write("\n")


def load_key(path) -> HidingKey:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return HidingKey.from_json(fh.read())
    except OSError as exc:
        raise FormatError(f"cannot read key file: {exc}") from exc
