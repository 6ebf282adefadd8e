"""Psychoacoustic thresholds, the audible-leakage criterion, and the
parametric shield/enhancement model.

The transmitter's acoustic shield is modeled parametrically: one
attenuation curve per radiation direction (front/side/back) over the
audible stopband plus a flat gain inside the ultrasonic carrier band.
The shipped default profile is synthetic and constraint-satisfying (a
60 dB source tone anywhere in 100-4000 Hz lands below the leakage
threshold in every direction) - it is a model, not a measurement.
Free-field propagation loss is included for range calculations.
"""

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .signals import Waveform, band_spectrum

DIRECTIONS = ("front", "side", "back")

#: Leakage ceiling sits this far below the absolute threshold of hearing.
LEAKAGE_MARGIN_DB = 5.0

#: Default atmospheric absorption near 40 kHz (typical 20 C / 50 % RH).
DEFAULT_AIR_ALPHA_DB_PER_M = 1.3

_HEARING_F_MIN_HZ = 100.0
_HEARING_F_MAX_HZ = 20_000.0


@dataclass(frozen=True)
class ThresholdCurve:
    """Frequency -> dB map with log-frequency, linear-dB interpolation.

    ``points`` are (frequency_hz, value_db) knots with strictly increasing
    positive frequencies.  Evaluation is defined on the knot span only.
    """

    points: tuple

    def __post_init__(self):
        pts = tuple((float(f), float(v)) for f, v in self.points)
        if len(pts) < 2:
            raise ValueError("curve needs at least two knots")
        freqs = [f for f, _ in pts]
        if any(f <= 0 for f in freqs):
            raise ValueError("knot frequencies must be positive")
        if any(b <= a for a, b in zip(freqs, freqs[1:])):
            raise ValueError("knot frequencies must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @property
    def f_min(self) -> float:
        return self.points[0][0]

    @property
    def f_max(self) -> float:
        return self.points[-1][0]

    def evaluate(self, f: float) -> float:
        if not self.f_min <= f <= self.f_max:
            raise ValueError(f"{f:g} Hz outside curve span [{self.f_min:g}, {self.f_max:g}]")
        log_f = [math.log10(p[0]) for p in self.points]
        vals = [p[1] for p in self.points]
        return float(np.interp(math.log10(f), log_f, vals))

    def scaled(self, factor: float) -> "ThresholdCurve":
        return ThresholdCurve(tuple((f, v * factor) for f, v in self.points))


def load_curve_csv(path) -> ThresholdCurve:
    """Load a curve from CSV with header ``freq_hz,value_db``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["freq_hz", "value_db"]:
            raise ValueError(f"{path}: expected header 'freq_hz,value_db', got {header}")
        points = []
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"{path}:{i}: expected two columns")
            points.append((float(row[0]), float(row[1])))
    return ThresholdCurve(tuple(points))


def save_curve_csv(path, curve: ThresholdCurve) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["freq_hz", "value_db"])
        for f, v in curve.points:
            writer.writerow([f"{f:g}", f"{v:g}"])


def hearing_threshold(f: float, curve: ThresholdCurve | None = None) -> float:
    """Absolute threshold of hearing in dB SPL at frequency ``f``.

    Defaults to Terhardt's analytic approximation of the threshold in
    quiet; pass ``curve`` to substitute a measured curve loaded from file.
    Domain is 100-20000 Hz.
    """
    if not _HEARING_F_MIN_HZ <= f <= _HEARING_F_MAX_HZ:
        raise ValueError(f"frequency {f:g} Hz outside [{_HEARING_F_MIN_HZ:g}, {_HEARING_F_MAX_HZ:g}]")
    if curve is not None:
        return curve.evaluate(f)
    khz = f / 1000.0
    return (3.64 * khz ** -0.8
            - 6.5 * math.exp(-0.6 * (khz - 3.3) ** 2)
            + 1e-3 * khz ** 4)


def leakage_threshold(f: float, curve: ThresholdCurve | None = None) -> float:
    """Per-frequency ceiling for emitted audible energy: hearing threshold
    minus exactly ``LEAKAGE_MARGIN_DB``."""
    return hearing_threshold(f, curve) - LEAKAGE_MARGIN_DB


@dataclass(frozen=True)
class ShieldGeometry:
    """Geometry of the modeled shield, echoed in reports (all lengths mm)."""

    opening_diameter_mm: float = 22.5
    outer_diameter_mm: float = 100.0
    spiral_pitch_mm: float = 34.542
    opening_height_mm: float = 3.0
    opening_angle_deg: float = 68.7
    wall_thickness_mm: float = 2.0
    absorber_thickness_mm: float = 40.0
    side_wall_length_mm: float = 17.5
    body_length_mm: float = 109.5
    source_gap_mm: float = 18.0
    total_length_mm: float = 127.5
    array_footprint_mm: tuple = (120.0, 14.0)  # nominal transducer module size

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["array_footprint_mm"] = list(self.array_footprint_mm)
        return d


@dataclass(frozen=True)
class InsertionLossProfile:
    """Directional attenuation curves plus a carrier-band gain.

    ``direction_profiles`` maps each of front/side/back to a positive
    attenuation curve over the audible stopband.  ``passband_gain_db``
    applies only inside ``carrier_band`` and only for the front direction;
    outside both regions the profile is transparent (0 dB).
    """

    direction_profiles: dict
    passband_gain_db: float = 11.0
    carrier_band: tuple = (36_000.0, 44_400.0)
    geometry: ShieldGeometry | None = None
    name: str = "profile"

    def __post_init__(self):
        missing = set(DIRECTIONS) - set(self.direction_profiles)
        if missing:
            raise ValueError(f"profile missing directions: {sorted(missing)}")
        for direction, curve in self.direction_profiles.items():
            if direction not in DIRECTIONS:
                raise ValueError(f"unknown direction {direction!r}")
            if any(v < 0 for _, v in curve.points):
                raise ValueError(f"{direction} attenuation must be >= 0 dB everywhere")
        lo, hi = self.carrier_band
        if not 0 < lo < hi:
            raise ValueError(f"bad carrier band {self.carrier_band}")

    def attenuation_db(self, direction: str, f: float) -> float:
        """Stopband attenuation at ``f`` (0 outside the curve's knot span)."""
        curve = self._curve(direction)
        if curve.f_min <= f <= curve.f_max:
            return curve.evaluate(f)
        return 0.0

    def gain_db(self, direction: str, f: float) -> float:
        lo, hi = self.carrier_band
        if direction == "front" and lo <= f <= hi:
            return self.passband_gain_db
        return 0.0

    def level_shift_db(self, direction: str, f: float) -> float:
        """Net dB change applied to a band centered at ``f``."""
        return self.gain_db(direction, f) - self.attenuation_db(direction, f)

    def scaled_attenuation(self, factor: float) -> "InsertionLossProfile":
        """New profile with every attenuation value multiplied by ``factor``."""
        scaled = {d: c.scaled(factor) for d, c in self.direction_profiles.items()}
        return replace(self, direction_profiles=scaled,
                       name=f"{self.name}*{factor:g}")

    def _curve(self, direction: str) -> ThresholdCurve:
        try:
            return self.direction_profiles[direction]
        except KeyError:
            raise ValueError(f"unknown direction {direction!r}; expected one of {DIRECTIONS}") from None


# Synthetic default attenuation knots (dB).  Chosen so a 60 dB tone at any
# third-octave center in 100-4000 Hz lands below the leakage threshold for
# every direction, with a few dB of margin; see default-profile tests.
_FRONT_KNOTS = ((100.0, 48.0), (200.0, 56.0), (400.0, 62.0), (800.0, 66.0),
                (1600.0, 70.0), (2500.0, 73.0), (3150.0, 75.0), (4000.0, 75.0))


def default_insertion_loss() -> InsertionLossProfile:
    """Shipped shield model: front/side/back attenuation plus +11 dB
    carrier-band enhancement on the front axis."""
    front = ThresholdCurve(_FRONT_KNOTS)
    side = ThresholdCurve(tuple((f, v - 2.0) for f, v in front.points))
    back = ThresholdCurve(tuple((f, v - 1.5) for f, v in front.points))
    return InsertionLossProfile(
        direction_profiles={"front": front, "side": side, "back": back},
        passband_gain_db=11.0,
        carrier_band=(36_000.0, 44_400.0),
        geometry=ShieldGeometry(),
        name="default",
    )


def third_octave_bands(f_min: float = 100.0, f_max: float = 4000.0) -> list[tuple[float, float]]:
    """Base-10 third-octave bands whose centers cover [f_min, f_max]."""
    if not 0 < f_min < f_max:
        raise ValueError("need 0 < f_min < f_max")
    n_lo = math.ceil(10 * math.log10(f_min / 1000.0) - 1e-9)
    n_hi = math.floor(10 * math.log10(f_max / 1000.0) + 1e-9)
    if n_hi < n_lo:
        raise ValueError("no third-octave centers inside range")
    edge = 10.0 ** (1.0 / 20.0)
    bands = []
    for n in range(n_lo, n_hi + 1):
        center = 1000.0 * 10.0 ** (n / 10.0)
        bands.append((center / edge, center * edge))
    return bands


def band_center(band: tuple[float, float]) -> float:
    return math.sqrt(band[0] * band[1])


def apply_insertion_loss(band_levels, profile: InsertionLossProfile,
                         direction: str) -> list[tuple[tuple[float, float], float]]:
    """Apply the directional shield response to banded levels.

    Each ``((f_lo, f_hi), level_db)`` entry is shifted by the profile's
    interpolated attenuation at the band's geometric center; bands inside
    the carrier band additionally receive the passband gain when
    ``direction == "front"``.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"unknown direction {direction!r}; expected one of {DIRECTIONS}")
    out = []
    for band, level in band_levels:
        fc = band_center(band)
        out.append((tuple(band), level + profile.level_shift_db(direction, fc)))
    return out


@dataclass(frozen=True)
class BandResult:
    f_lo_hz: float
    f_hi_hz: float
    f_center_hz: float
    source_db_spl: float
    emitted_db_spl: float
    threshold_db_spl: float
    margin_db: float  # emitted - threshold; positive means a violation
    passed: bool


@dataclass(frozen=True)
class LeakageReport:
    """Per-direction, per-band audit of emitted audible energy."""

    directions: dict  # direction -> list[BandResult]
    passed: bool
    source_spl_ref: float
    profile_name: str
    geometry: dict | None

    def to_dict(self) -> dict:
        return {
            "schema": "leakage-report/1",
            "passed": self.passed,
            "source_full_scale_db_spl": self.source_spl_ref,
            "profile": self.profile_name,
            "geometry_mm": self.geometry,
            "directions": {
                direction: [
                    {
                        "f_lo_hz": round(b.f_lo_hz, 3),
                        "f_hi_hz": round(b.f_hi_hz, 3),
                        "f_center_hz": round(b.f_center_hz, 3),
                        "source_db_spl": round(b.source_db_spl, 3),
                        "emitted_db_spl": round(b.emitted_db_spl, 3),
                        "threshold_db_spl": round(b.threshold_db_spl, 3),
                        "margin_db": round(b.margin_db, 3),
                        "passed": b.passed,
                    }
                    for b in results
                ]
                for direction, results in self.directions.items()
            },
        }


def leakage_report(waveform: Waveform, profile: InsertionLossProfile,
                   source_spl_ref: float = 94.0,
                   directions=DIRECTIONS,
                   curve: ThresholdCurve | None = None) -> LeakageReport:
    """Audit a source waveform's audible leakage against the threshold.

    The waveform's third-octave band levels over 100-4000 Hz (referenced
    to ``source_spl_ref`` for a full-scale sine) are passed through the
    shield profile per direction and compared with the leakage threshold
    at each band center.  The report passes iff every band in every
    requested direction stays at or below the threshold.
    """
    directions = tuple(directions)
    for d in directions:
        if d not in DIRECTIONS:
            raise ValueError(f"unknown direction {d!r}; expected subset of {DIRECTIONS}")
    if not directions:
        raise ValueError("at least one direction required")
    bands = third_octave_bands()
    source_levels = band_spectrum(waveform, bands, full_scale_db_spl=source_spl_ref)
    per_direction = {}
    all_passed = True
    for direction in directions:
        shifted = apply_insertion_loss(list(zip(bands, source_levels)), profile, direction)
        results = []
        for (band, emitted), source in zip(shifted, source_levels):
            fc = band_center(band)
            limit = leakage_threshold(fc, curve)
            margin = emitted - limit
            ok = margin <= 0.0
            all_passed &= ok
            results.append(BandResult(band[0], band[1], fc, source, emitted, limit, margin, ok))
        per_direction[direction] = results
    return LeakageReport(
        directions=per_direction,
        passed=all_passed,
        source_spl_ref=source_spl_ref,
        profile_name=profile.name,
        geometry=profile.geometry.to_dict() if profile.geometry else None,
    )


def propagate_spl(spl0: float, r0: float, r: float,
                  alpha_db_per_m: float = DEFAULT_AIR_ALPHA_DB_PER_M) -> float:
    """Free-field level at range ``r`` given ``spl0`` at reference ``r0``.

    Spherical spreading (20 log10) plus linear atmospheric absorption:
    ``spl0 - 20*log10(r/r0) - alpha*(r - r0)``.
    """
    if r0 <= 0:
        raise ValueError(f"r0 must be > 0, got {r0:g}")
    if r < r0:
        raise ValueError(f"r ({r:g} m) must be >= r0 ({r0:g} m)")
    if alpha_db_per_m < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha_db_per_m:g}")
    return spl0 - 20.0 * math.log10(r / r0) - alpha_db_per_m * (r - r0)


def load_profile_dir(path) -> InsertionLossProfile:
    """Load a profile from a directory: ``front.csv``/``side.csv``/``back.csv``
    plus optional ``profile.json`` with ``passband_gain_db`` and
    ``carrier_band_hz``."""
    import json
    from pathlib import Path

    base = Path(path)
    curves = {}
    for direction in DIRECTIONS:
        f = base / f"{direction}.csv"
        if not f.exists():
            raise ValueError(f"profile directory missing {f.name}")
        curves[direction] = load_curve_csv(f)
    gain, band = 11.0, (36_000.0, 44_400.0)
    meta = base / "profile.json"
    if meta.exists():
        data = json.loads(meta.read_text())
        unknown = set(data) - {"passband_gain_db", "carrier_band_hz", "name"}
        if unknown:
            raise ValueError(f"{meta}: unknown keys {sorted(unknown)}")
        gain = float(data.get("passband_gain_db", gain))
        band = tuple(data.get("carrier_band_hz", band))
    return InsertionLossProfile(direction_profiles=curves, passband_gain_db=gain,
                                carrier_band=band, name=base.name)


def save_profile_dir(path, profile: InsertionLossProfile) -> None:
    import json
    from pathlib import Path

    base = Path(path)
    base.mkdir(parents=True, exist_ok=True)
    for direction in DIRECTIONS:
        save_curve_csv(base / f"{direction}.csv", profile.direction_profiles[direction])
    (base / "profile.json").write_text(json.dumps({
        "passband_gain_db": profile.passband_gain_db,
        "carrier_band_hz": list(profile.carrier_band),
        "name": profile.name,
    }, indent=2, sort_keys=True) + "\n")
