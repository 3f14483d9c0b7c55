"""Geometric-level synthesis of noisy positioning measurements.

Time-type values (TOF, TDOA, RTT) are in seconds, angles in radians and
RSS in dBm.  NLOS links get a nonnegative excess range drawn from an
exponential distribution and a negative elevation bias.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .constants import SPEED_OF_LIGHT
from .errors import ConfigError, GeometryError
from .geometry import BasePose, local_angles, true_geometry, wrap_angle

TIME_KINDS = ("TOF", "TDOA", "RTT")
ANGLE_KINDS = ("AOA_AZ", "AOA_EL", "AOD_AZ", "AOD_EL")
KINDS = TIME_KINDS + ANGLE_KINDS + ("RSS",)

# sigma_TDOA (m) per numerology measured on the static outdoor LOS replica
CALIBRATED_TDOA_STD_M = {0: 5.99, 1: 0.98, 2: 0.58, 3: 0.30}


def calibrated_sigma_tof(mu: int) -> float:
    """Per-link TOF standard deviation (s) whose TDOA spread matches the calibration table."""
    try:
        return CALIBRATED_TDOA_STD_M[mu] / np.sqrt(2.0) / SPEED_OF_LIGHT
    except KeyError:
        raise ConfigError(f"no TOF calibration for mu={mu}") from None


@dataclass
class NoiseModel:
    sigma_tof: float = 0.98 / np.sqrt(2.0) / SPEED_OF_LIGHT
    sigma_az: float = float(np.radians(2.64))
    sigma_el: float = float(np.radians(1.55))
    sigma_rss: float = 4.0
    nlos_excess_mean: float = 5.0  # meters
    nlos_el_bias_sigma: float = float(np.radians(3.0))
    nlos_az_sigma: float = float(np.radians(30.0))
    p0_dbm: float = -40.0
    d0: float = 1.0
    alpha: float = 2.0

    def __post_init__(self):
        for name in ("sigma_tof", "sigma_az", "sigma_el", "sigma_rss", "nlos_excess_mean",
                     "nlos_el_bias_sigma", "nlos_az_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.alpha <= 0 or self.d0 <= 0:
            raise ConfigError("path-loss exponent and reference distance must be positive")

    @classmethod
    def calibrated(cls, mu: int, **kw) -> "NoiseModel":
        return cls(sigma_tof=calibrated_sigma_tof(mu), **kw)

    def scaled(self, factor: float) -> "NoiseModel":
        """Copy with every Gaussian sigma multiplied by ``factor``."""
        d = asdict(self)
        for k in ("sigma_tof", "sigma_az", "sigma_el", "sigma_rss"):
            d[k] *= factor
        return NoiseModel(**d)


_SIGMA_FLOOR = 1e-15


@dataclass
class Measurement:
    kind: str
    value: float
    sigma: float
    bs_id: int
    ref_bs_id: int | None = None
    los: bool = True
    reply_time: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown measurement kind {self.kind!r}")
        if not self.sigma > 0:
            raise ConfigError(f"measurement sigma must be > 0, got {self.sigma}")
        if self.kind == "TDOA" and (self.ref_bs_id is None or self.ref_bs_id == self.bs_id):
            raise ConfigError("TDOA needs two distinct base stations")


@dataclass
class MeasurementSet:
    epoch: float
    measurements: list[Measurement] = field(default_factory=list)
    truth: np.ndarray | None = None

    def __post_init__(self):
        pairs = [(m.ref_bs_id, m.bs_id) for m in self.measurements if m.kind == "TDOA"]
        if len(pairs) != len(set(pairs)):
            raise ConfigError("duplicate TDOA pair in one epoch")

    def __len__(self):
        return len(self.measurements)

    def __iter__(self):
        return iter(self.measurements)

    def select(self, kinds: Iterable[str] | None = None, los_only: bool = False) -> "MeasurementSet":
        kinds = None if kinds is None else set(kinds)
        kept = [
            m for m in self.measurements
            if (kinds is None or m.kind in kinds) and (m.los or not los_only)
        ]
        return MeasurementSet(self.epoch, kept, self.truth)

    def to_json(self) -> str:
        rec = {
            "epoch": self.epoch,
            "truth": None if self.truth is None else [float(v) for v in self.truth],
            "measurements": [asdict(m) for m in self.measurements],
        }
        return json.dumps(rec, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "MeasurementSet":
        rec = json.loads(line)
        truth = rec.get("truth")
        return cls(
            float(rec["epoch"]),
            [Measurement(**m) for m in rec["measurements"]],
            None if truth is None else np.asarray(truth, dtype=float),
        )


def write_jsonl(path, sets: Iterable[MeasurementSet]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sets:
            fh.write(s.to_json() + "\n")


def read_jsonl(path) -> list[MeasurementSet]:
    with open(path, encoding="utf-8") as fh:
        return [MeasurementSet.from_json(line) for line in fh if line.strip()]


def _gauss(rng, sigma):
    if sigma == 0 or rng is None:
        return 0.0
    return float(rng.normal(0.0, sigma))


def nlos_excess(noise: NoiseModel, rng) -> float:
    """Nonnegative NLOS excess range in meters."""
    if noise.nlos_excess_mean == 0 or rng is None:
        return noise.nlos_excess_mean
    return float(rng.exponential(noise.nlos_excess_mean))


def gen_tof(u, pose: BasePose, noise: NoiseModel, los: bool = True, rng=None,
            excess: float | None = None) -> Measurement:
    """One-way time of flight from ``pose`` to ``u``.

    ``excess`` overrides the random NLOS excess range (meters).
    """
    d = true_geometry(u, pose).distance
    value = d / SPEED_OF_LIGHT + _gauss(rng, noise.sigma_tof)
    if not los:
        extra = nlos_excess(noise, rng) if excess is None else float(excess)
        value += extra / SPEED_OF_LIGHT
    return Measurement("TOF", value, max(noise.sigma_tof, _SIGMA_FLOOR), pose.bs_id, los=los)


def select_reference_bs(quality: Sequence[float] | dict, ids: Sequence[int] | None = None) -> int:
    """Id of the base station with the best quality metric (SNR or RSRP).

    ``quality`` is a mapping id -> metric or a sequence (ids default to
    1..N).  Ties go to the lowest id.
    """
    if isinstance(quality, dict):
        ids, values = list(quality.keys()), list(quality.values())
    else:
        values = list(quality)
        ids = list(ids) if ids is not None else list(range(1, len(values) + 1))
    if len(values) < 2 or len(ids) != len(values):
        raise ConfigError("reference selection needs at least two base stations")
    best = max(values)
    return min(i for i, v in zip(ids, values) if v == best)


def gen_tdoa_set(u, poses: Sequence[BasePose], noise: NoiseModel, reference: int,
                 los: dict | None = None, rng=None) -> list[Measurement]:
    """TDOA of every base station against ``reference`` (one TOF draw per link).

    The reference TOF (and its noise) is shared by all entries, as a receiver
    measures it once.  Each entry therefore has variance 2*sigma_TOF^2.
    """
    if len(poses) < 2:
        raise ConfigError("TDOA needs at least two base stations")
    ids = [p.bs_id for p in poses]
    if reference not in ids:
        raise ConfigError(f"reference BS {reference} not in {ids}")
    los = los or {}
    tofs = {p.bs_id: gen_tof(u, p, noise, los.get(p.bs_id, True), rng) for p in poses}
    ref = tofs[reference]
    sigma = max(np.sqrt(2.0) * noise.sigma_tof, _SIGMA_FLOOR)
    out = []
    for p in poses:
        if p.bs_id == reference:
            continue
        t = tofs[p.bs_id]
        out.append(
            Measurement("TDOA", t.value - ref.value, sigma, p.bs_id, reference, los=t.los and ref.los)
        )
    return out


def gen_rtt(u, pose: BasePose, noise: NoiseModel, reply_time: float = 0.0, los: bool = True,
            rng=None) -> Measurement:
    """Round-trip time 2d/c + reply time, with an independent noise draw on each leg."""
    if reply_time < 0:
        raise ConfigError("reply time must be >= 0")
    d = true_geometry(u, pose).distance
    value = 2 * d / SPEED_OF_LIGHT + reply_time + _gauss(rng, noise.sigma_tof) + _gauss(rng, noise.sigma_tof)
    if not los:
        value += 2 * nlos_excess(noise, rng) / SPEED_OF_LIGHT
    sigma = max(np.sqrt(2.0) * noise.sigma_tof, _SIGMA_FLOOR)
    return Measurement("RTT", value, sigma, pose.bs_id, los=los, reply_time=reply_time)


def tof_from_rtt(m: Measurement) -> float:
    """One-way time of flight assuming the reply time is known exactly."""
    return (m.value - m.reply_time) / 2.0


def _angle_pair(u, pose, noise, los, rng, kinds):
    az, el = local_angles(u, pose)
    az += _gauss(rng, noise.sigma_az)
    el += _gauss(rng, noise.sigma_el)
    if not los:
        az += _gauss(rng, noise.nlos_az_sigma)
        el -= abs(_gauss(rng, noise.nlos_el_bias_sigma))
    return (
        Measurement(kinds[0], wrap_angle(az), max(noise.sigma_az, _SIGMA_FLOOR), pose.bs_id, los=los),
        Measurement(kinds[1], wrap_angle(el), max(noise.sigma_el, _SIGMA_FLOOR), pose.bs_id, los=los),
    )


def gen_aoa(u, pose: BasePose, noise: NoiseModel, los: bool = True, rng=None):
    """Azimuth and elevation of arrival in the array frame of ``pose``."""
    return _angle_pair(u, pose, noise, los, rng, ("AOA_AZ", "AOA_EL"))


def gen_aod(u, pose: BasePose, noise: NoiseModel, los: bool = True, rng=None):
    """Angles of departure; same geometric model as the AOA."""
    return _angle_pair(u, pose, noise, los, rng, ("AOD_AZ", "AOD_EL"))


def gen_rss(u, pose: BasePose, noise: NoiseModel, rng=None) -> Measurement:
    """Log-distance path-loss power plus Gaussian shadowing, dBm."""
    d = true_geometry(u, pose).distance
    if d <= 0:
        raise GeometryError("RSS needs d > 0")
    value = noise.p0_dbm - 10 * noise.alpha * np.log10(d / noise.d0) + _gauss(rng, noise.sigma_rss)
    return Measurement("RSS", float(value), max(noise.sigma_rss, _SIGMA_FLOOR), pose.bs_id)


def link_quality_db(u, pose: BasePose, los: bool, carrier_ghz: float = 3.5,
                    nlos_penalty_db: float = 20.0) -> float:
    """Free-space received power (dBm) used to rank links for reference selection."""
    d = true_geometry(u, pose).distance
    lam = SPEED_OF_LIGHT / (carrier_ghz * 1e9)
    fspl = 20 * np.log10(4 * np.pi * d / lam)
    return pose.tx_power_dbm - fspl - (0.0 if los else nlos_penalty_db)


def derive_rng(master_seed: int, run_index: int) -> np.random.Generator:
    """Independent, reproducible stream for one Monte-Carlo run."""
    return np.random.default_rng([int(master_seed), int(run_index)])
