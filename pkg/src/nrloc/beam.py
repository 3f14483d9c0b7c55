"""Beam management: SSB wide-beam sweep (P1) and PRS fine-beam refinement (P2).

The refined beam center is reported as the DL angle of departure.  Two
evaluation modes exist:

* ``fast``: per-beam RSRP from a separable array-factor pattern evaluated on
  the angular offset between each path and the beam center.
* ``waveform``: RE-level simulation with true URA steering-vector weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import BOLTZMANN
from .errors import AcquisitionError, ConfigError
from .geometry import BasePose, wrap_angle
from .grid5g import numerology_params, ssb_count
from .linklevel import TapChannel, complex_noise, noise_temperature, steering_vector
from .measurements import Measurement

MAX_PRS_BEAMS = 12


@dataclass(frozen=True)
class BeamBook:
    """Sector spans (rad) and beam counts of the two sweep stages.

    Args:
        sector_az: Azimuth span A_phi of the sector.
        sector_el: Elevation span A_psi of the sector.
        n_ssb_az: SSB (wide) beams across azimuth.
        n_ssb_el: SSB beams across elevation.
        n_prs_az: PRS (fine) beams per SSB beam across azimuth.
        n_prs_el: PRS beams per SSB beam across elevation.
        center_az: Sector center azimuth in the array frame.
        center_el: Sector center elevation in the array frame.
    """

    sector_az: float = float(np.radians(120.0))
    sector_el: float = float(np.radians(30.0))
    n_ssb_az: int = 8
    n_ssb_el: int = 1
    n_prs_az: int = 12
    n_prs_el: int = 1
    center_az: float = 0.0
    center_el: float = 0.0

    def __post_init__(self):
        if self.sector_az <= 0 or self.sector_el <= 0:
            raise ConfigError("sector spans must be > 0")
        if min(self.n_ssb_az, self.n_ssb_el, self.n_prs_az, self.n_prs_el) < 1:
            raise ConfigError("beam counts must be >= 1")
        if self.n_prs_az * self.n_prs_el > MAX_PRS_BEAMS:
            raise ConfigError(f"at most {MAX_PRS_BEAMS} PRS beams per sweep")

    def validate(self, carrier_ghz: float) -> "BeamBook":
        """Check the SSB beam count against the number of SSBs at ``carrier_ghz``."""
        limit = ssb_count(carrier_ghz)
        if self.n_ssb_az * self.n_ssb_el > limit:
            raise ConfigError(f"{self.n_ssb_az * self.n_ssb_el} SSB beams exceed {limit} SSBs at {carrier_ghz} GHz")
        return self

    @property
    def ssb_res_az(self) -> float:
        return self.sector_az / self.n_ssb_az

    @property
    def ssb_res_el(self) -> float:
        return self.sector_el / self.n_ssb_el

    @property
    def prs_res_az(self) -> float:
        return self.ssb_res_az / self.n_prs_az

    @property
    def prs_res_el(self) -> float:
        return self.ssb_res_el / self.n_prs_el

    @staticmethod
    def _tile(center, span, n):
        return center + (np.arange(n) + 0.5 - n / 2) * (span / n)

    def ssb_centers(self) -> np.ndarray:
        """(N_az*N_el, 2) beam centers, azimuth fastest."""
        az = self._tile(self.center_az, self.sector_az, self.n_ssb_az)
        el = self._tile(self.center_el, self.sector_el, self.n_ssb_el)
        ee, aa = np.meshgrid(el, az, indexing="ij")
        return np.stack([aa.ravel(), ee.ravel()], axis=1)

    def prs_centers(self, ssb_center) -> np.ndarray:
        """Fine beams tiling the footprint of one SSB beam."""
        az = self._tile(ssb_center[0], self.ssb_res_az, self.n_prs_az)
        el = self._tile(ssb_center[1], self.ssb_res_el, self.n_prs_el)
        ee, aa = np.meshgrid(el, az, indexing="ij")
        return np.stack([aa.ravel(), ee.ravel()], axis=1)


@dataclass(frozen=True)
class BeamNoise:
    """Receiver noise for RSRP measurement.

    Args:
        power_per_re: Noise power per resource element (W).
        n_re: Resource elements averaged into one RSRP value.
        threshold_db: Minimum per-RE SNR for a beam to count as detected.
    """

    power_per_re: float
    n_re: int = 3264
    threshold_db: float = -10.0

    @classmethod
    def thermal(cls, mu: int, nf_db: float, t_ant: float = 298.0, **kw) -> "BeamNoise":
        scs = numerology_params(mu).scs_hz
        return cls(BOLTZMANN * scs * noise_temperature(nf_db, t_ant), **kw)


@dataclass
class SweepResult:
    rsrp_dbm: np.ndarray
    centers: np.ndarray
    selected: int
    detected: np.ndarray

    @property
    def aod(self) -> tuple[float, float]:
        az, el = self.centers[self.selected]
        return float(az), float(el)


def dirichlet(delta, n: int) -> np.ndarray:
    """Normalized amplitude pattern of an n-element lambda/2 line steered to offset 0."""
    psi = 0.5 * np.pi * np.sin(np.asarray(delta, float))
    num = np.sin(n * psi)
    den = n * np.sin(psi)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(np.abs(den) < 1e-12, 1.0, num / np.where(den == 0, 1, den))
    return np.abs(out)


def beam_gain(centers: np.ndarray, az, el, array_shape) -> np.ndarray:
    """Power gain of each beam toward local (az, el), separable approximation.

    Peak gain equals the element count M*N.
    """
    m, n = array_shape
    d_az = wrap_angle(np.asarray(az)[None] - centers[:, :1])
    d_el = np.asarray(el)[None] - centers[:, 1:2]
    return (m * n) * (dirichlet(d_az, n) * dirichlet(d_el, m)) ** 2


def _local_aods(pose: BasePose, channel: TapChannel):
    yaw, roll = pose.orientation.yaw, pose.orientation.roll
    az = np.array([wrap_angle(p.aod[0] - yaw) for p in channel.paths])
    el = np.array([wrap_angle(p.aod[1] - roll) for p in channel.paths])
    return az, el


def _tx_power_w(pose: BasePose) -> float:
    return 10 ** ((pose.tx_power_dbm - 30) / 10)


def _signal_power_fast(pose, channel, centers):
    if not channel.paths:
        return np.zeros(len(centers))
    az, el = _local_aods(pose, channel)
    g2 = np.array([abs(p.gain) ** 2 for p in channel.paths])
    return _tx_power_w(pose) * (beam_gain(centers, az, el, pose.array_shape) @ g2)


def _rsrp_waveform(pose, channel, centers, wavelength, noise, rng, mu, n_subcarriers):
    """Per-RE received symbols on the beam-weighted channel; returns linear RSRP (W)."""
    n_re = noise.n_re if noise is not None else 1200
    scs = numerology_params(mu).scs_hz
    freqs = np.arange(n_re) * scs
    out = np.zeros(len(centers))
    if not channel.paths:
        h_paths = np.zeros((0, n_re), complex)
        a = np.zeros((pose.array_shape[0] * pose.array_shape[1], 0), complex)
    else:
        az, el = _local_aods(pose, channel)
        a = steering_vector(pose.array_shape, wavelength, az, el)  # (E, P)
        h_paths = np.array([p.gain * np.exp(-2j * np.pi * freqs * p.delay) for p in channel.paths])
    w = steering_vector(pose.array_shape, wavelength, centers[:, 0], centers[:, 1])  # (E, B)
    amp = np.sqrt(_tx_power_w(pose) / n_subcarriers)
    for b in range(len(centers)):
        # transmit beamforming: array response to the path times the beam weights
        af = (a.T @ w[:, b].conj()) / np.sqrt(w.shape[0]) if a.shape[1] else np.zeros(0)
        y = amp * (af @ h_paths) if len(af) else np.zeros(n_re, complex)
        if noise is not None and noise.power_per_re > 0 and rng is not None:
            y = y + complex_noise(n_re, noise.power_per_re, rng)
        out[b] = np.mean(np.abs(y) ** 2)
    return out


def sweep(pose: BasePose, channel: TapChannel, centers: np.ndarray, noise: BeamNoise | None = None,
          rng=None, mode: str = "fast", wavelength: float | None = None, mu: int = 1,
          n_subcarriers: int = 3264) -> SweepResult:
    """Measure RSRP on every beam and select the strongest (ties to the lowest index).

    The transmit power is spread evenly over ``n_subcarriers``.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if len(centers) < 1:
        raise ConfigError("sweep needs at least one beam")
    if mode == "fast":
        s = _signal_power_fast(pose, channel, centers) / n_subcarriers
        if noise is not None and noise.power_per_re > 0 and rng is not None:
            # mean of |sqrt(S) + n|^2 over n_re noisy REs: scaled noncentral chi-square
            k = noise.n_re
            n0 = noise.power_per_re
            p = n0 / (2 * k) * rng.noncentral_chisquare(2 * k, 2 * k * s / n0)
        else:
            p = s
    elif mode == "waveform":
        if wavelength is None:
            raise ConfigError("waveform mode needs the carrier wavelength")
        p = _rsrp_waveform(pose, channel, centers, wavelength, noise, rng, mu, n_subcarriers)
    else:
        raise ConfigError(f"unknown sweep mode {mode!r}")
    if noise is not None and noise.power_per_re > 0:
        floor = noise.power_per_re
        detected = (p - floor) > floor * 10 ** (noise.threshold_db / 10)
    else:
        detected = p > 0
    with np.errstate(divide="ignore"):
        rsrp = 10 * np.log10(p) + 30
    if not detected.any():
        raise AcquisitionError("no beam above the detection threshold")
    masked = np.where(detected, rsrp, -np.inf)
    return SweepResult(rsrp, centers, int(np.argmax(masked)), detected)


def p1_acquire(pose: BasePose, channel: TapChannel, book: BeamBook, noise: BeamNoise | None = None,
               rng=None, mode: str = "fast", wavelength: float | None = None, mu: int = 1) -> SweepResult:
    """SSB sweep over the wide beams of the sector."""
    return sweep(pose, channel, book.ssb_centers(), noise, rng, mode, wavelength, mu)


def p2_sweep(p1: SweepResult, pose: BasePose, channel: TapChannel, book: BeamBook,
             noise: BeamNoise | None = None, rng=None, mode: str = "fast", wavelength: float | None = None,
             mu: int = 1) -> SweepResult:
    """PRS sweep over the fine beams inside the selected SSB beam."""
    return sweep(pose, channel, book.prs_centers(p1.centers[p1.selected]), noise, rng, mode, wavelength, mu)


def p2_refine(p1: SweepResult, pose: BasePose, channel: TapChannel, book: BeamBook,
              noise: BeamNoise | None = None, rng=None, mode: str = "fast", wavelength: float | None = None,
              mu: int = 1) -> tuple[Measurement, Measurement]:
    """AOD (azimuth, elevation) measurements from the best fine beam.

    The reported sigma is the uniform-quantization spread res/sqrt(12).
    """
    res = p2_sweep(p1, pose, channel, book, noise, rng, mode, wavelength, mu)
    az, el = res.aod
    los = any(p.los for p in channel.paths)
    return (
        Measurement("AOD_AZ", wrap_angle(az), book.prs_res_az / np.sqrt(12), pose.bs_id, los=los),
        Measurement("AOD_EL", wrap_angle(el), book.prs_res_el / np.sqrt(12), pose.bs_id, los=los),
    )


def measure_aod(pose: BasePose, channel: TapChannel, book: BeamBook, noise: BeamNoise | None = None, rng=None,
                mode: str = "fast", wavelength: float | None = None, mu: int = 1):
    """P1 followed by P2 on one link."""
    p1 = p1_acquire(pose, channel, book, noise, rng, mode, wavelength, mu)
    return p2_refine(p1, pose, channel, book, noise, rng, mode, wavelength, mu)
