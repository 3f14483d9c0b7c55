"""Signal-level processing: OFDM, multipath channel, noise, TOA, RSRP and MUSIC.

Time is discretized at ``fs = scs * n_fft * oversampling``.  The cyclic
prefix follows the NR normal-CP rule: 144 samples per 2048 plus 16 extra on
the first symbol of every half subframe.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .constants import BOLTZMANN, SPEED_OF_LIGHT, T0_KELVIN
from .errors import ConfigError, DetectionError, GeometryError
from .geometry import Polygon, direction_vector, los_check, true_geometry
from .grid5g import ResourceGrid, numerology_params


@dataclass
class OfdmWaveform:
    """Complex baseband samples plus the symbol layout that produced them."""

    samples: np.ndarray
    sample_rate: float
    mu: int = 0
    n_fft: int = 4096
    oversampling: int = 1
    n_subcarriers: int = 0
    dc_offset: int = 0
    symbol_starts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    cp_lengths: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if not np.all(np.isfinite(self.samples)):
            raise ConfigError("waveform has non-finite samples")

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    @property
    def sample_period(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2))

    def with_samples(self, samples) -> "OfdmWaveform":
        return OfdmWaveform(samples, self.sample_rate, self.mu, self.n_fft, self.oversampling,
                            self.n_subcarriers, self.dc_offset, self.symbol_starts, self.cp_lengths)


def cp_lengths(mu: int, n_symbols: int, n_fft: int, first_symbol: int = 0) -> np.ndarray:
    """Normal cyclic-prefix length (samples) of each symbol."""
    base = 144 * n_fft // 2048
    extra = 16 * n_fft // 2048
    half = 7 * 2**mu  # symbols per 0.5 ms
    idx = first_symbol + np.arange(n_symbols)
    return np.where(idx % half == 0, base + extra, base).astype(int)


def _grid_array(grid) -> np.ndarray:
    if isinstance(grid, ResourceGrid):
        return grid.dense()
    arr = np.asarray(grid, dtype=complex)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr


def ofdm_modulate(grid, mu: int, n_fft: int = 4096, oversampling: int = 1,
                  dc_offset: int = 0, first_symbol: int = 0) -> OfdmWaveform:
    """Per-symbol inverse FFT plus cyclic prefix.

    Subcarrier ``k`` is placed on FFT bin ``k - dc_offset`` (modulo the FFT
    size) so it appears as a complex exponential at ``(k - dc_offset) * scs``.
    """
    arr = _grid_array(grid)
    n_sym, n_sc = arr.shape
    if n_sc > n_fft:
        raise ConfigError(f"grid has {n_sc} subcarriers, more than n_fft={n_fft}")
    if oversampling < 1 or int(oversampling) != oversampling:
        raise ConfigError("oversampling must be a positive integer")
    scs = numerology_params(mu).scs_hz
    n = n_fft * oversampling
    bins = (np.arange(n_sc) - dc_offset) % n
    freq = np.zeros((n_sym, n), dtype=complex)
    freq[:, bins] = arr
    # unitary transform scaled so a unit RE has the same energy at any oversampling
    body = np.fft.ifft(freq, axis=1, norm="ortho") * np.sqrt(oversampling)
    cps = cp_lengths(mu, n_sym, n_fft, first_symbol) * oversampling
    parts, starts, pos = [], [], 0
    for l in range(n_sym):
        parts.append(body[l, n - cps[l]:])
        parts.append(body[l])
        pos += cps[l]
        starts.append(pos)
        pos += n
    samples = np.concatenate(parts) if parts else np.zeros(0, dtype=complex)
    return OfdmWaveform(samples, scs * n, mu, n_fft, oversampling, n_sc, dc_offset,
                        np.asarray(starts, dtype=int), cps)


def ofdm_demodulate(wave: OfdmWaveform, timing_offset: int = 0) -> np.ndarray:
    """Inverse of :func:`ofdm_modulate` on known symbol boundaries."""
    n = wave.n_fft * wave.oversampling
    out = np.zeros((len(wave.symbol_starts), wave.n_subcarriers), dtype=complex)
    bins = (np.arange(wave.n_subcarriers) - wave.dc_offset) % n
    for l, start in enumerate(wave.symbol_starts):
        seg = wave.samples[start + timing_offset:start + timing_offset + n]
        if len(seg) < n:
            seg = np.pad(seg, (0, n - len(seg)))
        spec = np.fft.fft(seg, norm="ortho") / np.sqrt(wave.oversampling)
        out[l] = spec[bins]
    return out


@dataclass(frozen=True)
class Path:
    delay: float
    gain: complex
    aod: tuple[float, float]
    aoa: tuple[float, float]
    los: bool
    reflector: int | None = None

    def __post_init__(self):
        if self.delay < 0:
            raise ConfigError("path delay must be >= 0")
        if not abs(self.gain) > 0:
            raise ConfigError("path gain must be nonzero")


@dataclass(frozen=True)
class TapChannel:
    paths: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(sorted(self.paths, key=lambda p: p.delay)))

    @property
    def has_los(self) -> bool:
        return any(p.los for p in self.paths)

    @property
    def max_delay(self) -> float:
        return max((p.delay for p in self.paths), default=0.0)

    @property
    def total_power(self) -> float:
        return float(sum(abs(p.gain) ** 2 for p in self.paths))


def free_space_gain(length: float, wavelength: float) -> complex:
    return wavelength / (4 * np.pi * length) * np.exp(-2j * np.pi * length / wavelength)


def _path_between(tx, rx, points, wavelength, loss_db, los, reflector):
    pts = [np.asarray(tx, float), *points, np.asarray(rx, float)]
    length = float(sum(np.linalg.norm(b - a) for a, b in zip(pts[:-1], pts[1:])))
    g = free_space_gain(length, wavelength) * 10 ** (-loss_db / 20)
    dep = true_geometry(pts[1], pts[0])
    arr = true_geometry(pts[-2], pts[-1])
    return Path(length / SPEED_OF_LIGHT, complex(g), (dep.azimuth, dep.elevation),
                (arr.azimuth, arr.elevation), los, reflector)


def channel_from_geometry(tx, rx, obstacles: Sequence[Polygon] = (), wavelength: float = SPEED_OF_LIGHT / 3.5e9,
                          max_bounces: int = 1) -> TapChannel:
    """LOS path (if unobstructed) plus specular reflections by the image method.

    Departure angles are seen from ``tx`` and arrival angles from ``rx``,
    both with the package azimuth/elevation convention.
    """
    if max_bounces not in (0, 1, 2):
        raise ConfigError("max_bounces must be 0, 1 or 2")
    tx = np.asarray(tx, float)
    rx = np.asarray(rx, float)
    paths = []
    if los_check(tx, rx, obstacles):
        paths.append(_path_between(tx, rx, [], wavelength, 0.0, True, None))
    obstacles = list(obstacles)
    if max_bounces >= 1:
        for i, poly in enumerate(obstacles):
            img = poly.mirror(tx)
            hit = poly.segment_hit(img, rx)
            if hit is None:
                continue
            if not (los_check(tx, hit, obstacles, exclude=[i]) and los_check(hit, rx, obstacles, exclude=[i])):
                continue
            paths.append(_path_between(tx, rx, [hit], wavelength, poly.reflection_loss_db, False, i))
    if max_bounces >= 2:
        for i, p1 in enumerate(obstacles):
            img1 = p1.mirror(tx)
            for j, p2 in enumerate(obstacles):
                if j == i:
                    continue
                img2 = p2.mirror(img1)
                h2 = p2.segment_hit(img2, rx)
                if h2 is None:
                    continue
                h1 = p1.segment_hit(img1, h2)
                if h1 is None:
                    continue
                legs = [(tx, h1, [i]), (h1, h2, [i, j]), (h2, rx, [j])]
                if all(los_check(a, b, obstacles, exclude=ex) for a, b, ex in legs):
                    loss = p1.reflection_loss_db + p2.reflection_loss_db
                    paths.append(_path_between(tx, rx, [h1, h2], wavelength, loss, False, i))
    return TapChannel(tuple(paths))


def fractional_delay(x: np.ndarray, delay_samples: float, n_taps: int = 32) -> np.ndarray:
    """Delay ``x`` by a (possibly fractional) number of samples, same length.

    Integer delays are exact shifts; the fractional part uses a
    Blackman-windowed sinc of ``n_taps`` taps.
    """
    k = int(np.floor(delay_samples))
    frac = delay_samples - k
    out = np.zeros_like(x)
    if frac > 1e-12:
        half = n_taps // 2
        n = np.arange(-half + 1, half + 1)
        h = np.sinc(n - frac) * np.blackman(n_taps)
        h /= h.sum()
        y = np.convolve(x, h)[half - 1:half - 1 + len(x)]
    else:
        y = x
    if k < len(x):
        out[k:] = y[:len(x) - k]
    return out


def apply_channel(wave: OfdmWaveform, channel: TapChannel, n_taps: int = 32) -> OfdmWaveform:
    """Sum of delayed, scaled copies of the waveform (output keeps the input length)."""
    if channel.max_delay >= wave.duration:
        raise ConfigError("channel delay exceeds the waveform duration")
    out = np.zeros(wave.n_samples, dtype=complex)
    for p in channel.paths:
        out += p.gain * fractional_delay(wave.samples, p.delay * wave.sample_rate, n_taps)
    return wave.with_samples(out)


def noise_temperature(nf_db: float, t_ant: float = 298.0) -> float:
    """Equivalent noise temperature T_ant + 290 (NF - 1), NF linear."""
    if nf_db < 0:
        raise ConfigError("noise figure must be >= 0 dB")
    return t_ant + T0_KELVIN * (10 ** (nf_db / 10) - 1)


def noise_power(bandwidth: float, nf_db: float, t_ant: float = 298.0) -> float:
    """Thermal noise power k_B * BW * T_e in watts."""
    return BOLTZMANN * bandwidth * noise_temperature(nf_db, t_ant)


def complex_noise(shape, power: float, rng) -> np.ndarray:
    """Circular complex Gaussian samples with E|n|^2 = power."""
    s = np.sqrt(power / 2)
    return s * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def add_awgn(wave: OfdmWaveform, bandwidth: float, nf_db: float, t_ant: float = 298.0,
             rng=None) -> OfdmWaveform:
    """Add thermal noise of total power N0 over ``bandwidth``.

    The per-sample variance is N0 * fs / BW so that the in-band power is N0.
    """
    rng = np.random.default_rng() if rng is None else rng
    n0 = noise_power(bandwidth, nf_db, t_ant)
    var = n0 * wave.sample_rate / bandwidth
    return wave.with_samples(wave.samples + complex_noise(wave.n_samples, var, rng))


def add_noise_snr(wave: OfdmWaveform, snr_db: float, rng, reference_power: float | None = None) -> OfdmWaveform:
    """Add white noise for a per-sample SNR relative to the mean signal power."""
    p = reference_power if reference_power is not None else np.mean(np.abs(wave.samples) ** 2)
    var = p / 10 ** (snr_db / 10)
    return wave.with_samples(wave.samples + complex_noise(wave.n_samples, var, rng))


def cross_correlation(rx: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """|sum rx[n + lag] conj(ref[n])| for lags 0 .. len(rx) - 1."""
    n = len(rx) + len(ref)
    nfft = 1 << (n - 1).bit_length()
    c = np.fft.ifft(np.fft.fft(rx, nfft) * np.conj(np.fft.fft(ref, nfft)))
    return np.abs(c[:len(rx)])


def parabolic_offset(y_m1: float, y0: float, y_p1: float) -> float:
    """Vertex offset (in samples, within +-0.5) of the parabola through three points."""
    den = y_m1 - 2 * y0 + y_p1
    if den >= 0:
        return 0.0
    return float(np.clip(0.5 * (y_m1 - y_p1) / den, -0.5, 0.5))


def estimate_toa(rx: OfdmWaveform | np.ndarray, ref: OfdmWaveform | np.ndarray, mode: str = "first_peak",
                 refine: bool = True, threshold: float = 0.5, sample_rate: float | None = None) -> float:
    """Time of arrival (s) from the cross-correlation with the known transmit waveform.

    ``first_peak`` takes the earliest local maximum above ``threshold`` times
    the global maximum; ``max_peak`` takes the global maximum.
    """
    if mode not in ("first_peak", "max_peak"):
        raise ConfigError(f"unknown peak mode {mode!r}")
    if not 0 < threshold <= 1:
        raise ConfigError("threshold must be in (0, 1]")
    fs = sample_rate
    if isinstance(rx, OfdmWaveform):
        fs = rx.sample_rate
        rx = rx.samples
    if isinstance(ref, OfdmWaveform):
        fs = fs or ref.sample_rate
        ref = ref.samples
    if fs is None:
        raise ConfigError("sample rate required for raw sample arrays")
    if not np.any(ref):
        raise ConfigError("reference waveform is all zeros")
    c = cross_correlation(np.asarray(rx, complex), np.asarray(ref, complex))
    peak = float(c.max()) if len(c) else 0.0
    if not peak > 0:
        raise DetectionError("no correlation peak above threshold")
    if mode == "max_peak":
        k = int(np.argmax(c))
    else:
        above = c >= threshold * peak
        left = np.concatenate(([-np.inf], c[:-1]))
        right = np.concatenate((c[1:], [-np.inf]))
        cand = np.flatnonzero(above & (c >= left) & (c >= right))
        k = int(cand[0])
    frac = 0.0
    if refine and 0 < k < len(c) - 1:
        frac = parabolic_offset(c[k - 1], c[k], c[k + 1])
    return (k + frac) / fs


def rsrp(values, reference_dbm: float = 0.0) -> float:
    """Mean power over the given resource elements, in dB relative to ``reference_dbm``.

    With watts-valued samples pass ``reference_dbm=30`` to obtain dBm.
    """
    v = np.asarray(values)
    if v.size == 0:
        raise ConfigError("RSRP over an empty set of resource elements")
    p = float(np.mean(np.abs(v) ** 2))
    if p <= 0:
        return -np.inf
    return 10 * np.log10(p) + reference_dbm


def element_positions(array_shape: tuple[int, int], wavelength: float) -> np.ndarray:
    """Centered lambda/2 grid in the array's local y-z plane, shape (M*N, 3).

    ``array_shape = (M, N)`` with M rows along z and N columns along y.
    """
    m, n = array_shape
    if m < 1 or n < 1:
        raise ConfigError("array dimensions must be >= 1")
    d = wavelength / 2
    z = (np.arange(m) - (m - 1) / 2) * d
    y = (np.arange(n) - (n - 1) / 2) * d
    zz, yy = np.meshgrid(z, y, indexing="ij")
    return np.stack([np.zeros(m * n), yy.ravel(), zz.ravel()], axis=1)


def steering_vector(array_shape, wavelength: float, az, el) -> np.ndarray:
    """Unit-modulus array response to a plane wave from local (az, el).

    Scalar angles give shape (M*N,); arrays of angles give (M*N, K).
    """
    if wavelength <= 0:
        raise ConfigError("wavelength must be > 0")
    if len(array_shape) == 5:
        array_shape = (array_shape[2], array_shape[3])
    pos = element_positions(tuple(array_shape), wavelength)
    d = direction_vector(np.ravel(az), np.ravel(el))  # (K, 3)
    v = np.exp(2j * np.pi / wavelength * (pos @ d.T))
    return v[:, 0] if np.ndim(az) == 0 and np.ndim(el) == 0 else v


def array_snapshots(array_shape, wavelength: float, sources: Sequence[tuple[float, float]], n_snapshots: int,
                    snr_db: float, rng, powers: Sequence[float] | None = None) -> np.ndarray:
    """Per-element samples (M*N, n_snapshots) of independent random sources plus noise.

    The SNR is per element and per snapshot relative to unit source power.
    """
    powers = np.ones(len(sources)) if powers is None else np.asarray(powers, float)
    a = np.stack([steering_vector(array_shape, wavelength, az, el) for az, el in sources], axis=1)
    s = complex_noise((len(sources), n_snapshots), 1.0, rng) * np.sqrt(powers)[:, None]
    x = a @ s
    return x + complex_noise(x.shape, 10 ** (-snr_db / 10), rng)


@dataclass
class MusicResult:
    az: np.ndarray
    el: np.ndarray
    spectrum: np.ndarray
    az_grid: np.ndarray
    el_grid: np.ndarray

    @property
    def peak(self) -> tuple[float, float]:
        return float(self.az[0]), float(self.el[0])


def _music_spectrum(en_proj, array_shape, wavelength, az_grid, el_grid, n_el_chunk=16):
    """1 / ||E_s-complement projection||^2 evaluated on the (el, az) grid."""
    spec = np.empty((len(el_grid), len(az_grid)))
    for i0 in range(0, len(el_grid), n_el_chunk):
        els = el_grid[i0:i0 + n_el_chunk]
        ee, aa = np.meshgrid(els, az_grid, indexing="ij")
        a = steering_vector(array_shape, wavelength, aa.ravel(), ee.ravel())
        n_el = a.shape[0]
        sig = np.sum(np.abs(en_proj.conj().T @ a) ** 2, axis=0)
        noise = np.clip(n_el - sig, 1e-12 * n_el, None)
        spec[i0:i0 + len(els)] = (1.0 / noise).reshape(ee.shape)
    return spec


def music_aoa(snapshots: np.ndarray, array_shape, n_sources: int = 1, az_grid=None, el_grid=None,
              wavelength: float = 1.0, refine_step: float | None = None) -> MusicResult:
    """MUSIC angle estimate on an (el, az) search grid.

    The noise-subspace projection of a unit-modulus steering vector equals
    ``M*N - ||E_s^H a||^2`` so only the signal subspace is needed.  With
    ``refine_step`` the strongest peak is re-searched on a finer local grid.
    """
    x = np.asarray(snapshots, dtype=complex)
    if len(array_shape) == 5:
        array_shape = (array_shape[2], array_shape[3])
    n_el = array_shape[0] * array_shape[1]
    if x.shape[0] != n_el:
        raise ConfigError(f"snapshots have {x.shape[0]} rows, array has {n_el} elements")
    if n_sources < 1 or n_sources >= n_el:
        raise ConfigError("need 1 <= n_sources < element count")
    if x.shape[1] < n_sources + 1:
        raise ConfigError("need at least n_sources + 1 snapshots")
    az_grid = np.radians(np.arange(-60, 60.001, 0.5)) if az_grid is None else np.asarray(az_grid, float)
    el_grid = np.radians(np.arange(-30, 30.001, 0.5)) if el_grid is None else np.asarray(el_grid, float)
    if len(az_grid) < 1 or len(el_grid) < 1:
        raise ConfigError("empty search grid")
    r = x @ x.conj().T / x.shape[1]
    w, v = np.linalg.eigh(r)
    es = v[:, -n_sources:]
    spec = _music_spectrum(es, array_shape, wavelength, az_grid, el_grid)
    # local maxima of the spectrum, strongest first
    mx = ndimage.maximum_filter(spec, size=3, mode="nearest")
    ii, jj = np.nonzero(spec == mx)
    order = np.argsort(-spec[ii, jj], kind="stable")[:n_sources]
    az = az_grid[jj[order]].copy()
    el = el_grid[ii[order]].copy()
    if refine_step is not None and len(az_grid) > 1 and len(el_grid) > 1:
        daz = abs(az_grid[1] - az_grid[0])
        delv = abs(el_grid[1] - el_grid[0])
        for s in range(len(az)):
            fa = az[s] + np.arange(-daz, daz + refine_step / 2, refine_step)
            fe = el[s] + np.arange(-delv, delv + refine_step / 2, refine_step)
            fine = _music_spectrum(es, array_shape, wavelength, fa, fe)
            i, j = np.unravel_index(int(np.argmax(fine)), fine.shape)
            az[s], el[s] = fa[j], fe[i]
    return MusicResult(az, el, spec, az_grid, el_grid)


# Raw waveform dump: 32-byte little-endian header followed by interleaved
# float32 (re, im) pairs.
#   magic   4s   b"NRLW"
#   version u32  1
#   fs      f64  sample rate in Hz
#   n       u64  number of complex samples
#   mu      u32  numerology
#   n_fft   u32  FFT size (without oversampling)
WAVE_MAGIC = b"NRLW"
_HEADER = struct.Struct("<4sIdQII")


def write_waveform(path, wave: OfdmWaveform) -> None:
    data = np.empty(2 * wave.n_samples, dtype="<f4")
    data[0::2] = wave.samples.real
    data[1::2] = wave.samples.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(WAVE_MAGIC, 1, wave.sample_rate, wave.n_samples, wave.mu, wave.n_fft))
        fh.write(data.tobytes())


def read_waveform(path) -> OfdmWaveform:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ConfigError("truncated waveform header")
        magic, version, fs, n, mu, n_fft = _HEADER.unpack(head)
        if magic != WAVE_MAGIC or version != 1:
            raise ConfigError("not an nrloc waveform file")
        data = np.frombuffer(fh.read(), dtype="<f4")
    if len(data) != 2 * n:
        raise ConfigError(f"waveform file holds {len(data) // 2} samples, header says {n}")
    return OfdmWaveform(data[0::2].astype(float) + 1j * data[1::2].astype(float), fs, mu, n_fft)


def prs_symbol_waveform(n_subcarriers: int, mu: int, n_fft: int, rng=None, comb: int = 1,
                        oversampling: int = 1) -> OfdmWaveform:
    """One OFDM symbol carrying unit-power QPSK on every ``comb``-th subcarrier (centered band)."""
    rng = np.random.default_rng(0) if rng is None else rng
    row = np.zeros(n_subcarriers, dtype=complex)
    idx = np.arange(0, n_subcarriers, comb)
    row[idx] = (rng.choice([-1, 1], len(idx)) + 1j * rng.choice([-1, 1], len(idx))) / np.sqrt(2)
    return ofdm_modulate(row[None, :], mu, n_fft, oversampling, dc_offset=n_subcarriers // 2)


def linklevel_toa_errors(bandwidth_mu: int, n_rb: int, n_fft: int, snr_db: float, n_trials: int, rng,
                         max_delay_samples: float = 40.0, oversampling: int = 1) -> np.ndarray:
    """Range errors (m) of refined first-peak TOA on random fractional LOS delays."""
    wave = prs_symbol_waveform(n_rb * 12, bandwidth_mu, n_fft, rng, oversampling=oversampling)
    pad = int(np.ceil(max_delay_samples)) + 64
    tx = wave.with_samples(np.concatenate([wave.samples, np.zeros(pad, complex)]))
    p_sig = np.mean(np.abs(wave.samples) ** 2)
    errs = np.empty(n_trials)
    for t in range(n_trials):
        delay = rng.uniform(0, max_delay_samples) / tx.sample_rate
        ch = TapChannel((Path(delay, 1.0 + 0j, (0.0, 0.0), (0.0, 0.0), True),))
        rx = add_noise_snr(apply_channel(tx, ch), snr_db, rng, reference_power=p_sig)
        errs[t] = (estimate_toa(rx, wave, "first_peak", True) - delay) * SPEED_OF_LIGHT
    return errs


def snapshot_from_channel(channel: TapChannel, array_shape, wavelength: float, n_snapshots: int, snr_db: float,
                          rng, frame=(0.0, 0.0)) -> np.ndarray:
    """Array snapshots at the receiver for every path of ``channel``.

    ``frame`` is the (yaw, roll) of the receiving array; arrival angles are
    converted to the local frame before forming steering vectors.
    """
    if not channel.paths:
        raise GeometryError("channel has no propagation paths")
    srcs = [(p.aoa[0] - frame[0], p.aoa[1] - frame[1]) for p in channel.paths]
    pw = np.array([abs(p.gain) ** 2 for p in channel.paths])
    pw = pw / pw.max()
    return array_snapshots(array_shape, wavelength, srcs, n_snapshots, snr_db, rng, pw)
