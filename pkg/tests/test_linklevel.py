import numpy as np
import pytest

from nrloc.constants import BOLTZMANN
from nrloc.errors import ConfigError, DetectionError
from nrloc.geometry import wall
from nrloc.linklevel import (
    OfdmWaveform,
    Path,
    TapChannel,
    add_awgn,
    apply_channel,
    array_snapshots,
    channel_from_geometry,
    estimate_toa,
    music_aoa,
    noise_power,
    noise_temperature,
    ofdm_demodulate,
    ofdm_modulate,
    prs_symbol_waveform,
    read_waveform,
    rsrp,
    steering_vector,
    write_waveform,
    linklevel_toa_errors,
)


def _path(delay, gain=1.0, los=True):
    return Path(delay, complex(gain), (0.0, 0.0), (0.0, 0.0), los)


def _padded(wave, pad=256):
    return wave.with_samples(np.concatenate([wave.samples, np.zeros(pad, complex)]))


def test_empty_grid_gives_zeros():
    w = ofdm_modulate(np.zeros((2, 48)), 1, n_fft=256)
    assert w.n_samples == 2 * 256 + sum(w.cp_lengths)
    assert not np.any(w.samples)


def test_single_subcarrier_is_complex_exponential():
    n_fft, k, mu = 256, 5, 1
    grid = np.zeros((1, 24), complex)
    grid[0, k] = 1.0
    w = ofdm_modulate(grid, mu, n_fft)
    body = w.samples[w.symbol_starts[0]:w.symbol_starts[0] + n_fft]
    t = np.arange(n_fft) / w.sample_rate
    expected = np.exp(2j * np.pi * k * 30e3 * t) / np.sqrt(n_fft)
    np.testing.assert_allclose(body, expected, atol=1e-12)
    # the cyclic prefix copies the tail of the symbol
    cp = w.cp_lengths[0]
    np.testing.assert_allclose(w.samples[:cp], body[-cp:], atol=1e-15)


@pytest.mark.parametrize("oversampling", [1, 2])
def test_modulate_demodulate_roundtrip(oversampling):
    rng = np.random.default_rng(0)
    grid = rng.normal(size=(14, 120)) + 1j * rng.normal(size=(14, 120))
    w = ofdm_modulate(grid, 0, 256, oversampling, dc_offset=60)
    np.testing.assert_allclose(ofdm_demodulate(w), grid, atol=1e-10)


def test_grid_wider_than_fft():
    with pytest.raises(ConfigError):
        ofdm_modulate(np.ones((1, 300)), 0, 256)


def test_cp_layout_long_first_symbol():
    w = ofdm_modulate(np.ones((14, 12)), 0, 2048)
    assert w.cp_lengths[0] == 160 and set(w.cp_lengths[1:7]) == {144} and w.cp_lengths[7] == 160


def test_channel_identity_and_shift():
    w = _padded(prs_symbol_waveform(120, 1, 256))
    out = apply_channel(w, TapChannel((_path(0.0),)))
    np.testing.assert_allclose(out.samples, w.samples)
    k = 17
    out = apply_channel(w, TapChannel((_path(k / w.sample_rate),)))
    np.testing.assert_allclose(out.samples[k:], w.samples[:-k], atol=1e-12)
    np.testing.assert_allclose(out.samples[:k], 0)


def test_two_path_energy_bound():
    w = _padded(prs_symbol_waveform(120, 1, 256))
    ch = TapChannel((_path(0.0), _path(3.3 / w.sample_rate, 1.0, False)))
    assert apply_channel(w, ch).energy <= 4 * w.energy


def test_channel_delay_overflow():
    w = prs_symbol_waveform(120, 1, 256)
    with pytest.raises(ConfigError):
        apply_channel(w, TapChannel((_path(2 * w.duration),)))


def test_noise_temperature_and_power():
    assert noise_temperature(0.0, 290.0) == pytest.approx(290.0)
    expected = BOLTZMANN * 1e8 * (298 + 290 * (10**0.9 - 1))
    assert noise_power(1e8, 9.0, 298.0) == pytest.approx(expected, rel=1e-12)
    with pytest.raises(ConfigError):
        noise_temperature(-1.0)


def test_awgn_power():
    fs = 1e8
    w = OfdmWaveform(np.zeros(1_000_000), fs)
    noisy = add_awgn(w, fs, 9.0, 298.0, np.random.default_rng(2))
    n0 = noise_power(fs, 9.0, 298.0)
    assert np.mean(np.abs(noisy.samples) ** 2) == pytest.approx(n0, rel=0.02)


def test_toa_integer_delay_exact():
    ref = prs_symbol_waveform(240, 1, 512)
    tx = _padded(ref)
    for mode in ("first_peak", "max_peak"):
        for k in (0, 1, 13, 100):
            rx = apply_channel(tx, TapChannel((_path(k / tx.sample_rate),)))
            assert estimate_toa(rx, ref, mode, refine=True) == pytest.approx(k / tx.sample_rate, abs=1e-15)


def test_toa_fractional_delay_refined():
    # 264 RB in a 4096-point FFT at 120 kHz, the 400 MHz PRS configuration
    ref = prs_symbol_waveform(264 * 12, 3, 4096)
    tx = _padded(ref)
    ts = 1 / tx.sample_rate
    for frac in np.linspace(0.05, 0.95, 19):
        delay = (20 + frac) * ts
        rx = apply_channel(tx, TapChannel((_path(delay),)))
        assert abs(estimate_toa(rx, ref, refine=True) - delay) < 0.1 * ts


def test_toa_zero_rx_fails():
    ref = prs_symbol_waveform(120, 1, 256)
    with pytest.raises(DetectionError):
        estimate_toa(ref.with_samples(np.zeros(ref.n_samples)), ref)


def test_first_peak_not_later_than_max_peak():
    rng = np.random.default_rng(4)
    ref = prs_symbol_waveform(240, 1, 512)
    tx = _padded(ref, 400)
    ts = 1 / tx.sample_rate
    for _ in range(100):
        d0 = rng.uniform(5, 50) * ts
        ch = TapChannel((_path(d0, rng.uniform(0.55, 1.0)), _path(d0 + rng.uniform(3, 150) * ts, 1.0, False)))
        rx = apply_channel(tx, ch)
        assert estimate_toa(rx, ref, "first_peak") <= estimate_toa(rx, ref, "max_peak") + 1e-15


def test_toa_std_decreases_with_bandwidth():
    rng = np.random.default_rng(9)
    # 50, 100 and 400 MHz PRS occupancy on the matching numerologies
    s50 = np.std(linklevel_toa_errors(0, 270, 4096, 20.0, 500, rng))
    s100 = np.std(linklevel_toa_errors(1, 273, 4096, 20.0, 500, rng))
    s400 = np.std(linklevel_toa_errors(3, 264, 4096, 20.0, 500, rng))
    assert s400 < s100 < s50


def test_rsrp():
    assert rsrp(np.ones(12)) == pytest.approx(0.0)
    assert rsrp(2 * np.ones(12)) - rsrp(np.ones(12)) == pytest.approx(6.0206, abs=1e-4)
    with pytest.raises(ConfigError):
        rsrp([])


def test_rsrp_aligned_beam_wins():
    shape, lam = (1, 8), 1.0
    target = np.radians(20.0)
    rx = steering_vector(shape, lam, target, 0.0)
    beams = [steering_vector(shape, lam, a, 0.0) / 8 for a in np.radians([-20.0, 20.0])]
    powers = [rsrp(np.vdot(b, rx)) for b in beams]
    assert powers[1] > powers[0]


def test_steering_vector_properties():
    np.testing.assert_allclose(steering_vector((4, 4), 1.0, 0.0, 0.0), np.ones(16))
    a = steering_vector((4, 4), 1.0, 0.3, 0.1)
    np.testing.assert_allclose(np.abs(a), 1.0)
    assert abs(np.vdot(a, a)) == pytest.approx(16)
    with pytest.raises(ConfigError):
        steering_vector((4, 4), 0.0, 0, 0)


def test_steering_conjugate_symmetry_in_plane():
    # horizontal linear array: reversing azimuth conjugates the response
    a = steering_vector((1, 8), 1.0, 0.4, 0.0)
    b = steering_vector((1, 8), 1.0, -0.4, 0.0)
    np.testing.assert_allclose(b, np.conj(a), atol=1e-12)


def test_music_exact_grid_angle():
    az, el = np.radians(12.0), np.radians(-6.0)
    x = array_snapshots((8, 8), 1.0, [(az, el)], 50, 300.0, np.random.default_rng(0))
    res = music_aoa(x, (8, 8))
    assert res.peak == pytest.approx((az, el), abs=1e-12)


def test_music_20db_accuracy():
    rng = np.random.default_rng(3)
    for _ in range(5):
        az, el = np.radians(rng.uniform(-40, 40)), np.radians(rng.uniform(-20, 20))
        x = array_snapshots((8, 8), 1.0, [(az, el)], 100, 20.0, rng)
        got = music_aoa(x, (8, 8)).peak
        assert np.degrees(abs(got[0] - az)) <= 1.0 and np.degrees(abs(got[1] - el)) <= 1.0


def test_music_two_sources():
    srcs = [(np.radians(-30.0), np.radians(5.0)), (np.radians(25.0), np.radians(-10.0))]
    x = array_snapshots((8, 8), 1.0, srcs, 200, 30.0, np.random.default_rng(1))
    res = music_aoa(x, (8, 8), n_sources=2)
    found = sorted(zip(np.round(np.degrees(res.az), 6), np.round(np.degrees(res.el), 6)))
    assert found == [(-30.0, 5.0), (25.0, -10.0)]


def test_music_phase_invariance_and_errors():
    x = array_snapshots((4, 4), 1.0, [(0.2, 0.1)], 40, 15.0, np.random.default_rng(6))
    s1 = music_aoa(x, (4, 4)).spectrum
    s2 = music_aoa(x * np.exp(1.234j), (4, 4)).spectrum
    np.testing.assert_allclose(s1, s2, rtol=1e-8)
    with pytest.raises(ConfigError):
        music_aoa(x, (4, 4), n_sources=16)
    with pytest.raises(ConfigError):
        music_aoa(x[:, :1], (4, 4))


def test_channel_from_geometry_los_first():
    w = wall((0, 20), (40, 20), 0, 10)
    ch = channel_from_geometry([0, 0, 2.0], [30, 0, 2.0], [w])
    assert ch.has_los and len(ch.paths) == 2
    assert ch.paths[0].los and ch.paths[0].delay < ch.paths[1].delay
    blocker = wall((15, -5), (15, 5), 0, 10)
    ch = channel_from_geometry([0, 0, 2.0], [30, 0, 2.0], [blocker])
    assert not ch.has_los


def test_waveform_dump_roundtrip(tmp_path):
    w = prs_symbol_waveform(120, 1, 256, np.random.default_rng(1))
    p = tmp_path / "w.bin"
    write_waveform(p, w)
    raw = p.read_bytes()
    assert raw[:4] == b"NRLW" and len(raw) == 32 + 8 * w.n_samples
    back = read_waveform(p)
    assert back.sample_rate == w.sample_rate and back.mu == 1 and back.n_fft == 256
    np.testing.assert_allclose(back.samples, w.samples, atol=1e-6)
    p.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ConfigError):
        read_waveform(p)
