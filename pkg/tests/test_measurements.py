import numpy as np
import pytest

from nrloc.constants import SPEED_OF_LIGHT as C
from nrloc.errors import ConfigError, GeometryError
from nrloc.geometry import ArrayOrientation, BasePose
from nrloc.measurements import (
    Measurement,
    MeasurementSet,
    NoiseModel,
    calibrated_sigma_tof,
    derive_rng,
    gen_aoa,
    gen_aod,
    gen_rss,
    gen_rtt,
    gen_tdoa_set,
    gen_tof,
    read_jsonl,
    select_reference_bs,
    tof_from_rtt,
    write_jsonl,
)

ORIGIN = BasePose([0, 0, 0.0], bs_id=1)
QUIET = NoiseModel(sigma_tof=0, sigma_az=0, sigma_el=0, sigma_rss=0)


def test_tof_light_microsecond():
    m = gen_tof([299.792458, 0, 0], ORIGIN, QUIET)
    assert m.value == pytest.approx(1e-6, rel=1e-12)
    assert m.kind == "TOF" and m.los


def test_tof_nlos_fixed_excess():
    m = gen_tof([100, 0, 0], ORIGIN, QUIET, los=False, excess=3.0)
    assert m.value == pytest.approx(103.0 / C, rel=1e-12)
    assert not m.los


def test_calibrated_sigma_mu3():
    assert calibrated_sigma_tof(3) * C * np.sqrt(2) == pytest.approx(0.30)
    with pytest.raises(ConfigError):
        calibrated_sigma_tof(5)


def test_nlos_excess_nonnegative():
    rng = np.random.default_rng(1)
    noise = NoiseModel(sigma_tof=0)
    d = 100.0
    vals = np.array([gen_tof([d, 0, 0], ORIGIN, noise, los=False, rng=rng).value for _ in range(100_000)])
    assert (vals * C - d).min() >= 0


def test_reference_selection():
    assert select_reference_bs([10, 20, 15]) == 2
    assert select_reference_bs([20, 20]) == 1
    assert select_reference_bs({7: 3.0, 4: 3.0, 9: 1.0}) == 4
    with pytest.raises(ConfigError):
        select_reference_bs([10])


def test_reference_selection_equal_geometry():
    angles = np.linspace(0, 2 * np.pi, 5, endpoint=False)
    poses = [BasePose([50 * np.cos(a), 50 * np.sin(a), 0.0], bs_id=i + 3) for i, a in enumerate(angles)]
    from nrloc.measurements import link_quality_db

    q = {p.bs_id: link_quality_db([0, 0, 0], p, True) for p in poses}
    # every link sees the same path loss up to round-off; exact ties go low
    q = {k: round(v, 9) for k, v in q.items()}
    assert select_reference_bs(q) == 3


def test_tdoa_examples():
    a, b = BasePose([-10, 0, 0.0], bs_id=1), BasePose([10, 0, 0.0], bs_id=2)
    (m,) = gen_tdoa_set([0, 5, 0], [a, b], QUIET, reference=1)
    assert m.value == pytest.approx(0.0, abs=1e-18)
    assert (m.bs_id, m.ref_bs_id) == (2, 1)
    a, b = BasePose([0, 0, 0.0], bs_id=1), BasePose([-150, 0, 0.0], bs_id=2)
    (m,) = gen_tdoa_set([100, 0, 0], [a, b], QUIET, reference=1)
    assert m.value == pytest.approx(150 / C, rel=1e-12)
    assert m.value == pytest.approx(0.5003e-6, abs=1e-10)


def test_tdoa_errors_and_shared_reference():
    poses = [BasePose([x, y, 0.0], bs_id=i) for i, (x, y) in enumerate([(0, 0), (50, 0), (0, 50), (50, 50)], 1)]
    with pytest.raises(ConfigError):
        gen_tdoa_set([10, 10, 0], poses, QUIET, reference=9)
    ms = gen_tdoa_set([10, 10, 0], poses, NoiseModel(), reference=3, rng=np.random.default_rng(0))
    assert len(ms) == 3
    assert {m.ref_bs_id for m in ms} == {3}


def test_tdoa_variance():
    noise = NoiseModel(sigma_tof=1e-9)
    poses = [BasePose([0, 0, 0.0], bs_id=1), BasePose([40, 0, 0.0], bs_id=2)]
    rng = np.random.default_rng(5)
    u = [10, 10, 0.0]
    truth = gen_tdoa_set(u, poses, QUIET, 1)[0].value
    vals = np.array([gen_tdoa_set(u, poses, noise, 1, rng=rng)[0].value for _ in range(100_000)])
    ratio = np.var(vals - truth) / noise.sigma_tof**2
    assert 1.9 <= ratio <= 2.1


def test_rtt_examples():
    m = gen_rtt([150, 0, 0], ORIGIN, QUIET, reply_time=100e-6)
    assert m.value == pytest.approx(100e-6 + 300 / C, rel=1e-12)
    assert m.value - 100e-6 == pytest.approx(1.0007e-6, abs=1e-10)
    m = gen_rtt([150, 0, 0], ORIGIN, QUIET)
    assert m.value == pytest.approx(300 / C, rel=1e-12)
    with pytest.raises(ConfigError):
        gen_rtt([150, 0, 0], ORIGIN, QUIET, reply_time=-1e-6)


def test_rtt_extracted_tof_variance():
    noise = NoiseModel(sigma_tof=1e-9)
    rng = np.random.default_rng(7)
    taus = np.array([tof_from_rtt(gen_rtt([30, 0, 0], ORIGIN, noise, 5e-6, rng=rng)) for _ in range(100_000)])
    ratio = np.var(taus) / noise.sigma_tof**2
    assert ratio == pytest.approx(0.5, rel=0.03)


def test_aoa_examples():
    az, el = gen_aoa([10, 0, 0], ORIGIN, QUIET)
    assert az.value == pytest.approx(0.0) and el.value == pytest.approx(0.0)
    assert (az.kind, el.kind) == ("AOA_AZ", "AOA_EL")
    pose = BasePose([0, 0, 0.0], ArrayOrientation.from_degrees(30.0))
    az, _ = gen_aoa([10, 0, 0], pose, QUIET)
    assert np.degrees(az.value) == pytest.approx(-30.0)
    d_az, _ = gen_aod([10, 0, 0], pose, QUIET)
    assert d_az.kind == "AOD_AZ" and d_az.value == pytest.approx(az.value)


def test_nlos_elevation_negative_bias():
    rng = np.random.default_rng(11)
    noise = NoiseModel()
    u = [30, 5, -8.0]
    los = [gen_aoa(u, ORIGIN, noise, True, rng)[1].value for _ in range(10_000)]
    nlos = [gen_aoa(u, ORIGIN, noise, False, rng)[1].value for _ in range(10_000)]
    assert np.mean(nlos) < np.mean(los)


def test_rss_examples():
    noise = NoiseModel(sigma_rss=0, p0_dbm=-30.0, d0=2.0, alpha=2.0)
    assert gen_rss([2, 0, 0], ORIGIN, noise).value == pytest.approx(-30.0)
    assert gen_rss([20, 0, 0], ORIGIN, noise).value == pytest.approx(-50.0)
    vals = [gen_rss([d, 0, 0], ORIGIN, noise).value for d in np.linspace(1, 200, 50)]
    assert np.all(np.diff(vals) < 0)
    with pytest.raises(GeometryError):
        gen_rss([0, 0, 0], ORIGIN, noise)


def test_noiseless_values_equal_model():
    u = np.array([12.3, -4.5, 1.5])
    pose = BasePose([1.0, 2.0, 6.0], ArrayOrientation.from_degrees(20.0), bs_id=4)
    d = np.linalg.norm(u - pose.position)
    assert gen_tof(u, pose, QUIET).value == pytest.approx(d / C, rel=1e-12)
    assert gen_rtt(u, pose, QUIET).value == pytest.approx(2 * d / C, rel=1e-12)


def test_measurement_validation():
    with pytest.raises(ConfigError):
        Measurement("TOF", 1e-6, 0.0, 1)
    with pytest.raises(ConfigError):
        Measurement("TDOA", 1e-6, 1e-9, 1, ref_bs_id=1)
    with pytest.raises(ConfigError):
        Measurement("SPEED", 1.0, 1.0, 1)
    with pytest.raises(ConfigError):
        NoiseModel(sigma_tof=-1)
    with pytest.raises(ConfigError):
        NoiseModel(alpha=0)
    m = Measurement("TDOA", 0.0, 1e-9, 2, ref_bs_id=1)
    with pytest.raises(ConfigError):
        MeasurementSet(0.0, [m, m])


def test_reproducible_and_jsonl_roundtrip(tmp_path):
    poses = [BasePose([x, y, 3.0], bs_id=i) for i, (x, y) in enumerate([(0, 0), (60, 0), (0, 60)], 1)]

    def draw(seed):
        rng = derive_rng(seed, 4)
        ms = gen_tdoa_set([20, 15, 1.5], poses, NoiseModel(), 1, {2: False}, rng)
        ms += list(gen_aoa([20, 15, 1.5], poses[0], NoiseModel(), True, rng))
        return MeasurementSet(0.1, ms, np.array([20, 15, 1.5]))

    a, b = draw(42), draw(42)
    assert a.to_json() == b.to_json()
    assert a.to_json() != draw(43).to_json()
    path = tmp_path / "sets.jsonl"
    write_jsonl(path, [a, b])
    back = read_jsonl(path)
    assert [s.to_json() for s in back] == [a.to_json(), b.to_json()]
    assert len(a.select(["TDOA"])) == 2
    assert len(a.select(los_only=True)) == 3
