import numpy as np
import pytest

from nrloc.constants import SPEED_OF_LIGHT

from nrloc.errors import ConfigError, GridCollisionError, UnsupportedCombinationError
from nrloc.grid5g import (
    CarrierParams,
    PrsConfig,
    SrsConfig,
    SsbConfig,
    bandwidth,
    data_rate,
    find_collisions,
    map_to_grid,
    numerology_params,
    prs_periodicities,
    prs_re_offsets,
    sampling_resolution,
    srs_re_offsets,
    ssb_count,
    ssb_start_symbols,
)


def test_numerology_examples():
    n0 = numerology_params(0)
    assert (n0.scs_khz, n0.max_bw_mhz, n0.t_symb_us) == (15, 50, 66.7)
    assert n0.ranging_accuracy == pytest.approx(6.0, abs=0.005)
    n3 = numerology_params(3)
    assert n3.scs_khz == 120 and n3.max_bw_mhz == 400
    assert n3.ranging_accuracy == pytest.approx(0.75, abs=0.005)
    n4 = numerology_params(4)
    assert not n4.supports_data and n4.supports_sync


@pytest.mark.parametrize("mu", range(7))
def test_numerology_invariants(mu):
    n = numerology_params(mu)
    assert n.scs_khz == 15 * 2**mu
    assert n.n_slot == 2**mu
    assert n.t_symb_us == pytest.approx(1e3 / n.scs_khz, abs=0.05)


@pytest.mark.parametrize("mu", [-1, 7])
def test_numerology_out_of_range(mu):
    with pytest.raises(ConfigError):
        numerology_params(mu)


def test_bandwidth():
    assert bandwidth(1, 0) == pytest.approx(180e3)
    assert bandwidth(272, 1) == pytest.approx(97.92e6)
    assert bandwidth(272, 3) == pytest.approx(391.68e6)
    with pytest.raises(ConfigError):
        bandwidth(300, 3)
    with pytest.raises(ConfigError):
        bandwidth(0, 1)


def test_data_rate():
    single = data_rate([CarrierParams(1, 2, 1.0, 1, 0, 0.0)])
    assert single == pytest.approx(1e-6 * 2 * (948 / 1024) * 12 / 66.7e-6, rel=2e-3)
    assert data_rate([]) == 0.0
    v, qm, f, nrb, mu, oh = 8, 8, 1.0, 272, 1, 0.14
    # hand evaluation with the useful symbol duration 1 / 30 kHz
    expected = 1e-6 * v * qm * f * (948 / 1024) * nrb * 12 * 30e3 * (1 - oh)
    assert data_rate([CarrierParams(v, qm, f, nrb, mu, oh)]) == pytest.approx(expected, rel=1e-9)
    with pytest.raises(ConfigError):
        data_rate([CarrierParams(1, 2, 0.5, 1, 0, 0.0)])
    with pytest.raises(ConfigError):
        data_rate([CarrierParams(1, 2, 1.0, 1, 0, 0.5)])


def test_sampling_resolution_examples():
    ts, dr = sampling_resolution(0, 2048)
    assert ts == pytest.approx(32.55e-9, abs=0.005e-9)
    assert dr == pytest.approx(9.76, abs=0.01)
    ts, dr = sampling_resolution(3, 4096)
    assert ts == pytest.approx(2.03e-9, abs=0.005e-9)
    # the printed 60.8 cm is c times the rounded 2.03 ns; any T_s that rounds
    # to 2.03 ns maps into this range
    assert SPEED_OF_LIGHT * 2.025e-9 <= dr <= SPEED_OF_LIGHT * 2.035e-9
    ts, dr = sampling_resolution(6, 4096)
    assert ts == pytest.approx(0.25e-9, abs=0.005e-9)
    assert dr == pytest.approx(0.076, abs=0.0005)


def test_prs_offsets_examples():
    assert prs_re_offsets(4, 4) == (0, 2, 1, 3)
    assert prs_re_offsets(2, 2) == (0, 1)
    assert prs_re_offsets(12, 12) == (0, 6, 3, 9, 1, 7, 4, 10, 2, 8, 5, 11)
    with pytest.raises(UnsupportedCombinationError):
        prs_re_offsets(4, 2)


def test_srs_offsets_examples():
    assert srs_re_offsets(8, 4) == (0, 4, 2, 6)
    assert srs_re_offsets(2, 1) == (0,)
    assert srs_re_offsets(4, 12) == (0, 2, 1, 3) * 3
    with pytest.raises(UnsupportedCombinationError):
        srs_re_offsets(8, 2)


@pytest.mark.parametrize("k,n", [(2, 2), (2, 4), (2, 6), (2, 12), (4, 4), (4, 12), (6, 6), (6, 12), (12, 12)])
def test_prs_offset_invariants(k, n):
    off = prs_re_offsets(k, n)
    assert len(off) == n and max(off) < k
    if n >= k:
        # full staggering over the first K symbols
        assert set(off[:k]) == set(range(k))


def test_prs_full_staggering_on_grid():
    cfg = PrsConfig(1, comb_size=6, n_symbols=6, n_rb=2, periodicity=4, mu=0)
    grid = map_to_grid([cfg], 1)
    occ = grid.dense() != 0
    covered = {sc % 6 for sym in range(6) for sc in np.flatnonzero(occ[sym])}
    assert covered == set(range(6))


def test_ssb_examples():
    assert ssb_start_symbols("A", 2.0) == [2, 8, 16, 22]
    assert ssb_start_symbols("B", 2.0) == [4, 8, 16, 20]
    d = ssb_start_symbols("D", 28.0)
    assert len(d) == 64 and d[:4] == [4, 8, 16, 20]
    with pytest.raises(UnsupportedCombinationError):
        ssb_start_symbols("D", 2.0)


@pytest.mark.parametrize("case,fc", [("A", 2), ("A", 4), ("B", 2), ("B", 4), ("C", 2), ("C", 4), ("D", 28), ("E", 28)])
def test_ssb_invariants(case, fc):
    s = ssb_start_symbols(case, fc)
    assert all(a < b for a, b in zip(s, s[1:]))
    assert len(s) == ssb_count(fc)


def test_prs_periodicities():
    assert prs_periodicities(0)[:3] == (4, 5, 8)
    assert prs_periodicities(2)[0] == 16
    with pytest.raises(ConfigError):
        PrsConfig(1, periodicity=7, mu=0).validate()
    with pytest.raises(ConfigError):
        PrsConfig(1, periodicity=4, slot_offset=4, mu=0).validate()


def test_srs_validation():
    SrsConfig(1, periodicity=20480, mu=1).validate()
    with pytest.raises(ConfigError):
        SrsConfig(1, periodicity=81920, mu=1).validate()
    with pytest.raises(ConfigError):
        SrsConfig(1, b_srs=2, b_hop=1).validate()
    SrsConfig(1, resource_type="aperiodic", periodicity=3).validate()


def test_prs_offset_slots_avoid_collisions():
    a = PrsConfig(1, comb_size=12, n_symbols=12, n_rb=4, periodicity=4, repetition=1, slot_offset=0, mu=0)
    b = PrsConfig(2, comb_size=12, n_symbols=12, n_rb=4, periodicity=4, repetition=1, slot_offset=2, mu=0)
    assert find_collisions([a, b], 8) == []


def test_identical_configs_collide_everywhere():
    a = PrsConfig(1, comb_size=4, n_symbols=4, n_rb=2, periodicity=4, mu=0)
    b = PrsConfig(2, comb_size=4, n_symbols=4, n_rb=2, periodicity=4, mu=0)
    n_res = len(map_to_grid([a], 1))
    assert len(find_collisions([a, b], 1)) == n_res
    with pytest.raises(GridCollisionError):
        map_to_grid([a, b], 1)


def test_comb2_offsets_interleave():
    a = PrsConfig(1, comb_size=2, n_symbols=2, n_rb=2, re_offset=0, periodicity=4, mu=0)
    b = PrsConfig(2, comb_size=2, n_symbols=2, n_rb=2, re_offset=1, periodicity=4, mu=0)
    grid = map_to_grid([a, b], 1)
    occ = grid.dense()
    assert np.all(occ[:2] != 0)
    # two symbols, each fully occupied across 24 subcarriers
    assert len(grid) == 2 * 24


def test_ssb_grid_footprint():
    grid = map_to_grid([SsbConfig(1, "A", 2.0)], 2)
    # four SSBs of 4 symbols x 240 subcarriers over the first two slots
    assert len(grid) == 4 * 4 * 240


def test_grid_unit_modulus_and_determinism():
    cfg = PrsConfig(3, comb_size=4, n_symbols=4, n_rb=2, periodicity=4, mu=0)
    g1, g2 = map_to_grid([cfg], 1), map_to_grid([cfg], 1)
    v1 = np.array([e.value for e in g1.entries.values()])
    v2 = np.array([e.value for e in g2.entries.values()])
    np.testing.assert_allclose(np.abs(v1), 1.0)
    np.testing.assert_array_equal(v1, v2)
