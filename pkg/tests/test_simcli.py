import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nrloc.errors import ConfigError
from nrloc.scenarios import square_outdoor
from nrloc.simcli import (
    RunSpec,
    compute_metrics,
    gen_random_walk,
    parallel_map,
    run_static,
    run_track,
    worker_count,
)


def _quiet_square():
    sc = square_outdoor()
    sc.extras["noise"] = {"sigma_tof_m": 0.0, "sigma_az_deg": 0.0, "sigma_el_deg": 0.0}
    return sc


def test_metrics_examples():
    r = compute_metrics(np.zeros((5, 3)))
    assert (r.rmse, r.mae, r.bias_norm) == (0.0, 0.0, 0.0)
    r = compute_metrics([[3.0, 4.0]])
    assert r.rmse == pytest.approx(5.0) and r.mae == pytest.approx(5.0) and r.bias_norm == pytest.approx(5.0)
    r = compute_metrics([[1.0, 0.0], [-1.0, 0.0]])
    assert r.bias_norm == 0.0 and r.mae == pytest.approx(1.0) and r.rmse == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        compute_metrics([])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(*[st.floats(-1e3, 1e3)] * 3), min_size=1, max_size=40))
def test_metric_ordering(rows):
    r = compute_metrics(rows)
    assert r.rmse + 1e-9 >= r.mae >= r.bias_norm - 1e-9
    assert np.all(np.diff(r.cdf_y) >= 0) and r.cdf_y[-1] == 1.0
    assert 0.0 < r.cdf(r.rmse) <= 1.0


def test_random_walk_examples():
    w = gen_random_walk([1, 2, 3], 0.0, 20, seed=5)
    np.testing.assert_array_equal(w, np.tile([1.0, 2.0, 3.0], (20, 1)))
    a = gen_random_walk([0, 0, 0], [1, 2, 0], 100_000, seed=3)
    var = np.var(np.diff(a, axis=0), axis=0)
    assert var[0] == pytest.approx(1.0, rel=0.1) and var[1] == pytest.approx(4.0, rel=0.1) and var[2] == 0.0
    np.testing.assert_array_equal(a, gen_random_walk([0, 0, 0], [1, 2, 0], 100_000, seed=3))
    with pytest.raises(ConfigError):
        gen_random_walk([0, 0, 0], 1.0, 0)
    with pytest.raises(ConfigError):
        gen_random_walk([0, 0, 0], -1.0, 5)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("NRLOC_THREADS", "2")
    assert worker_count(8) == 2
    assert worker_count(1) == 1
    monkeypatch.setenv("NRLOC_THREADS", "0")
    with pytest.raises(ConfigError):
        worker_count(4)
    monkeypatch.setenv("NRLOC_THREADS", "many")
    with pytest.raises(ConfigError):
        worker_count(4)
    monkeypatch.delenv("NRLOC_THREADS")
    assert parallel_map(lambda i: i * i, 6, threads=3) == [0, 1, 4, 9, 16, 25]


def test_runspec_validation():
    for kw in ({"runs": 0}, {"method": "gps"}, {"level": "exact"}, {"mu": 9}, {"gate": 0.0}):
        with pytest.raises(ConfigError):
            RunSpec("builtin:square", **kw)


@pytest.mark.parametrize("method", ["dl_tdoa", "multi_rtt", "ul_aoa", "fused"])
def test_noiseless_static_is_exact(method):
    r = run_static(RunSpec(_quiet_square(), method=method, runs=2, seed=1))
    assert r.rmse < 1e-3
    assert r.failures == 0


def test_static_deterministic_and_written(tmp_path):
    spec = RunSpec("builtin:square", runs=6, seed=11, out=str(tmp_path / "a"))
    a = run_static(spec, threads=1)
    b = run_static(RunSpec("builtin:square", runs=6, seed=11, out=str(tmp_path / "b")), threads=4)
    assert a.to_json() == b.to_json()
    for name in ("report.json", "errors.csv", "cdf.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert report["rmse"] == pytest.approx(a.rmse) and report["meta"]["seed"] == 11
    with open(tmp_path / "a" / "errors.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1 + a.n


def test_track_requires_trajectory_and_runs():
    with pytest.raises(ConfigError):
        run_track(RunSpec("builtin:office", runs=1))
    sc = _quiet_square()
    sc.trajectory = gen_random_walk([100, 100, 1.5], [1, 1, 0], 15, seed=2)
    r = run_track(RunSpec(sc, runs=2, seed=0))
    assert r.n == 30 and r.rmse < 0.5
