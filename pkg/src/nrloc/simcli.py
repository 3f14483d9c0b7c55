"""Monte-Carlo orchestration: per-run measurement pipelines, solvers, filters and metrics.

Every Monte-Carlo run owns a random stream derived from ``(seed, run_index)``
and runs are folded back in index order, so reports do not depend on the
number of worker threads (``NRLOC_THREADS``).
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Callable, Sequence

import numpy as np

from . import beam, linklevel
from .constants import SPEED_OF_LIGHT, SUBCARRIERS_PER_RB
from .errors import AcquisitionError, ConfigError, GeometryError, RankDeficiencyError, SolverError
from .estimators import (
    DEFAULT_RESIDUAL_THRESHOLD_DEG,
    MapConstraint,
    PositionEstimate,
    SolverConfig,
    TrackState,
    ekf_step,
    measured_value,
    measurement_model,
    residual_nlos_filter,
    solve_nls,
    solve_nls_robust,
)
from .geometry import BasePose, Scenario, los_check, wrap_angle
from .grid5g import numerology_params
from .measurements import (
    ANGLE_KINDS,
    Measurement,
    MeasurementSet,
    NoiseModel,
    derive_rng,
    gen_aoa,
    gen_rtt,
    gen_tdoa_set,
    link_quality_db,
    select_reference_bs,
)

METHODS = ("dl_tdoa", "multi_rtt", "ul_aoa", "dl_aod", "fused", "rtt_aoa")
LEVELS = ("geometric", "linklevel")


@dataclass(frozen=True)
class RunSpec:
    """One simulation request.

    Args:
        scenario: Path of a TOML scenario, ``builtin:<name>``, or a Scenario.
        method: Positioning method, one of ``METHODS``.
        level: ``geometric`` (calibrated synthetic measurements) or
            ``linklevel`` (waveform TOA, MUSIC AOA, RE-level beam sweeps).
        mu: Numerology; defaults to the scenario's.
        runs: Monte-Carlo replications.
        seed: Master seed.
        out: Output directory for the report files.
        nlos_rejection: Residual filter (static) or innovation gating (track).
        map_filter: Drop static fixes outside the scenario constraint.
        residual_threshold: Residual-filter threshold (degrees for angle rows).
        gate: Normalized-innovation gate used by the tracker when rejecting.
        solver: Gauss-Newton settings.
    """

    scenario: object
    method: str = "dl_tdoa"
    level: str = "geometric"
    mu: int | None = None
    runs: int = 100
    seed: int = 0
    out: str | None = None
    nlos_rejection: bool = False
    map_filter: bool = False
    residual_threshold: float = DEFAULT_RESIDUAL_THRESHOLD_DEG
    gate: float = 3.0
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.level not in LEVELS:
            raise ConfigError(f"unknown level {self.level!r}; choose from {LEVELS}")
        if self.mu is not None:
            numerology_params(self.mu)
        if self.gate <= 0 or self.residual_threshold <= 0:
            raise ConfigError("gate and residual threshold must be > 0")


@dataclass
class MetricsReport:
    bias: np.ndarray
    rmse: float
    mae: float
    errors: np.ndarray
    cdf_x: np.ndarray
    cdf_y: np.ndarray
    measurement_sigma: dict = field(default_factory=dict)
    rejected_fraction: float = 0.0
    failures: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def bias_norm(self) -> float:
        return float(np.linalg.norm(self.bias))

    @property
    def n(self) -> int:
        return len(self.errors)

    def cdf(self, x: float) -> float:
        return float(np.searchsorted(self.cdf_x, x, side="right") / len(self.cdf_x))

    def to_dict(self) -> dict:
        return {
            "meta": self.meta,
            "n": self.n,
            "bias": [float(v) for v in self.bias],
            "bias_norm": self.bias_norm,
            "rmse": float(self.rmse),
            "mae": float(self.mae),
            "rejected_fraction": float(self.rejected_fraction),
            "failures": int(self.failures),
            "measurement_sigma": {k: float(v) for k, v in sorted(self.measurement_sigma.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def write(self, out_dir) -> list[FsPath]:
        """report.json, errors.csv (per-epoch error vectors) and cdf.csv."""
        out = FsPath(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "report.json", out / "errors.csv", out / "cdf.csv"]
        paths[0].write_text(self.to_json() + "\n", encoding="utf-8")
        axes = ["ex", "ey", "ez"][: self.errors.shape[1]]
        with open(paths[1], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["index", *axes, "norm"])
            for i, e in enumerate(self.errors):
                w.writerow([i, *(repr(float(v)) for v in e), repr(float(np.linalg.norm(e)))])
        with open(paths[2], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["error_m", "cdf"])
            for x, y in zip(self.cdf_x, self.cdf_y):
                w.writerow([repr(float(x)), repr(float(y))])
        return paths


def compute_metrics(errors, **extra) -> MetricsReport:
    """Bias vector, RMSE, MAE and empirical CDF of position-error vectors."""
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise ConfigError("no position errors to summarize")
    e = np.atleast_2d(e)
    norms = np.linalg.norm(e, axis=1)
    xs = np.sort(norms)
    ys = np.arange(1, len(xs) + 1) / len(xs)
    return MetricsReport(e.mean(axis=0), float(np.sqrt(np.mean(norms**2))), float(norms.mean()), e, xs, ys, **extra)


def gen_random_walk(start, sigma, n: int, seed=0, interval: float = 0.7134) -> np.ndarray:
    """Trajectory of ``n`` points with i.i.d. Gaussian steps of per-axis std ``sigma``.

    ``sigma`` is the step spread per sampling ``interval``; it is kept here
    for record keeping since the steps are already per-epoch.
    """
    if n < 1:
        raise ConfigError("random walk needs n >= 1")
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), (3,))
    if np.any(sig < 0) or interval <= 0:
        raise ConfigError("random walk needs sigma >= 0 and interval > 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    steps = rng.standard_normal((n - 1, 3)) * sig
    return np.vstack([np.asarray(start, float)[None], np.asarray(start, float) + np.cumsum(steps, axis=0)])


def worker_count(default: int | None = None) -> int:
    """Worker threads, capped by the NRLOC_THREADS environment variable."""
    n = default or os.cpu_count() or 1
    env = os.environ.get("NRLOC_THREADS")
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise ConfigError(f"NRLOC_THREADS must be an integer, got {env!r}") from None
        if cap < 1:
            raise ConfigError("NRLOC_THREADS must be >= 1")
        n = min(n, cap)
    return max(1, n)


def parallel_map(fn: Callable[[int], object], n: int, threads: int | None = None) -> list:
    """``[fn(i) for i in range(n)]`` on a thread pool, results in index order."""
    workers = min(worker_count(threads), n)
    if workers <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, range(n)))


# ---------------------------------------------------------------------------
# measurement pipelines


def noise_for(sc: Scenario, mu: int) -> NoiseModel:
    """Calibrated noise for ``mu`` with the scenario's ``[noise]`` overrides."""
    cfg = sc.extras.get("noise", {})
    kw = {}
    if "sigma_tof_m" in cfg:
        kw["sigma_tof"] = cfg["sigma_tof_m"] / SPEED_OF_LIGHT
    for key, name in (("sigma_az_deg", "sigma_az"), ("sigma_el_deg", "sigma_el"),
                      ("nlos_az_sigma_deg", "nlos_az_sigma"), ("nlos_el_bias_deg", "nlos_el_bias_sigma")):
        if key in cfg:
            kw[name] = float(np.radians(cfg[key]))
    if "nlos_excess_mean_m" in cfg:
        kw["nlos_excess_mean"] = float(cfg["nlos_excess_mean_m"])
    if "sigma_rss_db" in cfg:
        kw["sigma_rss"] = float(cfg["sigma_rss_db"])
    for key in ("p0_dbm", "alpha"):
        if key in cfg:
            kw[key] = float(cfg[key])
    if "sigma_tof" in kw:
        return NoiseModel(**kw)
    try:
        return NoiseModel.calibrated(mu, **kw)
    except ConfigError:
        # no calibration row: scale the ranging spread with the bandwidth
        base = NoiseModel.calibrated(3)
        return NoiseModel(sigma_tof=base.sigma_tof * 2 ** (3 - mu), **kw)


def beambook_for(sc: Scenario) -> beam.BeamBook:
    cfg = dict(sc.extras.get("beam", {}))
    kw = {}
    for key in ("sector_az", "sector_el", "center_az", "center_el"):
        if key + "_deg" in cfg:
            kw[key] = float(np.radians(cfg[key + "_deg"]))
    for key in ("n_ssb_az", "n_ssb_el", "n_prs_az", "n_prs_el"):
        if key in cfg:
            kw[key] = int(cfg[key])
    return beam.BeamBook(**kw)


class Pipeline:
    """Measurement generation for one scenario, method and numerology."""

    def __init__(self, sc: Scenario, spec: RunSpec):
        self.sc = sc
        self.spec = spec
        self.mu = spec.mu if spec.mu is not None else sc.rf.mu
        self.noise = noise_for(sc, self.mu)
        opts = sc.extras.get("options", {})
        self.dims = int(opts.get("dims", 2))
        if self.dims not in (2, 3):
            raise ConfigError("options.dims must be 2 or 3")
        self.max_range = float(opts.get("max_range", np.inf))
        self.reply_time = float(opts.get("reply_time", 0.0))
        self.p_multipath = float(sc.extras.get("noise", {}).get("p_multipath", 0.0))
        self.poses = sc.poses_by_id
        self.book = beambook_for(sc)
        self.wavelength = sc.rf.wavelength
        self.beam_noise = beam.BeamNoise.thermal(self.mu, sc.rf.noise_figure_db, sc.rf.t_ant_k)
        self.constraint = MapConstraint(sc.constraint) if sc.constraint else None

    # -- link helpers -----------------------------------------------------
    def links(self, u) -> list[BasePose]:
        return [p for p in self.sc.base_stations if np.linalg.norm(p.position - u) <= self.max_range]

    def visibility(self, u, poses) -> dict[int, bool]:
        return {p.bs_id: los_check(u, p.position, self.sc.obstacles) for p in poses}

    def channel(self, tx, rx) -> linklevel.TapChannel:
        return linklevel.channel_from_geometry(tx, rx, self.sc.obstacles, self.wavelength)

    # -- per-method generators -------------------------------------------
    def tof_linklevel(self, u, pose: BasePose, rng) -> float | None:
        """TOF from a waveform passed through the geometric channel with thermal noise."""
        ch = self.channel(pose.position, u)
        if not ch.paths:
            return None
        num = numerology_params(self.mu)
        n_sc = min(int(self.sc.rf.n_rb) * SUBCARRIERS_PER_RB, self.sc.rf.n_fft - 1)
        ref = linklevel.prs_symbol_waveform(n_sc, self.mu, self.sc.rf.n_fft, np.random.default_rng(pose.bs_id))
        pad = int(np.ceil(ch.max_delay * ref.sample_rate)) + 64
        tx = ref.with_samples(np.concatenate([ref.samples, np.zeros(pad, complex)]))
        p_tx = 10 ** ((pose.tx_power_dbm - 30) / 10) * pose.array_shape[0] * pose.array_shape[1]
        scale = np.sqrt(p_tx / np.mean(np.abs(ref.samples) ** 2))
        rx = linklevel.apply_channel(tx.with_samples(tx.samples * scale), ch)
        bw = n_sc * num.scs_hz
        rx = linklevel.add_awgn(rx, bw, self.sc.rf.noise_figure_db, self.sc.rf.t_ant_k, rng)
        return linklevel.estimate_toa(rx, ref, "first_peak", True)

    def tdoa(self, u, poses, los, rng) -> list[Measurement]:
        if len(poses) < 2:
            return []
        quality = {p.bs_id: link_quality_db(u, p, los[p.bs_id], self.sc.rf.carrier_ghz) for p in poses}
        ref = select_reference_bs(quality)
        if self.spec.level == "geometric":
            return gen_tdoa_set(u, poses, self.noise, ref, los, rng)
        tofs = {p.bs_id: self.tof_linklevel(u, p, rng) for p in poses}
        if tofs[ref] is None:
            return []
        sigma = np.sqrt(2.0) * self.noise.sigma_tof
        return [
            Measurement("TDOA", tofs[p.bs_id] - tofs[ref], sigma, p.bs_id, ref, los=los[p.bs_id] and los[ref])
            for p in poses
            if p.bs_id != ref and tofs[p.bs_id] is not None
        ]

    def rtt(self, u, poses, los, rng) -> list[Measurement]:
        if self.spec.level == "geometric":
            return [gen_rtt(u, p, self.noise, self.reply_time, los[p.bs_id], rng) for p in poses]
        out = []
        for p in poses:
            down = self.tof_linklevel(u, p, rng)
            up = self.tof_linklevel(u, p, rng)
            if down is None or up is None:
                continue
            out.append(Measurement("RTT", down + up + self.reply_time, np.sqrt(2.0) * self.noise.sigma_tof,
                                   p.bs_id, los=los[p.bs_id], reply_time=self.reply_time))
        return out

    def aoa(self, u, poses, los, rng) -> list[Measurement]:
        out = []
        for p in poses:
            if self.spec.level == "linklevel":
                out += self._aoa_music(u, p, los[p.bs_id], rng)
                continue
            if self.p_multipath > 0 and rng.random() < self.p_multipath:
                refl = [q for q in self.channel(u, p.position).paths if not q.los]
                if refl:
                    # a reflected arrival is taken for the direct one
                    q = max(refl, key=lambda q: abs(q.gain))
                    az = q.aoa[0] - p.orientation.yaw + rng.normal(0, self.noise.sigma_az)
                    el = q.aoa[1] - p.orientation.roll + rng.normal(0, self.noise.sigma_el)
                    out += [
                        Measurement("AOA_AZ", wrap_angle(az), self.noise.sigma_az, p.bs_id, los=False),
                        Measurement("AOA_EL", wrap_angle(el), self.noise.sigma_el, p.bs_id, los=False),
                    ]
                    continue
            out += list(gen_aoa(u, p, self.noise, los[p.bs_id], rng))
        return out

    def _aoa_music(self, u, p: BasePose, los, rng) -> list[Measurement]:
        ch = self.channel(u, p.position)
        if not ch.paths:
            return []
        x = linklevel.snapshot_from_channel(ch, p.array_shape, self.wavelength, 100, 20.0, rng,
                                            (p.orientation.yaw, p.orientation.roll))
        az_grid = np.radians(np.arange(-90, 90.001, 1.0))
        el_grid = np.radians(np.arange(-45, 45.001, 1.0))
        r = linklevel.music_aoa(x, p.array_shape, 1, az_grid, el_grid, self.wavelength, np.radians(0.05))
        return [
            Measurement("AOA_AZ", float(r.az[0]), self.noise.sigma_az, p.bs_id, los=los),
            Measurement("AOA_EL", float(r.el[0]), self.noise.sigma_el, p.bs_id, los=los),
        ]

    def aod(self, u, poses, los, rng) -> list[Measurement]:
        mode = "fast" if self.spec.level == "geometric" else "waveform"
        use_el = self.book.n_ssb_el > 1 or self.book.n_prs_el > 1
        out = []
        for p in poses:
            try:
                m_az, m_el = beam.measure_aod(p, self.channel(p.position, u), self.book, self.beam_noise, rng,
                                              mode, self.wavelength, self.mu)
            except AcquisitionError:
                continue
            out.append(m_az)
            if use_el:
                out.append(m_el)
        return out

    def measure(self, u, rng) -> list[Measurement]:
        poses = self.links(u)
        los = self.visibility(u, poses)
        m = self.spec.method
        if m == "dl_tdoa":
            return self.tdoa(u, poses, los, rng)
        if m == "multi_rtt":
            return self.rtt(u, poses, los, rng)
        if m == "ul_aoa":
            return self.aoa(u, poses, los, rng)
        if m == "dl_aod":
            return self.aod(u, poses, los, rng)
        if m == "rtt_aoa":
            return self.rtt(u, poses, los, rng) + self.aoa(u, poses, los, rng)
        return self.tdoa(u, poses, los, rng) + self.aoa(u, poses, los, rng)

    def measurement_errors(self, u, ms: Sequence[Measurement]) -> list[tuple[str, float]]:
        """(kind, measured - true) in meters or degrees."""
        out = []
        for m in ms:
            ref = self.poses[m.ref_bs_id] if m.kind == "TDOA" else None
            v, _ = measured_value(m)
            err = v - measurement_model(m.kind, u, self.poses[m.bs_id], ref)
            if m.kind in ANGLE_KINDS:
                err = float(np.degrees(wrap_angle(err)))
            out.append((m.kind, float(err)))
        return out

    def solve(self, ms, u, init=None) -> PositionEstimate:
        z = float(u[2]) if self.dims == 2 else None
        return solve_nls(ms, self.poses, self.spec.solver, z=z, init=init)

    def error(self, est_position, u) -> np.ndarray:
        return np.asarray(est_position)[: self.dims] - np.asarray(u)[: self.dims]


def _sigma_summary(pairs) -> dict:
    by_kind: dict[str, list] = {}
    for kind, err in pairs:
        by_kind.setdefault(kind, []).append(err)
    return {k: float(np.std(v)) for k, v in by_kind.items() if len(v) > 1}


def _load(spec: RunSpec) -> Scenario:
    if isinstance(spec.scenario, Scenario):
        return spec.scenario
    from .scenarios import load_scenario

    return load_scenario(spec.scenario)


def _meta(spec: RunSpec, sc: Scenario, kind: str) -> dict:
    return {
        "kind": kind,
        "scenario": sc.name,
        "method": spec.method,
        "level": spec.level,
        "mu": spec.mu if spec.mu is not None else sc.rf.mu,
        "runs": spec.runs,
        "seed": spec.seed,
        "nlos_rejection": spec.nlos_rejection,
        "map_filter": spec.map_filter,
    }


@dataclass
class StaticRun:
    errors: list
    estimates: list
    truths: list
    accepted: list
    meas_errors: list
    failures: int
    sets: list


def static_run(pipe: Pipeline, run_index: int) -> StaticRun:
    """One Monte-Carlo replication over every UE point of the scenario."""
    spec = pipe.spec
    rng = derive_rng(spec.seed, run_index)
    out = StaticRun([], [], [], [], [], 0, [])
    pts = pipe.sc.ue_points
    for k, u in enumerate(pts):
        ms = pipe.measure(u, rng)
        out.sets.append(MeasurementSet(float(run_index * len(pts) + k), ms, u.copy()))
        out.meas_errors += pipe.measurement_errors(u, ms)
        try:
            est = pipe.solve(ms, u)
        except (RankDeficiencyError, GeometryError):
            out.failures += 1
            continue
        keep = True
        if spec.nlos_rejection:
            keep = residual_nlos_filter(est, spec.residual_threshold).accept
        if keep and spec.map_filter and pipe.constraint is not None:
            keep = bool(pipe.constraint.contains(est.position)[0])
        out.estimates.append(est)
        out.truths.append(u)
        out.accepted.append(keep)
        if keep:
            out.errors.append(pipe.error(est.position, u))
    return out


def run_static(spec: RunSpec, threads: int | None = None, return_runs: bool = False):
    """Snapshot positioning of every UE point, ``spec.runs`` times."""
    sc = _load(spec)
    if sc.ue_points is None or len(sc.ue_points) == 0:
        raise ConfigError("static run needs UE points")
    pipe = Pipeline(sc, spec)
    runs = parallel_map(lambda i: static_run(pipe, i), spec.runs, threads)
    errors = [e for r in runs for e in r.errors]
    n_est = sum(len(r.accepted) for r in runs)
    n_acc = sum(sum(r.accepted) for r in runs)
    failures = sum(r.failures for r in runs)
    if not errors:
        raise SolverError("no position fix survived the solver and filters")
    report = compute_metrics(
        errors,
        measurement_sigma=_sigma_summary([p for r in runs for p in r.meas_errors]),
        rejected_fraction=1.0 - n_acc / n_est if n_est else 0.0,
        failures=failures,
        meta=_meta(spec, sc, "static"),
    )
    if spec.out:
        report.write(spec.out)
    return (report, runs) if return_runs else report


@dataclass
class TrackRun:
    errors: list
    positions: list
    rejected: int
    used: int
    meas_errors: list
    sets: list
    reseeds: int = 0


def _q_sigma(sc: Scenario, dims: int) -> np.ndarray:
    opts = sc.extras.get("options", {})
    if "q_sigma" in opts:
        q = float(opts["q_sigma"])
    else:
        steps = np.linalg.norm(np.diff(sc.trajectory, axis=0), axis=1)
        q = float(np.median(steps)) if len(steps) else 1.0
    q = max(q, 1e-3)
    return np.array([q, q, 0.0 if dims == 2 else q])


def _seed_state(pipe: "Pipeline", ms, u, q, t: float, out: "TrackRun") -> TrackState:
    """Snapshot fix as the prior, else the BS centroid with a hall-sized spread."""
    spec, sc = pipe.spec, pipe.sc
    var_z = 0.0 if pipe.dims == 2 else 100.0
    centroid = np.mean([p.position for p in sc.base_stations], axis=0)
    spread = max(np.max(np.linalg.norm([p.position - centroid for p in sc.base_stations], axis=1)), 1.0)
    mean, var = centroid, spread**2
    z = float(u[2]) if pipe.dims == 2 else None
    try:
        if spec.nlos_rejection:
            fix, dropped = solve_nls_robust(ms, pipe.poses, spec.solver, gate=spec.gate, z=z)
            out.rejected += dropped
            out.used += len(ms) - dropped
        else:
            fix = pipe.solve(ms, u)
        # a fix that ran off along a hyperbola asymptote is no prior at all
        if fix.converged and np.linalg.norm(fix.position[:2] - centroid[:2]) < 2 * spread:
            mean, var = fix.position.copy(), 25.0
    except (RankDeficiencyError, GeometryError):
        pass
    if pipe.dims == 2:
        mean[2] = u[2]
    return TrackState(mean, np.diag([var, var, var_z]), q, sc.epoch_interval, t=t)


def track_run(pipe: Pipeline, run_index: int) -> TrackRun:
    """One replication of the trajectory through the EKF."""
    spec = pipe.spec
    sc = pipe.sc
    rng = derive_rng(spec.seed, run_index)
    gate = spec.gate if spec.nlos_rejection else None
    q = _q_sigma(sc, pipe.dims)
    out = TrackRun([], [], 0, 0, [], [])
    state = None
    for k, u in enumerate(sc.trajectory):
        ms = pipe.measure(u, rng)
        out.sets.append(MeasurementSet(k * sc.epoch_interval, ms, u.copy()))
        out.meas_errors += pipe.measurement_errors(u, ms)
        if state is not None:
            state = ekf_step(state, MeasurementSet(k * sc.epoch_interval, ms), pipe.poses, gate=gate,
                             min_keep=pipe.dims)
            out.rejected += state.n_rejected
            out.used += state.n_used
            if state.gate_saturated:
                # the track no longer agrees with any subset of the measurements: re-seed
                out.reseeds += 1
                state = None
        if state is None:
            state = _seed_state(pipe, ms, u, q, k * sc.epoch_interval, out)
        out.positions.append(state.position.copy())
        out.errors.append(pipe.error(state.position, u))
    return out


def run_track(spec: RunSpec, threads: int | None = None, return_runs: bool = False):
    """EKF tracking along the scenario trajectory, ``spec.runs`` times."""
    sc = _load(spec)
    if sc.trajectory is None or len(sc.trajectory) == 0:
        raise ConfigError("track run needs a trajectory")
    pipe = Pipeline(sc, spec)
    runs = parallel_map(lambda i: track_run(pipe, i), spec.runs, threads)
    rejected = sum(r.rejected for r in runs)
    total = rejected + sum(r.used for r in runs)
    report = compute_metrics(
        [e for r in runs for e in r.errors],
        measurement_sigma=_sigma_summary([p for r in runs for p in r.meas_errors]),
        rejected_fraction=rejected / total if total else 0.0,
        meta=_meta(spec, sc, "track"),
    )
    if spec.out:
        report.write(spec.out)
    return (report, runs) if return_runs else report


def nlos_fraction(sc: Scenario, points=None) -> float:
    """Share of points that see at least one BS without line of sight."""
    pts = sc.trajectory if points is None else points
    flags = [not all(sc.visibility(u).values()) for u in pts]
    return float(np.mean(flags))


def residual_filter_trial(seed: int, n_fixes: int = 200, p_nlos: float = 0.3, threshold: float = DEFAULT_RESIDUAL_THRESHOLD_DEG,
                          side: float = 200.0) -> tuple[float, float, float]:
    """UL-AOA fixes on the open square with a LOS/NLOS mixture.

    A fraction ``p_nlos`` of the fixes has every link NLOS with probability
    one half (at least one).  Returns (unfiltered RMSE, filtered RMSE,
    rejected fraction).
    """
    from .scenarios import square_outdoor

    sc = square_outdoor(side=side)
    rng = np.random.default_rng([seed, 7])
    noise = NoiseModel.calibrated(1)
    poses = sc.base_stations
    err_all, err_kept, rejected = [], [], 0
    for _ in range(n_fixes):
        u = np.array([rng.uniform(0.2, 0.8) * side, rng.uniform(0.2, 0.8) * side, 1.5])
        nlos = np.zeros(len(poses), dtype=bool)
        if rng.random() < p_nlos:
            while not nlos.any():
                nlos = rng.random(len(poses)) < 0.5
        ms = [m for p, bad in zip(poses, nlos) for m in gen_aoa(u, p, noise, not bad, rng)]
        est = solve_nls(ms, poses, z=u[2])
        e = np.linalg.norm(est.position[:2] - u[:2])
        err_all.append(e)
        if residual_nlos_filter(est, threshold).accept:
            err_kept.append(e)
        else:
            rejected += 1
    rmse = lambda v: float(np.sqrt(np.mean(np.square(v)))) if len(v) else float("nan")
    return rmse(err_all), rmse(err_kept), rejected / n_fixes
