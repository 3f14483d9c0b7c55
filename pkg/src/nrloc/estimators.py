"""Position estimators: Jacobians, Gauss-Newton (W)NLS, EKF tracking and NLOS filters.

Heterogeneous measurements are stacked in "solver units": time-type values
are converted to meters (times c), angles stay in radians and RSS in dB.
Weights are 1/sigma^2 in those same units.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .constants import SPEED_OF_LIGHT
from .errors import ConfigError, GeometryError, RankDeficiencyError, SolverError
from .geometry import BasePose, wrap_angle
from .measurements import ANGLE_KINDS, Measurement, MeasurementSet, tof_from_rtt

_LN10 = np.log(10.0)
_RANGE_KINDS = ("TOA", "TOF", "RTT")


class RankDeficiencyWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class RssModel:
    p0_dbm: float = -40.0
    d0: float = 1.0
    alpha: float = 2.0


def _pos(p) -> np.ndarray:
    return p.position if isinstance(p, BasePose) else np.asarray(p, dtype=float)


def _offsets(p) -> tuple[float, float]:
    if isinstance(p, BasePose):
        return p.orientation.yaw, p.orientation.roll
    return 0.0, 0.0


def _diff(u, s):
    """Components s - u and the distances d, d_xy."""
    dvec = s - u
    dxy = math.hypot(dvec[0], dvec[1])
    return dvec, math.hypot(dxy, dvec[2]), dxy


def measurement_model(kind: str, u, pose, ref_pose=None, rss: RssModel = RssModel()) -> float:
    """Noise-free measurement h(s, u) in solver units."""
    u = np.asarray(u, dtype=float)
    if kind in _RANGE_KINDS:
        d = _diff(u, _pos(pose))[1]
        return d
    if kind == "TDOA":
        return _diff(u, _pos(pose))[1] - _diff(u, _pos(ref_pose))[1]
    if kind in ("AOA_AZ", "AOD_AZ"):
        dvec = -_diff(u, _pos(pose))[0]
        return wrap_angle(np.arctan2(dvec[1], dvec[0]) - _offsets(pose)[0])
    if kind in ("AOA_EL", "AOD_EL"):
        dvec, _, dxy = _diff(u, _pos(pose))
        return wrap_angle(np.arctan2(dvec[2], dxy) - _offsets(pose)[1])
    if kind == "RSS":
        d = _diff(u, _pos(pose))[1]
        return rss.p0_dbm - 10 * rss.alpha * np.log10(d / rss.d0)
    raise ConfigError(f"unknown measurement kind {kind!r}")


def jacobian_row(kind: str, u, pose, ref_pose=None, rss: RssModel = RssModel()) -> np.ndarray:
    """Gradient of h(s, u) with respect to u = (x, y, z)."""
    u = np.asarray(u, dtype=float)
    dvec, d, dxy = _diff(u, _pos(pose))
    if d < 1e-12:
        raise GeometryError("UE coincides with the base station")
    if kind in _RANGE_KINDS:
        return (u - _pos(pose)) / d
    if kind == "TDOA":
        dj = _diff(u, _pos(ref_pose))[1]
        if dj < 1e-12:
            raise GeometryError("UE coincides with the reference base station")
        return (u - _pos(pose)) / d - (u - _pos(ref_pose)) / dj
    if kind in ANGLE_KINDS and dxy < 1e-12:
        raise GeometryError("UE on the vertical axis of the base station")
    dx, dy, dz = dvec
    if kind in ("AOA_AZ", "AOD_AZ"):
        return np.array([dy / dxy**2, -dx / dxy**2, 0.0])
    if kind in ("AOA_EL", "AOD_EL"):
        return np.array([dz * dx / (d**2 * dxy), dz * dy / (d**2 * dxy), -dxy / d**2])
    if kind == "RSS":
        return -10 * rss.alpha / _LN10 * (u - _pos(pose)) / d**2
    raise ConfigError(f"unknown measurement kind {kind!r}")


def measured_value(m: Measurement) -> tuple[float, float]:
    """(value, sigma) of a measurement in solver units."""
    if m.kind in ("TOF", "TDOA"):
        return m.value * SPEED_OF_LIGHT, m.sigma * SPEED_OF_LIGHT
    if m.kind == "RTT":
        # the extracted one-way time halves the RTT spread
        return tof_from_rtt(m) * SPEED_OF_LIGHT, m.sigma * SPEED_OF_LIGHT / 2
    return m.value, m.sigma


def stack(measurements: Iterable[Measurement], poses: Mapping[int, BasePose], u,
          rss: RssModel = RssModel()):
    """Residuals, Jacobian and sigmas of all measurements at ``u``."""
    res, rows, sig = [], [], []
    for m in measurements:
        pose = poses[m.bs_id]
        ref = poses[m.ref_bs_id] if m.kind == "TDOA" else None
        value, sigma = measured_value(m)
        h = measurement_model(m.kind, u, pose, ref, rss)
        r = value - h
        if m.kind in ANGLE_KINDS:
            r = wrap_angle(r)
        res.append(r)
        rows.append(jacobian_row(m.kind, u, pose, ref, rss))
        sig.append(sigma)
    return np.asarray(res, float), np.asarray(rows, float).reshape(-1, 3), np.asarray(sig, float)


@dataclass(frozen=True)
class SolverConfig:
    """Iterative NLS settings.

    The default step is a full Gauss-Newton step, halved while it increases
    the weighted cost (``line_search``); :meth:`damped` gives the fixed damped
    setting (step 0.01) used for the reference experiments.
    """

    step: float = 1.0
    max_iter: int = 1000
    tol: float = 1e-4
    method: str = "gauss-newton"
    lm_lambda0: float = 1e-3
    line_search: bool = True

    def __post_init__(self):
        if self.step <= 0 or self.max_iter < 1 or self.tol <= 0:
            raise ConfigError("solver needs step > 0, max_iter >= 1, tol > 0")
        if self.method not in ("gauss-newton", "lm"):
            raise ConfigError(f"unknown solver method {self.method!r}")

    @classmethod
    def damped(cls) -> "SolverConfig":
        return cls(step=0.01, max_iter=1000, tol=1e-4, line_search=False)


@dataclass
class PositionEstimate:
    position: np.ndarray
    covariance: np.ndarray
    residuals: np.ndarray
    kinds: tuple = ()
    iterations: int = 0
    converged: bool = False
    cost: float = float("nan")
    epoch: float = 0.0

    def residual_statistic(self, kinds: Iterable[str] | None = None) -> float:
        """Mean absolute residual; angle rows in degrees, others in solver units."""
        if len(self.residuals) == 0:
            return 0.0
        r = np.abs(np.asarray(self.residuals, float))
        k = np.asarray(self.kinds)
        is_angle = np.isin(k, ANGLE_KINDS)
        r = np.where(is_angle, np.degrees(r), r)
        if kinds is not None:
            sel = np.isin(k, list(kinds))
            if not sel.any():
                return 0.0
            r = r[sel]
        return float(r.mean())

    def to_json(self) -> str:
        return json.dumps(
            {
                "epoch": self.epoch,
                "position": [float(v) for v in self.position],
                "covariance": np.asarray(self.covariance, float).tolist(),
                "residuals": [float(v) for v in self.residuals],
                "kinds": list(self.kinds),
                "iterations": int(self.iterations),
                "converged": bool(self.converged),
                "cost": float(self.cost),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "PositionEstimate":
        r = json.loads(line)
        return cls(
            np.asarray(r["position"], float),
            np.asarray(r["covariance"], float),
            np.asarray(r["residuals"], float),
            tuple(r["kinds"]),
            r["iterations"],
            r["converged"],
            r["cost"],
            r.get("epoch", 0.0),
        )


def _initial_guess(poses_used: Sequence[BasePose], z):
    pts = np.array([p.position for p in poses_used])
    u0 = pts.mean(axis=0)
    if z is not None:
        u0[2] = z
    # a guess on top of a BS makes every row singular: nudge along its boresight
    for p in poses_used:
        if np.linalg.norm(u0 - p.position) < 1e-6 or np.hypot(*(u0 - p.position)[:2]) < 1e-6:
            yaw = p.orientation.yaw
            u0 = u0 + np.array([np.cos(yaw), np.sin(yaw), 0.0])
    return u0


def _normal_solve(A, b):
    n = A.shape[0]
    scale = max(np.trace(A) / n, 1e-300)
    ev = np.linalg.eigvalsh(A)
    if not np.all(np.isfinite(ev)) or ev[0] <= 1e-12 * ev[-1]:
        warnings.warn("normal matrix is rank deficient; applying Tikhonov damping",
                      RankDeficiencyWarning, stacklevel=3)
        A = A + 1e-9 * scale * np.eye(n)
    x = np.linalg.solve(A, b)
    if not np.all(np.isfinite(x)):
        raise SolverError("non-finite Gauss-Newton correction")
    return x


def solve_nls(measurements: MeasurementSet | Sequence[Measurement], poses: Mapping[int, BasePose] | Sequence[BasePose],
              config: SolverConfig = SolverConfig(), weighted: bool = True, z: float | None = None,
              init=None, rss: RssModel = RssModel()) -> PositionEstimate:
    """Iterative (weighted) nonlinear least squares position fix.

    ``z`` fixes the UE height (2D mode).  ``init`` overrides the starting
    point, which defaults to the centroid of the participating base stations.
    """
    if not isinstance(poses, Mapping):
        poses = {p.bs_id: p for p in poses}
    ms = list(measurements)
    epoch = measurements.epoch if isinstance(measurements, MeasurementSet) else 0.0
    n_unknown = 2 if z is not None else 3
    if len(ms) < n_unknown:
        raise RankDeficiencyError(f"{len(ms)} measurements for {n_unknown} unknowns")
    ids = sorted({m.bs_id for m in ms} | {m.ref_bs_id for m in ms if m.ref_bs_id is not None})
    u = _initial_guess([poses[i] for i in ids], z) if init is None else np.array(init, dtype=float)
    if z is not None:
        u[2] = z
    cols = slice(0, n_unknown)

    def cost_at(x):
        r, _, s = stack(ms, poses, x, rss)
        w = 1 / s**2 if weighted else np.ones_like(s)
        return float(np.sum(w * r**2))

    lam = config.lm_lambda0
    converged = False
    k = 0
    for k in range(1, config.max_iter + 1):
        r, H, s = stack(ms, poses, u, rss)
        w = 1 / s**2 if weighted else np.ones_like(s)
        Hc = H[:, cols]
        A = Hc.T @ (w[:, None] * Hc)
        b = Hc.T @ (w * r)
        if config.method == "lm":
            c0 = float(np.sum(w * r**2))
            while True:
                delta = _normal_solve(A + lam * np.diag(np.diag(A)), b)
                trial = u.copy()
                trial[cols] += config.step * delta
                if cost_at(trial) <= c0 or lam > 1e12:
                    lam = max(lam / 10, 1e-12)
                    break
                lam *= 10
        else:
            delta = _normal_solve(A, b)
        step = config.step * delta
        if config.line_search and config.method != "lm":
            c0 = float(np.sum(w * r**2))
            for _ in range(40):
                trial = u.copy()
                trial[cols] += step
                if cost_at(trial) <= c0:
                    break
                step = step / 2
        u[cols] += step
        if np.linalg.norm(step) < config.tol:
            converged = True
            break
    r, H, s = stack(ms, poses, u, rss)
    w = 1 / s**2 if weighted else np.ones_like(s)
    Hc = H[:, cols]
    cov = np.zeros((3, 3))
    info = Hc.T @ (w[:, None] * Hc)
    try:
        sub = np.linalg.pinv(info)
        if not weighted:
            # unweighted fit: scale by the residual variance
            dof = max(len(r) - n_unknown, 1)
            sub = sub * float(np.sum(r**2)) / dof
    except np.linalg.LinAlgError:
        sub = np.full((n_unknown, n_unknown), np.inf)
    cov[cols, cols] = 0.5 * (sub + sub.T)
    return PositionEstimate(u, cov, r, tuple(m.kind for m in ms), k, converged,
                            float(np.sum(w * r**2)), epoch)


def solve_nls_robust(measurements: MeasurementSet | Sequence[Measurement],
                     poses: Mapping[int, BasePose] | Sequence[BasePose], config: SolverConfig = SolverConfig(),
                     gate: float = 3.0, z: float | None = None, init=None,
                     rss: RssModel = RssModel()) -> tuple[PositionEstimate, int]:
    """Weighted NLS with sequential outlier rejection.

    An outlier is flagged when the largest studentized residual
    ``|r_i| / (sigma_i sqrt(1 - h_ii))`` exceeds ``gate``, with ``h_ii`` the
    leverage of row i.  The row then dropped is the one whose removal gives
    the lowest weighted cost, since a large bias on a high-leverage row
    often shows up on a different row's residual.  Rejection stops once a
    single redundant row would remain.  Returns the final fix and the number
    of rejected rows.
    """
    if not isinstance(poses, Mapping):
        poses = {p.bs_id: p for p in poses}
    ms = list(measurements)
    epoch = measurements.epoch if isinstance(measurements, MeasurementSet) else 0.0
    n_unknown = 2 if z is not None else 3

    def fit(rows):
        return solve_nls(MeasurementSet(epoch, rows), poses, config, z=z, init=init, rss=rss)

    fix = fit(ms)
    rejected = 0
    while len(ms) > n_unknown + 1:
        _, H, sig = stack(ms, poses, fix.position, rss)
        Hw = H[:, :n_unknown] / sig[:, None]
        lev = np.einsum("ij,ji->i", Hw, np.linalg.pinv(Hw.T @ Hw) @ Hw.T)
        nu = np.abs(fix.residuals) / sig / np.sqrt(np.clip(1 - lev, 1e-12, None))
        if nu.max() <= gate:
            break
        trials = [fit(ms[:i] + ms[i + 1:]) for i in range(len(ms))]
        best = int(np.argmin([t.cost for t in trials]))
        ms.pop(best)
        fix = trials[best]
        rejected += 1
    return fix, rejected


@dataclass
class TrackState:
    """EKF state: position (and optionally velocity) with its covariance."""

    mean: np.ndarray
    cov: np.ndarray
    q_sigma: np.ndarray = field(default_factory=lambda: np.ones(3))
    dt: float = 0.7134
    velocity: bool = False
    t: float = 0.0
    n_used: int = 0
    n_rejected: int = 0
    gate_saturated: bool = False

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).copy()
        self.cov = np.asarray(self.cov, dtype=float).copy()
        self.q_sigma = np.broadcast_to(np.asarray(self.q_sigma, dtype=float), (3,)).copy()
        n = 6 if self.velocity else 3
        if self.mean.shape != (n,) or self.cov.shape != (n, n):
            raise ConfigError(f"state must have {n} entries and an {n}x{n} covariance")
        if self.dt <= 0:
            raise ConfigError("sampling interval must be > 0")
        _check_psd(self.cov, "state covariance")

    @property
    def position(self) -> np.ndarray:
        return self.mean[:3]

    def transition(self):
        q = self.q_sigma**2
        if not self.velocity:
            return np.eye(3), np.diag(q)
        dt = self.dt
        F = np.eye(6)
        F[:3, 3:] = dt * np.eye(3)
        Q = np.zeros((6, 6))
        Q[:3, :3] = np.diag(q) * dt**3 / 3
        Q[:3, 3:] = Q[3:, :3] = np.diag(q) * dt**2 / 2
        Q[3:, 3:] = np.diag(q) * dt
        return F, Q


def _check_psd(m, what):
    if not np.allclose(m, m.T, atol=1e-9 * max(1.0, np.abs(m).max())):
        raise ConfigError(f"{what} is not symmetric")
    ev = np.linalg.eigvalsh(0.5 * (m + m.T))
    if ev.min() < -1e-9 * max(1.0, abs(ev).max()):
        raise ConfigError(f"{what} is not positive semidefinite")


def ekf_step(track: TrackState, measurements: MeasurementSet | Sequence[Measurement],
             poses: Mapping[int, BasePose] | Sequence[BasePose], gate: float | None = None,
             rss: RssModel = RssModel(), min_keep: int = 0) -> TrackState:
    """One predict + update cycle with a random-walk (or constant-velocity) model.

    With ``gate`` set, measurements whose normalized innovation exceeds it are
    discarded one at a time (largest first) before the update.  At least
    ``min_keep`` measurements always survive the gate, so a track that has
    drifted away from the truth cannot reject every measurement and coast
    on forever; ``gate_saturated`` on the result flags that case so the
    caller can re-seed the track.
    """
    if not isinstance(poses, Mapping):
        poses = {p.bs_id: p for p in poses}
    _check_psd(track.cov, "state covariance")
    F, Q = track.transition()
    x = F @ track.mean
    P = F @ track.cov @ F.T + Q
    n = len(x)
    ms = list(measurements)
    rejected = 0
    saturated = False
    if ms:
        r, H3, s = stack(ms, poses, x[:3], rss)
        H = np.zeros((len(ms), n))
        H[:, :3] = H3
        R = np.diag(s**2)
        keep = np.ones(len(ms), dtype=bool)
        if gate is not None:
            while keep.any():
                Hk, rk = H[keep], r[keep]
                S = Hk @ P @ Hk.T + R[np.ix_(keep, keep)]
                nu = np.abs(rk) / np.sqrt(np.diag(S))
                worst = int(np.argmax(nu))
                if nu[worst] <= gate:
                    break
                if keep.sum() <= min_keep:
                    saturated = True
                    break
                keep[np.flatnonzero(keep)[worst]] = False
            rejected = int((~keep).sum())
        if keep.any():
            Hk, rk, Rk = H[keep], r[keep], R[np.ix_(keep, keep)]
            S = Hk @ P @ Hk.T + Rk
            G = np.linalg.solve(S.T, (P @ Hk.T).T).T
            x = x + G @ rk
            P = P - G @ Hk @ P
            P = 0.5 * (P + P.T)
    t = measurements.epoch if isinstance(measurements, MeasurementSet) else track.t + track.dt
    return replace(track, mean=x, cov=P, t=t, n_used=len(ms) - rejected, n_rejected=rejected,
                   gate_saturated=saturated)


@dataclass(frozen=True)
class ResidualDecision:
    accept: bool
    statistic: float
    threshold: float


DEFAULT_RESIDUAL_THRESHOLD_DEG = 8.6


def residual_nlos_filter(estimate: PositionEstimate, threshold: float = DEFAULT_RESIDUAL_THRESHOLD_DEG,
                         kinds: Iterable[str] | None = None) -> ResidualDecision:
    """Accept a fix unless its mean absolute residual exceeds ``threshold``.

    Angle residuals are compared in degrees.
    """
    stat = estimate.residual_statistic(kinds)
    return ResidualDecision(stat <= threshold, stat, threshold)


@dataclass
class FilterResult:
    kept: list
    mask: np.ndarray
    rejected_fraction: float


def apply_residual_filter(estimates: Sequence[PositionEstimate], threshold: float = DEFAULT_RESIDUAL_THRESHOLD_DEG,
                          kinds: Iterable[str] | None = None) -> FilterResult:
    mask = np.array([residual_nlos_filter(e, threshold, kinds).accept for e in estimates], dtype=bool)
    kept = [e for e, k in zip(estimates, mask) if k]
    frac = 1.0 - mask.mean() if len(mask) else 0.0
    return FilterResult(kept, mask, float(frac))


@dataclass(frozen=True)
class MapConstraint:
    """Admissible region: union of horizontal polygons given by (x, y) vertices."""

    polygons: tuple

    def __init__(self, polygons):
        polys = []
        for p in polygons:
            arr = np.asarray(p, dtype=float)[:, :2]
            if arr.shape[0] < 3:
                raise ConfigError("constraint polygons need >= 3 vertices")
            x, y = arr[:, 0], arr[:, 1]
            area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
            if area <= 0:
                raise ConfigError("degenerate constraint polygon")
            polys.append(arr)
        object.__setattr__(self, "polygons", tuple(polys))

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))[:, :2]
        inside = np.zeros(len(pts), dtype=bool)
        for poly in self.polygons:
            x0, y0 = poly[:, 0], poly[:, 1]
            x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
            px, py = pts[:, :1], pts[:, 1:2]
            crosses = (y0 > py) != (y1 > py)
            with np.errstate(divide="ignore", invalid="ignore"):
                xc = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
            hits = crosses & (xc > px)
            inside |= (hits.sum(axis=1) % 2) == 1
        return inside


def _positions(estimates) -> np.ndarray:
    if len(estimates) and isinstance(estimates[0], PositionEstimate):
        return np.array([e.position for e in estimates])
    return np.atleast_2d(np.asarray(estimates, dtype=float))


def map_constraint_filter(estimates, constraint: MapConstraint) -> FilterResult:
    """Keep only fixes inside the admissible region."""
    if len(estimates) == 0:
        return FilterResult([], np.zeros(0, bool), 0.0)
    mask = constraint.contains(_positions(estimates))
    kept = [e for e, k in zip(estimates, mask) if k]
    return FilterResult(kept, mask, float(1.0 - mask.mean()))


@dataclass(frozen=True)
class Ellipse:
    center: np.ndarray
    semi_major: float
    semi_minor: float
    angle: float  # orientation of the major axis, radians from +x
    confidence: float

    @property
    def area(self) -> float:
        return float(np.pi * self.semi_major * self.semi_minor)


def chi2_2dof_quantile(confidence: float) -> float:
    """Quantile of the chi-square distribution with two degrees of freedom."""
    if not 0 < confidence < 1:
        raise ConfigError("confidence must be in (0, 1)")
    return -2.0 * np.log1p(-confidence)


def error_ellipse(covariance=None, samples=None, confidence: float = 0.95, center=None) -> Ellipse:
    """Confidence ellipse of the horizontal position from a covariance or from samples."""
    if (covariance is None) == (samples is None):
        raise ConfigError("give exactly one of covariance or samples")
    if samples is not None:
        pts = _positions(samples)[:, :2]
        if len(pts) < 3:
            raise ConfigError("error ellipse needs at least 3 samples")
        cov = np.cov(pts, rowvar=False)
        c = pts.mean(axis=0) if center is None else np.asarray(center, float)[:2]
    else:
        cov = np.asarray(covariance, dtype=float)[:2, :2]
        c = np.zeros(2) if center is None else np.asarray(center, float)[:2]
    cov = 0.5 * (cov + cov.T)
    ev, evec = np.linalg.eigh(cov)
    if not np.all(np.isfinite(ev)) or ev.min() < -1e-12 * max(1.0, ev.max()) or ev.max() <= 0:
        raise ConfigError("degenerate covariance for error ellipse")
    ev = np.clip(ev, 0.0, None)
    k = np.sqrt(chi2_2dof_quantile(confidence))
    major = evec[:, 1]
    return Ellipse(c, float(k * np.sqrt(ev[1])), float(k * np.sqrt(ev[0])),
                   float(np.arctan2(major[1], major[0])), confidence)
