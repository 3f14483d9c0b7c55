"""Coordinate frames, base-station poses and line-of-sight tests.

Conventions used across the package:

* positions are length-3 float arrays in a global Cartesian frame (meters);
* the azimuth of a UE seen from a base station is
  ``atan2(u_y - s_y, u_x - s_x)``;
* the elevation is ``atan2(s_z - u_z, d_xy)``, i.e. positive when the base
  station sits above the UE (this is the sign used by the Jacobian rows in
  :mod:`nrloc.estimators`);
* angles are radians everywhere except at file boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .constants import SPEED_OF_LIGHT
from .errors import ConfigError, GeometryError, UnsupportedOrientationError

_EPS = 1e-12


def as_position(p) -> np.ndarray:
    """Return ``p`` as a finite float array of shape (3,)."""
    arr = np.asarray(p, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise ConfigError(f"position must have 3 components, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"position has non-finite components: {arr}")
    return arr


def wrap_angle(a):
    """Wrap angles to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class ArrayOrientation:
    """Yaw (about z), pitch (about y) and roll (about x) of an antenna panel, radians."""

    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    @classmethod
    def from_degrees(cls, yaw=0.0, pitch=0.0, roll=0.0) -> "ArrayOrientation":
        return cls(float(np.radians(yaw)), float(np.radians(pitch)), float(np.radians(roll)))


@dataclass(frozen=True)
class BasePose:
    """A base station (one sector/panel) with its antenna array.

    ``antenna`` is the ``(M_g, N_g, M_a, N_a, P)`` tuple: panel rows/columns,
    element rows/columns and polarization flag.
    """

    position: np.ndarray
    orientation: ArrayOrientation = field(default_factory=ArrayOrientation)
    bs_id: int = 1
    sector_id: int = 0
    antenna: tuple = (1, 1, 8, 8, 1)
    tx_power_dbm: float = 33.0

    def __post_init__(self):
        object.__setattr__(self, "position", as_position(self.position))
        ant = tuple(int(v) for v in self.antenna)
        if len(ant) != 5:
            raise ConfigError(f"antenna tuple needs 5 entries, got {ant}")
        mg, ng, ma, na, pol = ant
        if ma < 1 or na < 1 or mg < 1 or ng < 1:
            raise ConfigError(f"antenna element counts must be >= 1: {ant}")
        if pol not in (0, 1):
            raise ConfigError(f"polarization flag must be 0 or 1: {ant}")
        object.__setattr__(self, "antenna", ant)

    @property
    def array_shape(self) -> tuple[int, int]:
        """(vertical elements M_a, horizontal elements N_a)."""
        return self.antenna[2], self.antenna[3]


@dataclass(frozen=True)
class Polygon:
    """Planar obstacle face.  ``reflection_loss_db`` is used by the channel builder."""

    vertices: np.ndarray
    reflection_loss_db: float = 6.0
    _normal: np.ndarray = field(init=False, repr=False, compare=False)
    _lo: np.ndarray = field(init=False, repr=False, compare=False)
    _hi: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] < 3:
            raise ConfigError(f"polygon needs >= 3 vertices of 3 coordinates, got {v.shape}")
        n = _newell_normal(v)
        norm = np.linalg.norm(n)
        if norm < 1e-9 * max(1.0, np.abs(v).max()) ** 2:
            raise ConfigError("polygon vertices are collinear")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "_normal", n / norm)
        object.__setattr__(self, "_lo", v.min(axis=0))
        object.__setattr__(self, "_hi", v.max(axis=0))

    @property
    def normal(self) -> np.ndarray:
        return self._normal

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def mirror(self, p) -> np.ndarray:
        """Mirror image of point ``p`` across the polygon plane."""
        p = np.asarray(p, dtype=float)
        n = self.normal
        return p - 2.0 * np.dot(p - self.vertices[0], n) * n

    def segment_hit(self, a, b, open_segment=True):
        """Intersection point of segment a-b with the polygon, or None."""
        return _segment_polygon_hit(np.asarray(a, float), np.asarray(b, float), self, open_segment)


ObstacleSet = Sequence[Polygon]


def wall(p0, p1, z0=0.0, z1=10.0, reflection_loss_db=6.0) -> Polygon:
    """Vertical rectangular wall between ground points p0 and p1 (x, y)."""
    x0, y0 = p0[:2]
    x1, y1 = p1[:2]
    return Polygon(
        [[x0, y0, z0], [x1, y1, z0], [x1, y1, z1], [x0, y0, z1]],
        reflection_loss_db=reflection_loss_db,
    )


def box(xmin, ymin, xmax, ymax, height, reflection_loss_db=6.0) -> list[Polygon]:
    """Four vertical walls of a rectangular building footprint."""
    c = [(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)]
    return [wall(c[i], c[(i + 1) % 4], 0.0, height, reflection_loss_db) for i in range(4)]


def rotation_matrix(orientation: ArrayOrientation) -> np.ndarray:
    """Rotation combining the roll (x axis) and yaw (z axis) of an array.

    Returns ``Rz(yaw) @ Rx(roll)``.  A nonzero pitch is rejected.
    """
    if abs(orientation.pitch) > 0.0:
        raise UnsupportedOrientationError(
            f"only zero pitch is supported, got {orientation.pitch!r} rad"
        )
    cy, sy = np.cos(orientation.yaw), np.sin(orientation.yaw)
    cr, sr = np.cos(orientation.roll), np.sin(orientation.roll)
    return np.array(
        [
            [cy, -sy * cr, sy * sr],
            [sy, cy * cr, -cy * sr],
            [0.0, sr, cr],
        ]
    )


class Geometry(NamedTuple):
    distance: float
    azimuth: float
    elevation: float
    distance_xy: float


def angles_between(s, u) -> tuple[float, float]:
    """Global (azimuth, elevation) of point ``u`` seen from ``s``."""
    dx, dy, dz = np.asarray(u, float) - np.asarray(s, float)
    dxy = float(np.hypot(dx, dy))
    return float(np.arctan2(dy, dx)), float(np.arctan2(-dz, dxy))


def true_geometry(u, pose: BasePose | np.ndarray) -> Geometry:
    """Distance, global azimuth/elevation and horizontal distance from BS to UE."""
    s = pose.position if isinstance(pose, BasePose) else as_position(pose)
    u = np.asarray(u, dtype=float)
    diff = u - s
    d = float(np.linalg.norm(diff))
    if d < _EPS:
        raise GeometryError("UE coincides with the base station")
    dxy = float(np.hypot(diff[0], diff[1]))
    az, el = angles_between(s, u)
    return Geometry(d, az, el, dxy)


def local_angles(u, pose: BasePose) -> tuple[float, float]:
    """Azimuth/elevation in the array frame: global angles minus yaw/roll offsets."""
    g = true_geometry(u, pose)
    return (
        wrap_angle(g.azimuth - pose.orientation.yaw),
        wrap_angle(g.elevation - pose.orientation.roll),
    )


def direction_vector(az, el) -> np.ndarray:
    """Unit vector pointing along (az, el) with the package elevation sign."""
    az = np.asarray(az, float)
    el = np.asarray(el, float)
    return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), -np.sin(el)], axis=-1)


def _newell_normal(v: np.ndarray) -> np.ndarray:
    nxt = np.roll(v, -1, axis=0)
    return np.array(
        [
            np.sum((v[:, 1] - nxt[:, 1]) * (v[:, 2] + nxt[:, 2])),
            np.sum((v[:, 2] - nxt[:, 2]) * (v[:, 0] + nxt[:, 0])),
            np.sum((v[:, 0] - nxt[:, 0]) * (v[:, 1] + nxt[:, 1])),
        ]
    )


def _point_in_polygon_2d(pt, poly2d) -> bool:
    x, y = pt
    inside = False
    n = len(poly2d)
    for i in range(n):
        x0, y0 = poly2d[i]
        x1, y1 = poly2d[(i + 1) % n]
        if (y0 > y) != (y1 > y):
            xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            if xc > x:
                inside = not inside
    return inside


def _segment_polygon_hit(a, b, poly: Polygon, open_segment=True):
    # bounding-box rejection before the plane test
    if np.any(np.minimum(a, b) > poly._hi + 1e-9) or np.any(np.maximum(a, b) < poly._lo - 1e-9):
        return None
    n = poly.normal
    p0 = poly.vertices[0]
    denom = float(np.dot(n, b - a))
    if abs(denom) < 1e-12:
        return None  # parallel or coplanar: treated as not blocking
    t = float(np.dot(n, p0 - a)) / denom
    tol = 1e-9 if open_segment else -1e-12
    if t <= tol or t >= 1.0 - tol:
        return None
    hit = a + t * (b - a)
    drop = int(np.argmax(np.abs(n)))
    keep = [i for i in range(3) if i != drop]
    if _point_in_polygon_2d(hit[keep], poly.vertices[:, keep]):
        return hit
    return None


def los_check(u, s, obstacles: ObstacleSet = (), exclude: Sequence[int] = ()) -> bool:
    """True iff the open segment u-s crosses none of the obstacle polygons.

    ``exclude`` lists obstacle indices to ignore (used for reflection legs).
    """
    a = np.asarray(u, dtype=float)
    b = np.asarray(s, dtype=float)
    if np.linalg.norm(a - b) < _EPS:
        raise GeometryError("segment endpoints coincide")
    # canonical endpoint order makes the test exactly symmetric
    if tuple(b) < tuple(a):
        a, b = b, a
    for k, poly in enumerate(obstacles):
        if k in exclude:
            continue
        if _segment_polygon_hit(a, b, poly) is not None:
            return False
    return True


@dataclass
class RfConfig:
    """Radio configuration shared by a scenario."""

    mu: int = 1
    carrier_ghz: float = 3.5
    n_rb: int = 272
    n_fft: int = 4096
    noise_figure_db: float = 9.0
    t_ant_k: float = 298.0

    def __post_init__(self):
        if not 0 <= self.mu <= 6:
            raise ConfigError(f"numerology mu must be in 0..6, got {self.mu}")
        if self.carrier_ghz <= 0 or self.n_rb < 1 or self.t_ant_k < 0 or self.noise_figure_db < 0:
            raise ConfigError(f"invalid radio configuration {self}")
        if self.n_fft < 64 or self.n_fft & (self.n_fft - 1):
            raise ConfigError(f"FFT size must be a power of two >= 64, got {self.n_fft}")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / (self.carrier_ghz * 1e9)


@dataclass
class Scenario:
    """Base stations, obstacles, UE points or trajectory, and radio settings."""

    base_stations: list[BasePose]
    obstacles: list[Polygon] = field(default_factory=list)
    ue_points: np.ndarray | None = None
    trajectory: np.ndarray | None = None
    rf: RfConfig = field(default_factory=RfConfig)
    epoch_interval: float = 0.7134
    constraint: list | None = None
    name: str = "scenario"
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.base_stations:
            raise ConfigError("scenario needs at least one base station")
        ids = [bs.bs_id for bs in self.base_stations]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate base-station ids: {ids}")
        for name in ("ue_points", "trajectory"):
            pts = getattr(self, name)
            if pts is None:
                continue
            pts = np.atleast_2d(np.asarray(pts, dtype=float))
            if pts.shape[1] != 3:
                raise ConfigError(f"{name} must be an (n, 3) array")
            for bs in self.base_stations:
                if np.any(np.linalg.norm(pts - bs.position, axis=1) < 1e-9):
                    raise ConfigError(f"{name} contains the position of BS {bs.bs_id}")
            setattr(self, name, pts)

    def pose(self, bs_id: int) -> BasePose:
        for bs in self.base_stations:
            if bs.bs_id == bs_id:
                return bs
        raise KeyError(bs_id)

    @property
    def poses_by_id(self) -> dict[int, BasePose]:
        return {bs.bs_id: bs for bs in self.base_stations}

    def visibility(self, u) -> dict[int, bool]:
        """LOS flag per base station for UE position ``u``."""
        return {bs.bs_id: los_check(u, bs.position, self.obstacles) for bs in self.base_stations}
