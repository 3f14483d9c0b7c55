"""Scenario files and the built-in replica deployments.

Scenario files are TOML.  Lengths are meters and angles degrees::

    name = "square"
    epoch_interval = 0.7134

    [rf]                      # RfConfig fields
    mu = 1
    carrier_ghz = 3.5

    [[bs]]
    id = 1
    position = [0.0, 0.0, 25.0]
    yaw_deg = 45.0
    roll_deg = 0.0
    antenna = [1, 1, 8, 8, 1]
    tx_power_dbm = 33.0

    [[obstacle]]              # planar polygon
    vertices = [[0, 0, 0], [1, 0, 0], [1, 0, 5]]
    reflection_loss_db = 6.0

    [[building]]              # four vertical walls of a box
    xmin = 20.0
    ymin = 50.0
    xmax = 40.0
    ymax = 70.0
    height = 30.0

    [ue]
    points = [[50.0, 50.0, 1.5]]

    [trajectory]              # either waypoints (+ optional step) or a random walk
    waypoints = [[0, 0, 1.5], [10, 0, 1.5]]
    step = 1.0
    # random_walk = { start = [0, 0, 1.5], sigma = [1, 1, 0], n = 50, seed = 1 }

    [constraint]
    polygons = [[[0, 0], [8, 0], [8, 6], [0, 6]]]

    [noise]                   # optional NoiseModel overrides
    sigma_tof_m = 0.45
    sigma_az_deg = 3.44
    p_multipath = 0.25

    [beam]                    # BeamBook fields, angles in degrees
    sector_az_deg = 120.0
    n_ssb_az = 8

    [options]
    dims = 2                  # 2 = fixed UE height
    max_range = 300.0
    reply_time = 0.0
"""

from __future__ import annotations

import sys
from pathlib import Path as FsPath

import numpy as np

from .errors import ConfigError
from .geometry import ArrayOrientation, BasePose, Polygon, RfConfig, Scenario, box, wall

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

_NOISE_KEYS = {
    "sigma_tof_m", "sigma_az_deg", "sigma_el_deg", "sigma_rss_db", "nlos_excess_mean_m",
    "nlos_az_sigma_deg", "nlos_el_bias_deg", "p_multipath", "p0_dbm", "alpha",
}
_BEAM_KEYS = {
    "sector_az_deg", "sector_el_deg", "n_ssb_az", "n_ssb_el", "n_prs_az", "n_prs_el",
    "center_az_deg", "center_el_deg",
}
_OPTION_KEYS = {"dims", "max_range", "reply_time", "q_sigma"}


def _bs_from_dict(d: dict) -> BasePose:
    try:
        return BasePose(
            position=d["position"],
            orientation=ArrayOrientation.from_degrees(d.get("yaw_deg", 0.0), d.get("pitch_deg", 0.0),
                                                      d.get("roll_deg", 0.0)),
            bs_id=int(d["id"]),
            sector_id=int(d.get("sector", 0)),
            antenna=tuple(int(a) for a in d.get("antenna", (1, 1, 8, 8, 1))),
            tx_power_dbm=float(d.get("tx_power_dbm", 33.0)),
        )
    except KeyError as e:
        raise ConfigError(f"base station entry missing {e.args[0]!r}") from None


def polyline(waypoints, step: float) -> np.ndarray:
    """Points every ``step`` meters along the polyline through ``waypoints`` (ends included)."""
    w = np.asarray(waypoints, dtype=float)
    if step <= 0:
        raise ConfigError("trajectory step must be > 0")
    pts = [w[0]]
    for a, b in zip(w[:-1], w[1:]):
        n = max(int(round(np.linalg.norm(b - a) / step)), 1)
        for k in range(1, n + 1):
            pts.append(a + (b - a) * k / n)
    return np.array(pts)


def _check_keys(section: dict, allowed: set, name: str):
    extra = set(section) - allowed
    if extra:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")


def scenario_from_dict(doc: dict) -> Scenario:
    from .simcli import gen_random_walk  # local import: simcli depends on this module

    try:
        rf = RfConfig(**doc.get("rf", {}))
    except TypeError as e:
        raise ConfigError(f"[rf]: {e}") from None
    bss = [_bs_from_dict(d) for d in doc.get("bs", [])]
    obstacles = [
        Polygon(o["vertices"], reflection_loss_db=float(o.get("reflection_loss_db", 6.0)))
        for o in doc.get("obstacle", [])
    ]
    for b in doc.get("building", []):
        obstacles += box(b["xmin"], b["ymin"], b["xmax"], b["ymax"], b["height"],
                         float(b.get("reflection_loss_db", 6.0)))
    ue = doc.get("ue", {}).get("points")
    traj = None
    if "trajectory" in doc:
        t = doc["trajectory"]
        if "waypoints" in t:
            traj = polyline(t["waypoints"], t["step"]) if "step" in t else np.asarray(t["waypoints"], float)
        elif "random_walk" in t:
            rw = t["random_walk"]
            traj = gen_random_walk(rw["start"], rw["sigma"], int(rw["n"]), int(rw.get("seed", 0)))
        else:
            raise ConfigError("[trajectory] needs waypoints or random_walk")
    constraint = doc.get("constraint", {}).get("polygons")
    extras = {}
    for key, allowed in (("noise", _NOISE_KEYS), ("beam", _BEAM_KEYS), ("options", _OPTION_KEYS)):
        if key in doc:
            _check_keys(doc[key], allowed, key)
            extras[key] = dict(doc[key])
    return Scenario(
        base_stations=bss,
        obstacles=obstacles,
        ue_points=None if ue is None else np.asarray(ue, float),
        trajectory=traj,
        rf=rf,
        epoch_interval=float(doc.get("epoch_interval", 0.7134)),
        constraint=constraint,
        name=str(doc.get("name", "scenario")),
        extras=extras,
    )


def read_toml(path) -> dict:
    """Parse a TOML file, reporting syntax errors as :class:`ConfigError`."""
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None


def load_scenario(path) -> Scenario:
    """Read a TOML scenario file, or a built-in replica given as ``builtin:<name>``."""
    s = str(path)
    if s.startswith("builtin:"):
        return builtin(s.split(":", 1)[1])
    return scenario_from_dict(read_toml(path))


def scenario_to_dict(sc: Scenario) -> dict:
    doc: dict = {"name": sc.name, "epoch_interval": sc.epoch_interval, "rf": vars(sc.rf).copy()}
    doc["bs"] = [
        {
            "id": b.bs_id,
            "sector": b.sector_id,
            "position": [float(v) for v in b.position],
            "yaw_deg": float(np.degrees(b.orientation.yaw)),
            "roll_deg": float(np.degrees(b.orientation.roll)),
            "antenna": list(b.antenna),
            "tx_power_dbm": b.tx_power_dbm,
        }
        for b in sc.base_stations
    ]
    if sc.obstacles:
        doc["obstacle"] = [
            {"vertices": p.vertices.tolist(), "reflection_loss_db": p.reflection_loss_db} for p in sc.obstacles
        ]
    if sc.ue_points is not None:
        doc["ue"] = {"points": sc.ue_points.tolist()}
    if sc.trajectory is not None:
        doc["trajectory"] = {"waypoints": sc.trajectory.tolist()}
    if sc.constraint is not None:
        doc["constraint"] = {"polygons": [np.asarray(p, float)[:, :2].tolist() for p in sc.constraint]}
    for key in ("noise", "beam", "options"):
        if key in sc.extras:
            doc[key] = dict(sc.extras[key])
    return doc


def save_scenario(sc: Scenario, path) -> None:
    import tomli_w

    FsPath(path).write_text(tomli_w.dumps(scenario_to_dict(sc)), encoding="utf-8")


def _facing(position, target) -> float:
    d = np.asarray(target, float) - np.asarray(position, float)
    return float(np.degrees(np.arctan2(d[1], d[0])))


def square_outdoor(side: float = 200.0, bs_height: float = 25.0, ue_height: float = 1.5, n_grid: int = 3,
                   mu: int = 1, reflector: bool = False) -> Scenario:
    """Four BSs on the corners of an open square, arrays facing the center.

    With ``reflector=True`` a building blocks the LOS from BS 1 to a single
    UE point and a wall behind the UE provides a specular path instead.
    """
    corners = [(0, 0), (side, 0), (side, side), (0, side)]
    center = (side / 2, side / 2)
    carrier = 3.5 if mu <= 1 else 28.0
    bss = [
        BasePose((x, y, bs_height), ArrayOrientation.from_degrees(_facing((x, y), center)), bs_id=i + 1,
                 antenna=(1, 1, 8, 8, 1), tx_power_dbm=33.0)
        for i, (x, y) in enumerate(corners)
    ]
    rf = RfConfig(mu=mu, carrier_ghz=carrier, n_rb=272 if mu <= 1 else 264, noise_figure_db=9.0 if mu <= 2 else 10.0)
    options = {"dims": 2}
    obstacles = []
    if reflector:
        k = side / 200.0
        ue = np.array([[60 * k, 120 * k, ue_height]])
        obstacles = box(28 * k, 62 * k, 42 * k, 78 * k, 2 * bs_height)
        obstacles.append(wall((42 * k, 150 * k), (80 * k, 150 * k), 0.0, 1.2 * bs_height))
        name = "square-reflector"
    else:
        f = (np.arange(n_grid) + 1) / (n_grid + 1) * side
        xx, yy = np.meshgrid(f, f, indexing="ij")
        ue = np.stack([xx.ravel(), yy.ravel(), np.full(xx.size, ue_height)], axis=1)
        name = "square"
    return Scenario(bss, obstacles, ue_points=ue, rf=rf, name=name,
                    extras={"options": options, "beam": {"sector_az_deg": 120.0, "n_ssb_az": 8, "n_prs_az": 12}})


def city_grid(size: float = 1000.0, block: float = 100.0, street: float = 20.0, bs_spacing: float = 200.0,
              building_height: float = 20.0, bs_height: float = 25.0, ue_height: float = 1.5,
              speed: float = 10.0, epoch_interval: float = 0.7134) -> Scenario:
    """Synthetic 1 km^2 Manhattan grid with BSs every ``bs_spacing`` meters at intersections.

    The UE drives an L-shaped route along two streets.
    """
    obstacles = []
    half = street / 2
    for x0 in np.arange(0.0, size, block):
        for y0 in np.arange(0.0, size, block):
            obstacles += box(x0 + half, y0 + half, x0 + block - half, y0 + block - half, building_height)
    bss = []
    sites = np.arange(bs_spacing / 2, size, bs_spacing)
    center = (size / 2, size / 2)
    for x in sites:
        for y in sites:
            # yaw toward the map center; the central site points along +x
            yaw = _facing((x, y), center) if (x, y) != center else 0.0
            bss.append(BasePose((x, y, bs_height), ArrayOrientation.from_degrees(yaw), bs_id=len(bss) + 1,
                                antenna=(1, 1, 8, 8, 1), tx_power_dbm=33.0))
    route = [(2 * block, 2 * block, ue_height), (2 * block, 6 * block, ue_height), (7 * block, 6 * block, ue_height)]
    traj = polyline(route, speed * epoch_interval)
    return Scenario(bss, obstacles, trajectory=traj, rf=RfConfig(mu=3, carrier_ghz=28.0, n_rb=264, noise_figure_db=10.0),
                    epoch_interval=epoch_interval, name="city",
                    extras={"options": {"dims": 2, "max_range": 300.0}, "noise": {"nlos_excess_mean_m": 20.0}})


INDUSTRIAL_WAYPOINTS = [(0.8, -25.0, 1.0), (0.8, -35.971, 1.0), (6.6512, -35.971, 1.0), (6.6512, -25.0, 1.0)]


def industrial_u(bs_height: float = 3.0, ue_height: float = 1.0, speed: float = 1.0,
                 epoch_interval: float = 0.7134) -> Scenario:
    """Four ceiling-corner BSs in a 12 x 18 m hall, machinery blocks, U-shaped walk at ``speed`` m/s."""
    corners = [(-3.0, -42.0), (9.0, -42.0), (9.0, -24.0), (-3.0, -24.0)]
    center = (3.0, -33.0)
    bss = [
        BasePose((x, y, bs_height), ArrayOrientation.from_degrees(_facing((x, y), center)), bs_id=i + 1,
                 antenna=(1, 1, 4, 4, 1), tx_power_dbm=23.0)
        for i, (x, y) in enumerate(corners)
    ]
    # two tall machines along the bottom and right side of the U: about 30% of
    # epochs lose LOS to one BS, after the track has settled in the open part
    obstacles = box(6.9, -36.5, 7.9, -35.3, 4.0) + box(1.8, -40.5, 3.0, -39.0, 4.0)
    waypoints = [(x, y, ue_height) for x, y, _ in INDUSTRIAL_WAYPOINTS]
    traj = polyline(waypoints, speed * epoch_interval)
    return Scenario(bss, obstacles, trajectory=traj, rf=RfConfig(mu=3, carrier_ghz=28.0, n_rb=264, noise_figure_db=10.0),
                    epoch_interval=epoch_interval, name="industrial",
                    extras={"options": {"dims": 2}, "noise": {"nlos_excess_mean_m": 5.0}})


def office_single_bs(width: float = 8.0, depth: float = 6.0, height: float = 3.0) -> Scenario:
    """One wall-mounted BS in a rectangular office; RTT + UL-AOA with wall multipath."""
    walls = [
        wall((0, 0), (width, 0), 0.0, height),
        wall((width, 0), (width, depth), 0.0, height),
        wall((width, depth), (0, depth), 0.0, height),
        wall((0, depth), (0, 0), 0.0, height),
    ]
    bs = BasePose((0.2, depth / 2, height - 0.3), ArrayOrientation.from_degrees(0.0), bs_id=1,
                  antenna=(1, 1, 8, 8, 1), tx_power_dbm=23.0)
    ue = np.array([[5.0, 2.0, 1.0]])
    room = [[0.0, 0.0], [width, 0.0], [width, depth], [0.0, depth]]
    return Scenario([bs], walls, ue_points=ue, rf=RfConfig(mu=3, carrier_ghz=28.0, n_rb=264, noise_figure_db=10.0),
                    constraint=[room], name="office",
                    extras={"options": {"dims": 2},
                            "noise": {"sigma_tof_m": 0.32 * np.sqrt(2.0), "sigma_az_deg": 3.44, "sigma_el_deg": 3.44,
                                      "p_multipath": 0.3}})


BUILTINS = {
    "square": square_outdoor,
    "square-reflector": lambda: square_outdoor(reflector=True),
    "city": city_grid,
    "industrial": industrial_u,
    "office": office_single_bs,
}


def builtin(name: str) -> Scenario:
    try:
        return BUILTINS[name]()
    except KeyError:
        raise ConfigError(f"unknown built-in scenario {name!r}; choose from {sorted(BUILTINS)}") from None
