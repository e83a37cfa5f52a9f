"""World geometry for the positioning simulator.

Base stations, finite vertical reflector walls, ground-truth trajectories,
and the mirror construction that turns a wall into a virtual anchor: the
reflected ray from a base station equals a straight ray from the station's
mirror image across the wall plane.

Positions are local ENU meters. Azimuth is CCW from East, elevation above
horizontal, angles in radians everywhere inside the package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299792458.0  # m/s, exact

_PLANE_TOL = 1e-9  # m, on-plane slack for crossing tests
_INPLANE = "inplane"


class GeometryError(ValueError):
    """A scenario's geometry is malformed or degenerate."""


@dataclass
class BaseStation:
    id: str
    p: np.ndarray  # ENU position, m

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(3)
        if not np.all(np.isfinite(self.p)):
            raise GeometryError(f"base station {self.id!r}: non-finite position")


@dataclass
class Wall:
    """Finite vertical rectangle: horizontal footprint segment a->b plus a
    height band [z0, z0 + h].

    The outward normal is the left perpendicular of (b - a), normalized; it is
    horizontal by construction. Reflection works from either side, the normal
    only fixes the sign convention of offsets.
    """

    id: str
    a: np.ndarray  # (2,) footprint endpoint, m
    b: np.ndarray
    z0: float = 0.0
    h: float = 10.0
    reflection_loss_db: float = 6.0

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float).reshape(2)
        self.b = np.asarray(self.b, dtype=float).reshape(2)
        self.z0 = float(self.z0)
        self.h = float(self.h)
        d = self.b - self.a
        self.length = float(np.hypot(d[0], d[1]))
        ok = (
            np.all(np.isfinite(self.a))
            and np.all(np.isfinite(self.b))
            and np.isfinite(self.z0)
            and np.isfinite(self.h)
        )
        if not ok or self.length <= 0.0 or self.h <= 0.0:
            raise GeometryError(f"wall {self.id!r}: degenerate footprint or height")
        self.tangent = d / self.length
        self.normal = np.array([-self.tangent[1], self.tangent[0], 0.0])
        self._a3 = np.array([self.a[0], self.a[1], 0.0])

    def signed_distance(self, p) -> float:
        """Horizontal offset of p from the wall plane, + on the normal side."""
        p = np.asarray(p, dtype=float)
        return float((p - self._a3) @ self.normal)

    def on_rectangle(self, p, tol: float = 1e-9) -> bool:
        p = np.asarray(p, dtype=float)
        if abs(self.signed_distance(p)) > max(tol, _PLANE_TOL):
            return False
        s = float((p[:2] - self.a) @ self.tangent)
        if s < -tol or s > self.length + tol:
            return False
        return self.z0 - tol <= p[2] <= self.z0 + self.h + tol


@dataclass
class Pose:
    """One ground-truth kinematic sample."""

    t: float
    p: np.ndarray  # ENU m
    v: np.ndarray  # m/s
    att: np.ndarray  # (roll, pitch, yaw) rad

    def __post_init__(self):
        self.t = float(self.t)
        self.p = np.asarray(self.p, dtype=float).reshape(3)
        self.v = np.asarray(self.v, dtype=float).reshape(3)
        self.att = np.asarray(self.att, dtype=float).reshape(3)


@dataclass
class SbrPath:
    """One single-bounce reflection: BS -> wall point -> UE."""

    bs_id: str
    wall_id: str
    point: np.ndarray  # bounce point on the wall, m
    leg_bs: float  # BS -> bounce, m
    leg_ue: float  # bounce -> UE, m
    length: float  # total path length, m
    u_dep: np.ndarray  # unit departure direction at the BS, global axes
    u_arr: np.ndarray  # unit arrival direction at the UE, pointing UE -> bounce
    bounces: int = 1


@dataclass
class DoubleBouncePath:
    """Two-bounce path BS -> wall1 -> wall2 -> UE, used to exercise the
    single-bounce admission gate with realistic impostors."""

    bs_id: str
    wall_ids: tuple
    points: tuple  # the two bounce points
    length: float
    u_dep: np.ndarray
    u_arr: np.ndarray
    bounces: int = 2


def mirror_point(p, wall: Wall) -> np.ndarray:
    """Reflect p across the wall's infinite vertical plane; z is unchanged."""
    p = np.asarray(p, dtype=float)
    return p - 2.0 * wall.signed_distance(p) * wall.normal


def _segment_plane_crossing(p0, p1, wall: Wall):
    """Parameter t in [0, 1] where p0 + t*(p1 - p0) meets the wall plane.

    Returns None when both endpoints sit strictly on one side, the _INPLANE
    sentinel when the whole segment lies in the plane.
    """
    s0 = wall.signed_distance(p0)
    s1 = wall.signed_distance(p1)
    if abs(s0) <= _PLANE_TOL and abs(s1) <= _PLANE_TOL:
        return _INPLANE
    if s0 * s1 > 0.0:
        return None
    denom = s0 - s1
    if denom == 0.0:
        return None
    t = s0 / denom
    if t < 0.0 or t > 1.0:
        return None
    return t


def _inplane_overlap(p0, p1, wall: Wall) -> bool:
    """Clip an in-plane segment against the rectangle (both coordinates:
    along-wall and height)."""
    s0 = float((p0[:2] - wall.a) @ wall.tangent)
    s1 = float((p1[:2] - wall.a) @ wall.tangent)
    t_lo, t_hi = 0.0, 1.0
    for c0, c1, lo, hi in (
        (s0, s1, 0.0, wall.length),
        (p0[2], p1[2], wall.z0, wall.z0 + wall.h),
    ):
        d = c1 - c0
        if abs(d) < 1e-15:
            if c0 < lo or c0 > hi:
                return False
            continue
        ta = (lo - c0) / d
        tb = (hi - c0) / d
        if ta > tb:
            ta, tb = tb, ta
        t_lo = max(t_lo, ta)
        t_hi = min(t_hi, tb)
        if t_lo > t_hi:
            return False
    return True


def specular_path(bs: BaseStation, ue, wall: Wall):
    """Single-bounce path from bs to ue off one wall, or None.

    The reflected ray is the straight segment from the mirrored base station
    to the UE; where it crosses the wall rectangle is the bounce point, and
    the total length equals |mirror - ue|. None when the crossing misses the
    finite rectangle, the endpoints sit on the same side of the plane, or the
    geometry is degenerate (an endpoint on the plane itself).
    """
    ue = np.asarray(ue, dtype=float)
    m = mirror_point(bs.p, wall)
    t = _segment_plane_crossing(m, ue, wall)
    if t is None or t is _INPLANE:
        return None
    if t <= 0.0 or t >= 1.0:
        return None
    point = m + t * (ue - m)
    if not wall.on_rectangle(point):
        return None
    leg_bs = float(np.linalg.norm(point - bs.p))
    leg_ue = float(np.linalg.norm(ue - point))
    if leg_bs <= _PLANE_TOL or leg_ue <= _PLANE_TOL:
        return None
    return SbrPath(
        bs_id=bs.id,
        wall_id=wall.id,
        point=point,
        leg_bs=leg_bs,
        leg_ue=leg_ue,
        length=leg_bs + leg_ue,
        u_dep=(point - bs.p) / leg_bs,
        u_arr=(point - ue) / leg_ue,
    )


def los_visible(bs: BaseStation, ue, walls) -> bool:
    """True when the straight bs-ue segment meets no wall rectangle.

    Endpoint contact counts as blocked; the test is symmetric in bs and ue.
    """
    p0 = np.asarray(bs.p, dtype=float)
    p1 = np.asarray(ue, dtype=float)
    for wall in walls:
        t = _segment_plane_crossing(p0, p1, wall)
        if t is None:
            continue
        if t is _INPLANE:
            if _inplane_overlap(p0, p1, wall):
                return False
            continue
        if wall.on_rectangle(p0 + t * (p1 - p0)):
            return False
    return True


def double_bounce_path(bs: BaseStation, ue, wall1: Wall, wall2: Wall):
    """Two-bounce path bs -> wall1 -> wall2 -> ue via double unfolding.

    Mirror bs across wall1, then that image across wall2; the second bounce
    point is where the segment from the double image to ue crosses wall2, and
    the first is where the segment from the single image to that point
    crosses wall1. None whenever either crossing misses its rectangle.
    """
    if wall1 is wall2 or wall1.id == wall2.id:
        raise GeometryError("double bounce needs two distinct walls")
    ue = np.asarray(ue, dtype=float)
    m1 = mirror_point(bs.p, wall1)
    m12 = mirror_point(m1, wall2)
    t2 = _segment_plane_crossing(m12, ue, wall2)
    if not isinstance(t2, float) or not 0.0 < t2 < 1.0:
        return None
    q2 = m12 + t2 * (ue - m12)
    if not wall2.on_rectangle(q2):
        return None
    t1 = _segment_plane_crossing(m1, q2, wall1)
    if not isinstance(t1, float) or not 0.0 < t1 < 1.0:
        return None
    q1 = m1 + t1 * (q2 - m1)
    if not wall1.on_rectangle(q1):
        return None
    leg1 = float(np.linalg.norm(q1 - bs.p))
    leg2 = float(np.linalg.norm(q2 - q1))
    leg3 = float(np.linalg.norm(ue - q2))
    if min(leg1, leg2, leg3) <= _PLANE_TOL:
        return None
    return DoubleBouncePath(
        bs_id=bs.id,
        wall_ids=(wall1.id, wall2.id),
        points=(q1, q2),
        length=leg1 + leg2 + leg3,
        u_dep=(q1 - bs.p) / leg1,
        u_arr=(q2 - ue) / leg3,
    )


def unit_from_angles(az, el) -> np.ndarray:
    """Unit vector from azimuth (CCW from East) and elevation, broadcasting."""
    az = np.asarray(az, dtype=float)
    el = np.asarray(el, dtype=float)
    ce = np.cos(el)
    return np.stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)], axis=-1)


def angles_from_unit(u):
    """(azimuth, elevation) of direction vectors; length need not be 1."""
    u = np.asarray(u, dtype=float)
    az = np.arctan2(u[..., 1], u[..., 0])
    el = np.arcsin(np.clip(u[..., 2] / np.linalg.norm(u, axis=-1), -1.0, 1.0))
    return az, el


# ---------------------------------------------------------------------------
# trajectories


def trajectory_poses(spec: dict, times) -> list:
    """Ground-truth poses at the requested times from a generator spec.

    kinds:
      circle    constant-speed level circle; keys center_en_m, radius_m,
                speed_mps, z_m, optional phase_rad (start angle) and ccw.
      waypoints piecewise-linear route at constant speed; keys points_enu_m
                (list of [E, N, U]), speed_mps. The route holds the last
                point once exhausted.
      samples   explicit arrays t_s, p_enu_m; velocity and attitude are
                derived by differencing unless v_enu_mps / att_rpy_rad given.
    """
    times = np.asarray(times, dtype=float)
    kind = spec.get("kind")
    if kind == "circle":
        return _circle_poses(spec, times)
    if kind == "waypoints":
        return _waypoint_poses(spec, times)
    if kind == "samples":
        return _sample_poses(spec, times)
    raise GeometryError(f"unknown trajectory kind {kind!r}")


def _circle_poses(spec, times):
    cx, cy = (float(v) for v in spec["center_en_m"])
    r = float(spec["radius_m"])
    speed = float(spec["speed_mps"])
    z = float(spec.get("z_m", 0.0))
    phase = float(spec.get("phase_rad", 0.0))
    sign = 1.0 if spec.get("ccw", True) else -1.0
    if r <= 0.0 or speed < 0.0:
        raise GeometryError("circle trajectory needs radius_m > 0, speed_mps >= 0")
    rate = sign * speed / r
    poses = []
    for t in times:
        th = phase + rate * t
        p = np.array([cx + r * np.cos(th), cy + r * np.sin(th), z])
        v = speed * sign * np.array([-np.sin(th), np.cos(th), 0.0])
        yaw = np.arctan2(v[1], v[0]) if speed > 0 else phase + sign * np.pi / 2
        poses.append(Pose(t=t, p=p, v=v, att=np.array([0.0, 0.0, yaw])))
    return poses


def _waypoint_poses(spec, times):
    pts = np.asarray(spec["points_enu_m"], dtype=float)
    speed = float(spec["speed_mps"])
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 3:
        raise GeometryError("waypoints trajectory needs >= 2 ENU points")
    if speed <= 0.0:
        raise GeometryError("waypoints trajectory needs speed_mps > 0")
    seg = np.diff(pts, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    if np.any(seg_len <= 0.0):
        raise GeometryError("waypoints must be distinct")
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    poses = []
    for t in times:
        dist = speed * t
        if dist >= cum[-1]:
            p = pts[-1].copy()
            u = seg[-1] / seg_len[-1]
            v = np.zeros(3)
        else:
            i = int(np.searchsorted(cum, dist, side="right")) - 1
            u = seg[i] / seg_len[i]
            p = pts[i] + (dist - cum[i]) * u
            v = speed * u
        az, el = angles_from_unit(u)
        poses.append(Pose(t=t, p=p, v=v, att=np.array([0.0, float(el), float(az)])))
    return poses


def _sample_poses(spec, times):
    ts = np.asarray(spec["t_s"], dtype=float)
    ps = np.asarray(spec["p_enu_m"], dtype=float)
    if ts.ndim != 1 or ts.size < 3 or ps.shape != (ts.size, 3):
        raise GeometryError("samples trajectory needs matching t_s, p_enu_m with >= 3 rows")
    if np.any(np.diff(ts) <= 0.0):
        raise GeometryError("sample times must be strictly increasing")
    if "v_enu_mps" in spec:
        vs = np.asarray(spec["v_enu_mps"], dtype=float)
    else:
        vs = np.gradient(ps, ts, axis=0)
    if "att_rpy_rad" in spec:
        atts = np.asarray(spec["att_rpy_rad"], dtype=float)
    else:
        az, el = angles_from_unit(np.where(np.linalg.norm(vs, axis=1, keepdims=True) > 1e-9, vs, [1.0, 0.0, 0.0]))
        atts = np.stack([np.zeros_like(az), el, np.unwrap(az)], axis=-1)
    if np.any(times < ts[0] - 1e-9) or np.any(times > ts[-1] + 1e-9):
        raise GeometryError("requested times fall outside the sample span")
    poses = []
    for t in times:
        p = np.array([np.interp(t, ts, ps[:, k]) for k in range(3)])
        v = np.array([np.interp(t, ts, vs[:, k]) for k in range(3)])
        att = np.array([np.interp(t, ts, atts[:, k]) for k in range(3)])
        poses.append(Pose(t=t, p=p, v=v, att=att))
    return poses


# ---------------------------------------------------------------------------
# scenarios


@dataclass
class Scenario:
    """A world to simulate: anchors, reflectors, and the truth trajectory."""

    name: str
    base_stations: list
    walls: list
    trajectory: dict

    def __post_init__(self):
        ids = [b.id for b in self.base_stations]
        if len(set(ids)) != len(ids):
            raise GeometryError("base station ids must be unique")
        wids = [w.id for w in self.walls]
        if len(set(wids)) != len(wids):
            raise GeometryError("wall ids must be unique")
        if "kind" not in self.trajectory:
            raise GeometryError("trajectory spec needs a 'kind'")


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "name": s.name,
        "base_stations": [
            {"id": b.id, "p_enu_m": [float(x) for x in b.p]} for b in s.base_stations
        ],
        "walls": [
            {
                "id": w.id,
                "a_en_m": [float(x) for x in w.a],
                "b_en_m": [float(x) for x in w.b],
                "z0_m": w.z0,
                "height_m": w.h,
                "reflection_loss_db": w.reflection_loss_db,
            }
            for w in s.walls
        ],
        "trajectory": dict(s.trajectory),
    }


def scenario_from_dict(d: dict) -> Scenario:
    try:
        stations = [
            BaseStation(id=str(b["id"]), p=b["p_enu_m"]) for b in d.get("base_stations", [])
        ]
        walls = [
            Wall(
                id=str(w["id"]),
                a=w["a_en_m"],
                b=w["b_en_m"],
                z0=float(w.get("z0_m", 0.0)),
                h=float(w.get("height_m", 10.0)),
                reflection_loss_db=float(w.get("reflection_loss_db", 6.0)),
            )
            for w in d.get("walls", [])
        ]
        traj = dict(d["trajectory"])
    except (KeyError, TypeError) as exc:
        raise GeometryError(f"bad scenario structure: {exc}") from exc
    return Scenario(
        name=str(d.get("name", "scenario")),
        base_stations=stations,
        walls=walls,
        trajectory=traj,
    )


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as f:
        return scenario_from_dict(json.load(f))


def save_scenario(path, s: Scenario) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(scenario_to_dict(s), f, indent=2, sort_keys=True)
        f.write("\n")


def ring_scenario(
    n_bs: int = 8,
    bs_radius_m: float = 318.0,
    bs_height_m: float = 20.0,
    n_walls: int = 6,
    wall_radius_m: float = 400.0,
    wall_height_m: float = 30.0,
    route_radius_m: float = 160.0,
    speed_mps: float = 8.0,
    ue_height_m: float = 1.5,
    reflection_loss_db: float = 6.0,
) -> Scenario:
    """Urban-block stand-in: a circular route inside a ring of base stations,
    all enclosed by a regular polygon of building facades.

    With the defaults the route is a ~1 km loop, adjacent stations sit ~243 m
    apart, and the six facades form a hexagon whose walls face every part of
    the route, so several single-bounce paths exist at all epochs.
    """
    stations = []
    for k in range(n_bs):
        ang = 2.0 * np.pi * k / n_bs + np.pi / n_bs  # offset from wall vertices
        stations.append(
            BaseStation(
                id=f"bs{k}",
                p=[
                    bs_radius_m * np.cos(ang),
                    bs_radius_m * np.sin(ang),
                    bs_height_m + 2.0 * (k % 3),  # stagger heights a little
                ],
            )
        )
    walls = []
    verts = [
        np.array(
            [wall_radius_m * np.cos(2 * np.pi * k / n_walls), wall_radius_m * np.sin(2 * np.pi * k / n_walls)]
        )
        for k in range(n_walls)
    ]
    for k in range(n_walls):
        walls.append(
            Wall(
                id=f"w{k}",
                a=verts[k],
                b=verts[(k + 1) % n_walls],
                z0=0.0,
                h=wall_height_m,
                reflection_loss_db=reflection_loss_db,
            )
        )
    return Scenario(
        name="ring",
        base_stations=stations,
        walls=walls,
        trajectory={
            "kind": "circle",
            "center_en_m": [0.0, 0.0],
            "radius_m": route_radius_m,
            "speed_mps": speed_mps,
            "z_m": ue_height_m,
            "phase_rad": 0.0,
            "ccw": True,
        },
    )


class SceneArrays:
    """Precomputed geometry arrays for one scenario, for per-epoch batch
    queries over every (base station, wall) pair at once.

    Results match the scalar specular_path / los_visible functions (which
    stay around as the readable reference and test oracle) up to float
    reassociation.
    """

    def __init__(self, base_stations, walls):
        self.base_stations = list(base_stations)
        self.walls = list(walls)
        self.bs_p = (
            np.stack([bs.p for bs in self.base_stations])
            if self.base_stations
            else np.zeros((0, 3))
        )
        B = self.bs_p.shape[0]
        W = len(self.walls)
        self.n_bs, self.n_walls = B, W
        if W:
            self.w_a = np.stack([w.a for w in self.walls])  # (W, 2)
            self.w_tan = np.stack([w.tangent for w in self.walls])
            self.w_nrm = np.stack([w.normal[:2] for w in self.walls])
            self.w_len = np.array([w.length for w in self.walls])
            self.w_z0 = np.array([w.z0 for w in self.walls])
            self.w_z1 = np.array([w.z0 + w.h for w in self.walls])
            # signed horizontal offset of every BS from every wall plane
            self.bs_sd = np.einsum(
                "bwk,wk->bw", self.bs_p[:, None, :2] - self.w_a[None, :, :], self.w_nrm
            )
            self.bs_mirror = self.bs_p[:, None, :].repeat(W, axis=1).astype(float)
            self.bs_mirror[:, :, :2] -= 2.0 * self.bs_sd[:, :, None] * self.w_nrm[None, :, :]
        self._tol = 1e-9

    def _ue_sd(self, ue):
        return np.einsum("wk,wk->w", ue[None, :2] - self.w_a, self.w_nrm)

    def specular_arrays(self, ue):
        """All single-bounce hits for one UE position.

        Returns (bs_idx, wall_idx, point, leg_bs, leg_ue, length, u_dep,
        u_arr) arrays ordered base-station-major then wall, the same order a
        scalar double loop would produce.
        """
        ue = np.asarray(ue, dtype=float)
        if self.n_walls == 0 or self.n_bs == 0:
            empty3 = np.zeros((0, 3))
            z = np.zeros(0)
            return np.zeros(0, dtype=int), np.zeros(0, dtype=int), empty3, z, z, z, empty3, empty3
        s_ue = self._ue_sd(ue)  # (W,)
        s0 = -self.bs_sd  # mirror offsets, (B, W)
        opposite = (s0 * s_ue) < 0.0  # strict crossing only
        not_inplane = ~(
            (np.abs(s0) <= _PLANE_TOL) & (np.abs(s_ue) <= _PLANE_TOL)[None, :]
        )
        denom = s0 - s_ue[None, :]
        safe = denom != 0.0
        t = np.where(safe, s0 / np.where(safe, denom, 1.0), -1.0)
        valid = opposite & not_inplane & safe & (t > 0.0) & (t < 1.0)
        point = self.bs_mirror + t[:, :, None] * (ue - self.bs_mirror)
        along = np.einsum("bwk,wk->bw", point[:, :, :2] - self.w_a[None, :, :], self.w_tan)
        tol = self._tol
        valid &= (along >= -tol) & (along <= self.w_len[None, :] + tol)
        valid &= (point[:, :, 2] >= self.w_z0[None, :] - tol) & (
            point[:, :, 2] <= self.w_z1[None, :] + tol
        )
        d_bs = point - self.bs_p[:, None, :]
        d_ue = point - ue
        leg_bs = np.linalg.norm(d_bs, axis=2)
        leg_ue = np.linalg.norm(d_ue, axis=2)
        valid &= (leg_bs > _PLANE_TOL) & (leg_ue > _PLANE_TOL)
        bi, wi = np.nonzero(valid)
        lb = leg_bs[bi, wi]
        lu = leg_ue[bi, wi]
        u_dep = d_bs[bi, wi] / lb[:, None]
        u_arr = d_ue[bi, wi] / lu[:, None]
        return bi, wi, point[bi, wi], lb, lu, lb + lu, u_dep, u_arr

    def los_mask(self, ue):
        """Visibility of every base station from ue, walls as blockers."""
        ue = np.asarray(ue, dtype=float)
        if self.n_walls == 0:
            return np.ones(self.n_bs, dtype=bool)
        s_ue = self._ue_sd(ue)
        s0 = self.bs_sd  # (B, W)
        inplane = (np.abs(s0) <= _PLANE_TOL) & (np.abs(s_ue) <= _PLANE_TOL)[None, :]
        denom = s0 - s_ue[None, :]
        safe = denom != 0.0
        t = np.where(safe, s0 / np.where(safe, denom, 1.0), -1.0)
        crossing = (s0 * s_ue[None, :] <= 0.0) & safe & (t >= 0.0) & (t <= 1.0) & ~inplane
        hit = self.bs_p[:, None, :] + t[:, :, None] * (ue - self.bs_p[:, None, :])
        along = np.einsum("bwk,wk->bw", hit[:, :, :2] - self.w_a[None, :, :], self.w_tan)
        tol = self._tol
        on_rect = (
            (along >= -tol)
            & (along <= self.w_len[None, :] + tol)
            & (hit[:, :, 2] >= self.w_z0[None, :] - tol)
            & (hit[:, :, 2] <= self.w_z1[None, :] + tol)
        )
        blocked = crossing & on_rect
        if inplane.any():
            for b, w in zip(*np.nonzero(inplane)):
                if _inplane_overlap(self.bs_p[b], ue, self.walls[w]):
                    blocked[b, w] = True
        return ~blocked.any(axis=1)
