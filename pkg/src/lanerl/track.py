"""Closed-loop reference line and frenet <-> cartesian conversion.

The reference line is a periodic cubic spline through sparse waypoints,
parameterised by the waypoint arc length ``s``.  ``d`` is the signed lateral
offset along the right-hand normal, so lane 0 (d in [0, 4)) is the lane
nearest the reference line.
"""
from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import InvalidArgument, OutOfCorridor

DEFAULT_LENGTH = 6946.0
LANE_WIDTH = 4.0
LANE_COUNT = 3
ROAD_WIDTH = LANE_WIDTH * LANE_COUNT
CORRIDOR = 20.0


def lane_center(lane: int) -> float:
    return LANE_WIDTH / 2 + lane * LANE_WIDTH


def lane_of(d: float) -> int:
    return min(max(int(math.floor(d / LANE_WIDTH)), 0), LANE_COUNT - 1)


def wrap_s(s: float, length: float) -> float:
    s = s % length
    # float modulo of a tiny negative number can round up to `length`
    return 0.0 if s >= length else s


@dataclass(eq=False)
class TrackMap:
    """Waypoints are rows of ``(x, y, s, nx, ny)``."""

    waypoints: np.ndarray
    total_length: float
    _spline: CubicSpline = field(init=False, repr=False)

    def __post_init__(self):
        wp = np.asarray(self.waypoints, dtype=float)
        if wp.ndim != 2 or wp.shape[1] != 5 or len(wp) < 4:
            raise InvalidArgument("waypoints must be an (n>=4, 5) array")
        s = wp[:, 2]
        if np.any(np.diff(s) <= 0) or s[-1] >= self.total_length:
            raise InvalidArgument("waypoint s must increase strictly and stay below total_length")
        self.waypoints = wp
        knots = np.append(s, self.total_length)
        xy = np.vstack([wp[:, :2], wp[:1, :2]])
        self._spline = CubicSpline(knots, xy, bc_type="periodic")
        self._knots = knots.tolist()
        # per-segment polynomial coefficients for the scalar fast path
        c = self._spline.c
        self._cx = [tuple(c[:, i, 0].tolist()) for i in range(c.shape[1])]
        self._cy = [tuple(c[:, i, 1].tolist()) for i in range(c.shape[1])]

    # -- scalar evaluation -------------------------------------------------
    def _eval(self, s: float):
        s = wrap_s(s, self.total_length)
        i = bisect.bisect_right(self._knots, s) - 1
        if i >= len(self._cx):
            i = len(self._cx) - 1
        h = s - self._knots[i]
        a3, a2, a1, a0 = self._cx[i]
        b3, b2, b1, b0 = self._cy[i]
        x = ((a3 * h + a2) * h + a1) * h + a0
        y = ((b3 * h + b2) * h + b1) * h + b0
        dx = (3 * a3 * h + 2 * a2) * h + a1
        dy = (3 * b3 * h + 2 * b2) * h + b1
        ddx = 6 * a3 * h + 2 * a2
        ddy = 6 * b3 * h + 2 * b2
        return x, y, dx, dy, ddx, ddy

    def reference(self, s: float) -> tuple[float, float]:
        x, y, *_ = self._eval(s)
        return x, y

    def normal(self, s: float) -> tuple[float, float]:
        _, _, dx, dy, _, _ = self._eval(s)
        g = math.hypot(dx, dy)
        return dy / g, -dx / g

    def frenet_to_cartesian(self, s: float, d: float) -> tuple[float, float]:
        x, y, dx, dy, _, _ = self._eval(s)
        g = math.hypot(dx, dy)
        return x + d * dy / g, y - d * dx / g

    def stretch(self, s: float, d: float) -> float:
        """|dP/ds| of the offset curve at lateral offset ``d``."""
        _, _, dx, dy, ddx, ddy = self._eval(s)
        g2 = dx * dx + dy * dy
        g = math.sqrt(g2)
        # derivative of the unit tangent, rotated into the normal's derivative
        k = (dx * ddx + dy * ddy) / g2
        tdx = (ddx - k * dx) / g
        tdy = (ddy - k * dy) / g
        return math.hypot(dx + d * tdy, dy - d * tdx)

    def frenet_to_cartesian_array(self, s, d) -> np.ndarray:
        s = np.mod(np.asarray(s, dtype=float), self.total_length)
        d = np.asarray(d, dtype=float)
        p = self._spline(s)
        t = self._spline(s, 1)
        g = np.hypot(t[..., 0], t[..., 1])
        return np.stack([p[..., 0] + d * t[..., 1] / g, p[..., 1] - d * t[..., 0] / g], axis=-1)

    def cartesian_to_frenet(self, x: float, y: float) -> tuple[float, float]:
        wp = self.waypoints
        i = int(np.argmin((wp[:, 0] - x) ** 2 + (wp[:, 1] - y) ** 2))
        s = wp[i, 2]
        for _ in range(50):
            rx, ry, dx, dy, ddx, ddy = self._eval(s)
            ex, ey = x - rx, y - ry
            f = ex * dx + ey * dy
            fp = -(dx * dx + dy * dy) + ex * ddx + ey * ddy
            if fp >= 0:
                raise OutOfCorridor(f"point ({x}, {y}) is not near the reference line")
            step = f / fp
            s -= step
            if abs(step) < 1e-12:
                break
        rx, ry, dx, dy, _, _ = self._eval(s)
        g = math.hypot(dx, dy)
        d = ((x - rx) * dy - (y - ry) * dx) / g
        if abs(d) > CORRIDOR or math.hypot(x - rx, y - ry) > CORRIDOR + 1e-9:
            raise OutOfCorridor(f"point ({x}, {y}) is {abs(d):.1f} m from the reference line")
        return wrap_s(s, self.total_length), d


def _loop_curve(theta, radius, amps, phases):
    k = np.arange(2, 2 + len(amps))[:, None]
    rho = radius * (1.0 + np.sum(amps[:, None] * np.cos(k * theta + phases[:, None]), axis=0))
    drho = radius * np.sum(-amps[:, None] * k * np.sin(k * theta + phases[:, None]), axis=0)
    x, y = rho * np.cos(theta), rho * np.sin(theta)
    dx = drho * np.cos(theta) - rho * np.sin(theta)
    dy = drho * np.sin(theta) + rho * np.cos(theta)
    return x, y, np.hypot(dx, dy)


def generate_track(seed: int = 0, length: float = DEFAULT_LENGTH, spacing: float = 30.0) -> TrackMap:
    """Smooth random counter-clockwise loop of exactly ``length`` metres."""
    if not (isinstance(length, (int, float)) and math.isfinite(length)) or length <= 1000:
        raise InvalidArgument(f"track length must be finite and > 1000 m, got {length!r}")
    rng = np.random.default_rng(seed)
    amps = rng.uniform(0.005, 0.02, size=3)
    phases = rng.uniform(0, 2 * np.pi, size=3)

    n_dense = 8192
    theta = np.arange(n_dense) * (2 * np.pi / n_dense)
    _, _, speed = _loop_curve(theta, 1.0, amps, phases)
    # periodic trapezoid rule: spectrally accurate for a smooth closed curve
    unit_len = speed.sum() * (2 * np.pi / n_dense)
    radius = length / unit_len
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]))]) * (2 * np.pi / n_dense)
    cum = np.append(cum, unit_len)
    theta_ext = np.append(theta, 2 * np.pi)

    n_wp = max(int(round(length / spacing)), 16)
    s_wp = np.arange(n_wp) * (length / n_wp)
    theta_wp = np.interp(s_wp / radius, cum, theta_ext)
    x, y, _ = _loop_curve(theta_wp, radius, amps, phases)

    rough = TrackMap(np.column_stack([x, y, s_wp, np.zeros(n_wp), np.ones(n_wp)]), float(length))
    normals = np.array([rough.normal(s) for s in s_wp])
    return TrackMap(np.column_stack([x, y, s_wp, normals]), float(length))


def frenet_to_cartesian(track: TrackMap, s: float, d: float) -> tuple[float, float]:
    return track.frenet_to_cartesian(s, d)


def cartesian_to_frenet(track: TrackMap, x: float, y: float) -> tuple[float, float]:
    return track.cartesian_to_frenet(x, y)


def save_track_csv(track: TrackMap, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "s", "nx", "ny"])
        for row in track.waypoints:
            w.writerow([repr(float(v)) for v in row])


def load_track_csv(path, total_length: float | None = None) -> TrackMap:
    """Read ``x,y,s,nx,ny`` rows; a non-numeric first line is taken as a header.

    Without ``total_length`` the loop is closed with the chord from the last
    waypoint back to the first.
    """
    rows = []
    with open(Path(path), newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or not "".join(row).strip():
                continue
            try:
                vals = [float(v) for v in row]
            except ValueError:
                if i == 0:
                    continue
                raise InvalidArgument(f"{path}: bad row {i + 1}: {row}")
            if len(vals) != 5:
                raise InvalidArgument(f"{path}: row {i + 1} has {len(vals)} fields, expected 5")
            rows.append(vals)
    wp = np.array(rows, dtype=float)
    if total_length is None:
        total_length = float(wp[-1, 2] + np.hypot(*(wp[0, :2] - wp[-1, :2])))
    return TrackMap(wp, float(total_length))
