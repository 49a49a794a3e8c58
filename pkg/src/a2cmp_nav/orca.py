"""Optimal reciprocal collision avoidance (ORCA) for disc agents.

Each neighbor contributes one half-plane of permitted velocities: the agent
takes half of the change needed to leave the truncated velocity obstacle
(cone of relative velocities colliding within ``time_horizon``).  The new
velocity is the point of the half-plane intersection, inside the speed disc,
closest to the preferred velocity.  If the intersection is empty, the point
that minimises the largest violation is returned instead.

Half-planes permit the region to the LEFT of the directed line through
``point`` along ``direction``.
"""
import math
from dataclasses import dataclass
from typing import NamedTuple

_EPS = 1e-5


class HalfPlane(NamedTuple):
    point: tuple
    direction: tuple


@dataclass(frozen=True)
class OrcaParams:
    time_horizon: float = 3.0
    neighbor_dist: float = 10.0
    max_speed: float = 1.0
    # added to every radius when building half-planes
    safety_margin: float = 0.02

    def __post_init__(self):
        if not (self.time_horizon > 0 and self.neighbor_dist > 0 and self.max_speed > 0):
            raise ValueError("ORCA parameters must be strictly positive")
        if self.safety_margin < 0:
            raise ValueError("safety_margin must be >= 0")


def _det(ax, ay, bx, by):
    return ax * by - ay * bx


def orca_half_planes(agent, neighbors, time_horizon, neighbor_dist, dt, safety_margin=0.0):
    """One half-plane per neighbor within ``neighbor_dist`` (center to center)."""
    planes = []
    inv_tau = 1.0 / time_horizon
    vx, vy = agent.vx, agent.vy
    for nb in neighbors:
        rx, ry = nb.px - agent.px, nb.py - agent.py
        dist_sq = rx * rx + ry * ry
        if dist_sq > neighbor_dist * neighbor_dist:
            continue
        wvx, wvy = vx - nb.vx, vy - nb.vy
        rad = agent.radius + nb.radius + 2 * safety_margin
        rad_sq = rad * rad
        if dist_sq > rad_sq:
            wx, wy = wvx - inv_tau * rx, wvy - inv_tau * ry
            w_sq = wx * wx + wy * wy
            dot1 = wx * rx + wy * ry
            if dot1 < 0 and dot1 * dot1 > rad_sq * w_sq:
                # nearest boundary point lies on the cut-off circle
                w_len = math.sqrt(w_sq)
                ux, uy = wx / w_len, wy / w_len
                dx, dy = uy, -ux
                scale = rad * inv_tau - w_len
                ux, uy = scale * ux, scale * uy
            else:
                leg = math.sqrt(dist_sq - rad_sq)
                if _det(rx, ry, wx, wy) > 0:
                    dx = (rx * leg - ry * rad) / dist_sq
                    dy = (rx * rad + ry * leg) / dist_sq
                else:
                    dx = -(rx * leg + ry * rad) / dist_sq
                    dy = -(-rx * rad + ry * leg) / dist_sq
                dot2 = wvx * dx + wvy * dy
                ux, uy = dot2 * dx - wvx, dot2 * dy - wvy
        else:
            # already overlapping: separate within one step
            inv_dt = 1.0 / dt
            wx, wy = wvx - inv_dt * rx, wvy - inv_dt * ry
            w_len = math.hypot(wx, wy)
            if w_len < 1e-12:
                # coincident centres, pick an arbitrary escape direction
                wx, wy, w_len = -1.0, 0.0, 1.0
            ux, uy = wx / w_len, wy / w_len
            dx, dy = uy, -ux
            scale = rad * inv_dt - w_len
            ux, uy = scale * ux, scale * uy
        planes.append(HalfPlane((vx + 0.5 * ux, vy + 0.5 * uy), (dx, dy)))
    return planes


def _lp1(lines, k, radius, opt, direction_opt):
    (px, py), (dx, dy) = lines[k]
    dot = px * dx + py * dy
    disc = dot * dot + radius * radius - (px * px + py * py)
    if disc < 0:
        return None
    root = math.sqrt(disc)
    t_left, t_right = -dot - root, -dot + root
    for i in range(k):
        (qx, qy), (ex, ey) = lines[i]
        denom = _det(dx, dy, ex, ey)
        numer = _det(ex, ey, px - qx, py - qy)
        if abs(denom) <= _EPS:
            if numer < 0:
                return None
            continue
        t = numer / denom
        if denom >= 0:
            t_right = min(t_right, t)
        else:
            t_left = max(t_left, t)
        if t_left > t_right:
            return None
    if direction_opt:
        t = t_right if opt[0] * dx + opt[1] * dy > 0 else t_left
    else:
        t = dx * (opt[0] - px) + dy * (opt[1] - py)
        t = min(max(t, t_left), t_right)
    return (px + t * dx, py + t * dy)


def _lp2(lines, radius, opt, direction_opt):
    """Returns (result, index of first failing line or len(lines))."""
    ox, oy = opt
    if direction_opt:
        result = (ox * radius, oy * radius)
    elif ox * ox + oy * oy > radius * radius:
        n = math.hypot(ox, oy)
        result = (ox / n * radius, oy / n * radius)
    else:
        result = (ox, oy)
    for i, ((px, py), (dx, dy)) in enumerate(lines):
        if _det(dx, dy, px - result[0], py - result[1]) > 0:
            candidate = _lp1(lines, i, radius, opt, direction_opt)
            if candidate is None:
                return result, i
            result = candidate
    return result, len(lines)


def _lp3(lines, begin, radius, result):
    distance = 0.0
    for i in range(begin, len(lines)):
        (px, py), (dx, dy) = lines[i]
        if _det(dx, dy, px - result[0], py - result[1]) > distance:
            projected = []
            for j in range(i):
                (qx, qy), (ex, ey) = lines[j]
                determinant = _det(dx, dy, ex, ey)
                if abs(determinant) <= _EPS:
                    if dx * ex + dy * ey > 0:
                        continue
                    point = (0.5 * (px + qx), 0.5 * (py + qy))
                else:
                    s = _det(ex, ey, px - qx, py - qy) / determinant
                    point = (px + s * dx, py + s * dy)
                nx, ny = ex - dx, ey - dy
                n = math.hypot(nx, ny)
                projected.append(HalfPlane(point, (nx / n, ny / n)))
            candidate, fail = _lp2(projected, radius, (-dy, dx), True)
            if fail >= len(projected):
                result = candidate
            distance = _det(dx, dy, px - result[0], py - result[1])
    return result


def solve_velocity_program(half_planes, max_speed: float, preferred):
    """Velocity in the speed disc nearest ``preferred`` satisfying every half-plane.

    When no such velocity exists the result minimises the largest signed
    distance by which any half-plane is violated.
    """
    lines = [HalfPlane(tuple(map(float, h.point)), tuple(map(float, h.direction))) for h in half_planes]
    result, fail = _lp2(lines, max_speed, (float(preferred[0]), float(preferred[1])), False)
    if fail < len(lines):
        result = _lp3(lines, fail, max_speed, result)
    return _clip(result, max_speed)


def _clip(v, max_speed):
    speed = math.hypot(*v)
    if speed > max_speed:
        return (v[0] / speed * max_speed, v[1] / speed * max_speed)
    return v


def preferred_velocity(agent, dt):
    """Toward the goal at ``min(v_pref, distance / dt)``."""
    gx, gy = agent.gx - agent.px, agent.gy - agent.py
    dist = math.hypot(gx, gy)
    if dist < 1e-12:
        return (0.0, 0.0)
    speed = min(agent.v_pref, dist / dt)
    return (gx / dist * speed, gy / dist * speed)


def compute_orca_velocity(agent, neighbors, params: OrcaParams = None, dt: float = 0.25):
    if params is None:
        params = OrcaParams(max_speed=agent.v_pref)
    planes = orca_half_planes(agent, neighbors, params.time_horizon, params.neighbor_dist, dt,
                              params.safety_margin)
    return solve_velocity_program(planes, params.max_speed, preferred_velocity(agent, dt))


class OrcaPolicy:
    """Policy callback for :func:`a2cmp_nav.sim.run_episode`.

    ``max_speed`` follows each agent's own preferred speed.
    """

    def __init__(self, time_horizon=3.0, neighbor_dist=10.0, safety_margin=0.02, dt=0.25):
        self.time_horizon = time_horizon
        self.neighbor_dist = neighbor_dist
        self.safety_margin = safety_margin
        self.dt = dt

    def __call__(self, agent, others):
        params = OrcaParams(self.time_horizon, self.neighbor_dist, agent.v_pref, self.safety_margin)
        return compute_orca_velocity(agent, others, params, self.dt)
