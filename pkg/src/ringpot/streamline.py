"""Gradient trajectories of a solved potential and their property checks.

Trajectories follow dγ/dt = Du(γ) with classical fixed-step RK4 on the
bilinearly interpolated gradient field, stopping on a collar around the
inner set, on leaving the defined region, or on a step budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .grid import ScalarField, VectorField, gradient
from .reports import CheckReport

REACHED_INNER = "reached_inner"
LEFT_DOMAIN = "left_domain"
STALLED = "stalled"
MAX_STEPS = "max_steps"

_STATUS = {0: REACHED_INNER, 1: LEFT_DOMAIN, 2: STALLED, 3: MAX_STEPS}


@dataclass(frozen=True)
class TraceConfig:
    dt: float | None = None        # default: h / (2 max|Du|)
    max_steps: int = 200_000
    stop_collar_cells: float = 2.0

    def __post_init__(self):
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.max_steps <= 0 or self.stop_collar_cells < 0:
            raise ValueError("max_steps must be positive and the collar nonnegative")


@dataclass(frozen=True)
class Streamline:
    points: np.ndarray       # (n, 2)
    times: np.ndarray        # (n,)
    values: np.ndarray       # u along the curve
    speeds: np.ndarray       # |Du| along the curve
    terminal_status: str
    h: float                 # grid spacing the trace was run on
    end_distance_to_inner: float

    def terminal_time(self) -> float:
        return float(self.times[-1])


@njit(cache=True)
def _interp2(vals, defined, ox, oy, h, nx, ny, x, y):
    """Bilinear sample of one component; returns (value, ok flag)."""
    fx = (x - ox) / h
    fy = (y - oy) / h
    i = int(math.floor(fx))
    j = int(math.floor(fy))
    if i < 0 or j < 0 or i + 1 >= nx or j + 1 >= ny:
        return 0.0, False
    if not (defined[i, j] and defined[i + 1, j] and defined[i, j + 1] and defined[i + 1, j + 1]):
        return 0.0, False
    tx = fx - i
    ty = fy - j
    v = (vals[i, j] * (1 - tx) * (1 - ty) + vals[i + 1, j] * tx * (1 - ty)
         + vals[i, j + 1] * (1 - tx) * ty + vals[i + 1, j + 1] * tx * ty)
    return v, True


@njit(cache=True)
def _rk4_trace(gx, gy, gdef, din, ox, oy, h, x0, y0, dt, max_steps, collar):
    """Fixed-step RK4 on the interpolated gradient; returns path arrays and status."""
    nx, ny = gx.shape
    pts = np.empty((max_steps + 1, 2))
    spd = np.empty(max_steps + 1)
    pts[0, 0] = x0
    pts[0, 1] = y0
    status = 3
    n = 1
    x = x0
    y = y0
    d0, ok = _interp2(din, np.ones(din.shape, np.bool_), ox, oy, h, nx, ny, x, y)
    if ok and d0 <= collar:
        vx, vy = 0.0, 0.0
        v1, ok1 = _interp2(gx, gdef, ox, oy, h, nx, ny, x, y)
        v2, ok2 = _interp2(gy, gdef, ox, oy, h, nx, ny, x, y)
        if ok1 and ok2:
            vx, vy = v1, v2
        spd[0] = math.hypot(vx, vy)
        return pts[:1], spd[:1], 0, d0
    all_def = np.ones(din.shape, np.bool_)
    for step in range(max_steps):
        # RK4 stages; any stage outside the defined region ends the trace
        k1x, o1 = _interp2(gx, gdef, ox, oy, h, nx, ny, x, y)
        k1y, o2 = _interp2(gy, gdef, ox, oy, h, nx, ny, x, y)
        if not (o1 and o2):
            status = 1
            break
        spd[n - 1] = math.hypot(k1x, k1y)
        if spd[n - 1] < 1e-14:
            status = 2
            break
        k2x, o1 = _interp2(gx, gdef, ox, oy, h, nx, ny, x + 0.5 * dt * k1x, y + 0.5 * dt * k1y)
        k2y, o2 = _interp2(gy, gdef, ox, oy, h, nx, ny, x + 0.5 * dt * k1x, y + 0.5 * dt * k1y)
        if not (o1 and o2):
            status = 1
            break
        k3x, o1 = _interp2(gx, gdef, ox, oy, h, nx, ny, x + 0.5 * dt * k2x, y + 0.5 * dt * k2y)
        k3y, o2 = _interp2(gy, gdef, ox, oy, h, nx, ny, x + 0.5 * dt * k2x, y + 0.5 * dt * k2y)
        if not (o1 and o2):
            status = 1
            break
        k4x, o1 = _interp2(gx, gdef, ox, oy, h, nx, ny, x + dt * k3x, y + dt * k3y)
        k4y, o2 = _interp2(gy, gdef, ox, oy, h, nx, ny, x + dt * k3x, y + dt * k3y)
        if not (o1 and o2):
            status = 1
            break
        x += dt * (k1x + 2 * k2x + 2 * k3x + k4x) / 6.0
        y += dt * (k1y + 2 * k2y + 2 * k3y + k4y) / 6.0
        pts[n, 0] = x
        pts[n, 1] = y
        n += 1
        dcur, okd = _interp2(din, all_def, ox, oy, h, nx, ny, x, y)
        if okd and dcur <= collar:
            status = 0
            break
        if not okd:
            status = 1
            break
    # speed at the last accepted point
    vlast, okl = _interp2(gx, gdef, ox, oy, h, nx, ny, x, y)
    wlast, okl2 = _interp2(gy, gdef, ox, oy, h, nx, ny, x, y)
    spd[n - 1] = math.hypot(vlast, wlast) if (okl and okl2) else spd[max(n - 2, 0)]
    dend, okd = _interp2(din, all_def, ox, oy, h, nx, ny, x, y)
    if status == 1 and okd and dend <= 2.0 * collar:
        status = 0  # fell out of the defined region right at the inner collar
    return pts[:n], spd[:n], status, dend if okd else math.nan


def _inner_distance_map(grid) -> np.ndarray:
    pts = grid.points()
    return grid.ring.dist_to_inner(pts).reshape(grid.nx, grid.ny)


def default_dt(grad: VectorField) -> float:
    mags = grad.magnitude().values
    top = float(np.nanmax(mags)) if np.isfinite(mags).any() else 1.0
    return grad.grid.h / (2.0 * max(top, 1e-12))


def trace(fld: ScalarField, start, config: TraceConfig = TraceConfig(),
          grad: VectorField | None = None) -> Streamline:
    """Trace one streamline from ``start``; pass ``grad`` to reuse the field."""
    g = fld.grid
    if g.ring is None:
        raise ValueError("field's grid carries no ring; cannot trace")
    grad = grad or gradient(fld)
    gdef = grad.defined
    start = np.asarray(start, dtype=float)
    din = _inner_distance_map(g)
    dt = config.dt if config.dt is not None else default_dt(grad)
    collar = config.stop_collar_cells * g.h
    pts, spd, status_code, dend = _rk4_trace(
        grad.values[:, :, 0].copy(), grad.values[:, :, 1].copy(), gdef, din,
        g.origin[0], g.origin[1], g.h, float(start[0]), float(start[1]),
        dt, config.max_steps, collar)
    if pts.shape[0] == 1 and _STATUS[status_code] != REACHED_INNER:
        raise ValueError(f"start point {start} is not a traceable interior location")
    times = dt * np.arange(pts.shape[0])
    values = fld.interpolate_many(pts, extend=True)
    return Streamline(points=pts, times=times, values=values, speeds=spd,
                      terminal_status=_STATUS[status_code], h=g.h,
                      end_distance_to_inner=float(dend))


def trace_many(fld: ScalarField, starts, config: TraceConfig = TraceConfig()) -> list:
    """Trace a batch of starts, reusing one gradient field; errors per entry."""
    grad = gradient(fld)
    out = []
    for s in starts:
        try:
            out.append(trace(fld, s, config, grad=grad))
        except ValueError as exc:
            out.append(exc)
    return out


def streamline_properties(s: Streamline, slack_cells: float = 4.0,
                          max_pairs: int = 4000) -> CheckReport:
    """Convex values, nondecreasing speed and the square-root displacement bound."""
    if s.points.shape[0] < 3:
        raise ValueError("streamline too short for property checks")
    slack = slack_cells * s.h
    v = s.values
    second = v[2:] - 2 * v[1:-1] + v[:-2]
    frac_convex = float((second >= -slack).mean())
    margin_convex = float(second.min() + slack)

    ds = np.diff(s.speeds)
    frac_speed = float((ds >= -slack).mean())
    margin_speed = float(ds.min() + slack)

    n = s.points.shape[0]
    rng = np.random.default_rng(12345)
    if n * (n - 1) // 2 > max_pairs:
        ii = rng.integers(0, n - 1, size=max_pairs)
        jj = rng.integers(0, n - 1, size=max_pairs)
        a = np.minimum(ii, jj)
        b = np.maximum(ii, jj) + 1
    else:
        a, b = np.triu_indices(n, k=1)
    dtv = s.times[b] - s.times[a]
    keep = (dtv > 0) & (dtv <= 1.0)
    a, b, dtv = a[keep], b[keep], dtv[keep]
    disp = np.hypot(s.points[b, 0] - s.points[a, 0], s.points[b, 1] - s.points[a, 1])
    holder_margin = np.sqrt(dtv) + slack - disp
    frac_holder = float((holder_margin >= 0).mean()) if len(dtv) else 1.0
    margin_holder = float(holder_margin.min()) if len(dtv) else slack

    fracs = {"values_convex": frac_convex, "speed_nondecreasing": frac_speed,
             "holder_half": frac_holder}
    passed = all(f >= 0.99 for f in fracs.values())
    return CheckReport(name="streamline_properties", passed=passed,
                       fraction=min(fracs.values()),
                       worst_margin=min(margin_convex, margin_speed, margin_holder),
                       samples=n,
                       details={"fractions": fracs, "slack": slack,
                                "terminal_status": s.terminal_status})


def streamline_to_csv(s: Streamline, path) -> None:
    """Dump one trace as "t,x,y,u,speed" rows (17 significant digits)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,x,y,u,speed\n")
        for k in range(s.points.shape[0]):
            fh.write(f"{s.times[k]:.17g},{s.points[k, 0]:.17g},{s.points[k, 1]:.17g},"
                     f"{s.values[k]:.17g},{s.speeds[k]:.17g}\n")
