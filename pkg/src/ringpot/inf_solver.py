"""Monotone mean-value iteration for the limiting potential.

Each interior node relaxes toward the midpoint of the max and min of the
field over a closed ball whose radius is the stencil radius truncated to the
true distance to either boundary. The ball is read through the bilinear
interpolant (stencil nodes inside it plus a dense ring of circle samples),
and whenever the ball touches a boundary the exact Dirichlet value there
enters as a candidate, so no staircase bias and no wide-ball boundary layer
survive.

Sweeps alternate forward/backward Gauss-Seidel with a self-annealing
over-relaxation factor; the fixed point does not depend on the sweep order
or the relaxation.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from numba import njit

from .grid import EXTERIOR, INTERIOR, Grid, ScalarField
from .p_solver import ConvergenceError, PSolverConfig, SolveStats, solve_p
from .reports import CheckReport

BALL_ANGLES = 64  # circle samples per stencil ball


@dataclass(frozen=True)
class InfSolverConfig:
    stencil_radius_cells: int = 3
    tol: float = 1e-9
    max_iter: int = 10_000_000

    def __post_init__(self):
        if self.stencil_radius_cells < 1:
            raise ValueError("stencil radius must be at least one cell")
        if self.tol <= 0 or self.max_iter <= 0:
            raise ValueError("tol and max_iter must be positive")


def stencil_offsets(k: int) -> np.ndarray:
    """All lattice offsets within Euclidean distance k cells (origin excluded)."""
    offs = [(di, dj) for di in range(-k, k + 1) for dj in range(-k, k + 1)
            if (di, dj) != (0, 0) and di * di + dj * dj <= k * k]
    return np.array(offs, dtype=np.int64)


class BallTables:
    """Per-grid stencil data: truncated radii and boundary-touch values."""

    def __init__(self, grid: Grid, k: int, inner_value: float = 1.0, outer_value: float = 0.0):
        if grid.ring is None:
            raise ValueError("grid carries no ring; the ball stencil needs true boundary distances")
        self.k = k
        offs = stencil_offsets(k)
        self.offs = offs
        self.offs_norm = np.hypot(offs[:, 0].astype(float), offs[:, 1].astype(float))
        ang = 2.0 * math.pi * np.arange(BALL_ANGLES) / BALL_ANGLES
        self.cos_t = np.cos(ang)
        self.sin_t = np.sin(ang)
        pts = grid.points()
        d_out = (-grid.ring.outer.signed_distance(pts)).reshape(grid.nx, grid.ny) / grid.h
        d_in = (grid.ring.dist_to_inner(pts)).reshape(grid.nx, grid.ny) / grid.h
        eps = np.minimum(float(k), np.minimum(d_out, d_in))
        self.eps_cells = np.maximum(eps, 0.25)  # interior nodes sit >= h/2 from boundaries
        tol = 1e-9
        self.touch_in = d_in <= self.eps_cells + tol
        self.touch_out = d_out <= self.eps_cells + tol
        self.inner_value = inner_value
        self.outer_value = outer_value


@njit(cache=True)
def _ball_extrema(v, cls, i, j, offs, offs_norm, eps_cells, touch_in, touch_out,
                  cos_t, sin_t, inner_value, outer_value):
    nx, ny = v.shape
    mx = -1e300
    mn = 1e300
    e = eps_cells[i, j]
    for q in range(offs.shape[0]):
        if offs_norm[q] > e + 1e-12:
            continue
        a = i + offs[q, 0]
        b = j + offs[q, 1]
        if a < 0 or b < 0 or a >= nx or b >= ny:
            continue
        if cls[a, b] == EXTERIOR:
            continue
        val = v[a, b]
        if val > mx:
            mx = val
        if val < mn:
            mn = val
    for q in range(cos_t.shape[0]):
        px = i + e * cos_t[q]
        py = j + e * sin_t[q]
        a = int(math.floor(px))
        b = int(math.floor(py))
        if a < 0 or b < 0 or a + 1 >= nx or b + 1 >= ny:
            continue
        if (cls[a, b] == EXTERIOR or cls[a + 1, b] == EXTERIOR
                or cls[a, b + 1] == EXTERIOR or cls[a + 1, b + 1] == EXTERIOR):
            continue
        tx = px - a
        ty = py - b
        val = ((1 - tx) * (1 - ty) * v[a, b] + tx * (1 - ty) * v[a + 1, b]
               + (1 - tx) * ty * v[a, b + 1] + tx * ty * v[a + 1, b + 1])
        if val > mx:
            mx = val
        if val < mn:
            mn = val
    if touch_in[i, j]:
        if inner_value > mx:
            mx = inner_value
        if inner_value < mn:
            mn = inner_value
    if touch_out[i, j]:
        if outer_value > mx:
            mx = outer_value
        if outer_value < mn:
            mn = outer_value
    return mx, mn


@njit(cache=True)
def _midpoint_gs(v, cls, offs, offs_norm, eps_cells, touch_in, touch_out,
                 cos_t, sin_t, inner_value, outer_value, reverse, omega):
    """One in-place midpoint sweep; returns the sup unrelaxed update."""
    nx, ny = v.shape
    delta = 0.0
    i_range = range(nx - 1, -1, -1) if reverse else range(nx)
    for i in i_range:
        j_range = range(ny - 1, -1, -1) if reverse else range(ny)
        for j in j_range:
            if cls[i, j] != INTERIOR:
                continue
            mx, mn = _ball_extrema(v, cls, i, j, offs, offs_norm, eps_cells,
                                   touch_in, touch_out, cos_t, sin_t,
                                   inner_value, outer_value)
            if mx < mn:
                continue
            du = 0.5 * (mx + mn) - v[i, j]
            if abs(du) > delta:
                delta = abs(du)
            val = v[i, j] + omega * du
            if val < 0.0:
                val = 0.0
            elif val > 1.0:
                val = 1.0
            v[i, j] = val
    return delta


@njit(cache=True)
def _midpoint_audit(v, cls, offs, offs_norm, eps_cells, touch_in, touch_out,
                    cos_t, sin_t, inner_value, outer_value):
    """Sup |u - midpoint(u)| over interior nodes, without updating."""
    nx, ny = v.shape
    worst = 0.0
    for i in range(nx):
        for j in range(ny):
            if cls[i, j] != INTERIOR:
                continue
            mx, mn = _ball_extrema(v, cls, i, j, offs, offs_norm, eps_cells,
                                   touch_in, touch_out, cos_t, sin_t,
                                   inner_value, outer_value)
            if mx < mn:
                continue
            r = abs(v[i, j] - 0.5 * (mx + mn))
            if r > worst:
                worst = r
    return worst


def oberman_sweep(fld: ScalarField, reverse: bool = False, k: int = 3,
                  omega: float = 1.0, tables: BallTables | None = None
                  ) -> tuple[ScalarField, float]:
    """One midpoint sweep on a copy of the field (exposed for operator tests)."""
    t = tables or BallTables(fld.grid, k)
    v = fld.values.copy()
    delta = _midpoint_gs(v, fld.grid.node_class, t.offs, t.offs_norm, t.eps_cells,
                         t.touch_in, t.touch_out, t.cos_t, t.sin_t,
                         t.inner_value, t.outer_value, reverse, omega)
    return ScalarField(grid=fld.grid, values=v), float(delta)


def midpoint_residual(fld: ScalarField, k: int = 3,
                      tables: BallTables | None = None) -> float:
    """Sup |u - midpoint(u)| over interior nodes (audit of a solved field)."""
    t = tables or BallTables(fld.grid, k)
    return float(_midpoint_audit(fld.values, fld.grid.node_class, t.offs, t.offs_norm,
                                 t.eps_cells, t.touch_in, t.touch_out, t.cos_t, t.sin_t,
                                 t.inner_value, t.outer_value))


def ball_extrema_at(fld: ScalarField, i: int, j: int, k: int = 3) -> tuple[float, float]:
    """(max, min) of the field over the truncated stencil ball of one node."""
    t = BallTables(fld.grid, k)
    mx, mn = _ball_extrema(fld.values, fld.grid.node_class, i, j, t.offs, t.offs_norm,
                           t.eps_cells, t.touch_in, t.touch_out, t.cos_t, t.sin_t,
                           t.inner_value, t.outer_value)
    return float(mx), float(mn)


@njit(cache=True)
def _stencil_layer_ok(cls, offs):
    """Interior stencils that see exterior nodes must also see boundary data;
    otherwise the grid's Dirichlet layer has a hole at this radius."""
    nx, ny = cls.shape
    for i in range(nx):
        for j in range(ny):
            if cls[i, j] != INTERIOR:
                continue
            sees_ext = False
            sees_data = False
            for q in range(offs.shape[0]):
                a = i + offs[q, 0]
                b = j + offs[q, 1]
                if a < 0 or b < 0 or a >= nx or b >= ny:
                    sees_ext = True
                    continue
                if cls[a, b] == EXTERIOR:
                    sees_ext = True
                else:
                    sees_data = True
            if sees_ext and not sees_data:
                return False
    return True


def solve_inf(grid: Grid, config: InfSolverConfig = InfSolverConfig()):
    """Midpoint fixed point on the grid; returns (field, stats).

    Starts from the harmonic iterate and anneals the over-relaxation factor
    whenever the update norm stalls, which keeps the accelerated sweeps from
    cycling around the nonsmooth fixed point.
    """
    t0 = time.perf_counter()
    tables = BallTables(grid, config.stencil_radius_cells)
    cls = grid.node_class
    if not _stencil_layer_ok(cls, tables.offs):
        raise ValueError("stencil/exterior conflict: an interior stencil skips the Dirichlet layer")

    stats = SolveStats()
    try:
        init, hstats = solve_p(grid, PSolverConfig(p=2.0, tol=max(config.tol, 1e-10)))
    except ConvergenceError as exc:
        raise ConvergenceError("harmonic initial iterate failed", exc.stats) from exc
    values = init.values.copy()
    stats.iterations = hstats.iterations

    omega = 1.6
    window = 50
    best_prev = math.inf
    win_min = math.inf
    it = 0
    delta = math.inf
    reverse = False
    while it < config.max_iter:
        delta = _midpoint_gs(values, cls, tables.offs, tables.offs_norm, tables.eps_cells,
                             tables.touch_in, tables.touch_out, tables.cos_t, tables.sin_t,
                             tables.inner_value, tables.outer_value, reverse, omega)
        reverse = not reverse
        it += 1
        win_min = min(win_min, delta)
        if delta < config.tol:
            break
        if it % window == 0:
            if win_min > 0.5 * best_prev and omega > 1.0:
                # stalled: pull the relaxation back toward the plain sweep
                omega = max(1.0, 1.0 + 0.6 * (omega - 1.0))
            best_prev = min(best_prev, win_min)
            win_min = math.inf
        if not math.isfinite(delta):
            stats.iterations += it
            stats.update_sup = delta
            raise ConvergenceError("update norm became non-finite", stats)
    stats.iterations += it
    stats.update_sup = float(delta)
    stats.residual_sup = midpoint_residual(ScalarField(grid, values),
                                           config.stencil_radius_cells, tables)
    stats.wall_time = time.perf_counter() - t0
    if delta >= config.tol:
        raise ConvergenceError(f"no convergence after {it} sweeps (update {delta:.3e})", stats)
    return ScalarField(grid=grid, values=values), stats


def mvp_residual(fld: ScalarField, x, eps: float, n_angles: int = 256) -> float:
    """Scaled mean-value defect [u(x) - (max+min)/2 over the eps-ball] / eps^2.

    Ball extrema are taken over interpolated samples on circles of radius eps
    and eps/2 plus the center, which tracks interior extrema of the radial
    profile at the stated tolerances.
    """
    g = fld.grid
    if eps < 4 * g.h:
        raise ValueError(f"eps={eps:g} must be at least 4h={4 * g.h:g}")
    if g.ring is not None:
        x_arr = np.asarray(x, dtype=float)
        d_out = -g.ring.outer.signed_distance(x_arr)
        d_in = float(g.ring.dist_to_inner(x_arr[None, :])[0])
        if min(d_out, d_in) < eps + 2 * g.h:
            raise ValueError("ball B(x, eps + 2h) must stay inside the ring")
    ang = 2.0 * math.pi * np.arange(n_angles) / n_angles
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    x0 = np.asarray(x, dtype=float)
    samples = [x0[None, :]]
    for r in (eps, 0.5 * eps):
        samples.append(x0[None, :] + r * dirs)
    pts = np.concatenate(samples, axis=0)
    vals = fld.interpolate_many(pts)
    u_x = fld.interpolate(x0)
    return float((u_x - 0.5 * (vals.max() + vals.min())) / (eps * eps))


def comparison_with_cones_check(fld: ScalarField, trials: int = 200,
                                seed: int = 0, slack_cells: float = 4.0,
                                n_boundary: int = 128) -> CheckReport:
    """Empirical two-sided cone comparison on random sub-balls.

    For each trial ball V and apex x0 in V, the tightest cone through u(x0)
    dominating u on the sampled boundary of V \\ {x0} must dominate u at the
    grid nodes inside V, and symmetrically from below.
    """
    g = fld.grid
    rng = np.random.default_rng(seed)
    slack = slack_cells * g.h
    mask = g.unmasked(4.0, 2.0)
    X, Y = g.node_xy()
    cand = np.stack([X[mask], Y[mask]], axis=1)
    if cand.shape[0] == 0:
        return CheckReport(name="cone_comparison", passed=False, samples=0, seed=seed)
    pts_all = g.points()
    d_in_all = g.ring.dist_to_inner(pts_all).reshape(g.nx, g.ny)
    d_out_all = (-g.ring.outer.signed_distance(pts_all)).reshape(g.nx, g.ny)
    room = np.minimum(d_in_all, d_out_all)

    ang = 2.0 * math.pi * np.arange(n_boundary) / n_boundary
    circle = np.stack([np.cos(ang), np.sin(ang)], axis=1)

    good = 0
    used = 0
    worst = math.inf
    for _ in range(trials):
        idx = rng.integers(0, cand.shape[0])
        z = cand[idx]
        iz, jz = g.nearest_node(z)
        rho_max = room[iz, jz] - 3 * g.h
        if rho_max < 5 * g.h:
            continue
        rho = rng.uniform(4 * g.h, rho_max)
        theta = rng.uniform(0, 2 * math.pi)
        x0 = z + rng.uniform(0, 0.8 * rho) * np.array([math.cos(theta), math.sin(theta)])
        used += 1

        bd = z[None, :] + rho * circle
        u_bd = fld.interpolate_many(bd, extend=True)
        u_x0 = fld.interpolate(x0, extend=True)
        r_bd = np.hypot(bd[:, 0] - x0[0], bd[:, 1] - x0[1])

        sel = ((X - z[0]) ** 2 + (Y - z[1]) ** 2 <= rho * rho) & (g.node_class == INTERIOR)
        un = fld.values[sel]
        rn = np.hypot(X[sel] - x0[0], Y[sel] - x0[1])

        b_above = max(0.0, float(((u_bd - u_x0) / r_bd).max()))
        margin_above = float((u_x0 + b_above * rn + slack - un).min()) if un.size else 0.0
        b_below = max(0.0, float(((u_x0 - u_bd) / r_bd).max()))
        margin_below = float((un - (u_x0 - b_below * rn) + slack).min()) if un.size else 0.0

        worst = min(worst, margin_above, margin_below)
        if margin_above >= 0 and margin_below >= 0:
            good += 1
    frac = good / used if used else 0.0
    return CheckReport(name="cone_comparison", passed=frac >= 0.99, fraction=frac,
                       worst_margin=worst if used else 0.0, samples=used, seed=seed,
                       details={"slack": slack, "trials_requested": trials})
