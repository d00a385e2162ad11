"""Finite-p potential solver on ring grids.

Lagged-diffusivity (Picard) iteration of the variational 5-point scheme
div(w Du) = 0 with edge-midpoint weights w = (|Du|^2 + eps^2)^((p-2)/2).
The weights are frozen per Picard cycle; the resulting linear M-matrix
system is swept with plain Jacobi or over-relaxed Gauss-Seidel. Convergence
is declared on the unrelaxed lagged update falling below tolerance.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from numba import njit

from .grid import (DIRICHLET_INNER, DIRICHLET_OUTER, EXTERIOR, INTERIOR, Grid,
                   ScalarField, potential_shell)
from .reports import CheckReport

P_CAP = 256.0  # beyond this the weight dynamic range is not double-friendly


class ConvergenceError(RuntimeError):
    """Solver failed to reach tolerance; carries the stats gathered so far."""

    def __init__(self, message: str, stats: "SolveStats"):
        super().__init__(message)
        self.stats = stats


@dataclass
class SolveStats:
    iterations: int = 0
    update_sup: float = math.inf
    residual_sup: float = math.inf
    wall_time: float = 0.0


@dataclass(frozen=True)
class PSolverConfig:
    p: float
    eps_reg: float = 1e-8
    tol: float = 1e-8
    max_iter: int = 1_000_000
    sweep: str = "gauss_seidel"

    def __post_init__(self):
        if not (2.0 <= self.p <= P_CAP):
            raise ValueError(f"p must lie in [2, {P_CAP:g}] (p=2 for diagnostics only), got {self.p}")
        if self.eps_reg <= 0 or self.tol <= 0 or self.max_iter <= 0:
            raise ValueError("eps_reg, tol and max_iter must be positive")
        if self.sweep not in ("jacobi", "gauss_seidel"):
            raise ValueError(f"unknown sweep {self.sweep!r}")


@njit(cache=True)
def _fill_weights(v, cls, h, ex, eps2, w_e, w_n):
    """Edge-midpoint weights from the current iterate.

    w_e[i, j] belongs to the edge (i,j)-(i+1,j), w_n[i, j] to (i,j)-(i,j+1);
    only edges touching an interior node are filled.
    """
    nx, ny = v.shape
    for i in range(nx - 1):
        for j in range(ny):
            w_e[i, j] = 0.0
            if cls[i, j] != INTERIOR and cls[i + 1, j] != INTERIOR:
                continue
            if j == 0 or j == ny - 1:
                continue
            ux = (v[i + 1, j] - v[i, j]) / h
            uy = (v[i, j + 1] + v[i + 1, j + 1] - v[i, j - 1] - v[i + 1, j - 1]) / (4.0 * h)
            w_e[i, j] = (ux * ux + uy * uy + eps2) ** ex
    for i in range(nx):
        for j in range(ny - 1):
            w_n[i, j] = 0.0
            if cls[i, j] != INTERIOR and cls[i, j + 1] != INTERIOR:
                continue
            if i == 0 or i == nx - 1:
                continue
            uy = (v[i, j + 1] - v[i, j]) / h
            ux = (v[i + 1, j] + v[i + 1, j + 1] - v[i - 1, j] - v[i - 1, j + 1]) / (4.0 * h)
            w_n[i, j] = (ux * ux + uy * uy + eps2) ** ex


@njit(cache=True)
def _gs_frozen(v, cls, w_e, w_n, omega, lo, hi, reverse):
    """One in-place SOR sweep with frozen weights; returns sup unrelaxed update."""
    nx, ny = v.shape
    delta = 0.0
    i_range = range(nx - 2, 0, -1) if reverse else range(1, nx - 1)
    for i in i_range:
        j_range = range(ny - 2, 0, -1) if reverse else range(1, ny - 1)
        for j in j_range:
            if cls[i, j] != INTERIOR:
                continue
            we = w_e[i, j]
            ww = w_e[i - 1, j]
            wn = w_n[i, j]
            ws = w_n[i, j - 1]
            den = we + ww + wn + ws
            if den <= 0.0:
                continue
            unew = (we * v[i + 1, j] + ww * v[i - 1, j] + wn * v[i, j + 1] + ws * v[i, j - 1]) / den
            du = unew - v[i, j]
            if abs(du) > delta:
                delta = abs(du)
            val = v[i, j] + omega * du
            if val < lo:
                val = lo
            elif val > hi:
                val = hi
            v[i, j] = val
    return delta


@njit(cache=True)
def _jacobi_frozen(v, out, cls, w_e, w_n):
    """Simultaneous frozen-weight pass into out; returns sup update."""
    nx, ny = v.shape
    delta = 0.0
    for i in range(nx):
        for j in range(ny):
            out[i, j] = v[i, j]
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            if cls[i, j] != INTERIOR:
                continue
            we = w_e[i, j]
            ww = w_e[i - 1, j]
            wn = w_n[i, j]
            ws = w_n[i, j - 1]
            den = we + ww + wn + ws
            if den <= 0.0:
                continue
            unew = (we * v[i + 1, j] + ww * v[i - 1, j] + wn * v[i, j + 1] + ws * v[i, j - 1]) / den
            out[i, j] = unew
            if abs(unew - v[i, j]) > delta:
                delta = abs(unew - v[i, j])
    return delta


@njit(cache=True)
def _assemble_newton(v, cls, h, ex, eps2, row_of):
    """COO Jacobian and residual of the 5-point flux system N(v) = 0.

    N couples each interior node to its 3x3 neighborhood through the
    edge-midpoint weights; Dirichlet columns are dropped (their values are
    fixed). row_of maps (i, j) to the unknown index, -1 off the interior.
    """
    nx, ny = v.shape
    n_unknown = 0
    for i in range(nx):
        for j in range(ny):
            if row_of[i, j] >= 0:
                n_unknown += 1
    rows = np.empty(9 * n_unknown, dtype=np.int64)
    cols = np.empty(9 * n_unknown, dtype=np.int64)
    vals = np.zeros(9 * n_unknown)
    rhs = np.zeros(n_unknown)
    nnz = 0
    # edge endpoints (di,dj) and the four perp nodes feeding its midpoint
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            r = row_of[i, j]
            if r < 0:
                continue
            local = np.zeros((3, 3))
            resid = 0.0
            for e in range(4):
                if e == 0:
                    oi, oj = 1, 0
                elif e == 1:
                    oi, oj = -1, 0
                elif e == 2:
                    oi, oj = 0, 1
                else:
                    oi, oj = 0, -1
                ni, nj = i + oi, j + oj
                # midpoint gradient of the edge (i,j)-(ni,nj)
                if oi != 0:
                    lo = i if oi > 0 else ni
                    ux = (v[lo + 1, j] - v[lo, j]) / h
                    uy = (v[lo, j + 1] + v[lo + 1, j + 1] - v[lo, j - 1] - v[lo + 1, j - 1]) / (4.0 * h)
                else:
                    lo = j if oj > 0 else nj
                    uy = (v[i, lo + 1] - v[i, lo]) / h
                    ux = (v[i + 1, lo] + v[i + 1, lo + 1] - v[i - 1, lo] - v[i - 1, lo + 1]) / (4.0 * h)
                s = ux * ux + uy * uy + eps2
                w = s**ex
                dws = ex * s**(ex - 1.0)
                d = v[ni, nj] - v[i, j]
                resid += w * d
                # plain 5-point part
                local[1 + oi, 1 + oj] += w
                local[1, 1] -= w
                # weight sensitivity: two along-edge nodes and four perp nodes
                if oi != 0:
                    sgn = 1.0 if oi > 0 else -1.0
                    coef = dws * d
                    local[1 + oi, 1 + oj] += coef * 2.0 * ux * sgn / h
                    local[1, 1] += coef * 2.0 * ux * (-sgn) / h
                    for pj in (-1, 1):
                        contrib = coef * 2.0 * uy * pj / (4.0 * h)
                        local[1, 1 + pj] += contrib
                        local[1 + oi, 1 + pj] += contrib
                else:
                    sgn = 1.0 if oj > 0 else -1.0
                    coef = dws * d
                    local[1 + oi, 1 + oj] += coef * 2.0 * uy * sgn / h
                    local[1, 1] += coef * 2.0 * uy * (-sgn) / h
                    for pi in (-1, 1):
                        contrib = coef * 2.0 * ux * pi / (4.0 * h)
                        local[1 + pi, 1] += contrib
                        local[1 + pi, 1 + oj] += contrib
            rhs[r] = -resid / (h * h)
            for a in range(3):
                for b in range(3):
                    if local[a, b] == 0.0:
                        continue
                    c = row_of[i + a - 1, j + b - 1]
                    if c < 0:
                        continue  # Dirichlet column: value is fixed
                    rows[nnz] = r
                    cols[nnz] = c
                    vals[nnz] = local[a, b] / (h * h)
                    nnz += 1
    return rows[:nnz], cols[:nnz], vals[:nnz], rhs


@njit(cache=True)
def _flux_vector(v, h, ex, eps2, row_of, out):
    """N(v) over unknowns, with N as in the Newton assembly."""
    nx, ny = v.shape
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            r = row_of[i, j]
            if r < 0:
                continue
            resid = 0.0
            for e in range(4):
                if e == 0:
                    oi, oj = 1, 0
                elif e == 1:
                    oi, oj = -1, 0
                elif e == 2:
                    oi, oj = 0, 1
                else:
                    oi, oj = 0, -1
                ni, nj = i + oi, j + oj
                if oi != 0:
                    lo = i if oi > 0 else ni
                    ux = (v[lo + 1, j] - v[lo, j]) / h
                    uy = (v[lo, j + 1] + v[lo + 1, j + 1] - v[lo, j - 1] - v[lo + 1, j - 1]) / (4.0 * h)
                else:
                    lo = j if oj > 0 else nj
                    uy = (v[i, lo + 1] - v[i, lo]) / h
                    ux = (v[i + 1, lo] + v[i + 1, lo + 1] - v[i - 1, lo] - v[i - 1, lo + 1]) / (4.0 * h)
                resid += (ux * ux + uy * uy + eps2)**ex * (v[ni, nj] - v[i, j])
            out[r] = resid / (h * h)


@njit(cache=True)
def _divergence_frozen(v, cls, w_e, w_n, h, out):
    """Nodewise div(w Du) from edge fluxes, NaN off the interior."""
    nx, ny = v.shape
    for i in range(nx):
        for j in range(ny):
            out[i, j] = np.nan
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            if cls[i, j] != INTERIOR:
                continue
            out[i, j] = (w_e[i, j] * (v[i + 1, j] - v[i, j])
                         - w_e[i - 1, j] * (v[i, j] - v[i - 1, j])
                         + w_n[i, j] * (v[i, j + 1] - v[i, j])
                         - w_n[i, j - 1] * (v[i, j] - v[i, j - 1])) / (h * h)


def _dirichlet_bounds(values: np.ndarray, cls: np.ndarray) -> tuple[float, float]:
    mask = (cls == DIRICHLET_INNER) | (cls == DIRICHLET_OUTER)
    if not mask.any():
        return 0.0, 1.0
    return float(values[mask].min()), float(values[mask].max())


class _Workspace:
    """Lagged-diffusivity state: value array plus frozen edge weights."""

    def __init__(self, grid: Grid, values: np.ndarray, p: float, eps_reg: float):
        self.grid = grid
        self.values = values
        self.ex = (p - 2.0) / 2.0
        self.eps2 = eps_reg * eps_reg
        self.w_e = np.zeros((grid.nx - 1, grid.ny))
        self.w_n = np.zeros((grid.nx, grid.ny - 1))
        self.scratch = np.empty_like(values)
        self.lo, self.hi = _dirichlet_bounds(values, grid.node_class)

    def refresh_weights(self):
        _fill_weights(self.values, self.grid.node_class, self.grid.h,
                      self.ex, self.eps2, self.w_e, self.w_n)

    def lagged_update_sup(self) -> float:
        """Unrelaxed lagged update norm: weights from the current iterate."""
        self.refresh_weights()
        return float(_jacobi_frozen(self.values, self.scratch,
                                    self.grid.node_class, self.w_e, self.w_n))


def _solve_lagged(grid: Grid, values: np.ndarray, p: float, eps_reg: float,
                  tol: float, max_iter: int, sweep: str, stats: SolveStats,
                  stall_cycles: int = 40) -> bool:
    """Damped Picard outer loop; returns True once the lagged update < tol.

    The Picard map can flip between weight regimes next to a one-node pin,
    so the value update is blended with factor theta that shrinks whenever
    the audit norm stalls and relaxes back toward 1 when it contracts.
    Returns False early (for the Newton finisher) when the audit stops
    improving for ``stall_cycles`` consecutive outer cycles.
    """
    ws = _Workspace(grid, values, p, eps_reg)
    cls = grid.node_class
    omega = 2.0 / (1.0 + math.sin(math.pi / max(grid.nx, grid.ny))) if sweep == "gauss_seidel" else 1.0
    reverse = False
    inner_cap = 80 if sweep == "gauss_seidel" else 1
    # the Picard map's local slope grows like p, so both the starting blend
    # and its floor must shrink accordingly or the iteration two-cycles
    theta = min(1.0, 8.0 / p) if p > 8.0 else 1.0
    theta_min = min(0.15, 1.5 / max(p - 1.0, 1.0))
    prev_audit = math.inf
    audit = math.inf
    best_audit = math.inf
    no_gain = 0
    stall_budget = stall_cycles if sweep == "gauss_seidel" else 80 * stall_cycles
    while stats.iterations < max_iter:
        ws.refresh_weights()
        if sweep == "jacobi":
            audit = _jacobi_frozen(ws.values, ws.scratch, cls, ws.w_e, ws.w_n)
            if theta < 1.0:
                ws.scratch *= theta
                ws.scratch += (1.0 - theta) * ws.values
            ws.values, ws.scratch = ws.scratch, ws.values
            stats.iterations += 1
            # plain sweeps contract slowly; damp only on outright growth
            if audit > 1.02 * prev_audit:
                theta = max(theta_min, theta * 0.8)
            elif audit < 0.98 * prev_audit:
                theta = min(1.0, theta * 1.02)
            prev_audit = audit
        else:
            np.copyto(ws.scratch, ws.values)
            inner = 0
            while inner < inner_cap and stats.iterations < max_iter:
                d = _gs_frozen(ws.values, cls, ws.w_e, ws.w_n, omega, ws.lo, ws.hi, reverse)
                reverse = not reverse
                inner += 1
                stats.iterations += 1
                if d < 0.05 * tol:
                    break
            if theta < 1.0:
                ws.values *= theta
                ws.values += (1.0 - theta) * ws.scratch
            audit = ws.lagged_update_sup()
            if audit > 0.7 * prev_audit:
                theta = max(theta_min, theta * 0.6)
            elif audit < 0.3 * prev_audit:
                theta = min(1.0, theta * 1.25)
            prev_audit = audit
        if not math.isfinite(audit):
            stats.update_sup = audit
            raise ConvergenceError("update norm became non-finite", stats)
        if audit < tol:
            break
        if audit < 0.6 * best_audit:
            best_audit = audit
            no_gain = 0
        else:
            no_gain += 1
            if no_gain >= stall_budget:
                break
    stats.update_sup = float(audit)
    values[:] = ws.values
    return audit < tol


def _audit_of(grid: Grid, values: np.ndarray, p: float, eps_reg: float) -> float:
    ws = _Workspace(grid, values, p, eps_reg)
    return ws.lagged_update_sup()


def _newton_polish(grid: Grid, values: np.ndarray, p: float, eps_reg: float,
                   tol: float, stats: SolveStats, max_newton: int = 40) -> bool:
    """Root-solve the flux system N(v) = 0 that the lagged sweeps smooth.

    Used when the Picard iteration stalls (large p makes its map too stiff).
    The Jacobian is the full 3x3-neighborhood sensitivity of the edge
    weights; rows are equilibrated before the sparse solve and steps are
    backtracked on the lagged-update merit, so the max principle clamp and
    the fixed point match the sweep formulation exactly.
    """
    from scipy.sparse import coo_matrix, diags
    from scipy.sparse.linalg import spsolve

    cls = grid.node_class
    row_of = -np.ones((grid.nx, grid.ny), dtype=np.int64)
    unknowns = np.argwhere(cls == INTERIOR)
    row_of[unknowns[:, 0], unknowns[:, 1]] = np.arange(len(unknowns))
    ex = (p - 2.0) / 2.0
    eps2 = eps_reg * eps_reg
    lo, hi = _dirichlet_bounds(values, cls)

    nvec = np.empty(len(unknowns))
    for _ in range(max_newton):
        audit = _audit_of(grid, values, p, eps_reg)
        if audit < tol:
            stats.update_sup = float(audit)
            return True
        rows, cols, vals, rhs = _assemble_newton(values, cls, grid.h, ex, eps2, row_of)
        A = coo_matrix((vals, (rows, cols)), shape=(len(unknowns), len(unknowns))).tocsr()
        scale = np.abs(A).max(axis=1).toarray().ravel()
        scale[scale == 0.0] = 1.0
        D = diags(1.0 / scale)
        delta = spsolve((D @ A).tocsr(), D @ rhs)
        if not np.all(np.isfinite(delta)):
            break
        # backtrack on the row-equilibrated residual norm (D fixed per step)
        base = float(np.linalg.norm(rhs / scale))
        alpha = 1.0
        improved = False
        for _ in range(30):
            trial = values.copy()
            trial[unknowns[:, 0], unknowns[:, 1]] += alpha * delta
            np.clip(trial, lo, hi, out=trial)
            _flux_vector(trial, grid.h, ex, eps2, row_of, nvec)
            if float(np.linalg.norm(nvec / scale)) <= (1.0 - 1e-4 * alpha) * base:
                values[:] = trial
                improved = True
                break
            alpha *= 0.5
        stats.iterations += 1
        if not improved:
            break
    audit = _audit_of(grid, values, p, eps_reg)
    stats.update_sup = float(audit)
    return audit < tol


def solve_p(grid: Grid, config: PSolverConfig, dirichlet: np.ndarray | None = None):
    """Solve the finite-p Dirichlet problem on the grid.

    Returns (ScalarField, SolveStats). ``dirichlet`` optionally overrides the
    standard 0/1 boundary data with per-node values (diagnostics only).
    """
    t0 = time.perf_counter()
    cls = grid.node_class
    if dirichlet is None:
        values = potential_shell(grid)
    else:
        values = dirichlet.astype(float).copy()
        values[cls == EXTERIOR] = 0.0
    stats = SolveStats()

    # harmonic start, then continuation in p: each stage reuses the previous
    # potential, and a stalled Picard stage falls through to the Newton finisher
    stages = [2.0]
    q = 8.0
    while q < config.p:
        stages.append(q)
        q *= 2.0
    if config.p > 2.0:
        stages.append(config.p)
    converged = True
    for stage_p in stages:
        is_final = stage_p == stages[-1]
        stage_tol = config.tol if is_final else max(config.tol, 1e-6)
        sweep = config.sweep if is_final else "gauss_seidel"
        converged = _solve_lagged(grid, values, stage_p, config.eps_reg,
                                  stage_tol, config.max_iter, sweep, stats)
        if not converged:
            converged = _newton_polish(grid, values, stage_p, config.eps_reg,
                                       stage_tol, stats)
        if not converged:
            break

    stats.residual_sup = float(_audit_of(grid, values, config.p, config.eps_reg))
    stats.wall_time = time.perf_counter() - t0
    fld = ScalarField(grid=grid, values=values)
    if not converged:
        raise ConvergenceError(
            f"no convergence after {stats.iterations} sweeps (update {stats.update_sup:.3e})", stats)
    return fld, stats


def residual_p(fld: ScalarField, p: float, eps_reg: float = 1e-8) -> ScalarField:
    """Discrete div(|Du|^(p-2) Du) with the solver's own stencil (audit hook)."""
    g = fld.grid
    ws = _Workspace(g, fld.values.astype(float).copy(), p, eps_reg)
    ws.refresh_weights()
    out = np.empty_like(ws.values)
    _divergence_frozen(ws.values, g.node_class, ws.w_e, ws.w_n, g.h, out)
    return ScalarField(grid=g, values=out)


def update_residual(fld: ScalarField, p: float, eps_reg: float = 1e-8) -> float:
    """Sup-norm of one unrelaxed lagged update (the solver's own scaling)."""
    ws = _Workspace(fld.grid, fld.values.astype(float).copy(), p, eps_reg)
    return ws.lagged_update_sup()


def laplacian_sign_check(fld: ScalarField, inner_collar: float = 4.0,
                         outer_collar: float = 2.0) -> CheckReport:
    """Fraction of unmasked interior nodes where the 5-point -Laplacian is >= -h."""
    g = fld.grid
    v = fld.values
    lap = np.full_like(v, np.nan)
    lap[1:-1, 1:-1] = (v[2:, 1:-1] + v[:-2, 1:-1] + v[1:-1, 2:] + v[1:-1, :-2]
                       - 4 * v[1:-1, 1:-1]) / (g.h * g.h)
    mask = g.unmasked(inner_collar, outer_collar) & np.isfinite(lap)
    neg_lap = -lap[mask]
    slack = g.h
    good = neg_lap >= -slack
    frac = float(good.mean()) if good.size else 0.0
    return CheckReport(name="laplacian_sign", passed=frac >= 0.99, fraction=frac,
                       worst_margin=float(neg_lap.min() + slack) if good.size else 0.0,
                       samples=int(good.size),
                       details={"slack": slack})


def quasiconcavity_check(fld: ScalarField, levels) -> CheckReport:
    """Super-level sets vs their convex hulls: defect cells must stay under 1%."""
    from .geometry import convex_hull_points, points_in_convex_polygon

    g = fld.grid
    X, Y = g.node_xy()
    inner = g.node_class == DIRICHLET_INNER
    worst = 0.0
    per_level = {}
    ok_all = True
    for t in levels:
        sel = (fld.values > t) | inner
        if not sel.any():
            per_level[f"{t:g}"] = None
            ok_all = False
            continue
        pts = np.stack([X[sel], Y[sel]], axis=1)
        hull = convex_hull_points(pts)
        cx = (X[:-1, :-1] + X[1:, 1:]) / 2.0
        cy = (Y[:-1, :-1] + Y[1:, 1:]) / 2.0
        centers = np.stack([cx.ravel(), cy.ravel()], axis=1)
        in_hull = points_in_convex_polygon(centers, hull)
        # cell value: average of its 4 corners; inner-touching cells count as filled
        cell_val = (fld.values[:-1, :-1] + fld.values[1:, :-1]
                    + fld.values[:-1, 1:] + fld.values[1:, 1:]) / 4.0
        cell_inner = inner[:-1, :-1] | inner[1:, :-1] | inner[:-1, 1:] | inner[1:, 1:]
        below = in_hull & (cell_val.ravel() <= t) & ~cell_inner.ravel()
        ratio = float(below.sum()) / max(int(in_hull.sum()), 1)
        per_level[f"{t:g}"] = ratio
        worst = max(worst, ratio)
        ok_all = ok_all and (ratio <= 0.01)
    return CheckReport(name="quasiconcavity", passed=ok_all,
                       fraction=1.0 - worst, worst_margin=0.01 - worst,
                       samples=len(list(levels)), details={"defect_ratio": per_level})
