"""Derived fields and the pointwise-inequality battery.

Every check here runs either on a solved grid potential (discrete
derivatives, h-proportional slack) or on a closed-form test function in two
or three dimensions (tight slack). Reports state the fraction of samples
satisfying the inequality and the worst slack-adjusted margin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import ConvexRing, diameter
from .grid import (DIRICHLET_INNER, INTERIOR, Grid, MatrixField, ScalarField,
                   VectorField, gradient, hessian)
from .reports import CheckReport

GRAD_FLOOR = 1e-12  # below this the direction Du/|Du| is meaningless


# --------------------------------------------------------------------------
# closed-form test functions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AnalyticFunction:
    """Closed-form scalar function with exact gradient and Hessian."""

    name: str
    dim: int
    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]

    def self_test(self, rng=None, n_points: int = 100, box: float = 1.0) -> CheckReport:
        """Finite-difference audit of the closed-form derivatives."""
        rng = rng or np.random.default_rng(0)
        step = 1e-6
        worst = 0.0
        good = 0
        for _ in range(n_points):
            x = rng.uniform(0.15, box, size=self.dim) * rng.choice([-1.0, 1.0], size=self.dim)
            g_fd = np.zeros(self.dim)
            h_fd = np.zeros((self.dim, self.dim))
            for a in range(self.dim):
                ea = np.zeros(self.dim); ea[a] = step
                g_fd[a] = (self.value(x + ea) - self.value(x - ea)) / (2 * step)
            g0 = self.grad(x)
            h0 = self.hess(x)
            for a in range(self.dim):
                ea = np.zeros(self.dim); ea[a] = step
                h_fd[a] = (self.grad(x + ea) - self.grad(x - ea)) / (2 * step)
            scale = max(1.0, float(np.abs(g0).max()), float(np.abs(h0).max()))
            err = max(float(np.abs(g_fd - g0).max()), float(np.abs(h_fd - h0).max())) / scale
            worst = max(worst, err)
            good += err <= 1e-5
        return CheckReport(name=f"analytic_selftest[{self.name}]", passed=worst <= 1e-5,
                           fraction=good / n_points, worst_margin=1e-5 - worst,
                           samples=n_points)


def _radial(name: str, dim: int, f, fp, fpp) -> AnalyticFunction:
    """Analytic function u(x) = f(|x|) from a radial profile and derivatives."""

    def value(x):
        return float(f(np.linalg.norm(x)))

    def grad(x):
        r = np.linalg.norm(x)
        return fp(r) * np.asarray(x) / r

    def hess(x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x)
        xh = x / r
        outer = np.outer(xh, xh)
        return fpp(r) * outer + fp(r) / r * (np.eye(len(x)) - outer)

    return AnalyticFunction(name=name, dim=dim, value=value, grad=grad, hess=hess)


def radial_cone(a: float = 1.0, b: float = 1.0, dim: int = 2) -> AnalyticFunction:
    """u = a - b|x|: the sharp-apex profile with |Du| = b everywhere."""
    return _radial(f"cone[{a:g}-{b:g}r]", dim, lambda r: a - b * r,
                   lambda r: -b, lambda r: 0.0)


def radial_power(beta: float, dim: int = 2) -> AnalyticFunction:
    """u = 1 - |x|^beta (the punctured-disk finite-p profile for beta=(p-2)/(p-1))."""
    return _radial(f"power[{beta:g}]", dim, lambda r: 1.0 - r**beta,
                   lambda r: -beta * r**(beta - 1.0),
                   lambda r: -beta * (beta - 1.0) * r**(beta - 2.0))


def neg_abs_square(dim: int = 2) -> AnalyticFunction:
    """v = -|x|^2, quasi-concave in every dimension."""
    return AnalyticFunction(
        name=f"neg_square_{dim}d", dim=dim,
        value=lambda x: -float(np.dot(x, x)),
        grad=lambda x: -2.0 * np.asarray(x, dtype=float),
        hess=lambda x: -2.0 * np.eye(dim))


def pos_abs_square(dim: int = 2) -> AnalyticFunction:
    """v = +|x|^2 (not quasi-concave; designed-failure vehicle)."""
    return AnalyticFunction(
        name=f"pos_square_{dim}d", dim=dim,
        value=lambda x: float(np.dot(x, x)),
        grad=lambda x: 2.0 * np.asarray(x, dtype=float),
        hess=lambda x: 2.0 * np.eye(dim))


def gaussian_bump(dim: int = 2) -> AnalyticFunction:
    """v = exp(-|x|^2), a smooth strictly quasi-concave bump."""
    return _radial(f"gaussian_{dim}d", dim,
                   lambda r: math.exp(-r * r),
                   lambda r: -2.0 * r * math.exp(-r * r),
                   lambda r: (4.0 * r * r - 2.0) * math.exp(-r * r))


def saddle_xy() -> AnalyticFunction:
    """v = x*y, the planar saddle."""
    return AnalyticFunction(
        name="saddle_xy", dim=2,
        value=lambda x: float(x[0] * x[1]),
        grad=lambda x: np.array([x[1], x[0]], dtype=float),
        hess=lambda x: np.array([[0.0, 1.0], [1.0, 0.0]]))


def harmonic_saddle_3d() -> AnalyticFunction:
    """v = x^2 + y^2 - 2z^2: harmonic, not quasi-concave (failure vehicle)."""
    return AnalyticFunction(
        name="harmonic_saddle_3d", dim=3,
        value=lambda x: float(x[0] ** 2 + x[1] ** 2 - 2.0 * x[2] ** 2),
        grad=lambda x: np.array([2.0 * x[0], 2.0 * x[1], -4.0 * x[2]]),
        hess=lambda x: np.diag([2.0, 2.0, -4.0]))


# --------------------------------------------------------------------------
# derived fields
# --------------------------------------------------------------------------


def grad_alpha(fld: ScalarField, alpha: float) -> ScalarField:
    """Nodewise |Du|^alpha, with alpha = 0 giving ln|Du|."""
    mag = gradient(fld).magnitude().values
    out = np.full_like(mag, np.nan)
    ok = np.isfinite(mag) & (mag >= GRAD_FLOOR)
    if alpha == 0.0:
        out[ok] = np.log(mag[ok])
    else:
        out[ok] = mag[ok] ** alpha
    return ScalarField(grid=fld.grid, values=out)


def eic_residual(fld: ScalarField) -> ScalarField:
    """Normalized second-order residual (D2u Du . Du)/|Du|^2 from discrete fields."""
    g = gradient(fld).values
    H = hessian(fld).values
    mag2 = g[:, :, 0] ** 2 + g[:, :, 1] ** 2
    num = (H[:, :, 0, 0] * g[:, :, 0] ** 2
           + 2.0 * H[:, :, 0, 1] * g[:, :, 0] * g[:, :, 1]
           + H[:, :, 1, 1] * g[:, :, 1] ** 2)
    out = np.full_like(mag2, np.nan)
    ok = np.isfinite(num) & np.isfinite(mag2) & (mag2 >= GRAD_FLOOR**2)
    out[ok] = num[ok] / mag2[ok]
    return ScalarField(grid=fld.grid, values=out)


def _window_mask(grid: Grid, z, r: float) -> np.ndarray:
    X, Y = grid.node_xy()
    return (X - z[0]) ** 2 + (Y - z[1]) ** 2 <= r * r


def sobolev_integrals(fld: ScalarField, z, r: float, alpha: float) -> tuple[float, float]:
    """Windowed seminorm pair: (int_{B(z,r/2)} |D|Du|^a|^2, r^-2 int_{B(z,r)} |Du|^2a)."""
    g = fld.grid
    if r < 4 * g.h:
        raise ValueError(f"window radius {r:g} under-resolved: need r >= 4h = {4 * g.h:g}")
    if g.ring is not None:
        z_arr = np.asarray(z, dtype=float)
        d_out = -g.ring.outer.signed_distance(z_arr)
        d_in = float(g.ring.dist_to_inner(z_arr[None, :])[0])
        if min(d_out, d_in) < 2 * r:
            raise ValueError("window B(z,2r) must stay inside the ring")
    ga = grad_alpha(fld, alpha)
    dga = gradient(ga).values
    dga2 = dga[:, :, 0] ** 2 + dga[:, :, 1] ** 2
    inner_mask = _window_mask(g, z, r / 2.0) & np.isfinite(dga2)
    lhs = float(np.nansum(dga2[inner_mask]) * g.h * g.h)
    mag = gradient(fld).magnitude().values
    outer_mask = _window_mask(g, z, r) & np.isfinite(mag) & (mag >= GRAD_FLOOR)
    rhs = float(np.sum(mag[outer_mask] ** (2.0 * alpha)) * g.h * g.h / (r * r))
    return lhs, rhs


def sobolev_seminorm(fld: ScalarField, z, r: float, alpha: float) -> float:
    """Ratio of the windowed seminorm to its scaling bound (constant tracking)."""
    lhs, rhs = sobolev_integrals(fld, z, r, alpha)
    return lhs / rhs if rhs > 0 else math.inf


# --------------------------------------------------------------------------
# structural inequality and divergence formula
# --------------------------------------------------------------------------


def _structural_margin(gvec: np.ndarray, H: np.ndarray):
    """(LHS, RHS) of the quasi-concavity structural inequality at one point."""
    Hg = H @ gvec
    lhs = 2.0 * (float(Hg @ Hg) - np.trace(H) * float(gvec @ Hg))
    rhs = float(gvec @ gvec) * (float(np.sum(H * H)) - np.trace(H) ** 2)
    return lhs, rhs


def structural_inequality_check(subject, samples: int = 2000, seed: int = 0,
                                points: np.ndarray | None = None,
                                slack: float | None = None) -> CheckReport:
    """LHS - RHS >= -slack sampling of the structural inequality.

    For 2-d subjects the report carries max |LHS - RHS| as well, since the two
    sides agree identically in the plane.
    """
    if isinstance(subject, AnalyticFunction):
        if points is None:
            rng = np.random.default_rng(seed)
            points = _default_analytic_points(subject.dim, samples, rng)
        slack = 1e-9 if slack is None else slack
        margins = []
        eq_gap = 0.0
        for x in points:
            gvec = subject.grad(x)
            H = subject.hess(x)
            lhs, rhs = _structural_margin(np.asarray(gvec), np.asarray(H))
            margins.append(lhs - rhs)
            eq_gap = max(eq_gap, abs(lhs - rhs))
        margins = np.array(margins)
        details = {"slack": slack}
        if subject.dim == 2:
            details["max_equality_gap"] = float(eq_gap)
        good = margins >= -slack
        return CheckReport(name=f"structural_inequality[{subject.name}]",
                           passed=bool(good.mean() >= 0.99), fraction=float(good.mean()),
                           worst_margin=float(margins.min() + slack),
                           samples=len(margins), seed=seed, details=details)

    fld: ScalarField = subject
    g = gradient(fld).values
    H = hessian(fld).values
    mask = fld.grid.unmasked() & np.isfinite(g).all(axis=2) & np.isfinite(H).all(axis=(2, 3))
    idx = np.argwhere(mask)
    rng = np.random.default_rng(seed)
    if len(idx) > samples:
        idx = idx[rng.choice(len(idx), size=samples, replace=False)]
    h = fld.grid.h
    margins = np.empty(len(idx))
    gaps = np.empty(len(idx))
    slacks = np.empty(len(idx))
    for k, (i, j) in enumerate(idx):
        gv = g[i, j]
        Hm = H[i, j]
        lhs, rhs = _structural_margin(gv, Hm)
        margins[k] = lhs - rhs
        gaps[k] = abs(lhs - rhs)
        mag2 = float(gv @ gv)
        scale = 1.0 + mag2 * (float(np.sum(Hm * Hm)) + np.trace(Hm) ** 2)
        slacks[k] = (slack if slack is not None else h) * scale
    good = margins >= -slacks
    frac = float(good.mean()) if len(good) else 0.0
    return CheckReport(name="structural_inequality[field]", passed=frac >= 0.99,
                       fraction=frac,
                       worst_margin=float((margins + slacks).min()) if len(good) else 0.0,
                       samples=len(idx), seed=seed,
                       details={"max_equality_gap": float(gaps.max()) if len(gaps) else 0.0})


def _default_analytic_points(dim: int, n: int, rng) -> np.ndarray:
    """Sample points with radii in (0.1, 1), away from radial-profile apexes."""
    u = rng.normal(size=(n, dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = rng.uniform(0.1, 1.0, size=(n, 1))
    return u * r


def _analytic_flux(fn: AnalyticFunction, x: np.ndarray) -> np.ndarray:
    gvec = np.asarray(fn.grad(x))
    H = np.asarray(fn.hess(x))
    mag2 = float(gvec @ gvec)
    return (np.trace(H) * gvec - H @ gvec) / mag2


def divergence_formula_check(subject, samples: int = 500, seed: int = 0,
                             points: np.ndarray | None = None,
                             slack: float | None = None,
                             threshold: float = 0.99) -> CheckReport:
    """div(|Dv|^-2 (Lap v Dv - D2v Dv)) >= -slack at the sampled locations.

    Closed-form subjects difference the exact flux; grid subjects difference
    the discrete flux field (third differences, so the default threshold
    drops to 95% there).
    """
    if isinstance(subject, AnalyticFunction):
        if points is None:
            rng = np.random.default_rng(seed)
            points = _default_analytic_points(subject.dim, samples, rng)
        slack = 1e-6 if slack is None else slack
        divs = []
        for x in points:
            x = np.asarray(x, dtype=float)
            step = 1e-5 * (1.0 + float(np.linalg.norm(x)))
            acc = 0.0
            for a in range(subject.dim):
                ea = np.zeros(subject.dim); ea[a] = step
                acc += (_analytic_flux(subject, x + ea)[a]
                        - _analytic_flux(subject, x - ea)[a]) / (2 * step)
            divs.append(acc)
        divs = np.array(divs)
        good = divs >= -slack
        return CheckReport(name=f"divergence_formula[{subject.name}]",
                           passed=bool(good.mean() >= threshold), fraction=float(good.mean()),
                           worst_margin=float(divs.min() + slack), samples=len(divs),
                           seed=seed, details={"slack": slack, "max_div": float(divs.max())})

    fld: ScalarField = subject
    threshold = 0.95 if threshold == 0.99 else threshold
    g = gradient(fld).values
    H = hessian(fld).values
    mag2 = g[:, :, 0] ** 2 + g[:, :, 1] ** 2
    lap = H[:, :, 0, 0] + H[:, :, 1, 1]
    with np.errstate(invalid="ignore", divide="ignore"):
        fx = (lap * g[:, :, 0] - (H[:, :, 0, 0] * g[:, :, 0] + H[:, :, 0, 1] * g[:, :, 1])) / mag2
        fy = (lap * g[:, :, 1] - (H[:, :, 1, 0] * g[:, :, 0] + H[:, :, 1, 1] * g[:, :, 1])) / mag2
    div = (gradient(ScalarField(fld.grid, fx)).values[:, :, 0]
           + gradient(ScalarField(fld.grid, fy)).values[:, :, 1])
    mask = fld.grid.unmasked() & np.isfinite(div)
    idx = np.argwhere(mask)
    rng = np.random.default_rng(seed)
    if len(idx) > samples:
        idx = idx[rng.choice(len(idx), size=samples, replace=False)]
    h = fld.grid.h
    vals = div[idx[:, 0], idx[:, 1]]
    flux_mag = np.hypot(fx, fy)[idx[:, 0], idx[:, 1]]
    slacks = (slack if slack is not None else 20.0 * h) * (1.0 + flux_mag**2)
    good = vals >= -slacks
    frac = float(good.mean()) if len(good) else 0.0
    return CheckReport(name="divergence_formula[field]", passed=frac >= threshold,
                       fraction=frac,
                       worst_margin=float((vals + slacks).min()) if len(good) else 0.0,
                       samples=len(idx), seed=seed, details={"threshold": threshold})


# --------------------------------------------------------------------------
# gradient bounds, Hessian budget, monotonicity, concavity
# --------------------------------------------------------------------------


def gradient_bounds_check(fld: ScalarField, ring: ConvexRing | None = None) -> CheckReport:
    """Four bound sub-checks at every unmasked node (slack h each):

    lower_diam:  |Du| >= u / diam(outer)
    lower_ray:   |Du| >= (u(x) - u(x + r nu)) / r with r = dist(x, outer bdry)/2
    upper_ball:  |Du| <= 2 / dist(x, ring boundary)   [the 1/r bound]
    upper_dist:  |Du| <= 1 / dist(x, outer bdry)      [point inner sets only]
    """
    g = fld.grid
    ring = ring or g.ring
    mask = g.unmasked()
    gv = gradient(fld)
    mag = gv.magnitude().values
    mask &= np.isfinite(mag)
    X, Y = g.node_xy()
    pts = np.stack([X[mask], Y[mask]], axis=1)
    u = fld.values[mask]
    m = mag[mask]
    gx = gv.values[:, :, 0][mask]
    gy = gv.values[:, :, 1][mask]
    h = g.h
    diam = diameter(ring.outer)
    d_out = -ring.outer.signed_distance(pts)
    d_in = ring.dist_to_inner(pts)
    d_ring = np.minimum(d_out, d_in)

    frac = {}
    margins = {}

    ok1 = m + h >= u / diam
    frac["lower_diam"] = float(ok1.mean())
    margins["lower_diam"] = float((m + h - u / diam).min())

    # downhill those nodes whose gradient is large enough to carry a direction
    has_dir = m >= GRAD_FLOOR
    r = 0.5 * d_out
    tx = pts[:, 0] - np.where(has_dir, gx / np.maximum(m, GRAD_FLOOR), 0.0) * r
    ty = pts[:, 1] - np.where(has_dir, gy / np.maximum(m, GRAD_FLOOR), 0.0) * r
    targets = np.stack([tx, ty], axis=1)
    u_t = fld.interpolate_many(targets, extend=True)
    drop = np.where(has_dir, (u - u_t) / r, 0.0)
    ok2 = m + h >= drop
    frac["lower_ray"] = float(ok2.mean())
    margins["lower_ray"] = float((m + h - drop).min())

    ok3 = m <= 2.0 / d_ring + h
    frac["upper_ball"] = float(ok3.mean())
    margins["upper_ball"] = float((2.0 / d_ring + h - m).min())

    if ring.inner.kind == "point":
        ok4 = m <= 1.0 / d_out + h
        frac["upper_dist"] = float(ok4.mean())
        margins["upper_dist"] = float((1.0 / d_out + h - m).min())

    passed = all(v >= 0.99 for v in frac.values())
    return CheckReport(name="gradient_bounds", passed=passed,
                       fraction=min(frac.values()),
                       worst_margin=min(margins.values()),
                       samples=int(mask.sum()),
                       details={"fractions": frac, "margins": margins, "slack": h})


def hessian_budget_check(fld: ScalarField, windows=None,
                         slack_factor: float = 10.0) -> CheckReport:
    """Nodewise |D2u|_F <= 2|Lap u| + 2|D|Du|| within slack, plus windowed L1 mass."""
    g = fld.grid
    h = g.h
    H = hessian(fld)
    frob = H.frobenius().values
    lap = H.trace().values
    dmag = gradient(gradient(fld).magnitude())
    dmag_norm = dmag.magnitude().values
    mask = g.unmasked() & np.isfinite(frob) & np.isfinite(dmag_norm)
    lhs = frob[mask]
    rhs = 2.0 * np.abs(lap[mask]) + 2.0 * dmag_norm[mask]
    slack = slack_factor * h * (1.0 + rhs)
    good = lhs <= rhs + slack
    frac = float(good.mean()) if good.size else 0.0
    window_mass = []
    for (z, r) in (windows or []):
        wmask = _window_mask(g, z, r / 2.0) & np.isfinite(frob)
        window_mass.append({"center": [float(z[0]), float(z[1])], "r": float(r),
                            "l1": float(np.sum(frob[wmask]) * h * h)})
    return CheckReport(name="hessian_budget", passed=frac >= 0.99, fraction=frac,
                       worst_margin=float((rhs + slack - lhs).min()) if good.size else 0.0,
                       samples=int(mask.sum()),
                       details={"windows": window_mass, "slack_factor": slack_factor})


def _ball_quantities(fld: ScalarField):
    gv = gradient(fld)
    return {
        "grad_mag": gv.magnitude(),
        "du_dx": gv.component(0),
        "du_dy": gv.component(1),
    }


def random_balls(grid: Grid, n: int, seed: int, r_min_cells: float = 6.0):
    """Random balls B(z, r) comfortably inside the unmasked interior."""
    rng = np.random.default_rng(seed)
    mask = grid.unmasked()
    X, Y = grid.node_xy()
    cand = np.stack([X[mask], Y[mask]], axis=1)
    pts = grid.points()
    d_in = grid.ring.dist_to_inner(pts).reshape(grid.nx, grid.ny)
    d_out = (-grid.ring.outer.signed_distance(pts)).reshape(grid.nx, grid.ny)
    room_map = np.minimum(d_in, d_out)
    balls = []
    guard = 0
    while len(balls) < n and guard < 50 * n:
        guard += 1
        z = cand[rng.integers(0, len(cand))]
        iz, jz = grid.nearest_node(z)
        room = room_map[iz, jz] - (4.0 + 2.0) * grid.h
        if room < r_min_cells * grid.h:
            continue
        r = rng.uniform(r_min_cells * grid.h, room)
        balls.append((z, float(r)))
    return balls


def monotonicity_check(fld: ScalarField, balls, n_angles: int = 256,
                       slack_cells: float = 4.0) -> CheckReport:
    """Ball extrema of |Du| and each partial must live on the ball boundary."""
    g = fld.grid
    h = g.h
    quantities = _ball_quantities(fld)
    X, Y = g.node_xy()
    ang = 2.0 * math.pi * np.arange(n_angles) / n_angles
    circle = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    worst = math.inf
    n_checked = 0
    n_good = 0
    for (z, r) in balls:
        sel = ((X - z[0]) ** 2 + (Y - z[1]) ** 2 <= r * r)
        bd_pts = np.asarray(z)[None, :] + r * circle
        ball_ok = True
        for qname, qfld in quantities.items():
            inside = qfld.values[sel & np.isfinite(qfld.values)]
            if inside.size == 0:
                continue
            bd = qfld.interpolate_many(bd_pts, extend=True)
            scale = max(1.0, float(np.nanmax(np.abs(inside))))
            slack = slack_cells * h * scale
            m_over = float(inside.max() - bd.max())
            m_under = float(bd.min() - inside.min())
            worst = min(worst, slack - m_over, slack - m_under)
            if m_over >= slack or m_under >= slack:
                ball_ok = False
        n_checked += 1
        n_good += ball_ok
    frac = n_good / n_checked if n_checked else 0.0
    return CheckReport(name="interior_extrema_monotonicity", passed=frac >= 1.0 - 1e-12,
                       fraction=frac, worst_margin=worst if n_checked else 0.0,
                       samples=n_checked, details={"slack_cells": slack_cells})


def concavity_check(fld: ScalarField, trials: int = 5000, seed: int = 0,
                    slack_cells: float = 4.0) -> CheckReport:
    """Midpoint concavity of u along random unmasked segments."""
    g = fld.grid
    rng = np.random.default_rng(seed)
    mask = g.unmasked()
    X, Y = g.node_xy()
    cand = np.stack([X[mask], Y[mask]], axis=1)
    if len(cand) < 2:
        return CheckReport(name="concavity", passed=False, samples=0, seed=seed)
    ia = rng.integers(0, len(cand), size=trials)
    ib = rng.integers(0, len(cand), size=trials)
    a = cand[ia]
    b = cand[ib]
    mid = 0.5 * (a + b)
    # midpoints must themselves be unmasked (nearest-node test)
    mi = np.clip(np.round((mid[:, 0] - g.origin[0]) / g.h).astype(int), 0, g.nx - 1)
    mj = np.clip(np.round((mid[:, 1] - g.origin[1]) / g.h).astype(int), 0, g.ny - 1)
    usable = mask[mi, mj] & (np.hypot(*(a - b).T) > 2 * g.h)
    a, b, mid = a[usable], b[usable], mid[usable]
    u_a = fld.interpolate_many(a, extend=True)
    u_b = fld.interpolate_many(b, extend=True)
    u_m = fld.interpolate_many(mid, extend=True)
    slack = slack_cells * g.h
    margin = u_m - 0.5 * (u_a + u_b) + slack
    good = margin >= 0
    frac = float(good.mean()) if good.size else 0.0
    return CheckReport(name="concavity", passed=frac >= 0.99, fraction=frac,
                       worst_margin=float(margin.min()) if good.size else 0.0,
                       samples=int(good.size), seed=seed,
                       details={"slack": slack, "trials_requested": trials})
