"""Level-set metamorphosis output: contours, nested families and the stacked
surface lofted between consecutive levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import ConvexRing, convex_hull_points, points_in_convex_polygon, polygon_area
from .grid import ScalarField, build_grid


class ContourError(ValueError):
    """Level extraction failed (level not attained, or degenerate contour)."""


@dataclass(frozen=True)
class Contour:
    level: float
    points: np.ndarray          # closed polyline, first row == last row
    length: float
    hull_deficiency: float      # area fraction missing against the convex hull
    n_components: int           # extra loops found at this level are defects
    simple: bool

    def area(self) -> float:
        return abs(polygon_area(self.points[:-1]))


@dataclass(frozen=True)
class MorphFamily:
    contours: list
    provenance: dict
    nested: bool
    nesting_margins: list


def _cell_crossings(v00, v10, v01, v11, t):
    """Edge crossing points of one cell in unit-cell coordinates."""
    pts = []
    if (v00 > t) != (v10 > t):
        pts.append(((t - v00) / (v10 - v00), 0.0, "s"))
    if (v10 > t) != (v11 > t):
        pts.append((1.0, (t - v10) / (v11 - v10), "e"))
    if (v01 > t) != (v11 > t):
        pts.append(((t - v01) / (v11 - v01), 1.0, "n"))
    if (v00 > t) != (v01 > t):
        pts.append((0.0, (t - v00) / (v01 - v00), "w"))
    return pts


def _marching_segments(values: np.ndarray, t: float, origin, h: float):
    """Line segments of the level set, one or two per crossed cell."""
    nx, ny = values.shape
    segs = []
    above = values > t
    finite = np.isfinite(values)
    for i in range(nx - 1):
        for j in range(ny - 1):
            if not (finite[i, j] and finite[i + 1, j] and finite[i, j + 1] and finite[i + 1, j + 1]):
                continue
            c = int(above[i, j]) + int(above[i + 1, j]) + int(above[i, j + 1]) + int(above[i + 1, j + 1])
            if c == 0 or c == 4:
                continue
            v00, v10, v01, v11 = values[i, j], values[i + 1, j], values[i, j + 1], values[i + 1, j + 1]
            pts = _cell_crossings(v00, v10, v01, v11, t)
            if len(pts) == 2:
                pairs = [(pts[0], pts[1])]
            elif len(pts) == 4:
                # saddle cell: the cell average decides which corners connect
                avg = 0.25 * (v00 + v10 + v01 + v11)
                s, e, n, w = (next(p for p in pts if p[2] == side) for side in "senw")
                if (avg > t) == above[i, j]:
                    pairs = [(w, s), (n, e)]
                else:
                    pairs = [(w, n), (s, e)]
            else:
                continue
            for (ax, ay, _), (bx, by, _) in pairs:
                segs.append((origin[0] + (i + ax) * h, origin[1] + (j + ay) * h,
                             origin[0] + (i + bx) * h, origin[1] + (j + by) * h))
    return segs


def _chain_segments(segs, snap: float):
    """Join segments into closed loops by endpoint matching."""
    def key(x, y):
        return (round(x / snap), round(y / snap))

    links = {}
    for idx, (ax, ay, bx, by) in enumerate(segs):
        links.setdefault(key(ax, ay), []).append((idx, False))
        links.setdefault(key(bx, by), []).append((idx, True))
    used = [False] * len(segs)
    loops = []
    for start in range(len(segs)):
        if used[start]:
            continue
        used[start] = True
        ax, ay, bx, by = segs[start]
        loop = [(ax, ay), (bx, by)]
        cur = key(bx, by)
        start_key = key(ax, ay)
        while cur != start_key:
            nxt = None
            for idx, flipped in links.get(cur, ()):  # pick any unused continuation
                if not used[idx]:
                    nxt = (idx, flipped)
                    break
            if nxt is None:
                break
            idx, flipped = nxt
            used[idx] = True
            ax2, ay2, bx2, by2 = segs[idx]
            nxt_pt = (ax2, ay2) if flipped else (bx2, by2)
            loop.append(nxt_pt)
            cur = key(*nxt_pt)
        loops.append(np.array(loop))
    return loops


def _is_closed(loop: np.ndarray, snap: float) -> bool:
    return bool(np.hypot(*(loop[0] - loop[-1])) <= 2 * snap)


def polyline_length(pts: np.ndarray) -> float:
    return float(np.sum(np.hypot(np.diff(pts[:, 0]), np.diff(pts[:, 1]))))


def is_simple_polyline(pts: np.ndarray) -> bool:
    """Closed-polyline self-intersection test (non-adjacent segment pairs)."""
    p = pts[:-1]
    n = len(p)
    if n < 4:
        return True
    a = p
    b = np.roll(p, -1, axis=0)
    d = b - a
    for i in range(n):
        js = np.arange(i + 2, n if i > 0 else n - 1)
        if len(js) == 0:
            continue
        r = d[i]
        qp0 = a[js, 0] - a[i, 0]
        qp1 = a[js, 1] - a[i, 1]
        denom = r[0] * d[js, 1] - r[1] * d[js, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (qp0 * d[js, 1] - qp1 * d[js, 0]) / denom
            u = (qp0 * r[1] - qp1 * r[0]) / denom
        hit = (np.abs(denom) > 1e-300) & (t > 1e-12) & (t < 1 - 1e-12) & (u > 1e-12) & (u < 1 - 1e-12)
        if hit.any():
            return False
    return True


def extract_level_set(fld: ScalarField, t: float) -> Contour:
    """Marching-squares contour of one level with linear edge interpolation."""
    if not (0.0 < t < 1.0):
        raise ContourError(f"level must lie strictly inside (0, 1), got {t}")
    finite_vals = fld.values[np.isfinite(fld.values)]
    if finite_vals.size == 0 or t >= finite_vals.max() or t <= finite_vals.min():
        raise ContourError(f"level {t} not attained by the field")
    g = fld.grid
    snap = 1e-9 * g.h
    segs = _marching_segments(fld.values, t, g.origin, g.h)
    if not segs:
        raise ContourError(f"level {t} produced no crossings")
    loops = [lp for lp in _chain_segments(segs, snap) if len(lp) >= 4 and _is_closed(lp, snap)]
    if not loops:
        raise ContourError(f"level {t} produced no closed contour")
    loops.sort(key=polyline_length, reverse=True)
    main = loops[0]
    main[-1] = main[0]  # weld the joint exactly
    if polygon_area(main[:-1]) < 0:
        main = main[::-1].copy()
    hull = convex_hull_points(main[:-1])
    hull_area = abs(polygon_area(hull))
    area = abs(polygon_area(main[:-1]))
    deficiency = (hull_area - area) / hull_area if hull_area > 0 else 1.0
    return Contour(level=float(t), points=main, length=polyline_length(main),
                   hull_deficiency=float(deficiency), n_components=len(loops),
                   simple=is_simple_polyline(main))


def _expanded_hull_contains(lower: Contour, upper: Contour, band: float) -> float:
    """Smallest margin of the upper contour inside the lower contour's hull + band."""
    hull = convex_hull_points(lower.points[:-1])
    a = hull
    b = np.roll(hull, -1, axis=0)
    e = b - a
    norm = np.hypot(e[:, 0], e[:, 1])
    pts = upper.points[:-1]
    cross = (e[None, :, 0] * (pts[:, None, 1] - a[None, :, 1])
             - e[None, :, 1] * (pts[:, None, 0] - a[None, :, 0])) / norm[None, :]
    return float(cross.min() + band)


def metamorphosis(ring: ConvexRing, solver_choice, levels, h: float,
                  solver_kwargs: dict | None = None) -> MorphFamily:
    """Solve once and extract the requested level family with diagnostics.

    ``solver_choice`` is "inf" or a finite exponent > 2.
    """
    levels = [float(t) for t in levels]
    if any(not (0 < t < 1) for t in levels) or any(b <= a for a, b in zip(levels, levels[1:])):
        raise ContourError("levels must be strictly increasing inside (0, 1)")
    grid = build_grid(ring, h)
    kwargs = solver_kwargs or {}
    if solver_choice == "inf":
        from .inf_solver import InfSolverConfig, solve_inf
        fld, _ = solve_inf(grid, InfSolverConfig(**kwargs))
        prov = {"solver": "inf", "h": h}
    else:
        from .p_solver import PSolverConfig, solve_p
        fld, _ = solve_p(grid, PSolverConfig(p=float(solver_choice), **kwargs))
        prov = {"solver": "p", "p": float(solver_choice), "h": h}
    return family_from_field(fld, levels, prov)


def family_from_field(fld: ScalarField, levels, provenance: dict | None = None) -> MorphFamily:
    contours = [extract_level_set(fld, t) for t in levels]
    margins = []
    nested = True
    band = 2 * fld.grid.h
    for low, up in zip(contours, contours[1:]):
        m = _expanded_hull_contains(low, up, band)
        margins.append(m)
        nested = nested and (m >= 0)
    return MorphFamily(contours=contours, provenance=provenance or {},
                       nested=nested, nesting_margins=margins)


# --------------------------------------------------------------------------
# lofted surface
# --------------------------------------------------------------------------


def resample_closed(pts: np.ndarray, n: int) -> np.ndarray:
    """Resample a closed polyline to n vertices equally spaced by arclength."""
    seg = np.hypot(np.diff(pts[:, 0]), np.diff(pts[:, 1]))
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    targets = np.linspace(0.0, total, n, endpoint=False)
    out = np.empty((n, 2))
    out[:, 0] = np.interp(targets, s, pts[:, 0])
    out[:, 1] = np.interp(targets, s, pts[:, 1])
    return out


def _align_start(ring_pts: np.ndarray) -> np.ndarray:
    """Rotate vertex order so vertex 0 sits at polar angle closest to zero."""
    c = ring_pts.mean(axis=0)
    ang = np.arctan2(ring_pts[:, 1] - c[1], ring_pts[:, 0] - c[0])
    k = int(np.argmin(np.abs(ang)))
    return np.roll(ring_pts, -k, axis=0)


def stacked_surface(family: MorphFamily, n_ring: int = 256):
    """Loft the contour family into a triangulated surface with z = level.

    Returns (vertices (m,3), faces (k,3) int). Consecutive rings share their
    vertices, so each band is watertight.
    """
    if not family.nested:
        raise ContourError("family is not nested; refusing to loft")
    for c in family.contours:
        if not c.simple:
            raise ContourError(f"contour at level {c.level:g} is not simple")
    rings = []
    for c in family.contours:
        ring_pts = _align_start(resample_closed(c.points, n_ring))
        rings.append(np.column_stack([ring_pts, np.full(n_ring, c.level)]))
    verts = np.concatenate(rings, axis=0)
    faces = []
    for b in range(len(rings) - 1):
        base0 = b * n_ring
        base1 = (b + 1) * n_ring
        for k in range(n_ring):
            k2 = (k + 1) % n_ring
            faces.append((base0 + k, base0 + k2, base1 + k))
            faces.append((base0 + k2, base1 + k2, base1 + k))
    return verts, np.array(faces, dtype=np.int64)


def mesh_area(verts: np.ndarray, faces: np.ndarray) -> float:
    a = verts[faces[:, 1]] - verts[faces[:, 0]]
    b = verts[faces[:, 2]] - verts[faces[:, 0]]
    cr = np.cross(a, b)
    return float(0.5 * np.sum(np.linalg.norm(cr, axis=1)))


# --------------------------------------------------------------------------
# file formats
# --------------------------------------------------------------------------


def family_to_svg(family: MorphFamily) -> str:
    """One path per level; numeric output at 9 significant digits."""
    all_pts = np.concatenate([c.points for c in family.contours], axis=0)
    x0, y0 = all_pts.min(axis=0)
    x1, y1 = all_pts.max(axis=0)
    pad = 0.05 * max(x1 - x0, y1 - y0, 1e-9)
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{x0 - pad:.9g} {y0 - pad:.9g} '
        f'{x1 - x0 + 2 * pad:.9g} {y1 - y0 + 2 * pad:.9g}">'
    ]
    for c in family.contours:
        d = "M " + " L ".join(f"{p[0]:.9g},{p[1]:.9g}" for p in c.points[:-1]) + " Z"
        lines.append(f'  <path id="level-{c.level:g}" fill="none" stroke="black" '
                     f'stroke-width="{0.002 * max(x1 - x0, y1 - y0):.9g}" d="{d}"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def family_to_csv(family: MorphFamily) -> str:
    rows = ["level,k,x,y"]
    for c in family.contours:
        for k, p in enumerate(c.points):
            rows.append(f"{c.level:.17g},{k},{p[0]:.17g},{p[1]:.17g}")
    return "\n".join(rows) + "\n"


def mesh_to_obj(verts: np.ndarray, faces: np.ndarray) -> str:
    rows = [f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}" for v in verts]
    rows += [f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}" for f in faces]
    return "\n".join(rows) + "\n"
