"""Uniform Cartesian discretization of a convex ring with node classification,
bilinear interpolation and finite-difference derivative fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import ConvexRing

# node classification codes (kept small-int for the solver kernels)
EXTERIOR = 0
INTERIOR = 1
DIRICHLET_OUTER = 2
DIRICHLET_INNER = 3

CLASS_NAMES = {EXTERIOR: "exterior", INTERIOR: "interior",
               DIRICHLET_OUTER: "dirichlet_outer", DIRICHLET_INNER: "dirichlet_inner"}
CLASS_CODES = {v: k for k, v in CLASS_NAMES.items()}


class ResolutionError(ValueError):
    """Grid spacing too coarse to resolve the ring."""


class InterpolationError(ValueError):
    """Query cell touches exterior or undefined nodes."""


@dataclass(frozen=True)
class Grid:
    """Immutable uniform grid; node (i, j) sits at origin + (i*h, j*h)."""

    origin: tuple[float, float]
    h: float
    nx: int
    ny: int
    node_class: np.ndarray  # (nx, ny) uint8
    ring: ConvexRing | None = None

    def node_xy(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.origin[0] + self.h * np.arange(self.nx)
        y = self.origin[1] + self.h * np.arange(self.ny)
        return np.meshgrid(x, y, indexing="ij")

    def points(self) -> np.ndarray:
        X, Y = self.node_xy()
        return np.stack([X.ravel(), Y.ravel()], axis=1)

    def nearest_node(self, p) -> tuple[int, int]:
        i = int(round((p[0] - self.origin[0]) / self.h))
        j = int(round((p[1] - self.origin[1]) / self.h))
        return min(max(i, 0), self.nx - 1), min(max(j, 0), self.ny - 1)

    def node_position(self, i: int, j: int) -> np.ndarray:
        return np.array([self.origin[0] + i * self.h, self.origin[1] + j * self.h])

    def counts(self) -> dict:
        vals, cnt = np.unique(self.node_class, return_counts=True)
        return {CLASS_NAMES[int(v)]: int(c) for v, c in zip(vals, cnt)}

    def unmasked(self, inner_collar: float = 4.0, outer_collar: float = 2.0) -> np.ndarray:
        """Interior nodes outside the statistics collars (widths in cells)."""
        if self.ring is None:
            raise ValueError("grid carries no ring; cannot build the collar mask")
        pts = self.points()
        d_in = self.ring.dist_to_inner(pts).reshape(self.nx, self.ny)
        d_out = (-self.ring.outer.signed_distance(pts)).reshape(self.nx, self.ny)
        return ((self.node_class == INTERIOR)
                & (d_in >= inner_collar * self.h)
                & (d_out >= outer_collar * self.h))


def classify(ring: ConvexRing, origin, h: float, nx: int, ny: int) -> Grid:
    """Classify every node of an explicitly placed grid against the ring.

    Boundary treatment is nearest-node Dirichlet: a node within half a cell
    of a boundary carries that boundary's data, which centers the discrete
    staircase on the true curve instead of biasing it outward.
    """
    ox, oy = float(origin[0]), float(origin[1])
    x = ox + h * np.arange(nx)
    y = oy + h * np.arange(ny)
    X, Y = np.meshgrid(x, y, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)

    d_out = ring.outer.signed_distance(pts).reshape(nx, ny)
    d_in = ring.inner.signed_distance(pts).reshape(nx, ny)

    inside_outer = d_out < -0.5 * h
    inner = (d_in < 0.5 * h) & inside_outer
    if not inner.any():
        # degenerate inner set (a point, or smaller than a cell): pin one node
        k = int(np.argmin(d_in))
        inner = np.zeros_like(inside_outer)
        inner[k // ny, k % ny] = True
    interior = inside_outer & ~inner

    cls = np.full((nx, ny), EXTERIOR, dtype=np.uint8)
    cls[interior] = INTERIOR
    cls[inner] = DIRICHLET_INNER

    # the outer Dirichlet layer: every non-interior, non-inner node touching an
    # interior node in the 8-neighborhood, so no interior stencil reads garbage
    dil = np.zeros_like(interior)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            src = interior[max(0, -di):nx - max(0, di), max(0, -dj):ny - max(0, dj)]
            dil[max(0, di):nx - max(0, -di), max(0, dj):ny - max(0, -dj)] |= src
    cls[dil & ~interior & ~inner] = DIRICHLET_OUTER

    return Grid(origin=(ox, oy), h=float(h), nx=nx, ny=ny, node_class=cls, ring=ring)


def build_grid(ring: ConvexRing, h: float) -> Grid:
    """Grid covering the outer shape with one exterior margin layer per side."""
    if h <= 0:
        raise ResolutionError("spacing must be positive")
    if h >= ring.separation / 4.0:
        raise ResolutionError(
            f"h={h:g} too coarse: need h < separation/4 = {ring.separation / 4.0:g} to resolve the ring")
    lo, hi = ring.outer.bounding_box()
    origin = (lo[0] - h, lo[1] - h)
    nx = int(math.ceil((hi[0] - lo[0] + 2 * h) / h)) + 1
    ny = int(math.ceil((hi[1] - lo[1] + 2 * h) / h)) + 1
    grid = classify(ring, origin, h, nx, ny)
    if not (grid.node_class == INTERIOR).any():
        raise ResolutionError("no interior nodes: ring unresolved at this spacing")
    return grid


@dataclass(frozen=True)
class ScalarField:
    """Node-indexed real values on a grid; NaN marks undefined nodes."""

    grid: Grid
    values: np.ndarray  # (nx, ny) float64

    def __post_init__(self):
        if self.values.shape != (self.grid.nx, self.grid.ny):
            raise ValueError("field shape does not match its grid")

    @property
    def defined(self) -> np.ndarray:
        return np.isfinite(self.values)

    def value_at_node(self, i: int, j: int) -> float:
        return float(self.values[i, j])

    def interpolate(self, p, extend: bool = False) -> float:
        """Bilinear interpolation at one point; exact on affine functions."""
        out = self.interpolate_many(np.asarray(p, dtype=float)[None, :], extend=extend)
        return float(out[0])

    def interpolate_many(self, pts: np.ndarray, extend: bool = False) -> np.ndarray:
        g = self.grid
        fx = (pts[:, 0] - g.origin[0]) / g.h
        fy = (pts[:, 1] - g.origin[1]) / g.h
        i = np.clip(np.floor(fx).astype(np.int64), 0, g.nx - 2)
        j = np.clip(np.floor(fy).astype(np.int64), 0, g.ny - 2)
        if np.any(fx < -1e-9) or np.any(fy < -1e-9) or np.any(fx > g.nx - 1 + 1e-9) or np.any(fy > g.ny - 1 + 1e-9):
            raise InterpolationError("query point outside the grid")
        tx = fx - i
        ty = fy - j
        c00 = self.values[i, j]
        c10 = self.values[i + 1, j]
        c01 = self.values[i, j + 1]
        c11 = self.values[i + 1, j + 1]
        if not extend:
            cls = self.grid.node_class
            bad = ((cls[i, j] == EXTERIOR) | (cls[i + 1, j] == EXTERIOR)
                   | (cls[i, j + 1] == EXTERIOR) | (cls[i + 1, j + 1] == EXTERIOR))
            if np.any(bad):
                raise InterpolationError("interpolation cell touches exterior nodes")
        vals = (c00 * (1 - tx) * (1 - ty) + c10 * tx * (1 - ty)
                + c01 * (1 - tx) * ty + c11 * tx * ty)
        if np.any(~np.isfinite(vals)):
            raise InterpolationError("interpolation cell touches undefined nodes")
        return vals

    def to_csv(self, path) -> None:
        """Row-major dump, 17 significant digits (bit-exact on reload)."""
        g = self.grid
        X, Y = g.node_xy()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("i,j,x,y,class,value\n")
            for i in range(g.nx):
                for j in range(g.ny):
                    fh.write(f"{i},{j},{X[i, j]:.17g},{Y[i, j]:.17g},"
                             f"{CLASS_NAMES[int(g.node_class[i, j])]},{self.values[i, j]:.17g}\n")


def field_from_csv(path, ring: ConvexRing | None = None) -> ScalarField:
    """Rebuild a field (and its grid) from the CSV dump format."""
    ii, jj, xs, ys, cls, vals = [], [], [], [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "i,j,x,y,class,value":
            raise ValueError(f"unexpected field CSV header: {header!r}")
        for line in fh:
            si, sj, sx, sy, sc, sv = line.rstrip("\n").split(",")
            ii.append(int(si)); jj.append(int(sj))
            xs.append(float(sx)); ys.append(float(sy))
            cls.append(CLASS_CODES[sc]); vals.append(float(sv))
    nx, ny = max(ii) + 1, max(jj) + 1
    carr = np.zeros((nx, ny), dtype=np.uint8)
    varr = np.zeros((nx, ny), dtype=float)
    xarr = np.zeros((nx, ny), dtype=float)
    yarr = np.zeros((nx, ny), dtype=float)
    for i, j, x, y, c, v in zip(ii, jj, xs, ys, cls, vals):
        carr[i, j] = c; varr[i, j] = v; xarr[i, j] = x; yarr[i, j] = y
    h = xarr[1, 0] - xarr[0, 0] if nx > 1 else yarr[0, 1] - yarr[0, 0]
    grid = Grid(origin=(xarr[0, 0], yarr[0, 0]), h=float(h), nx=nx, ny=ny,
                node_class=carr, ring=ring)
    return ScalarField(grid=grid, values=varr)


@dataclass(frozen=True)
class VectorField:
    """Per-node 2-vectors; rows with any NaN are undefined."""

    grid: Grid
    values: np.ndarray  # (nx, ny, 2)

    @property
    def defined(self) -> np.ndarray:
        return np.all(np.isfinite(self.values), axis=2)

    def magnitude(self) -> ScalarField:
        return ScalarField(self.grid, np.hypot(self.values[:, :, 0], self.values[:, :, 1]))

    def component(self, k: int) -> ScalarField:
        return ScalarField(self.grid, self.values[:, :, k].copy())

    def interpolate_many(self, pts: np.ndarray) -> np.ndarray:
        gx = ScalarField(self.grid, self.values[:, :, 0]).interpolate_many(pts, extend=True)
        gy = ScalarField(self.grid, self.values[:, :, 1]).interpolate_many(pts, extend=True)
        return np.stack([gx, gy], axis=1)


@dataclass(frozen=True)
class MatrixField:
    """Per-node symmetric 2x2 matrices; NaN marks undefined nodes."""

    grid: Grid
    values: np.ndarray  # (nx, ny, 2, 2)

    @property
    def defined(self) -> np.ndarray:
        return np.all(np.isfinite(self.values), axis=(2, 3))

    def frobenius(self) -> ScalarField:
        return ScalarField(self.grid, np.sqrt(np.sum(self.values**2, axis=(2, 3))))

    def trace(self) -> ScalarField:
        return ScalarField(self.grid, self.values[:, :, 0, 0] + self.values[:, :, 1, 1])


def _slices(shape, di: int, dj: int):
    src_i = slice(max(0, di), shape[0] + min(0, di))
    src_j = slice(max(0, dj), shape[1] + min(0, dj))
    dst_i = slice(max(0, -di), shape[0] + min(0, -di))
    dst_j = slice(max(0, -dj), shape[1] + min(0, -dj))
    return (src_i, src_j), (dst_i, dst_j)


def _shift(a: np.ndarray, di: int, dj: int) -> np.ndarray:
    """Array shifted so out[i,j] = a[i+di, j+dj], NaN outside."""
    out = np.full(a.shape, np.nan, dtype=float)
    src, dst = _slices(a.shape, di, dj)
    out[dst] = a[src]
    return out


def _shift_bool(a: np.ndarray, di: int, dj: int) -> np.ndarray:
    """Boolean shift filling False outside the array."""
    out = np.zeros(a.shape, dtype=bool)
    src, dst = _slices(a.shape, di, dj)
    out[dst] = a[src]
    return out


def gradient(f: ScalarField) -> VectorField:
    """Second-order central differences at interior nodes with usable stencils."""
    g = f.grid
    v = f.values.astype(float)
    cls = g.node_class
    ok_nbr = cls != EXTERIOR
    gx = (_shift(v, 1, 0) - _shift(v, -1, 0)) / (2 * g.h)
    gy = (_shift(v, 0, 1) - _shift(v, 0, -1)) / (2 * g.h)
    usable = ((cls == INTERIOR)
              & _shift_bool(ok_nbr, 1, 0) & _shift_bool(ok_nbr, -1, 0)
              & _shift_bool(ok_nbr, 0, 1) & _shift_bool(ok_nbr, 0, -1))
    out = np.stack([gx, gy], axis=2)
    out[~usable] = np.nan
    out[~np.isfinite(out).all(axis=2)] = np.nan
    return VectorField(grid=g, values=out)


def hessian(f: ScalarField) -> MatrixField:
    """Standard 5-point second differences plus the 4-corner cross stencil."""
    g = f.grid
    v = f.values.astype(float)
    cls = g.node_class
    ok = cls != EXTERIOR
    h2 = g.h * g.h
    dxx = (_shift(v, 1, 0) - 2 * v + _shift(v, -1, 0)) / h2
    dyy = (_shift(v, 0, 1) - 2 * v + _shift(v, 0, -1)) / h2
    dxy = (_shift(v, 1, 1) - _shift(v, 1, -1) - _shift(v, -1, 1) + _shift(v, -1, -1)) / (4 * h2)
    usable = cls == INTERIOR
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            usable = usable & _shift_bool(ok, di, dj)
    out = np.empty((g.nx, g.ny, 2, 2), dtype=float)
    out[:, :, 0, 0] = dxx
    out[:, :, 1, 1] = dyy
    out[:, :, 0, 1] = dxy
    out[:, :, 1, 0] = dxy
    out[~usable] = np.nan
    out[~np.isfinite(out).all(axis=(2, 3))] = np.nan
    return MatrixField(grid=g, values=out)


def potential_shell(grid: Grid) -> np.ndarray:
    """Fresh value array with the Dirichlet data in place (0 outer, 1 inner)."""
    v = np.zeros((grid.nx, grid.ny), dtype=float)
    v[grid.node_class == DIRICHLET_INNER] = 1.0
    return v


def sample_function(grid: Grid, fn) -> ScalarField:
    """Field sampled from fn(x, y) at every node (vectorized callable)."""
    X, Y = grid.node_xy()
    return ScalarField(grid=grid, values=np.asarray(fn(X, Y), dtype=float))
