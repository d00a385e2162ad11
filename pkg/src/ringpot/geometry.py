"""Convex ring domains (outer convex region minus inner convex compact) and
the metric/containment queries the rest of the toolkit is built on.

Shapes are restricted to disks, convex polygons and (inner only) single
points, which keeps every distance and ray query closed-form.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .reports import CheckReport

Point = tuple[float, float]

# classification labels returned by ConvexRing.contains
IN_RING = "in_ring"
IN_INNER = "in_inner"
OUTSIDE_OUTER = "outside_outer"
ON_BOUNDARY = "on_boundary"


class ShapeError(ValueError):
    """Raised when a shape or ring violates its construction invariants."""


def _as_point(p) -> np.ndarray:
    a = np.asarray(p, dtype=float)
    if a.shape != (2,):
        raise ShapeError(f"expected a 2-d point, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class ConvexShape:
    """A disk, a strictly convex polygon (CCW), or a single point.

    Use the ``disk``/``polygon``/``point`` constructors; ``__post_init__``
    enforces convexity and orientation.
    """

    kind: str
    center: np.ndarray | None = None
    radius: float = 0.0
    vertices: np.ndarray | None = None
    location: np.ndarray | None = None

    @staticmethod
    def disk(center, radius: float) -> "ConvexShape":
        if radius <= 0:
            raise ShapeError("disk radius must be positive")
        return ConvexShape(kind="disk", center=_as_point(center), radius=float(radius))

    @staticmethod
    def polygon(vertices) -> "ConvexShape":
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ShapeError("polygon needs at least 3 planar vertices")
        return ConvexShape(kind="polygon", vertices=v)

    @staticmethod
    def point(location) -> "ConvexShape":
        return ConvexShape(kind="point", location=_as_point(location))

    def __post_init__(self):
        if self.kind == "polygon":
            v = self.vertices
            n = len(v)
            if n != len({(float(x), float(y)) for x, y in v}):
                raise ShapeError("polygon has repeated vertices")
            # every cross product of consecutive edges must carry one strict sign
            e = np.roll(v, -1, axis=0) - v
            cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
            if np.any(cross == 0.0):
                raise ShapeError("polygon has collinear (degenerate) vertices")
            if np.all(cross < 0):
                object.__setattr__(self, "vertices", v[::-1].copy())
            elif not np.all(cross > 0):
                raise ShapeError("polygon is not strictly convex")
        elif self.kind not in ("disk", "point"):
            raise ShapeError(f"unknown shape kind {self.kind!r}")

    # -- containment -------------------------------------------------------

    def signed_distance(self, x) -> np.ndarray:
        """Signed distance to the shape boundary, negative inside.

        Accepts a single point or an (N, 2) array. For a point shape this is
        plain Euclidean distance (never negative).
        """
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "disk":
            d = np.hypot(pts[:, 0] - self.center[0], pts[:, 1] - self.center[1]) - self.radius
        elif self.kind == "point":
            d = np.hypot(pts[:, 0] - self.location[0], pts[:, 1] - self.location[1])
        else:
            d = _polygon_signed_distance(self.vertices, pts)
        return d[0] if np.asarray(x).ndim == 1 else d

    def contains_point(self, x, tol: float = 0.0) -> bool:
        return bool(self.signed_distance(x) <= tol)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "disk":
            r = np.array([self.radius, self.radius])
            return self.center - r, self.center + r
        if self.kind == "point":
            return self.location.copy(), self.location.copy()
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def _polygon_signed_distance(verts: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Signed distance from points to a CCW convex polygon (negative inside)."""
    a = verts
    b = np.roll(verts, -1, axis=0)
    e = b - a  # (m,2)
    # distance to each edge segment
    w = pts[:, None, :] - a[None, :, :]  # (n,m,2)
    ee = np.einsum("mk,mk->m", e, e)
    t = np.clip(np.einsum("nmk,mk->nm", w, e) / ee, 0.0, 1.0)
    proj = a[None, :, :] + t[:, :, None] * e[None, :, :]
    dist = np.min(np.hypot(pts[:, None, 0] - proj[:, :, 0], pts[:, None, 1] - proj[:, :, 1]), axis=1)
    # inside test: left of every edge for CCW orientation
    cross = e[None, :, 0] * w[:, :, 1] - e[None, :, 1] * w[:, :, 0]
    inside = np.all(cross >= 0.0, axis=1)
    return np.where(inside, -dist, dist)


def diameter(shape: ConvexShape) -> float:
    """Max pairwise distance; over vertices for polygons (valid by convexity)."""
    if shape.kind == "disk":
        return 2.0 * shape.radius
    if shape.kind == "polygon":
        v = shape.vertices
        d = np.hypot(v[:, None, 0] - v[None, :, 0], v[:, None, 1] - v[None, :, 1])
        return float(d.max())
    raise ShapeError("diameter is undefined for a point shape")


@dataclass(frozen=True)
class RayHit:
    """First intersection of an interior ray with the outer boundary."""

    length: float
    hit_point: np.ndarray


@dataclass(frozen=True)
class ConvexRing:
    """Ring domain: open convex outer region minus a closed convex inner set."""

    outer: ConvexShape
    inner: ConvexShape
    _separation: float = field(init=False, default=0.0)

    def __post_init__(self):
        if self.outer.kind == "point":
            raise ShapeError("outer shape cannot be a point")
        sep = separation(self.outer, self.inner)
        if sep <= 0:
            raise ShapeError(f"inner set is not compactly contained in the outer region (separation {sep:g})")
        object.__setattr__(self, "_separation", sep)

    @property
    def separation(self) -> float:
        """Minimum distance between the inner set and the outer boundary."""
        return self._separation

    def contains(self, x, tol: float | None = None) -> str:
        """Classify a point against the ring: in_ring / in_inner / outside_outer / on_boundary."""
        if tol is None:
            tol = 1e-12 * diameter(self.outer)
        d_out = self.outer.signed_distance(x)
        d_in = self.inner.signed_distance(x)
        if abs(d_out) <= tol or abs(d_in) <= tol:
            return ON_BOUNDARY
        if d_out > 0:
            return OUTSIDE_OUTER
        if d_in < 0:
            return IN_INNER
        return IN_RING

    def dist_to_outer(self, x) -> float:
        """Euclidean distance from an interior point to the outer boundary."""
        d = self.outer.signed_distance(x)
        if np.any(np.asarray(d) > 0):
            raise ShapeError(f"point {x} lies outside the outer region")
        return float(-d) if np.isscalar(d) or np.asarray(d).ndim == 0 else -d

    def dist_to_inner(self, x):
        """Euclidean distance to the closed inner set (0 inside it)."""
        d = self.inner.signed_distance(x)
        return np.maximum(d, 0.0)

    def ray_to_outer(self, x, direction) -> RayHit:
        """First hit of the ray x + t*direction (unit vector) on the outer boundary."""
        x = _as_point(x)
        nu = _as_point(direction)
        if abs(np.hypot(*nu) - 1.0) > 1e-12:
            raise ShapeError("ray direction must be a unit vector")
        if self.outer.signed_distance(x) >= 0:
            raise ShapeError("ray origin must lie strictly inside the outer region")
        if self.outer.kind == "disk":
            d = x - self.outer.center
            b = float(d @ nu)
            disc = b * b + self.outer.radius**2 - float(d @ d)
            t = -b + math.sqrt(disc)
        else:
            t = _ray_polygon_exit(self.outer.vertices, x, nu)
        return RayHit(length=float(t), hit_point=x + t * nu)

    def validate(self) -> CheckReport:
        """Report convexity, compact containment and ring nonemptiness."""
        return validate_shapes(self.outer, self.inner)


def _ray_polygon_exit(verts: np.ndarray, x: np.ndarray, nu: np.ndarray) -> float:
    """Smallest positive ray parameter hitting a convex CCW polygon boundary."""
    a = verts
    b = np.roll(verts, -1, axis=0)
    e = b - a
    denom = nu[0] * e[:, 1] - nu[1] * e[:, 0]
    w = a - x
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (w[:, 0] * e[:, 1] - w[:, 1] * e[:, 0]) / denom
        s = (w[:, 0] * nu[1] - w[:, 1] * nu[0]) / denom
    valid = (np.abs(denom) > 1e-300) & (t > 1e-14) & (s >= -1e-12) & (s <= 1 + 1e-12)
    if not np.any(valid):
        raise ShapeError("ray does not exit the polygon (origin outside?)")
    return float(t[valid].min())


# -- shape-to-shape separation ---------------------------------------------


def _point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    e = b - a
    t = float(np.clip((p - a) @ e / (e @ e), 0.0, 1.0))
    return float(np.hypot(*(p - (a + t * e))))


def _max_reach(shape: ConvexShape, c: np.ndarray) -> float:
    """max_{y in shape} |y - c|."""
    if shape.kind == "disk":
        return float(np.hypot(*(shape.center - c))) + shape.radius
    if shape.kind == "point":
        return float(np.hypot(*(shape.location - c)))
    return float(np.max(np.hypot(shape.vertices[:, 0] - c[0], shape.vertices[:, 1] - c[1])))


def _dist_segment_to_shape(a: np.ndarray, b: np.ndarray, shape: ConvexShape) -> float:
    if shape.kind == "point":
        return _point_segment_distance(shape.location, a, b)
    if shape.kind == "disk":
        return _point_segment_distance(shape.center, a, b) - shape.radius
    # convex polygon: minimum is attained at a vertex/edge pair
    v = shape.vertices
    d = min(_point_segment_distance(p, a, b) for p in v)
    for q, r in zip(v, np.roll(v, -1, axis=0)):
        d = min(d, _point_segment_distance(a, q, r), _point_segment_distance(b, q, r))
    return d


def separation(outer: ConvexShape, inner: ConvexShape) -> float:
    """Minimum distance from the inner set to the outer boundary.

    Negative or zero means the inner set touches or leaves the outer region.
    """
    if outer.kind == "disk":
        return outer.radius - _max_reach(inner, outer.center)
    # outer polygon: the inner set must be inside; separation is the min
    # distance from the inner set to each outer edge, negated if any inner
    # probe point escapes the outer region.
    probes = _shape_probe(inner)
    if np.any(outer.signed_distance(probes) >= 0):
        return -float(np.max(outer.signed_distance(probes)))
    v = outer.vertices
    return min(_dist_segment_to_shape(a, b, inner) for a, b in zip(v, np.roll(v, -1, axis=0)))


def _shape_probe(shape: ConvexShape) -> np.ndarray:
    """Representative boundary points of a shape for containment probing."""
    if shape.kind == "point":
        return shape.location[None, :]
    if shape.kind == "disk":
        ang = np.linspace(0, 2 * math.pi, 64, endpoint=False)
        return shape.center + shape.radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return shape.vertices


def validate_shapes(outer: ConvexShape, inner: ConvexShape) -> CheckReport:
    """Validation report for a proposed outer/inner pair (never raises).

    Unlike the ConvexRing constructor, this reports failed containment or a
    degenerate ring as entries instead of refusing to look at them.
    """
    details = {}
    details["outer_kind"] = outer.kind
    details["inner_kind"] = inner.kind
    details["outer_is_region"] = outer.kind in ("disk", "polygon")
    sep = separation(outer, inner) if details["outer_is_region"] else float("-inf")
    details["separation"] = sep
    details["compactly_contained"] = sep > 0
    details["ring_nonempty"] = sep > 0
    ok = details["outer_is_region"] and sep > 0
    return CheckReport(name="ring_validation", passed=bool(ok),
                       fraction=1.0 if ok else 0.0,
                       worst_margin=sep if math.isfinite(sep) else 0.0,
                       samples=1, details=details)


# -- convex hull utilities ----------------------------------------------------


def convex_hull_points(pts: np.ndarray) -> np.ndarray:
    """Convex hull (CCW, no repeated endpoint) via the monotone chain."""
    pts = np.unique(np.asarray(pts, dtype=float), axis=0)
    if pts.shape[0] <= 2:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    p = pts[order]

    def half(seq):
        out = []
        for q in seq:
            while len(out) >= 2:
                o, a = out[-2], out[-1]
                if (a[0] - o[0]) * (q[1] - o[1]) - (a[1] - o[1]) * (q[0] - o[0]) <= 0:
                    out.pop()
                else:
                    break
            out.append(q)
        return out

    lower = half(p)
    upper = half(p[::-1])
    return np.array(lower[:-1] + upper[:-1])


def points_in_convex_polygon(pts: np.ndarray, poly: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Vectorized membership test against a CCW convex polygon."""
    pts = np.atleast_2d(pts)
    if poly.shape[0] < 3:
        return np.zeros(pts.shape[0], dtype=bool)
    a = poly
    b = np.roll(poly, -1, axis=0)
    e = b - a
    w0 = pts[:, None, 0] - a[None, :, 0]
    w1 = pts[:, None, 1] - a[None, :, 1]
    cross = e[None, :, 0] * w1 - e[None, :, 1] * w0
    return np.all(cross >= -tol, axis=1)


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area (positive for CCW)."""
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


# -- ring description files --------------------------------------------------


def _shape_to_obj(shape: ConvexShape):
    if shape.kind == "disk":
        return {"disk": {"center": [float(shape.center[0]), float(shape.center[1])],
                         "radius": float(shape.radius)}}
    if shape.kind == "polygon":
        return {"polygon": [[float(x), float(y)] for x, y in shape.vertices]}
    return {"point": [float(shape.location[0]), float(shape.location[1])]}


def _shape_from_obj(obj) -> ConvexShape:
    if not isinstance(obj, dict) or len(obj) != 1:
        raise ShapeError(f"malformed shape description: {obj!r}")
    kind, payload = next(iter(obj.items()))
    if kind == "disk":
        return ConvexShape.disk(payload["center"], payload["radius"])
    if kind == "polygon":
        return ConvexShape.polygon(payload)
    if kind == "point":
        return ConvexShape.point(payload)
    raise ShapeError(f"unknown shape kind {kind!r}")


def ring_to_json(ring: ConvexRing) -> str:
    return json.dumps({"outer": _shape_to_obj(ring.outer), "inner": _shape_to_obj(ring.inner)}, indent=2)


def ring_from_json(text: str) -> ConvexRing:
    obj = json.loads(text)
    return ConvexRing(outer=_shape_from_obj(obj["outer"]), inner=_shape_from_obj(obj["inner"]))


def load_ring(path) -> ConvexRing:
    with open(path, "r", encoding="utf-8") as fh:
        return ring_from_json(fh.read())


def save_ring(ring: ConvexRing, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(ring_to_json(ring))
