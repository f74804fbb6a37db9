"""Planar geometry kernel.

Everything here is a pure function over numpy arrays. Predicates use the
absolute tolerance ``TOL_GEOM`` from :mod:`swarm_gather.core`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    TOL_GEOM,
    Constellation,
    GeometryError,
    SystemParams,
    VisibilityGraph,
    as_point,
    as_points,
)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True, eq=False)
class Circle:
    center: np.ndarray
    radius: float
    support: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "center", as_point(self.center))
        if not self.radius >= 0:
            raise GeometryError("circle radius must be non-negative")
        object.__setattr__(self, "radius", float(self.radius))

    def contains(self, p, tol: float = TOL_GEOM) -> bool:
        return math.dist(self.center, as_point(p)) <= self.radius + tol


# --- smallest enclosing circle -------------------------------------------


def _circle_two(a, b) -> tuple:
    c = 0.5 * (a + b)
    return c, 0.5 * math.dist(a, b)


def _circle_three(a, b, c) -> Optional[tuple]:
    # Circumcircle; None for (near-)collinear triples.
    bx, by = b - a
    cx, cy = c - a
    d = 2.0 * (bx * cy - by * cx)
    scale = max(bx * bx + by * by, cx * cx + cy * cy)
    if scale == 0 or abs(d) <= 1e-14 * scale:
        return None
    b2 = bx * bx + by * by
    c2 = cx * cx + cy * cy
    ux = (cy * b2 - by * c2) / d
    uy = (bx * c2 - cx * b2) / d
    center = a + np.array([ux, uy])
    r = max(math.dist(center, a), math.dist(center, b), math.dist(center, c))
    return center, r


def _inside(center, r, p, tol) -> bool:
    return math.dist(center, p) <= r + tol


def min_enclosing_circle(points, seed: int = 0) -> Circle:
    """Smallest closed disc containing ``points``.

    Randomised incremental construction with a fixed shuffle seed, so the
    result is deterministic. ``support`` lists the indices (into the input)
    of the 1 to 3 points that pin the circle.
    """
    P = as_points(points)
    n = P.shape[0]
    if n == 0:
        raise GeometryError("min_enclosing_circle needs at least one point")
    order = np.random.default_rng(seed).permutation(n)
    # Tolerance scaled to the data so the membership test tracks rounding.
    tol = 1e-12 * max(1.0, float(np.abs(P).max()))

    i0 = int(order[0])
    center, r, support = P[i0].copy(), 0.0, (i0,)
    for a in range(1, n):
        ia = int(order[a])
        if _inside(center, r, P[ia], tol):
            continue
        center, r, support = P[ia].copy(), 0.0, (ia,)
        for b in range(a):
            ib = int(order[b])
            if _inside(center, r, P[ib], tol):
                continue
            center, r = _circle_two(P[ia], P[ib])
            support = (ia, ib)
            for k in range(b):
                ik = int(order[k])
                if _inside(center, r, P[ik], tol):
                    continue
                circ = _circle_three(P[ia], P[ib], P[ik])
                if circ is None:
                    # Collinear: the farthest pair spans the circle.
                    trio = [ia, ib, ik]
                    pairs = [(trio[x], trio[y]) for x in range(3) for y in range(x + 1, 3)]
                    u, v = max(pairs, key=lambda uv: math.dist(P[uv[0]], P[uv[1]]))
                    center, r = _circle_two(P[u], P[v])
                    support = (u, v)
                else:
                    center, r = circ
                    support = (ia, ib, ik)
    if len(support) == 2 and math.dist(P[support[0]], P[support[1]]) == 0.0:
        support = (support[0],)
    return Circle(center, r, tuple(sorted(support)))


# --- convex hull ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConvexHull:
    """Extreme points in counter-clockwise order.

    ``kind`` is ``"point"``, ``"segment"`` or ``"polygon"``; ``indices`` are
    the input indices of the vertices.
    """

    vertices: np.ndarray
    indices: tuple
    kind: str

    @property
    def m(self) -> int:
        return self.vertices.shape[0]


def _turn(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _prune_flat(P: np.ndarray, ring: list, tol: float) -> list:
    # Repeatedly drop the flattest vertex lying within tol of the segment
    # joining its neighbours (between them, not beyond either end).
    while len(ring) > 2:
        best, best_dev = None, tol
        m = len(ring)
        for k in range(m):
            a, v, b = P[ring[k - 1]], P[ring[k]], P[ring[(k + 1) % m]]
            ab = b - a
            base = math.hypot(ab[0], ab[1])
            if base == 0:
                dev = math.dist(a, v)
            elif (v - a) @ ab < 0 or (v - b) @ ab > 0:
                continue
            else:
                dev = abs(_turn(a, b, v)) / base
            if dev <= best_dev:
                best, best_dev = k, dev
        if best is None:
            break
        del ring[best]
    return ring


def convex_hull(points, tol: float = TOL_GEOM) -> ConvexHull:
    """Extreme points of ``points`` in counter-clockwise order.

    The monotone chain runs on the exact turn sign; afterwards any vertex
    within ``tol`` of the line through its neighbours is dropped, so nearly
    collinear inputs give a segment.
    """
    P = as_points(points)
    n = P.shape[0]
    if n == 0:
        raise GeometryError("convex_hull needs at least one point")
    # Sort by (x, y, index); duplicates keep the lowest index.
    order = np.lexsort((np.arange(n), P[:, 1], P[:, 0]))
    uniq = []
    for idx in order:
        if uniq and P[uniq[-1]][0] == P[idx][0] and P[uniq[-1]][1] == P[idx][1]:
            continue
        uniq.append(int(idx))
    if len(uniq) == 1:
        return ConvexHull(P[uniq].copy(), (uniq[0],), "point")

    def chain(seq):
        out = []
        for idx in seq:
            while len(out) >= 2 and _turn(P[out[-2]], P[out[-1]], P[idx]) <= 0:
                out.pop()
            out.append(idx)
        return out

    lower = chain(uniq)
    upper = chain(uniq[::-1])
    ring = _prune_flat(P, lower[:-1] + upper[:-1], tol)
    if len(ring) <= 2:
        ends = ring if len(ring) == 2 else [uniq[0], uniq[-1]]
        if math.dist(P[ends[0]], P[ends[1]]) <= tol:
            return ConvexHull(P[[min(ends)]].copy(), (min(ends),), "point")
        return ConvexHull(P[ends].copy(), tuple(ends), "segment")
    return ConvexHull(P[ring].copy(), tuple(ring), "polygon")


def hull_perimeter(h: ConvexHull) -> float:
    if h.kind == "point":
        return 0.0
    if h.kind == "segment":
        return 2.0 * math.dist(h.vertices[0], h.vertices[1])
    edges = np.roll(h.vertices, -1, axis=0) - h.vertices
    return float(np.hypot(edges[:, 0], edges[:, 1]).sum())


def hull_area(h: ConvexHull) -> float:
    if h.kind != "polygon":
        return 0.0
    x, y = h.vertices[:, 0], h.vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def sharpest_corner(h: ConvexHull) -> tuple:
    """(input index, interior angle) of the sharpest hull vertex.

    Point and segment hulls report angle 0 at their lowest-index vertex.
    """
    if h.kind != "polygon":
        return min(h.indices), 0.0
    V = h.vertices
    prev = np.roll(V, 1, axis=0) - V
    nxt = np.roll(V, -1, axis=0) - V
    cos = np.einsum("ij,ij->i", prev, nxt) / (
        np.hypot(prev[:, 0], prev[:, 1]) * np.hypot(nxt[:, 0], nxt[:, 1])
    )
    angles = np.arccos(np.clip(cos, -1.0, 1.0))
    best = min(range(h.m), key=lambda k: (angles[k], h.indices[k]))
    return h.indices[best], float(angles[best])


def hull_contains(outer: ConvexHull, inner: ConvexHull, tol: float = TOL_GEOM) -> bool:
    return all(point_in_hull(outer, v, tol) for v in inner.vertices)


def point_in_hull(h: ConvexHull, p, tol: float = TOL_GEOM) -> bool:
    p = as_point(p)
    if h.kind == "point":
        return math.dist(h.vertices[0], p) <= tol
    if h.kind == "segment":
        return _segment_distance(h.vertices[0], h.vertices[1], p) <= tol
    V = h.vertices
    for k in range(h.m):
        a, b = V[k], V[(k + 1) % h.m]
        # Signed distance of p to the left of edge a->b.
        if _turn(a, b, p) < -tol * math.dist(a, b):
            return False
    return True


def _segment_distance(a, b, p) -> float:
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0 else min(1.0, max(0.0, float((p - a) @ ab) / denom))
    return math.dist(a + t * ab, p)


# --- wedges --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Wedge:
    """Minimal angular sector at ``apex`` containing the given directions.

    The sector sweeps counter-clockwise from ``u_right`` to ``u_left``.
    """

    apex: np.ndarray
    u_right: np.ndarray
    u_left: np.ndarray
    angle: float
    right_index: int
    left_index: int

    @property
    def bisector(self) -> Optional[np.ndarray]:
        if self.angle >= math.pi:
            return None
        s = self.u_right + self.u_left
        norm = math.hypot(s[0], s[1])
        if norm == 0.0:
            return None
        return s / norm


def wedge_of(apex, targets, tol: float = TOL_GEOM) -> Wedge:
    """Minimal sector at ``apex`` covering every target direction.

    Targets within ``tol`` of the apex carry no direction and are skipped.
    ``right_index``/``left_index`` refer to positions in ``targets``.
    """
    apex = as_point(apex)
    T = as_points(targets) if len(targets) else np.empty((0, 2))
    rel = T - apex
    dist = np.hypot(rel[:, 0], rel[:, 1]) if len(T) else np.empty(0)
    keep = np.flatnonzero(dist > tol)
    if keep.size == 0:
        raise GeometryError("no directions: every target coincides with the apex")
    units = rel[keep] / dist[keep, None]
    theta = np.mod(np.arctan2(units[:, 1], units[:, 0]), TWO_PI)
    order = sorted(range(keep.size), key=lambda k: (theta[k], keep[k]))
    m = len(order)
    if m == 1:
        k = order[0]
        return Wedge(apex, units[k], units[k], 0.0, int(keep[k]), int(keep[k]))
    # The sector is the complement of the widest empty gap between
    # consecutive directions; first widest gap wins ties.
    best_gap, best_pos = -1.0, 0
    for pos in range(m):
        a = theta[order[pos]]
        b = theta[order[(pos + 1) % m]]
        gap = b - a if pos + 1 < m else b + TWO_PI - a
        if gap > best_gap:
            best_gap, best_pos = gap, pos
    left = order[best_pos]
    right = order[(best_pos + 1) % m]
    angle = max(0.0, TWO_PI - best_gap)
    if angle >= TWO_PI:
        angle = 0.0
    return Wedge(apex, units[right], units[left], float(angle), int(keep[right]), int(keep[left]))


# --- allowable regions ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class AllowableRegion:
    """Intersection of ``discs``; the first disc is the self-disc D_mu(apex)."""

    apex: np.ndarray
    discs: tuple
    mu: float

    def contains(self, x, tol: float = TOL_GEOM) -> bool:
        x = as_point(x)
        return all(d.contains(x, tol) for d in self.discs)

    def contains_many(self, X: np.ndarray, tol: float = TOL_GEOM) -> np.ndarray:
        ok = np.ones(X.shape[0], dtype=bool)
        for d in self.discs:
            ok &= np.hypot(X[:, 0] - d.center[0], X[:, 1] - d.center[1]) <= d.radius + tol
        return ok

    @property
    def neighbor_discs(self) -> tuple:
        return self.discs[1:]


def allowable_region(
    i: int,
    c: Constellation,
    g: VisibilityGraph,
    params: SystemParams,
    mu: Optional[float] = None,
) -> AllowableRegion:
    """Where agent ``i`` may move without dropping any current neighbour.

    One disc of radius V/2 centred half a range ahead towards each neighbour,
    plus the self-disc of radius ``mu`` (default min(V/2, sigma)).
    """
    P = c.positions
    apex = P[i]
    nbrs = g.neighbors(i)
    V = params.V
    if mu is None:
        mu = min(V / 2.0, params.sigma)
    if not mu > 0:
        raise GeometryError("mu must be positive")
    discs = [Circle(apex, mu)]
    if nbrs.size:
        V = params.require_finite_v()
        half = V / 2.0
        for j in nbrs:
            rel = P[j] - apex
            d = math.hypot(rel[0], rel[1])
            if d <= TOL_GEOM:
                # A coincident neighbour constrains nothing it can see.
                continue
            discs.append(Circle(apex + half * rel / d, half))
    return AllowableRegion(apex.copy(), tuple(discs), float(mu))


def sample_uniform(
    region: AllowableRegion,
    rng: np.random.Generator,
    max_attempts: int = 10**6,
    batch: int = 4096,
) -> tuple:
    """Uniform point in ``region`` by rejection from the self-disc.

    Returns ``(point, degenerate)``. After ``max_attempts`` rejected draws the
    region is declared degenerate and the apex is returned.
    """
    apex, mu = region.apex, region.mu
    tried = 0
    while tried < max_attempts:
        k = min(batch, max_attempts - tried)
        r = mu * np.sqrt(rng.random(k))
        phi = TWO_PI * rng.random(k)
        X = apex + np.column_stack((r * np.cos(phi), r * np.sin(phi)))
        ok = np.ones(k, dtype=bool)
        for d in region.neighbor_discs:
            # Strict tolerance 0 so accepted points lie inside every disc.
            ok &= np.hypot(X[:, 0] - d.center[0], X[:, 1] - d.center[1]) <= d.radius
        hit = np.flatnonzero(ok)
        if hit.size:
            return X[hit[0]].copy(), False
        tried += k
    return apex.copy(), True


def bisector_chord(region: AllowableRegion, direction) -> float:
    """Distance from the apex to the region boundary along ``direction``.

    For a disc of radius V/2 through the apex, the ray at angle theta to the
    disc's axis leaves after V*cos(theta); the self-disc contributes mu.
    """
    u = as_point(direction)
    u = u / math.hypot(u[0], u[1])
    reach = region.mu
    for d in region.neighbor_discs:
        axis = d.center - region.apex
        reach = min(reach, max(0.0, 2.0 * float(axis @ u)))
    return reach


# --- standalone geometric facts -------------------------------------------


def limit_ij(p_i, p_j, direction, V: float) -> float:
    """Longest step from ``p_i`` along ``direction`` that keeps ``p_j`` visible.

    The mover must stay in the disc of radius V/2 about the pair's midpoint;
    this is the forward intersection of the ray with that circle.
    """
    p_i, p_j, u = as_point(p_i), as_point(p_j), as_point(direction)
    norm = math.hypot(u[0], u[1])
    if norm == 0:
        raise GeometryError("direction must be non-zero")
    u = u / norm
    rel = p_j - p_i
    l = math.hypot(rel[0], rel[1])
    if l > V + TOL_GEOM:
        raise GeometryError(f"agents are {l} apart, beyond the range {V}")
    cos_t = 0.0 if l == 0 else max(-1.0, min(1.0, float(rel @ u) / l))
    sin2 = max(0.0, 1.0 - cos_t * cos_t)
    disc = (V / 2.0) ** 2 - (l / 2.0) ** 2 * sin2
    if disc < 0:
        if disc < -TOL_GEOM:
            raise GeometryError("negative discriminant")
        disc = 0.0
    return (l / 2.0) * cos_t + math.sqrt(disc)


def arc_min_distance(a, b, beta: float) -> float:
    """Distance from the chord's midpoint to the apex of the isosceles
    triangle with base ``a``-``b`` and apex angle ``beta``."""
    if not 0 < beta < math.pi:
        raise GeometryError("inscribed angle must lie in (0, pi)")
    return math.dist(as_point(a), as_point(b)) / (2.0 * math.tan(beta / 2.0))


def circle_through(points: Sequence) -> Circle:
    """Circumcircle of three non-collinear points."""
    P = as_points(points)
    res = _circle_three(P[0], P[1], P[2])
    if res is None:
        raise GeometryError("points are collinear")
    return Circle(res[0], res[1])
