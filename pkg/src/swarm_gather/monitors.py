"""Lyapunov functions and invariant checks over recorded trajectories.

Checks return violations as data; nothing here raises on a failed invariant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import geometry
from .core import (
    TOL_GEOM,
    ConfigurationError,
    Constellation,
    IntegrationBlowupError,
    SystemParams,
    VisibilityGraph,
    pairwise_distances,
)

ALL_SERIES = (
    "centroid_x",
    "centroid_y",
    "L1",
    "L_sum",
    "L_pairs",
    "L2_alpha",
    "L3",
    "diameter",
    "nu_potential",
    "min_edge",
    "max_edge",
    "lock_count",
)


@dataclass(frozen=True)
class Violation:
    step: int
    name: str
    magnitude: float


@dataclass
class MonitorReport:
    series: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(next(iter(self.series.values()))) if self.series else 0

    def max_violation(self, name: Optional[str] = None) -> float:
        mags = [v.magnitude for v in self.violations if name is None or v.name == name]
        return max(mags, default=0.0)

    def by_name(self, name: str) -> list:
        return [v for v in self.violations if v.name == name]


def _positions(c) -> np.ndarray:
    return c.positions if isinstance(c, Constellation) else np.asarray(c, dtype=float)


# --- Lyapunov functions -------------------------------------------------


def lyapunov_l1(c) -> float:
    """Sum of squared distances to the centroid."""
    P = _positions(c)
    dev = P - P.mean(axis=0)
    return float((dev * dev).sum())


def lyapunov_sum(c) -> float:
    """Sum of distances to the centroid."""
    P = _positions(c)
    dev = P - P.mean(axis=0)
    return float(np.hypot(dev[:, 0], dev[:, 1]).sum())


def lyapunov_pairs(c) -> float:
    """Sum of distances over unordered pairs."""
    d = pairwise_distances(_positions(c))
    return float(np.triu(d, 1).sum())


def lyapunov_potential(c, g: VisibilityGraph, sigma: float, alpha: float) -> float:
    """(sigma / alpha) times the sum over ordered neighbour pairs of |p_i - p_j|^alpha."""
    if not alpha > 0:
        raise ConfigurationError("alpha must be positive")
    d = pairwise_distances(_positions(c))
    return float(sigma / alpha * (d[g.adjacency] ** alpha).sum())


def lyapunov_s5je(c, g: VisibilityGraph, V: float) -> float:
    """Sum over ordered edges of l^2 / (V - l)."""
    d = pairwise_distances(_positions(c))
    l = d[g.adjacency]
    if l.size and l.max() >= V:
        raise IntegrationBlowupError("an edge has reached the visibility range")
    return float((l * l / (V - l)).sum())


def hull_perimeter_of(c) -> float:
    return geometry.hull_perimeter(geometry.convex_hull(_positions(c)))


# --- series -------------------------------------------------------------


def compute_series(
    positions: np.ndarray,
    params: SystemParams,
    names: Iterable[str] = ALL_SERIES,
    graphs: Optional[Sequence[VisibilityGraph]] = None,
    locked: Optional[np.ndarray] = None,
    alpha: Optional[float] = None,
) -> dict:
    """Evaluate the requested monitor series over a (K, n, 2) trajectory.

    ``graphs`` supplies per-step neighbour sets (S5JE memory); otherwise edges
    are the strict V-disk relation. Series that do not apply are omitted.
    """
    X = np.asarray(positions, dtype=float)
    K, n = X.shape[0], X.shape[1]
    names = [s for s in names if s in ALL_SERIES]
    out = {}
    cent = X.mean(axis=1)
    if "centroid_x" in names:
        out["centroid_x"] = cent[:, 0].copy()
    if "centroid_y" in names:
        out["centroid_y"] = cent[:, 1].copy()
    dev = X - cent[:, None, :]
    devn = np.hypot(dev[..., 0], dev[..., 1])
    if "L1" in names:
        out["L1"] = (devn * devn).sum(axis=1)
    if "L_sum" in names:
        out["L_sum"] = devn.sum(axis=1)
    need_d = {"L_pairs", "diameter", "min_edge", "max_edge", "L2_alpha", "nu_potential"}
    if need_d & set(names):
        iu = np.triu_indices(n, 1)
        diff = X[:, :, None, :] - X[:, None, :, :]
        D = np.hypot(diff[..., 0], diff[..., 1])
        if "L_pairs" in names:
            out["L_pairs"] = D[:, iu[0], iu[1]].sum(axis=1)
        if "diameter" in names:
            out["diameter"] = D.reshape(K, -1).max(axis=1) if n > 1 else np.zeros(K)
        if graphs is not None:
            adj = np.stack([g.adjacency for g in graphs])
        elif math.isfinite(params.V):
            adj = (D > 0) & (D < params.V)
        else:
            adj = np.broadcast_to(~np.eye(n, dtype=bool), D.shape)
        if "min_edge" in names or "max_edge" in names:
            masked = np.where(adj, D, np.nan)
            has = adj.reshape(K, -1).any(axis=1)
            flat = masked.reshape(K, -1)
            mins = np.full(K, np.nan)
            maxs = np.full(K, np.nan)
            if has.any():
                mins[has] = np.nanmin(flat[has], axis=1)
                maxs[has] = np.nanmax(flat[has], axis=1)
            if "min_edge" in names:
                out["min_edge"] = mins
            if "max_edge" in names:
                out["max_edge"] = maxs
        if "L2_alpha" in names and alpha is not None:
            out["L2_alpha"] = params.sigma / alpha * np.where(adj, D**alpha, 0.0).reshape(K, -1).sum(axis=1)
        if "nu_potential" in names and graphs is not None and math.isfinite(params.V):
            V = params.V
            with np.errstate(divide="ignore", invalid="ignore"):
                nu = np.where(adj, D * D / (V - D), 0.0)
            out["nu_potential"] = np.where(adj & (D >= V), np.inf, nu).reshape(K, -1).sum(axis=1)
    if "L3" in names:
        out["L3"] = np.array([hull_perimeter_of(X[k]) for k in range(K)])
    if "lock_count" in names and locked is not None:
        out["lock_count"] = np.asarray(locked, dtype=bool).sum(axis=1).astype(float)
    return out


# --- checks ---------------------------------------------------------------


def check_centroid_invariance(centroids, tolerance: float = 1e-10, name: str = "centroid") -> list:
    """Steps where the centroid moved by more than ``tolerance``.

    ``centroids`` is a (K, 2) array or a report with centroid series.
    """
    if isinstance(centroids, MonitorReport):
        centroids = np.column_stack((centroids.series["centroid_x"], centroids.series["centroid_y"]))
    C = np.asarray(centroids, dtype=float)
    jumps = np.hypot(*(np.diff(C, axis=0).T)) if len(C) > 1 else np.empty(0)
    return [Violation(k + 1, name, float(j)) for k, j in enumerate(jumps) if j > tolerance]


def check_monotone(
    series, direction: str = "nonincreasing", slack: float = 0.0, name: str = "monotone"
) -> list:
    s = np.asarray(series, dtype=float)
    if direction == "nonincreasing":
        delta = np.diff(s)
    elif direction == "nondecreasing":
        delta = -np.diff(s)
    else:
        raise ConfigurationError(f"unknown direction {direction!r}")
    return [Violation(k + 1, name, float(x)) for k, x in enumerate(delta) if x > slack]


def check_gathered(c, params: SystemParams, mode: str = "point") -> bool:
    P = _positions(c)
    d = float(pairwise_distances(P).max()) if len(P) > 1 else 0.0
    if mode == "point":
        return d <= params.epsilon_gather
    if mode == "disc":
        return d <= params.V
    raise ConfigurationError(f"unknown gathering mode {mode!r}")


def check_never_lose(
    positions: np.ndarray,
    V: float,
    slack: float = TOL_GEOM,
    name: str = "never_lose",
    graphs: Optional[Sequence[VisibilityGraph]] = None,
) -> list:
    """Linked pairs at one step must stay within V + slack at the next.

    Without ``graphs`` a pair is linked when closer than V; coincident pairs
    count too, since they must not fly apart beyond the range either. With
    ``graphs`` (rules that remember their neighbours) the remembered edges
    are the linked pairs.
    """
    X = np.asarray(positions, dtype=float)
    out = []
    for k in range(len(X) - 1):
        d1 = pairwise_distances(X[k + 1])
        if graphs is not None:
            linked = np.array(graphs[k].adjacency)
        else:
            linked = pairwise_distances(X[k]) < V
            np.fill_diagonal(linked, False)
        if linked.any():
            excess = float((d1[linked] - V).max())
            if excess > slack:
                out.append(Violation(k + 1, name, excess))
    return out


def check_edges_monotone(graphs: Sequence[VisibilityGraph], name: str = "edges_lost") -> list:
    """Steps where any edge of the previous graph disappeared."""
    out = []
    for k in range(len(graphs) - 1):
        lost = graphs[k].adjacency & ~graphs[k + 1].adjacency
        if lost.any():
            out.append(Violation(k + 1, name, float(lost.sum() // 2)))
    return out


def check_hull_containment(positions: np.ndarray, tol: float = TOL_GEOM, name: str = "hull_growth") -> list:
    """Steps whose hull pokes out of the previous hull by more than ``tol``."""
    X = np.asarray(positions, dtype=float)
    out = []
    prev = geometry.convex_hull(X[0])
    for k in range(1, len(X)):
        cur = geometry.convex_hull(X[k])
        if not geometry.hull_contains(prev, cur, tol):
            excess = max(_outside_distance(prev, v) for v in cur.vertices)
            out.append(Violation(k, name, excess))
        prev = cur
    return out


def _outside_distance(h: geometry.ConvexHull, p) -> float:
    if h.kind == "point":
        return math.dist(h.vertices[0], p)
    if h.kind == "segment":
        return geometry._segment_distance(h.vertices[0], h.vertices[1], np.asarray(p))
    worst = 0.0
    for k in range(h.m):
        a, b = h.vertices[k], h.vertices[(k + 1) % h.m]
        worst = max(worst, -geometry._turn(a, b, p) / math.dist(a, b))
    return worst


def windowed_slopes(series, times, window: int) -> np.ndarray:
    """Finite-difference slopes over consecutive, non-overlapping windows."""
    s = np.asarray(series, dtype=float)
    t = np.asarray(times, dtype=float)
    idx = np.arange(0, len(s), window)
    if len(idx) < 2:
        return np.empty(0)
    return np.diff(s[idx]) / np.diff(t[idx])


# --- discrete bearing-only bounds ----------------------------------------


def s4_entry_threshold(n: int, sigma: float) -> float:
    return sigma * (n - 1) ** 2


def s4_confinement_radius(n: int, sigma: float) -> float:
    return 2.0 * sigma * (n - 1) ** 2 + sigma * (n - 1)


def s4_decrease(n: int, sigma: float) -> float:
    """Guaranteed per-step drop of L1 while the constellation is still wide."""
    return sigma**2 * n * (n - 1) ** 2 - sigma**2 * (
        2 * (n - 1) ** 2 + (n - 2) * (n - 3 + math.sqrt(3)) ** 2
    )


@dataclass(frozen=True)
class ConfinementResult:
    entry_step: Optional[int]
    max_radius_after: float
    bound: float
    violations: list


def check_s4_confinement(positions: np.ndarray, sigma: float) -> ConfinementResult:
    """Once the summed distance to the centroid falls to sigma (n-1)^2, every
    later agent must stay within the confinement radius of the centroid."""
    X = np.asarray(positions, dtype=float)
    n = X.shape[1]
    dev = X - X.mean(axis=1, keepdims=True)
    r = np.hypot(dev[..., 0], dev[..., 1])
    total = r.sum(axis=1)
    bound = s4_confinement_radius(n, sigma)
    hits = np.flatnonzero(total <= s4_entry_threshold(n, sigma))
    if hits.size == 0:
        return ConfinementResult(None, float("nan"), bound, [])
    k0 = int(hits[0])
    radii = r[k0:].max(axis=1)
    viol = [
        Violation(k0 + k, "s4_confinement", float(x - bound))
        for k, x in enumerate(radii)
        if x > bound
    ]
    return ConfinementResult(k0, float(radii.max()), bound, viol)


# --- semi-synchronous bound ----------------------------------------------


def expected_semi_sync_steps(L0: float, L_target: float, n: int, sigma: float, delta: float) -> float:
    """Expected steps for the semi-synchronous linear rule to shrink the
    summed distance to the centroid from ``L0`` to ``L_target``.

    ``delta`` is the per-step probability of a full contraction by 1 - n sigma.
    """
    if not 0 < n * sigma < 1:
        raise ConfigurationError("need 0 < n * sigma < 1")
    if not 0 < L_target <= L0:
        raise ConfigurationError("need 0 < L_target <= L0")
    if not 0 < delta <= 1:
        raise ConfigurationError("delta must lie in (0, 1]")
    return (1.0 / delta) * math.log(L_target / L0) / math.log(1.0 - n * sigma)
