"""Steppers for every gathering rule.

Continuous rules advance by one explicit Euler step of length ``params.dt``;
discrete rules are applied exactly. Every stepper reads only the pre-step
snapshot and returns a :class:`~swarm_gather.core.StepOutcome`.
"""

from __future__ import annotations

import enum
import math
import warnings
from typing import Optional, Union

import numpy as np

from . import geometry
from .core import (
    TOL_GEOM,
    ConfigurationError,
    Constellation,
    GeometryError,
    IntegrationBlowupError,
    StepOutcome,
    SystemParams,
    VisibilityGraph,
    build_visibility,
    pairwise_distances,
)
from .scheduler import STREAM_MOTION, derived_rng


class SystemKind(str, enum.Enum):
    S1 = "S1"
    S2 = "S2"
    S2_SCALED = "S2_scaled"
    S3 = "S3"
    S4 = "S4"
    S5JE = "S5JE"
    S5 = "S5"
    S6 = "S6"
    S7 = "S7"
    S7_PROPORTIONAL = "S7_proportional"
    S8 = "S8"
    LAPLACIAN = "Laplacian"
    POTENTIAL_ALPHA = "PotentialAlpha"

    @property
    def continuous(self) -> bool:
        return self in CONTINUOUS_KINDS

    @property
    def needs_visibility(self) -> bool:
        return self in LIMITED_VISIBILITY_KINDS


CONTINUOUS_KINDS = frozenset(
    {
        SystemKind.S1,
        SystemKind.S3,
        SystemKind.S5JE,
        SystemKind.S5,
        SystemKind.S7,
        SystemKind.S7_PROPORTIONAL,
        SystemKind.POTENTIAL_ALPHA,
    }
)
LIMITED_VISIBILITY_KINDS = frozenset(
    {
        SystemKind.S5JE,
        SystemKind.S5,
        SystemKind.S6,
        SystemKind.S7,
        SystemKind.S7_PROPORTIONAL,
        SystemKind.S8,
    }
)


def validate_params(kind: SystemKind, params: SystemParams, n: int) -> None:
    """Reject parameter sets a rule cannot run with; warn on unstable ones."""
    kind = SystemKind(kind)
    if kind.needs_visibility:
        params.require_finite_v()
    if kind in (SystemKind.S5, SystemKind.S5JE):
        params.require_delta()
    if kind is SystemKind.S1 and params.dt * params.sigma * n >= 1:
        raise ConfigurationError("S1 needs dt * sigma * n < 1 for a stable Euler step")
    if kind is SystemKind.S2 and params.sigma >= 2.0 / n:
        warnings.warn(
            f"S2 with sigma={params.sigma} >= 2/n={2.0 / n} does not converge",
            RuntimeWarning,
            stacklevel=2,
        )


# --- shared helpers --------------------------------------------------------


def _rest(n: int) -> np.ndarray:
    return np.zeros(n, dtype=bool)


def _outcome(c: Constellation, vectors: np.ndarray, dt: float = 0.0, **kw) -> StepOutcome:
    active = kw.pop("active", None)
    if active is None:
        active = np.ones(c.n, dtype=bool)
    locked = kw.pop("locked", None)
    if locked is None:
        locked = _rest(c.n)
    # Callers that snap agents together pass the exact positions: rebuilding
    # them as p + (q - p) can split a merged cluster by a rounding error.
    positions = kw.pop("positions", None)
    nxt = c.advance(c.positions + vectors if positions is None else positions, dt)
    return StepOutcome(nxt, vectors, np.asarray(active, bool), np.asarray(locked, bool), **kw)


def _differences(P: np.ndarray) -> np.ndarray:
    # diff[i, j] = p_i - p_j
    return P[:, None, :] - P[None, :, :]


def linear_velocity(P: np.ndarray, adjacency: np.ndarray) -> np.ndarray:
    """-sum_j a_ij (p_i - p_j)."""
    w = np.asarray(adjacency, dtype=float)
    return -np.einsum("ij,ijk->ik", w, _differences(P))


def bearing_velocity(P: np.ndarray, adjacency: np.ndarray) -> np.ndarray:
    """-sum_j a_ij u(p_i - p_j), with zero contribution from coincident pairs."""
    diff = _differences(P)
    dist = np.hypot(diff[..., 0], diff[..., 1])
    w = np.where((dist > 0) & np.asarray(adjacency, bool), 1.0, 0.0)
    safe = np.where(dist > 0, dist, 1.0)
    return -np.einsum("ij,ijk->ik", w, diff / safe[..., None])


def power_velocity(P: np.ndarray, adjacency: np.ndarray, alpha: float) -> np.ndarray:
    """-sum_j a_ij (p_i - p_j) / |p_i - p_j|^(2 - alpha)."""
    if not alpha > 0:
        raise ConfigurationError("alpha must be positive")
    if alpha == 2:
        return linear_velocity(P, adjacency)
    if alpha == 1:
        return bearing_velocity(P, adjacency)
    diff = _differences(P)
    dist = np.hypot(diff[..., 0], diff[..., 1])
    live = (dist > 0) & np.asarray(adjacency, bool)
    w = np.zeros_like(dist)
    w[live] = dist[live] ** (alpha - 2.0)
    return -np.einsum("ij,ijk->ik", w, diff)


def merge_close(P: np.ndarray, tol: float) -> np.ndarray:
    """Snap every cluster of agents linked by gaps <= tol onto its mean.

    Clusters are the connected components of the "closer than tol" relation,
    so the centroid is preserved up to rounding.
    """
    n = P.shape[0]
    if n < 2 or tol <= 0:
        return P
    d = pairwise_distances(P)
    close = d <= tol
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    ii, jj = np.nonzero(np.triu(close, 1))
    if ii.size == 0:
        return P
    for i, j in zip(ii.tolist(), jj.tolist()):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(n)])
    out = P.copy()
    for r in np.unique(roots):
        members = roots == r
        if members.sum() > 1:
            out[members] = P[members].mean(axis=0)
    return out


def _merged_outcome(c, vectors, dt, merge_tol, **kw) -> StepOutcome:
    moved = c.positions + vectors
    if merge_tol > 0:
        moved = merge_close(moved, merge_tol)
    return _outcome(c, moved - c.positions, dt, positions=moved, **kw)


def _active_mask(active, n) -> np.ndarray:
    if active is None:
        return np.ones(n, dtype=bool)
    mask = np.asarray(active, dtype=bool)
    if mask.shape != (n,):
        raise ConfigurationError(f"activation mask must have length {n}")
    return mask


# --- linear full-visibility rules -----------------------------------------


def step_s1(c: Constellation, params: SystemParams) -> StepOutcome:
    """Euler step of the linear attraction to every other agent."""
    n = c.n
    if params.dt * params.sigma * n >= 1:
        raise ConfigurationError("S1 needs dt * sigma * n < 1 for a stable Euler step")
    adj = ~np.eye(n, dtype=bool)
    vel = params.sigma * linear_velocity(c.positions, adj)
    return _outcome(c, params.dt * vel, params.dt)


def closed_form_s1(c0: Constellation, params: SystemParams, t: float) -> Constellation:
    """Exact linear-attraction state at time ``t``: exponential contraction
    towards the centroid at rate sigma * n."""
    P = c0.positions
    mean = P.mean(axis=0)
    factor = math.exp(-params.sigma * c0.n * t)
    return Constellation(mean + (P - mean) * factor, c0.step, c0.time + t)


def step_s2(
    c: Constellation,
    params: SystemParams,
    scaled: bool = False,
    active=None,
    sigma: Optional[float] = None,
) -> StepOutcome:
    """Discrete linear jump; ``scaled`` divides the gain by n.

    Inactive agents hold. ``sigma`` overrides ``params.sigma`` so that the
    degenerate gain 0 can be expressed.
    """
    n = c.n
    gain = params.sigma if sigma is None else float(sigma)
    if scaled:
        gain = gain / n
    mask = _active_mask(active, n)
    adj = ~np.eye(n, dtype=bool)
    vec = gain * linear_velocity(c.positions, adj)
    vec[~mask] = 0.0
    return _outcome(c, vec, active=mask)


# --- Laplacian family ------------------------------------------------------


def validate_laplacian(L, n: int, symmetric: bool = False) -> np.ndarray:
    M = np.asarray(L, dtype=float)
    if M.shape != (n, n):
        raise ConfigurationError(f"Laplacian must be {n}x{n}, got {M.shape}")
    scale = max(1.0, float(np.abs(M).max()))
    if np.abs(M.sum(axis=1)).max() > 1e-12 * scale * n:
        raise ConfigurationError("Laplacian rows must sum to zero")
    if symmetric:
        if not np.allclose(M, M.T, rtol=0, atol=1e-12 * scale):
            raise ConfigurationError("Laplacian must be symmetric")
        off = M - np.diag(np.diag(M))
        if off.max() > 1e-12 * scale:
            raise ConfigurationError("undirected Laplacian needs non-positive off-diagonals")
    return M


def graph_laplacian(adjacency) -> np.ndarray:
    A = np.asarray(adjacency, dtype=float)
    return np.diag(A.sum(axis=1)) - A


def step_laplacian(
    c: Constellation,
    L,
    sigma: float,
    mode: str = "discrete",
    dt: Optional[float] = None,
) -> StepOutcome:
    """P <- (I - sigma L) P, or its Euler analogue with step ``dt``."""
    M = validate_laplacian(L, c.n)
    drift = -sigma * (M @ c.positions)
    if mode == "discrete":
        return _outcome(c, drift)
    if mode == "continuous":
        if dt is None or not dt > 0:
            raise ConfigurationError("continuous mode needs dt > 0")
        return _outcome(c, dt * drift, dt)
    raise ConfigurationError(f"unknown Laplacian mode {mode!r}")


def eigen_trajectory(
    c0: Constellation,
    L,
    sigma: float,
    t: Optional[float] = None,
    k: Optional[int] = None,
) -> Constellation:
    """Spectral solution of the Laplacian dynamics.

    Pass ``t`` for continuous time or ``k`` for the number of discrete steps.
    """
    if (t is None) == (k is None):
        raise ConfigurationError("pass exactly one of t or k")
    M = validate_laplacian(L, c0.n, symmetric=True)
    lam, U = np.linalg.eigh(0.5 * (M + M.T))
    if t is not None:
        gains = np.exp(-sigma * lam * t)
        step, time = c0.step, c0.time + t
    else:
        gains = (1.0 - sigma * lam) ** int(k)
        step, time = c0.step + int(k), c0.time
    P = U @ (gains[:, None] * (U.T @ c0.positions))
    return Constellation(P, step, time)


# --- bearing-only full-visibility rules ------------------------------------


def step_s3(c: Constellation, params: SystemParams, merge: bool = True) -> StepOutcome:
    """Euler step of the unit-vector attraction.

    With ``merge`` agents that end the step within one step's travel of each
    other are snapped together, so they move as one afterwards instead of
    leaping back and forth across each other. The travel is the largest
    displacement of the step: sigma * dt for a lone pair, up to
    (n - 1) * sigma * dt once clusters have formed.
    """
    n = c.n
    adj = ~np.eye(n, dtype=bool)
    disp = params.dt * params.sigma * bearing_velocity(c.positions, adj)
    tol = step_travel(disp, params) if merge else 0.0
    return _merged_outcome(c, disp, params.dt, tol)


def step_travel(disp: np.ndarray, params: SystemParams) -> float:
    """Snap radius: the longest displacement, never below sigma * dt."""
    longest = float(np.hypot(disp[:, 0], disp[:, 1]).max()) if len(disp) else 0.0
    return max(params.sigma * params.dt, longest)


def step_s4(c: Constellation, params: SystemParams, active=None) -> StepOutcome:
    """Discrete jump by sigma times the sum of bearings to all others."""
    n = c.n
    mask = _active_mask(active, n)
    adj = ~np.eye(n, dtype=bool)
    vec = params.sigma * bearing_velocity(c.positions, adj)
    vec[~mask] = 0.0
    return _outcome(c, vec, active=mask)


def step_potential_alpha(
    c: Constellation,
    g: VisibilityGraph,
    params: SystemParams,
    alpha: float,
) -> StepOutcome:
    """Euler step of the power-law pair potential over graph ``g``."""
    if g.n != c.n:
        raise ConfigurationError("graph size does not match the constellation")
    vel = params.sigma * power_velocity(c.positions, g.adjacency, alpha)
    return _outcome(c, params.dt * vel, params.dt)


# --- limited-visibility rules ----------------------------------------------


def s5je_weight(l, V: float):
    """(2V - l) / (V - l)^2."""
    l = np.asarray(l, dtype=float)
    return (2.0 * V - l) / (V - l) ** 2


def step_s5je(c: Constellation, g: VisibilityGraph, params: SystemParams) -> StepOutcome:
    """Euler step of the edge-tension rule on the hysteresis graph ``g``.

    The returned outcome carries the updated graph.
    """
    V = params.require_finite_v()
    params.require_delta()
    if g.n != c.n:
        raise ConfigurationError("graph size does not match the constellation")
    P = c.positions
    d = pairwise_distances(P)
    adj = g.adjacency
    if adj.any() and d[adj].max() >= V - TOL_GEOM:
        raise IntegrationBlowupError(
            "an edge reached the visibility range; reduce dt"
        )
    w = np.where(adj, s5je_weight(np.where(adj, d, 0.0), V), 0.0)
    vel = -params.sigma * np.einsum("ij,ijk->ik", w, _differences(P))
    out = _outcome(c, params.dt * vel, params.dt)
    graph = build_visibility(out.next, params, "hysteresis", previous=g)
    return StepOutcome(
        out.next, out.step_vectors, out.active, out.locked, graph=graph
    )


def _wedge_or_none(apex, targets) -> Optional[geometry.Wedge]:
    if len(targets) == 0:
        return None
    try:
        return geometry.wedge_of(apex, targets)
    except GeometryError:
        return None


def _is_locked(w: geometry.Wedge) -> bool:
    return w.angle >= math.pi - TOL_GEOM


def s5_velocities(c: Constellation, params: SystemParams) -> tuple:
    """Instantaneous band rule velocities plus (wedge, locked) diagnostics."""
    V = params.require_finite_v()
    delta = params.require_delta()
    P = c.positions
    n = c.n
    d = pairwise_distances(P)
    nbr = (d > 0) & (d < V)
    band = nbr & (d >= V - delta)
    vel = np.zeros_like(P)
    wedge = np.full(n, np.nan)
    locked = _rest(n)
    for i in range(n):
        if not band[i].any():
            js = np.flatnonzero(nbr[i])
            vel[i] = params.sigma * (P[js] - P[i]).sum(axis=0)
            continue
        w = geometry.wedge_of(P[i], P[band[i]])
        wedge[i] = w.angle
        if _is_locked(w):
            locked[i] = True
        else:
            vel[i] = params.sigma * (w.u_right + w.u_left)
    return vel, wedge, locked


def step_s5(c: Constellation, params: SystemParams, mode: str = "continuous") -> StepOutcome:
    """Band rule: linear pull when no neighbour is near the range limit,
    otherwise move along the band's wedge unless it spans half a turn.

    ``mode="event-query"`` reports the velocities as ``step_vectors`` and
    leaves the constellation in place.
    """
    vel, wedge, locked = s5_velocities(c, params)
    if mode == "event-query":
        return StepOutcome(c, vel, np.ones(c.n, bool), locked, wedge=wedge)
    if mode != "continuous":
        raise ConfigurationError(f"unknown S5 mode {mode!r}")
    return _outcome(c, params.dt * vel, params.dt, wedge=wedge, locked=locked)


def step_s6(c: Constellation, params: SystemParams, active=None) -> StepOutcome:
    """Move towards the centre of the smallest circle around oneself and the
    visible neighbours, by the least of sigma, the remaining distance, and
    the largest step that keeps every neighbour visible."""
    V = params.require_finite_v()
    P = c.positions
    n = c.n
    mask = _active_mask(active, n)
    d = pairwise_distances(P)
    nbr = (d > 0) & (d < V)
    goal = np.zeros(n)
    limit = np.full(n, np.inf)
    size = np.zeros(n)
    vec = np.zeros_like(P)
    for i in range(n):
        js = np.flatnonzero(nbr[i])
        if js.size == 0:
            continue
        circle = geometry.min_enclosing_circle(np.vstack((P[i], P[js])))
        to_center = circle.center - P[i]
        goal[i] = math.hypot(to_center[0], to_center[1])
        if goal[i] == 0.0:
            continue
        u = to_center / goal[i]
        limit[i] = min(geometry.limit_ij(P[i], P[j], u, V) for j in js)
        size[i] = min(params.sigma, goal[i], limit[i])
        if mask[i]:
            vec[i] = size[i] * u
    size[~mask] = 0.0
    return _outcome(c, vec, active=mask, goal=goal, limit=limit, step_size=size)


def s7_velocities(c: Constellation, params: SystemParams, proportional: bool = False) -> tuple:
    """Bisector-rule velocities plus (wedge, locked, reach) diagnostics.

    ``reach[i]`` is how far agent i can travel along its heading before its
    wedge closes to half a turn, i.e. before it meets the line through its two
    extreme neighbours (infinite when the wedge is a single direction).
    """
    V = params.require_finite_v()
    P = c.positions
    n = c.n
    d = pairwise_distances(P)
    nbr = (d > 0) & (d < V)
    vel = np.zeros_like(P)
    wedge = np.full(n, np.nan)
    locked = _rest(n)
    reach = np.full(n, np.inf)
    for i in range(n):
        js = np.flatnonzero(nbr[i])
        w = _wedge_or_none(P[i], P[js])
        if w is None:
            continue
        wedge[i] = w.angle
        if _is_locked(w):
            locked[i] = True
            continue
        right = P[js[w.right_index]]
        left = P[js[w.left_index]]
        if proportional:
            vel[i] = params.sigma * (right + left - 2.0 * P[i])
            continue
        b = w.bisector
        vel[i] = params.sigma * b
        chord = left - right
        length = math.hypot(chord[0], chord[1])
        if w.angle > 0 and length > 0:
            normal = np.array([-chord[1], chord[0]]) / length
            gap = float((right - P[i]) @ normal)
            rate = float(b @ normal)
            if gap * rate > 0:
                reach[i] = gap / rate
    return vel, wedge, locked, reach


def step_s7(
    c: Constellation,
    params: SystemParams,
    proportional: bool = False,
    merge: bool = True,
) -> StepOutcome:
    """Euler step along the bisector of each agent's neighbour wedge.

    Agents whose wedge spans half a turn or more hold still (locked). The
    lock state is read once from the pre-step snapshot. The field is
    discontinuous where a wedge closes, so a unit-speed step is clipped at
    the line through the agent's extreme neighbours. An agent whose heading
    would still reverse, or which would become locked, by the end of the step
    holds for this step and is flagged in ``chatter``.
    """
    vel, wedge, locked, reach = s7_velocities(c, params, proportional)
    tol = params.sigma * params.dt if merge else 0.0
    P = c.positions
    disp = params.dt * vel
    if not proportional:
        travel = params.sigma * params.dt
        clip = reach < travel
        disp[clip] *= (reach[clip] / travel)[:, None]
    moved = P + disp
    if tol > 0:
        moved = merge_close(moved, tol)
    trial = Constellation(moved, c.step, c.time)
    vel_after, _, locked_after, _ = s7_velocities(trial, params, proportional)
    # Agents snapped together during this step have no heading to compare.
    merged = np.zeros(c.n, dtype=bool)
    if tol > 0:
        fresh = (pairwise_distances(moved) == 0) & (pairwise_distances(P) > 0)
        merged = fresh.any(axis=1)
    moving = np.hypot(disp[:, 0], disp[:, 1]) > 0
    reversed_ = np.einsum("ij,ij->i", vel, vel_after) < 0
    chatter = moving & ~merged & (reversed_ | locked_after)
    if chatter.any():
        moved[chatter] = P[chatter]
        if tol > 0:
            moved = merge_close(moved, tol)
    return _outcome(
        c, moved - P, params.dt, positions=moved, wedge=wedge, locked=locked, chatter=chatter
    )


RngLike = Union[int, np.random.Generator, None]


def _agent_rngs(rng: RngLike, step: int, n: int) -> list:
    if isinstance(rng, np.random.Generator):
        return rng.spawn(n)
    seed = 0 if rng is None else int(rng)
    return [derived_rng(seed, step, i, STREAM_MOTION) for i in range(n)]


def step_s8(
    c: Constellation,
    params: SystemParams,
    activation=None,
    rng: RngLike = None,
    variant: str = "randomized",
) -> StepOutcome:
    """Discrete move inside the allowable region.

    ``randomized`` jumps to a uniform point of the region; ``deterministic``
    jumps along the wedge bisector by min(sigma, chord of the region). ``rng``
    is a master seed (per-agent streams keyed by step and agent) or a
    Generator that is split per agent.
    """
    if variant not in ("randomized", "deterministic"):
        raise ConfigurationError(f"unknown S8 variant {variant!r}")
    V = params.require_finite_v()
    n = c.n
    mask = _active_mask(activation, n)
    P = c.positions
    g = build_visibility(c, params, "v-disk")
    vec = np.zeros_like(P)
    wedge = np.full(n, np.nan)
    locked = _rest(n)
    size = np.zeros(n)
    rngs = _agent_rngs(rng, c.step, n) if variant == "randomized" and mask.any() else None
    for i in range(n):
        js = g.neighbors(i)
        w = _wedge_or_none(P[i], P[js])
        if w is None:
            continue
        wedge[i] = w.angle
        if _is_locked(w):
            locked[i] = True
            continue
        if not mask[i]:
            continue
        region = geometry.allowable_region(i, c, g, params)
        if variant == "randomized":
            point, _ = geometry.sample_uniform(region, rngs[i])
            vec[i] = point - P[i]
        else:
            b = w.bisector
            size[i] = min(params.sigma, geometry.bisector_chord(region, b))
            vec[i] = size[i] * b
    size = np.where(variant == "deterministic", size, np.hypot(vec[:, 0], vec[:, 1]))
    return _outcome(c, vec, active=mask, wedge=wedge, locked=locked, step_size=size)
