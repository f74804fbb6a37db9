"""Domain types shared by every system: constellations, parameters, visibility."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

# Absolute tolerance for every geometric predicate (distance units).
TOL_GEOM = 1e-9

VISIBILITY_MODES = ("complete", "fixed", "v-disk", "hysteresis")


class ConfigurationError(ValueError):
    """Invalid parameters or inputs for a system."""


class IntegrationBlowupError(RuntimeError):
    """A continuous system reached a singularity of its vector field."""


class GeometryError(ValueError):
    """A geometric query with no meaningful answer (e.g. no directions)."""


def as_point(p) -> np.ndarray:
    arr = np.asarray(p, dtype=float).reshape(2)
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"non-finite point {arr!r}")
    return arr


def as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1 and arr.size == 2:
        arr = arr.reshape(1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ConfigurationError(f"expected an (n, 2) array of points, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError("points must be finite")
    return arr


@dataclass(frozen=True, eq=False)
class Constellation:
    """Positions of ``n`` agents at one instant.

    Agent identity is the row index. ``step`` counts discrete updates and
    ``time`` is the continuous clock (``step * dt`` for integrated systems).
    """

    positions: np.ndarray
    step: int = 0
    time: float = 0.0

    def __post_init__(self):
        arr = as_points(self.positions).copy()
        if arr.shape[0] < 1:
            raise ConfigurationError("a constellation needs at least one agent")
        arr.setflags(write=False)
        object.__setattr__(self, "positions", arr)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def advance(self, positions, dt: float = 0.0) -> "Constellation":
        new = Constellation(positions, self.step + 1, self.time + dt)
        if new.n != self.n:
            raise ConfigurationError("agent count is fixed for the life of a run")
        return new

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other) -> bool:
        if not isinstance(other, Constellation):
            return NotImplemented
        return (
            self.step == other.step
            and self.time == other.time
            and np.array_equal(self.positions, other.positions)
        )

    __hash__ = None


@dataclass(frozen=True)
class SystemParams:
    """Rule parameters.

    sigma: gain, speed or maximal step depending on the system.
    V: visibility range (``math.inf`` for full visibility).
    delta: band width for the limited-visibility continuous systems.
    rho: per-agent activation probability.
    dt: Euler step for continuous systems.
    epsilon_gather: point-gathering tolerance.
    """

    sigma: float = 1.0
    V: float = math.inf
    delta: Optional[float] = None
    rho: float = 1.0
    dt: float = 1e-3
    epsilon_gather: float = 1e-6

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigurationError("sigma must be positive")
        if not self.V > 0:
            raise ConfigurationError("V must be positive")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if not 0 < self.rho <= 1:
            raise ConfigurationError("rho must lie in (0, 1]")
        if not self.epsilon_gather > 0:
            raise ConfigurationError("epsilon_gather must be positive")
        if self.delta is not None and not 0 < self.delta < self.V:
            raise ConfigurationError("delta must satisfy 0 < delta < V")

    def require_delta(self) -> float:
        if self.delta is None:
            raise ConfigurationError("this system needs a band width delta")
        return self.delta

    def require_finite_v(self) -> float:
        if not math.isfinite(self.V):
            raise ConfigurationError("this system needs a finite visibility range V")
        return self.V


@dataclass(frozen=True, eq=False)
class VisibilityGraph:
    """Symmetric, irreflexive neighbour relation over agent indices."""

    adjacency: np.ndarray
    mode: str = "fixed"

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=bool).copy()
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ConfigurationError("adjacency must be square")
        if not np.array_equal(adj, adj.T):
            raise ConfigurationError("adjacency must be symmetric")
        if np.any(np.diag(adj)):
            raise ConfigurationError("adjacency must be irreflexive")
        if self.mode not in VISIBILITY_MODES:
            raise ConfigurationError(f"unknown visibility mode {self.mode!r}")
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])

    def edges(self) -> set:
        ii, jj = np.nonzero(np.triu(self.adjacency, 1))
        return set(zip(ii.tolist(), jj.tolist()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, VisibilityGraph):
            return NotImplemented
        return self.mode == other.mode and np.array_equal(self.adjacency, other.adjacency)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class StepOutcome:
    """Next constellation plus per-agent diagnostics of one update.

    Scalar diagnostics that do not apply to a system (or an agent) are NaN.
    ``graph`` carries the updated neighbour memory of systems that own one;
    ``chatter`` marks agents held because their heading flipped within the step.
    """

    next: Constellation
    step_vectors: np.ndarray
    active: np.ndarray
    locked: np.ndarray
    wedge: np.ndarray = field(default=None)
    goal: np.ndarray = field(default=None)
    limit: np.ndarray = field(default=None)
    step_size: np.ndarray = field(default=None)
    graph: Optional[VisibilityGraph] = None
    chatter: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.next.n
        nan = np.full(n, np.nan)
        for name in ("wedge", "goal", "limit", "step_size"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, nan.copy())
        if self.chatter is None:
            object.__setattr__(self, "chatter", np.zeros(n, dtype=bool))
        for name in ("step_vectors", "active", "locked", "wedge", "goal", "limit", "step_size", "chatter"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} must have one entry per agent")


def pairwise_distances(positions: np.ndarray) -> np.ndarray:
    diff = positions[:, None, :] - positions[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def centroid(c: Constellation) -> np.ndarray:
    return c.positions.mean(axis=0)


def diameter(c) -> float:
    P = c.positions if isinstance(c, Constellation) else as_points(c)
    if P.shape[0] < 2:
        return 0.0
    return float(pairwise_distances(P).max())


def build_visibility(
    c: Constellation,
    params: SystemParams,
    mode: str = "v-disk",
    previous: Optional[VisibilityGraph] = None,
    adjacency=None,
) -> VisibilityGraph:
    """Neighbour graph of ``c`` under the chosen mode.

    ``v-disk`` links agents at distance in (0, V); ``hysteresis`` keeps every
    previous edge and adds pairs at distance ``<= V - delta`` (the first call,
    with ``previous=None``, also admits every pair closer than V).
    """
    n = c.n
    if mode == "complete":
        adj = ~np.eye(n, dtype=bool)
    elif mode == "fixed":
        if adjacency is None:
            raise ConfigurationError("fixed mode needs an adjacency matrix")
        adj = np.asarray(adjacency, dtype=bool)
        if adj.shape != (n, n):
            raise ConfigurationError("adjacency dimension does not match the constellation")
    elif mode == "v-disk":
        if not params.V > 0:
            raise ConfigurationError("V must be positive")
        d = pairwise_distances(c.positions)
        adj = (d > 0) & (d < params.V)
    elif mode == "hysteresis":
        V = params.require_finite_v()
        delta = params.require_delta()
        d = pairwise_distances(c.positions)
        off = ~np.eye(n, dtype=bool)
        adj = (d <= V - delta) & off
        if previous is None:
            adj |= (d < V) & off
        else:
            if previous.n != n:
                raise ConfigurationError("previous graph has the wrong size")
            adj |= previous.adjacency
    else:
        raise ConfigurationError(f"unknown visibility mode {mode!r}")
    return VisibilityGraph(adj, mode)


def is_connected(g: VisibilityGraph) -> bool:
    n = g.n
    if n <= 1:
        return True
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in g.neighbors(i):
            if not seen[j]:
                seen[j] = True
                queue.append(j)
    return bool(seen.all())


def constellation(points: Sequence, step: int = 0, time: float = 0.0) -> Constellation:
    return Constellation(as_points(points), step, time)
