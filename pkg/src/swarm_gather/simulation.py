"""Run loop: pair a rule with a schedule, iterate, record, and audit."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import dynamics as dyn
from . import monitors as mon
from .core import (
    TOL_GEOM,
    ConfigurationError,
    Constellation,
    SystemParams,
    VisibilityGraph,
    build_visibility,
)
from .dynamics import SystemKind
from .scheduler import Schedule, activation_mask

# Rules whose activation mask is honoured; the others require synchrony.
MASKABLE = frozenset({SystemKind.S2, SystemKind.S2_SCALED, SystemKind.S4, SystemKind.S6, SystemKind.S8})

CENTROID_KINDS = frozenset(
    {
        SystemKind.S1,
        SystemKind.S2,
        SystemKind.S2_SCALED,
        SystemKind.S3,
        SystemKind.S4,
        SystemKind.LAPLACIAN,
        SystemKind.POTENTIAL_ALPHA,
    }
)
HULL_KINDS = frozenset(
    {
        SystemKind.S1,
        SystemKind.S3,
        SystemKind.S5,
        SystemKind.S6,
        SystemKind.S7,
        SystemKind.S7_PROPORTIONAL,
        SystemKind.S8,
    }
)
NEVER_LOSE_KINDS = frozenset(
    {
        SystemKind.S5,
        SystemKind.S5JE,
        SystemKind.S6,
        SystemKind.S7,
        SystemKind.S7_PROPORTIONAL,
        SystemKind.S8,
    }
)


@dataclass(frozen=True)
class System:
    """A rule plus everything it needs besides the state.

    ``laplacian``/``laplacian_mode`` apply to the Laplacian family,
    ``alpha``/``graph`` to the power-law potential family (``graph`` is
    ``"complete"`` or ``"v-disk"``), ``variant`` to S8.
    """

    kind: SystemKind
    params: SystemParams = field(default_factory=SystemParams)
    laplacian: Optional[np.ndarray] = None
    laplacian_mode: str = "discrete"
    alpha: Optional[float] = None
    graph: str = "complete"
    variant: str = "randomized"
    merge: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", SystemKind(self.kind))
        if self.kind is SystemKind.LAPLACIAN:
            if self.laplacian is None:
                raise ConfigurationError("the Laplacian rule needs a matrix")
            if self.laplacian_mode not in ("discrete", "continuous"):
                raise ConfigurationError(f"unknown Laplacian mode {self.laplacian_mode!r}")
            object.__setattr__(self, "laplacian", np.asarray(self.laplacian, dtype=float))
        if self.kind is SystemKind.POTENTIAL_ALPHA:
            if self.alpha is None or not self.alpha > 0:
                raise ConfigurationError("the potential rule needs alpha > 0")
            if self.graph not in ("complete", "v-disk"):
                raise ConfigurationError(f"unknown potential graph {self.graph!r}")
        if self.kind is SystemKind.S8 and self.variant not in ("randomized", "deterministic"):
            raise ConfigurationError(f"unknown S8 variant {self.variant!r}")

    @property
    def continuous(self) -> bool:
        if self.kind is SystemKind.LAPLACIAN:
            return self.laplacian_mode == "continuous"
        return self.kind.continuous

    def validate(self, n: int) -> None:
        dyn.validate_params(self.kind, self.params, n)
        if self.kind is SystemKind.LAPLACIAN:
            dyn.validate_laplacian(self.laplacian, n)
        if self.kind is SystemKind.POTENTIAL_ALPHA and self.graph == "v-disk":
            self.params.require_finite_v()

    def initial_graph(self, c: Constellation) -> Optional[VisibilityGraph]:
        if self.kind is SystemKind.S5JE:
            return build_visibility(c, self.params, "hysteresis")
        if self.kind is SystemKind.POTENTIAL_ALPHA:
            return build_visibility(c, self.params, self.graph)
        return None

    def step(
        self,
        c: Constellation,
        mask: np.ndarray,
        graph: Optional[VisibilityGraph],
        seed: int,
    ):
        p = self.params
        k = self.kind
        if k is SystemKind.S1:
            return dyn.step_s1(c, p)
        if k is SystemKind.S2:
            return dyn.step_s2(c, p, scaled=False, active=mask)
        if k is SystemKind.S2_SCALED:
            return dyn.step_s2(c, p, scaled=True, active=mask)
        if k is SystemKind.S3:
            return dyn.step_s3(c, p, merge=self.merge)
        if k is SystemKind.S4:
            return dyn.step_s4(c, p, active=mask)
        if k is SystemKind.S5JE:
            return dyn.step_s5je(c, graph, p)
        if k is SystemKind.S5:
            return dyn.step_s5(c, p)
        if k is SystemKind.S6:
            return dyn.step_s6(c, p, active=mask)
        if k is SystemKind.S7:
            return dyn.step_s7(c, p, proportional=False, merge=self.merge)
        if k is SystemKind.S7_PROPORTIONAL:
            return dyn.step_s7(c, p, proportional=True, merge=self.merge)
        if k is SystemKind.S8:
            return dyn.step_s8(c, p, mask, rng=seed, variant=self.variant)
        if k is SystemKind.LAPLACIAN:
            return dyn.step_laplacian(c, self.laplacian, p.sigma, self.laplacian_mode, p.dt)
        if k is SystemKind.POTENTIAL_ALPHA:
            g = graph if self.graph == "complete" else build_visibility(c, p, "v-disk")
            return dyn.step_potential_alpha(c, g, p, self.alpha)
        raise ConfigurationError(f"unsupported system {k}")  # pragma: no cover


@dataclass
class TrajectoryRecord:
    """Everything one run produced.

    ``positions`` has one entry per recorded state (initial state included);
    ``active``/``locked`` row k describe the update that produced state k, so
    row 0 is all False. ``chatter`` marks agents held because their heading
    flipped within a step.
    """

    system: System
    schedule: Schedule
    seed: int
    positions: np.ndarray
    times: np.ndarray
    active: np.ndarray
    locked: np.ndarray
    status: str
    graphs: Optional[list] = None
    chatter: Optional[np.ndarray] = None
    report: mon.MonitorReport = field(default_factory=mon.MonitorReport)
    richardson_error: Optional[float] = None

    @property
    def n(self) -> int:
        return self.positions.shape[1]

    @property
    def steps(self) -> int:
        return self.positions.shape[0] - 1

    def constellation(self, k: int = -1) -> Constellation:
        k = k if k >= 0 else self.positions.shape[0] + k
        return Constellation(self.positions[k], k, float(self.times[k]))

    @property
    def final(self) -> Constellation:
        return self.constellation(-1)


STATUS_GATHERED = "gathered"
STATUS_COMPLETED = "completed"
STATUS_BUDGET = "budget-exhausted"


def run(
    system: System,
    c0: Constellation,
    schedule: Optional[Schedule] = None,
    max_steps: int = 1000,
    stop: str = "gathered",
    gather_mode: str = "point",
    monitors: Optional[Sequence[str]] = None,
    seed: Optional[int] = None,
    audit: bool = True,
) -> TrajectoryRecord:
    """Iterate ``system`` from ``c0``.

    ``stop="gathered"`` ends at the first gathered state; ``stop="budget"``
    always runs ``max_steps``. ``monitors`` names the series to record
    (default: all that apply). With ``audit`` the invariants that hold for
    this rule are checked and logged in the report.
    """
    if stop not in ("gathered", "budget"):
        raise ConfigurationError(f"unknown stop condition {stop!r}")
    schedule = schedule or Schedule.synchronous()
    seed = schedule.seed if seed is None else int(seed)
    n = c0.n
    system.validate(n)
    if not schedule.is_synchronous and system.kind not in MASKABLE:
        raise ConfigurationError(f"{system.kind.value} only runs synchronously")
    params = system.params
    dt = params.dt if system.continuous else 0.0

    c = Constellation(c0.positions, 0, 0.0)
    graph = system.initial_graph(c)
    positions = [c.positions]
    times = [0.0]
    active = [np.zeros(n, bool)]
    locked = [np.zeros(n, bool)]
    chatter = [np.zeros(n, bool)]
    graphs = [graph] if graph is not None and system.kind is SystemKind.S5JE else None

    status = STATUS_COMPLETED if stop == "budget" else STATUS_BUDGET
    if stop == "gathered" and mon.check_gathered(c, params, gather_mode):
        status = STATUS_GATHERED
    else:
        for k in range(max_steps):
            mask = activation_mask(schedule, k, n)
            out = system.step(c, mask, graph, seed)
            # Advance the clock by hand: a continuous step's dt lives in out.
            c = Constellation(out.next.positions, k + 1, c.time + dt)
            if out.graph is not None:
                graph = out.graph
            positions.append(c.positions)
            times.append(c.time)
            active.append(np.asarray(out.active, bool))
            locked.append(np.asarray(out.locked, bool))
            chatter.append(np.asarray(out.chatter, bool))
            if graphs is not None:
                graphs.append(graph)
            if stop == "gathered" and mon.check_gathered(c, params, gather_mode):
                status = STATUS_GATHERED
                break

    X = np.stack(positions)
    rec = TrajectoryRecord(
        system=system,
        schedule=schedule,
        seed=seed,
        positions=X,
        times=np.asarray(times),
        active=np.stack(active),
        locked=np.stack(locked),
        status=status,
        graphs=graphs,
        chatter=np.stack(chatter),
    )
    names = mon.ALL_SERIES if monitors is None else list(monitors)
    unknown = set(names) - set(mon.ALL_SERIES)
    if unknown:
        raise ConfigurationError(f"unknown monitors: {sorted(unknown)}")
    alpha = system.alpha if system.kind is SystemKind.POTENTIAL_ALPHA else None
    if alpha is None and "L2_alpha" in names and system.kind is SystemKind.S1:
        alpha = 2.0
    rec.report.series = mon.compute_series(
        X, params, names, graphs=graphs, locked=rec.locked, alpha=alpha
    )
    if audit:
        rec.report.violations = audit_invariants(rec)
    return rec


def audit_invariants(rec: TrajectoryRecord) -> list:
    """Check the invariants that the rule is known to satisfy."""
    system, X = rec.system, rec.positions
    kind = system.kind
    params = system.params
    sync = rec.schedule.is_synchronous
    out = []
    if kind in CENTROID_KINDS and sync and _centroid_conserving(system):
        out += mon.check_centroid_invariance(X.mean(axis=1), 1e-10)
    if kind in HULL_KINDS:
        out += mon.check_hull_containment(X, TOL_GEOM)
        L3 = rec.report.series.get("L3")
        if L3 is None:
            L3 = np.array([mon.hull_perimeter_of(x) for x in X])
        out += mon.check_monotone(L3, "nonincreasing", TOL_GEOM, "L3_increase")
    if kind in NEVER_LOSE_KINDS:
        slack = 2.0 * params.dt * params.sigma if system.continuous else TOL_GEOM
        out += mon.check_never_lose(X, params.V, slack, graphs=rec.graphs)
        if rec.graphs is not None:
            out += mon.check_edges_monotone(rec.graphs)
    out.sort(key=lambda v: (v.step, v.name))
    return out


def _centroid_conserving(system: System) -> bool:
    if system.kind is not SystemKind.LAPLACIAN:
        return True
    L = system.laplacian
    return bool(np.abs(L.sum(axis=0)).max() <= 1e-12 * max(1.0, np.abs(L).max()))


def richardson_error(system: System, c0: Constellation, steps: int) -> float:
    """Endpoint gap between ``steps`` Euler steps and ``2*steps`` at dt/2."""
    if not system.continuous:
        return 0.0
    coarse = run(system, c0, max_steps=steps, stop="budget", monitors=[], audit=False)
    fine_sys = replace(system, params=replace(system.params, dt=system.params.dt / 2.0))
    fine = run(fine_sys, c0, max_steps=2 * steps, stop="budget", monitors=[], audit=False)
    return float(np.abs(coarse.positions[-1] - fine.positions[-1]).max())
