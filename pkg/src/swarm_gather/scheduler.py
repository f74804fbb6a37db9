"""Activation policies and counter-based randomness."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ConfigurationError

SCHEDULE_KINDS = ("synchronous", "bernoulli", "scripted")

# Stream tags keep independent draws for the same (step, agent) apart.
STREAM_ACTIVATION = 0
STREAM_MOTION = 1


def derived_rng(seed: int, step: int, agent: int = -1, stream: int = 0) -> np.random.Generator:
    """Generator keyed by (seed, step, agent, stream).

    Any draw depends only on its key, never on how many other draws were
    made before it, so adding or removing consumers does not shift a run.
    """
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, int(step), int(agent) + 1, int(stream)]
    return np.random.default_rng(np.random.SeedSequence(key))


@dataclass(frozen=True)
class Schedule:
    kind: str = "synchronous"
    rho: float = 1.0
    masks: tuple = field(default=())
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigurationError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "bernoulli" and not 0 < self.rho <= 1:
            raise ConfigurationError("bernoulli rho must lie in (0, 1]")
        if self.kind == "scripted":
            if not self.masks:
                raise ConfigurationError("scripted schedule needs at least one mask")
            masks = tuple(tuple(bool(x) for x in m) for m in self.masks)
            if len({len(m) for m in masks}) != 1:
                raise ConfigurationError("scripted masks must all have the same length")
            object.__setattr__(self, "masks", masks)

    @classmethod
    def synchronous(cls, seed: int = 0) -> "Schedule":
        return cls("synchronous", seed=seed)

    @classmethod
    def bernoulli(cls, rho: float, seed: int = 0) -> "Schedule":
        return cls("bernoulli", rho=rho, seed=seed)

    @classmethod
    def scripted(cls, masks, seed: int = 0) -> "Schedule":
        return cls("scripted", masks=tuple(masks), seed=seed)

    @property
    def is_synchronous(self) -> bool:
        if self.kind == "synchronous":
            return True
        if self.kind == "bernoulli":
            return self.rho == 1.0
        return all(all(m) for m in self.masks)


def activation_mask(
    s: Schedule, step: int, n: int, rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """Which agents act at ``step``.

    Bernoulli draws come from ``rng`` when given, else from the generator
    keyed by the schedule seed and the step.
    """
    if s.kind == "synchronous":
        return np.ones(n, dtype=bool)
    if s.kind == "scripted":
        mask = s.masks[step % len(s.masks)]
        if len(mask) != n:
            raise ConfigurationError(f"scripted mask has length {len(mask)}, expected {n}")
        return np.array(mask, dtype=bool)
    if rng is None:
        rng = derived_rng(s.seed, step, stream=STREAM_ACTIVATION)
    return rng.random(n) < s.rho


def delta_lower_bound(s: Schedule, n: int) -> float:
    """Smallest probability of any particular active set, (min(rho, 1-rho))**n.

    Zero at rho = 1: only the full set can ever be active.
    """
    if s.kind != "bernoulli":
        raise ConfigurationError("delta_lower_bound is defined for bernoulli schedules only")
    return min(s.rho, 1.0 - s.rho) ** n
