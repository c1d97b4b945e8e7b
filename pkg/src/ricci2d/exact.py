"""Closed-form Ricci flows and the maximal existence time.

These flows serve as oracles for the solver, as Dirichlet data and as
barriers.  Each satisfies ``du/dt = exp(-2u) lap(u) = -K`` exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    Chart,
    ConformalField,
    DomainError,
    HyperbolicModel,
    apply_laplacian,
)


class TimeDomainError(DomainError):
    pass


@dataclass(frozen=True)
class ExactFlow:
    """Base class; subclasses give ``u`` as a function of ``(t, |z|)``."""

    name = "exact"

    def check_time(self, t: float) -> None:
        lo, hi, lo_open, hi_open = self.time_domain
        if t < lo or t > hi or (lo_open and t == lo) or (hi_open and t == hi):
            raise TimeDomainError(f"t = {t} outside the time domain of {self.name}")

    @property
    def time_domain(self) -> tuple[float, float, bool, bool]:
        return (-math.inf, math.inf, False, False)

    def contains(self, r) -> np.ndarray:
        return np.ones(np.shape(r), dtype=bool)

    def u(self, t: float, r) -> np.ndarray:
        raise NotImplementedError

    def u_t(self, t: float, r) -> np.ndarray:
        raise NotImplementedError

    def curvature(self, t: float, r) -> np.ndarray:
        return -self.u_t(t, r)


@dataclass(frozen=True)
class BigBang(ExactFlow):
    """``u = h + log(2t)/2``: the flow ``2t H`` emerging from the zero metric."""

    model: HyperbolicModel
    name = "bigbang"

    @property
    def time_domain(self):
        return (0.0, math.inf, True, False)

    def contains(self, r):
        return self.model.contains(r)

    def u(self, t, r):
        self.check_time(t)
        return self.model.h(r) + 0.5 * math.log(2.0 * t)

    def u_t(self, t, r):
        self.check_time(t)
        return np.full(np.shape(r), 1.0 / (2.0 * t))


@dataclass(frozen=True)
class ExpandingHyperbolic(ExactFlow):
    """``u = h + log(2t + M)/2``, starting from ``M H``."""

    model: HyperbolicModel
    M: float
    name = "expanding_hyperbolic"

    def __post_init__(self):
        if not self.M > 0:
            raise ValueError("M must be positive")

    @property
    def time_domain(self):
        return (0.0, math.inf, False, False)

    def contains(self, r):
        return self.model.contains(r)

    def u(self, t, r):
        self.check_time(t)
        return self.model.h(r) + 0.5 * math.log(2.0 * t + self.M)

    def u_t(self, t, r):
        self.check_time(t)
        return np.full(np.shape(r), 1.0 / (2.0 * t + self.M))


@dataclass(frozen=True)
class ShrinkingSphere(ExactFlow):
    """Round unit sphere in stereographic coordinates, extinct at ``t = 1/2``."""

    name = "shrinking_sphere"

    @property
    def time_domain(self):
        return (0.0, 0.5, False, True)

    def u(self, t, r):
        self.check_time(t)
        r = np.asarray(r, dtype=float)
        return np.log(2.0 / (1.0 + r * r)) + 0.5 * math.log(1.0 - 2.0 * t)

    def u_t(self, t, r):
        self.check_time(t)
        return np.full(np.shape(r), -1.0 / (1.0 - 2.0 * t))


@dataclass(frozen=True)
class FlatStatic(ExactFlow):
    name = "flat"

    def u(self, t, r):
        return np.zeros(np.shape(r))

    def u_t(self, t, r):
        return np.zeros(np.shape(r))


def sphere_factor(r) -> np.ndarray:
    """Conformal factor of the unit round sphere, area 4*pi."""
    r = np.asarray(r, dtype=float)
    return np.log(2.0 / (1.0 + r * r))


def eval_exact(flow: ExactFlow, t: float, chart: Chart) -> ConformalField:
    flow.check_time(t)
    act = chart.active
    r = chart.r[act]
    if not np.all(flow.contains(r)):
        raise DomainError(f"chart reaches outside the spatial domain of {flow.name}")
    u = np.zeros(chart.shape)
    u[act] = flow.u(t, r)
    return ConformalField(chart, u)


def pde_residual(flow: ExactFlow, t: float, chart: Chart, delta: float | None = None) -> float:
    """Sup over interior nodes of ``|central u_t - exp(-2u) lap_h(u)|``.

    The time derivative is a central difference with step ``delta``
    (default ``dx**2``).
    """
    if delta is None:
        delta = chart.dx**2
    lo = eval_exact(flow, t - delta, chart).u
    hi = eval_exact(flow, t + delta, chart).u
    mid = eval_exact(flow, t, chart).u
    ut = (hi - lo) / (2.0 * delta)
    rhs = np.exp(-2.0 * mid) * apply_laplacian(chart, mid)
    inner = chart.interior
    return float(np.max(np.abs(ut - rhs)[inner]))


SPHERE = "sphere"
PLANE = "plane"
HYPERBOLIC_TYPE = "hyperbolic"


@dataclass(frozen=True)
class TopologyTag:
    """Conformal type of a surface together with its initial area."""

    kind: str
    volume: float = math.inf

    def __post_init__(self):
        if self.kind not in (SPHERE, PLANE, HYPERBOLIC_TYPE):
            raise ValueError(f"unknown topology {self.kind!r}")
        if not self.volume > 0:
            raise ValueError("volume must be positive")
        if self.kind == SPHERE and math.isinf(self.volume):
            raise ValueError("a sphere has finite volume")


def maximal_time(tag: TopologyTag) -> float:
    """Maximal existence time of the instantaneously complete flow."""
    if tag.kind == SPHERE:
        return tag.volume / (8.0 * math.pi)
    if tag.kind == PLANE:
        return tag.volume / (4.0 * math.pi)
    return math.inf


def volume_loss_rate(tag: TopologyTag) -> float:
    """Constant ``-dVol/dt`` while a finite-volume flow exists."""
    return 8.0 * math.pi if tag.kind == SPHERE else 4.0 * math.pi
