"""Time integration of the conformal Ricci flow ``du/dt = exp(-2u) lap(u)``.

Interior nodes evolve; boundary nodes carry Dirichlet data from a
:class:`BoundaryPolicy`.  Two schemes are available:

``explicit_rk2``
    Two-stage SSP Runge-Kutta on the ``u`` form, time step limited by
    ``dt <= cfl_safety * dx^2 / (4 max exp(-2u))``.
``implicit_euler``
    Backward Euler on the logarithmic fast diffusion form
    ``d/dt exp(2u) = 2 lap(u)``, solved by Newton's method.  The discrete
    operator is an M-function, so the scheme obeys a discrete comparison
    principle for every step size and conserves volume up to boundary flux.

The drivers :func:`exhaustion_solve` and :func:`plane_solve` run families of
such simulations on growing discs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import splu

from .exact import ExactFlow
from .geometry import (
    Chart,
    ChartError,
    ConformalField,
    HyperbolicModel,
    apply_laplacian,
)

log = logging.getLogger(__name__)

# relative slack when matching a step time to a requested sample time
_TIME_MATCH = 1e-9
# largest Newton update (in u) applied in one iteration
_NEWTON_MAX_UPDATE = 2.0


class Scheme(str, Enum):
    EXPLICIT_RK2 = "explicit_rk2"
    IMPLICIT_EULER = "implicit_euler"


class StepRefused(RuntimeError):
    """A time step could not be taken; ``t`` is the last good time."""

    def __init__(self, reason: str, t: float):
        super().__init__(f"{reason} (last good t = {t!r})")
        self.reason = reason
        self.t = t


@dataclass(frozen=True)
class StepControl:
    scheme: Scheme = Scheme.IMPLICIT_EULER
    dt_max: float = 1e-2
    dt_min: float = 1e-12
    cfl_safety: float = 0.2
    newton_tol: float = 1e-10
    newton_max_iters: int = 30

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if not 0 < self.dt_min <= self.dt_max:
            raise ValueError("need 0 < dt_min <= dt_max")
        if self.newton_tol <= 0 or self.newton_max_iters < 1:
            raise ValueError("invalid Newton settings")

    def scaled(self, factor: float) -> StepControl:
        return replace(self, dt_max=self.dt_max * factor, dt_min=min(self.dt_min, self.dt_max * factor))


# -- boundary policies ----------------------------------------------------------


class BoundaryPolicy:
    """Dirichlet data on the boundary nodes of a chart."""

    def values(self, chart: Chart, t: float, current: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class DirichletExact(BoundaryPolicy):
    flow: ExactFlow

    def values(self, chart, t, current):
        return self.flow.u(t, chart.r[chart.boundary])


@dataclass(frozen=True)
class DirichletBarrier(BoundaryPolicy):
    """Boundary pinned to ``h + log(2t + M)/2`` for a hyperbolic model ``h``."""

    model: HyperbolicModel
    M: float

    def __post_init__(self):
        if self.M < 0:
            raise ValueError("barrier offset M must be non-negative")

    def values(self, chart, t, current):
        r = chart.r[chart.boundary]
        if not np.all(self.model.contains(r)):
            raise ChartError("chart boundary leaves the domain of the barrier model")
        return self.model.h(r) + 0.5 * math.log(2.0 * t + self.M)


@dataclass(frozen=True)
class DirichletFrozen(BoundaryPolicy):
    """Boundary kept at its initial values."""

    def values(self, chart, t, current):
        return current.reshape(chart.shape)[chart.boundary]


# -- states and trajectories ------------------------------------------------------


@dataclass(frozen=True)
class FlowState:
    field: ConformalField
    t: float
    dt_last: float = 0.0
    steps_taken: int = 0


@dataclass(frozen=True)
class Snapshot:
    """Field at a requested time.

    ``step`` is the solver step count when the field is an actual solver
    state, ``None`` when it was interpolated between two steps.  For solver
    states ``state_time`` is the solver's own time value, which may differ
    from ``time`` in the last bits.
    """

    time: float
    field: ConformalField
    step: int | None
    state_time: float | None = None


@dataclass
class Trajectory:
    chart: Chart
    snapshots: list[Snapshot]
    series: dict[str, np.ndarray]
    failure: str | None = None
    normalized: bool = False
    t_origin: float = 0.0
    steps: int = 0

    @property
    def ok(self) -> bool:
        return self.failure is None

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    @property
    def fields(self) -> list[ConformalField]:
        return [s.field for s in self.snapshots]

    def field_at(self, time: float) -> ConformalField:
        for s in self.snapshots:
            if abs(s.time - time) <= 1e-12 * max(1.0, abs(time)):
                return s.field
        raise KeyError(f"no snapshot at time {time}")

    def physical(self) -> Trajectory:
        """Trajectory in ``(t, u)`` variables; identity for unnormalized runs."""
        if not self.normalized:
            return self
        snaps = [
            Snapshot(0.5 * math.exp(2.0 * s.time), s.field + s.time, s.step, s.state_time)
            for s in self.snapshots
        ]
        return Trajectory(self.chart, snaps, dict(self.series), self.failure, False, self.t_origin, self.steps)


def _physical_time(s: float) -> float:
    return 0.5 * math.exp(2.0 * s)


# -- the integrator -----------------------------------------------------------------


class _Integrator:
    """Advances raw nodal arrays; ``drift`` adds ``-drift`` to ``du/dt``."""

    def __init__(self, chart: Chart, control: StepControl, boundary: Callable, drift: float = 0.0):
        self.chart = chart
        self.control = control
        self.boundary = boundary
        self.drift = drift
        self.inner = np.flatnonzero(chart.interior.ravel())
        self.bnd = np.flatnonzero(chart.boundary.ravel())
        L = chart.laplacian_matrix
        self.L = L
        rows = L[self.inner]
        self.L_II = rows[:, self.inner].tocsc()
        self.L_IB = rows[:, self.bnd].tocsr()
        if chart.is_radial:
            # tridiagonal interior block for the banded solver
            self.diags = (self.L_II.diagonal(1), self.L_II.diagonal(0), self.L_II.diagonal(-1))

    def pin(self, u: np.ndarray, t: float) -> np.ndarray:
        u[self.bnd] = self.boundary(t, u)
        return u

    def rhs(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros_like(u)
        lap = self.L @ u
        out[self.inner] = np.exp(-2.0 * u[self.inner]) * lap[self.inner] - self.drift
        return out

    def cfl_dt(self, u: np.ndarray) -> float:
        diff = float(np.max(np.exp(-2.0 * u[self.inner])))
        return self.control.cfl_safety * self.chart.dx**2 / (4.0 * diff)

    def rk2(self, u: np.ndarray, t: float, dt: float) -> np.ndarray:
        u1 = self.pin(u + dt * self.rhs(u), t + dt)
        u2 = 0.5 * u + 0.5 * (u1 + dt * self.rhs(u1))
        return self.pin(u2, t + dt)

    def _solve(self, diag: np.ndarray, dt: float, rhs: np.ndarray) -> np.ndarray:
        if self.chart.is_radial:
            up, mid, low = self.diags
            m = diag.size
            ab = np.zeros((3, m))
            ab[0, 1:] = -2.0 * dt * up
            ab[1] = diag - 2.0 * dt * mid
            ab[2, :-1] = -2.0 * dt * low
            return solve_banded((1, 1), ab, rhs)
        # the Jacobian is symmetric positive definite
        J = sp.diags(diag, format="csc") - 2.0 * dt * self.L_II
        lu = splu(J, permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})
        return lu.solve(rhs)

    def implicit(self, u: np.ndarray, t: float, dt: float) -> np.ndarray:
        """Backward Euler step ``(1+2c dt) e^{2w} - e^{2u} - 2 dt lap(w) = 0``."""
        c = self.control
        new = u.copy()
        self.pin(new, t + dt)
        b = new[self.bnd]
        scale = 1.0 + 2.0 * self.drift * dt
        base = np.exp(2.0 * u[self.inner]) + 2.0 * dt * (self.L_IB @ b)
        w = u[self.inner].copy()
        for _ in range(c.newton_max_iters):
            ew = np.exp(2.0 * w)
            res = scale * ew - base - 2.0 * dt * (self.L_II @ w)
            delta = self._solve(2.0 * scale * ew, dt, -res)
            size = float(np.max(np.abs(delta)))
            if not math.isfinite(size):
                break
            if size > _NEWTON_MAX_UPDATE:
                delta *= _NEWTON_MAX_UPDATE / size
            w += delta
            if size <= c.newton_tol:
                new[self.inner] = w
                return new
        raise StepRefused(f"Newton did not converge for dt = {dt:g}", t)

    def implicit_robust(self, u: np.ndarray, t: float, dt: float) -> np.ndarray:
        """Implicit step, halved recursively when Newton fails."""
        try:
            return self.implicit(u, t, dt)
        except StepRefused:
            if dt / 2 < self.control.dt_min:
                raise
            log.debug("splitting implicit step at t=%g, dt=%g", t, dt)
            mid = self.implicit_robust(u, t, dt / 2)
            return self.implicit_robust(mid, t + dt / 2, dt / 2)


def _boundary_fn(policy: BoundaryPolicy, chart: Chart, shift: Callable[[float], float] | None = None):
    if shift is None:
        return lambda t, u: policy.values(chart, t, u)
    if isinstance(policy, DirichletFrozen):
        return lambda s, u: policy.values(chart, s, u)
    return lambda s, u: policy.values(chart, _physical_time(s), u) - shift(s)


def step(s: FlowState, c: StepControl, b: BoundaryPolicy) -> FlowState:
    """Take one time step.

    ``explicit_rk2`` uses ``dt = min(dt_max, CFL bound)``; ``implicit_euler``
    uses ``dt = dt_max``.  Raises :class:`StepRefused` when the CFL bound
    falls below ``dt_min`` or Newton fails.
    """
    chart = s.field.chart
    integ = _Integrator(chart, c, _boundary_fn(b, chart))
    u = s.field.u.ravel().copy()
    if c.scheme is Scheme.EXPLICIT_RK2:
        dt = min(c.dt_max, integ.cfl_dt(u))
        if dt < c.dt_min:
            raise StepRefused(f"CFL bound {dt:.3e} below dt_min {c.dt_min:.3e}", s.t)
        new = integ.rk2(u, s.t, dt)
    else:
        dt = c.dt_max
        new = integ.implicit(u, s.t, dt)
    if not np.all(np.isfinite(new[chart.active.ravel()])):
        raise StepRefused("non-finite values", s.t)
    return FlowState(ConformalField(chart, new.reshape(chart.shape)), s.t + dt, dt, s.steps_taken + 1)


Monitor = Callable[[ConformalField, float], Mapping[str, float]]


def _scalars(chart: Chart, u: np.ndarray) -> tuple[float, float, float]:
    shaped = u.reshape(chart.shape)
    vol = float(np.sum(chart.cell_areas * np.exp(2.0 * shaped)))
    lap = apply_laplacian(chart, shaped)
    inner = chart.interior
    K = -np.exp(-2.0 * shaped[inner]) * lap[inner]
    return vol, float(K.min()), float(K.max())


def _run(
    u0: ConformalField,
    t0: float,
    t_end: float,
    sample_times: Sequence[float] | None,
    control: StepControl,
    policy: BoundaryPolicy,
    *,
    normalized: bool,
    monitor: Monitor | None,
    step_origin: tuple[float, int] | None,
    series_stride: int,
) -> Trajectory:
    if not t0 < t_end:
        raise ValueError(f"need t0 < t_end, got {t0} and {t_end}")
    samples = [t0, t_end] if sample_times is None else sorted(float(x) for x in sample_times)
    span = t_end - t0
    if samples and (samples[0] < t0 - 1e-12 * span or samples[-1] > t_end + 1e-12 * span):
        raise ValueError("sample times must lie in [t0, t_end]")
    if len(set(samples)) != len(samples):
        raise ValueError("sample times must be distinct")

    chart = u0.chart
    shift = (lambda s: s) if normalized else None
    integ = _Integrator(chart, control, _boundary_fn(policy, chart, shift), drift=1.0 if normalized else 0.0)
    origin, k = step_origin if step_origin is not None else (t0, 0)
    implicit = control.scheme is Scheme.IMPLICIT_EULER

    series: dict[str, list[float]] = {"t": [], "volume": [], "min_K": [], "max_K": []}
    if normalized:
        series["s"] = []

    def record(u, time):
        phys_t = _physical_time(time) if normalized else time
        phys_u = u + time if normalized else u
        vol, kmin, kmax = _scalars(chart, phys_u)
        series["t"].append(phys_t)
        if normalized:
            series["s"].append(time)
        series["volume"].append(vol)
        series["min_K"].append(kmin)
        series["max_K"].append(kmax)
        if monitor is not None:
            extra = monitor(ConformalField(chart, phys_u.reshape(chart.shape)), phys_t)
            for key, val in extra.items():
                series.setdefault(key, []).append(float(val))

    def snap(time, u, step_index, state_time=None):
        return Snapshot(time, ConformalField(chart, u.reshape(chart.shape)), step_index, state_time)

    u = u0.u.ravel().copy()
    time = t0
    snapshots: list[Snapshot] = []
    pending = list(samples)
    while pending and pending[0] <= t0 + _TIME_MATCH * span:
        pending.pop(0)
        snapshots.append(snap(t0, u, k, t0))
    record(u, time)
    failure = None
    while time < t_end:
        try:
            if implicit:
                dt_nom = control.dt_max
                t_next = origin + (k + 1) * dt_nom
                if t_next > t_end - _TIME_MATCH * dt_nom:
                    t_next = t_end
                new = integ.implicit_robust(u, time, t_next - time)
            else:
                cfl = integ.cfl_dt(u)
                remaining = t_end - time
                if cfl < control.dt_min and cfl < remaining:
                    raise StepRefused(f"CFL bound {cfl:.3e} below dt_min {control.dt_min:.3e}", time)
                dt = min(control.dt_max, cfl, remaining)
                t_next = time + dt
                if t_end - t_next < _TIME_MATCH * dt:
                    t_next = t_end
                new = integ.rk2(u, time, t_next - time)
            if not np.all(np.isfinite(new[chart.active.ravel()])):
                raise StepRefused("non-finite values", time)
        except StepRefused as exc:
            failure = str(exc)
            log.warning("evolution stopped: %s", failure)
            break
        k += 1
        width = t_next - time
        while pending and pending[0] <= t_next + _TIME_MATCH * width:
            ts = pending.pop(0)
            if t_next - ts <= _TIME_MATCH * width:
                snapshots.append(snap(ts, new, k, t_next))
            else:
                theta = (ts - time) / width
                snapshots.append(snap(ts, (1.0 - theta) * u + theta * new, None))
        u, time = new, t_next
        if k % series_stride == 0 or time >= t_end:
            record(u, time)

    return Trajectory(
        chart,
        snapshots,
        {key: np.asarray(val) for key, val in series.items()},
        failure,
        normalized,
        origin,
        k,
    )


def evolve(
    u0: ConformalField,
    t0: float,
    t_end: float,
    sample_times: Sequence[float] | None,
    control: StepControl,
    policy: BoundaryPolicy,
    *,
    monitor: Monitor | None = None,
    step_origin: tuple[float, int] | None = None,
    series_stride: int = 1,
) -> Trajectory:
    """Evolve ``u0`` from ``t0`` to ``t_end``.

    Snapshots are taken at ``sample_times`` (linearly interpolated between
    steps unless a step lands on the sample).  Scalar series (volume, min and
    max curvature, plus anything ``monitor`` returns) are recorded every
    ``series_stride`` steps.  Implicit runs step on the fixed grid
    ``origin + k*dt_max``; ``step_origin = (origin, k)`` continues such a grid
    from step ``k``, which makes resumed runs reproduce one-shot runs exactly.

    A refused step ends the run early; the partial trajectory carries the
    reason in ``failure``.
    """
    return _run(
        u0, t0, t_end, sample_times, control, policy,
        normalized=False, monitor=monitor, step_origin=step_origin, series_stride=series_stride,
    )


def evolve_normalized(
    v0: ConformalField,
    s0: float,
    s_end: float,
    control: StepControl,
    policy: BoundaryPolicy,
    sample_times: Sequence[float] | None = None,
    *,
    monitor: Monitor | None = None,
    series_stride: int = 1,
) -> Trajectory:
    """Evolve ``v = u - log(2t)/2`` in the time ``s = log(2t)/2``.

    ``v`` obeys ``dv/ds = exp(-2v) lap(v) - 1``.  The policy is given in
    physical variables and converted; frozen boundaries freeze ``v``.
    Snapshot times are in ``s``; use :meth:`Trajectory.physical` to convert.
    The scalar series are recorded in physical variables.
    """
    return _run(
        v0, s0, s_end, sample_times, control, policy,
        normalized=True, monitor=monitor, step_origin=None, series_stride=series_stride,
    )


def normalized_time(t):
    """``s = log(2t)/2``; accepts scalars or arrays."""
    out = 0.5 * np.log(2.0 * np.asarray(t, dtype=float))
    return float(out) if out.ndim == 0 else out


# -- exhaustion and plane drivers ----------------------------------------------------


@dataclass
class ExhaustionResult:
    radii: dict[int, float]
    charts: dict[int, Chart]
    M: dict[int, float]
    trajectories: dict[int, Trajectory]
    monotonicity: list[tuple[int, int, float]] = field(default_factory=list)

    @property
    def max_violation(self) -> float:
        return max((gap for _, _, gap in self.monotonicity), default=0.0)

    @property
    def limit(self) -> ConformalField:
        """Final field of the largest disc: the best estimate of the limit flow."""
        return self.trajectories[max(self.trajectories)].snapshots[-1].field


def exhaustion_radius(j: int, disc_radius: float = 1.0) -> float:
    return disc_radius * (1.0 - 1.0 / (j + 1))


def _increase_gap(small: Trajectory, big: Trajectory, index, region_radius: float | None) -> float:
    chart = small.chart
    mask = chart.interior.copy()
    if region_radius is not None:
        mask &= chart.r <= region_radius + 1e-12
    worst = 0.0
    for sa, sb in zip(small.snapshots, big.snapshots):
        diff = sb.field.u[index] - sa.field.u
        worst = max(worst, float(np.max(diff[mask], initial=0.0)))
    return worst


def exhaustion_solve(
    u0: ConformalField,
    j_values: Sequence[int],
    t_end: float,
    control: StepControl,
    *,
    sample_times: Sequence[float] | None = None,
    disc_radius: float = 1.0,
    gap_cells: int = 2,
    region_radius: float | None = None,
) -> ExhaustionResult:
    """Solve on the discs ``D_j`` of radius ``(1 - 1/(j+1))`` times ``disc_radius``.

    On each ``D_j`` the flow runs on the node-aligned chart reaching
    ``gap_cells`` cells short of the conformal boundary, with the boundary
    pinned to the upper barrier ``h_j + log(2t + M_j)/2`` where
    ``M_j = exp(2 max(u0 - h_j))`` over the chart.  The monotonicity report
    holds ``sup (u_{j'} - u_j)^+`` over the nodes of the smaller chart for
    each consecutive pair, restricted to ``|z| <= region_radius`` if given.
    """
    js = [int(j) for j in j_values]
    if any(b <= a for a, b in zip(js, js[1:])):
        raise ValueError("j_values must be increasing")
    if sample_times is None:
        sample_times = np.linspace(0.0, t_end, 11)
    result = ExhaustionResult({}, {}, {}, {})
    base = u0.chart
    index_of = {}
    for j in js:
        rj = exhaustion_radius(j, disc_radius)
        rho = rj - gap_cells * base.dx
        if rho > base.radius + 1e-12:
            raise ChartError(f"initial data chart too small for D_{j}")
        sub, index = base.sub_chart(rho)
        model = HyperbolicModel.disc(rj)
        start = u0.restrict(sub, index)
        act = sub.active
        Mj = math.exp(2.0 * float(np.max(start.u[act] - model.h(sub.r[act]))))
        traj = evolve(start, 0.0, t_end, sample_times, control, DirichletBarrier(model, Mj))
        if traj.failure:
            raise StepRefused(f"D_{j}: {traj.failure}", traj.snapshots[-1].time)
        result.radii[j] = rj
        result.charts[j] = sub
        result.M[j] = Mj
        result.trajectories[j] = traj
        index_of[j] = index
    for a, b in zip(js, js[1:]):
        ta, tb = result.trajectories[a], result.trajectories[b]
        # index of chart a inside chart b
        na = result.charts[a].n
        if base.is_radial:
            idx = (slice(0, na),)
        else:
            off = (result.charts[b].n - na) // 2
            idx = (slice(off, off + na),) * 2
        result.monotonicity.append((a, b, _increase_gap(ta, tb, idx, region_radius)))
    return result


@dataclass
class PlaneResult:
    radii: list[float]
    M: dict[float, float]
    trajectories: dict[float, Trajectory]

    def flux(self, R: float) -> tuple[np.ndarray, np.ndarray]:
        s = self.trajectories[R].series
        return s["t"], s["flux"]


def boundary_flux(f: ConformalField) -> float:
    """``2 * (outward flux of u)``: the rate of volume change the interior sees."""
    lap = apply_laplacian(f.chart, f.u)
    return 2.0 * float(np.sum(f.chart.flux_areas * lap))


def plane_barrier_offset(u0: ConformalField) -> float:
    """``2 exp(2 max(u0 - h))`` over the boundary, ``h`` the exterior model."""
    chart = u0.chart
    bnd = chart.boundary
    h = HyperbolicModel.exterior().h(chart.r[bnd])
    return 2.0 * math.exp(2.0 * float(np.max(u0.u[bnd] - h)))


def plane_solve(
    u0: ConformalField,
    radii: Sequence[float],
    t_end: float,
    control: StepControl,
    *,
    sample_times: Sequence[float] | None = None,
    M: float | None = None,
    series_stride: int = 1,
) -> PlaneResult:
    """Approximate the instantaneously complete flow on the plane.

    For each ``R`` the flow runs on the disc of radius ``R`` (a node-aligned
    sub-chart of ``u0.chart``) with the boundary pinned to the exterior
    hyperbolic barrier ``-log(|z| log|z|) + log(2t + M)/2``.  ``M`` defaults
    to :func:`plane_barrier_offset` of the restricted data.  The series of
    every trajectory include ``flux``, the boundary term of ``dVol/dt``.
    """
    if sample_times is None:
        sample_times = np.linspace(0.0, t_end, 11)
    out = PlaneResult([], {}, {})
    model = HyperbolicModel.exterior()
    for R in radii:
        if not R > math.e:
            raise ChartError(f"plane charts need R > e, got {R}")
        sub, index = u0.chart.sub_chart(R)
        start = u0.restrict(sub, index)
        offset = plane_barrier_offset(start) if M is None else M
        traj = evolve(
            start, 0.0, t_end, sample_times, control, DirichletBarrier(model, offset),
            monitor=lambda f, t: {"flux": boundary_flux(f)}, series_stride=series_stride,
        )
        out.radii.append(R)
        out.M[R] = offset
        out.trajectories[R] = traj
    return out


def sample_exact(flow: ExactFlow, chart: Chart, times: Sequence[float]) -> Trajectory:
    """Closed-form flow sampled as a trajectory (no series)."""
    from .exact import eval_exact

    snaps = [Snapshot(float(t), eval_exact(flow, float(t), chart), None) for t in times]
    return Trajectory(chart, snaps, {}, None, False, float(times[0]), 0)
