"""Checks that turn quantitative statements about the flow into verdicts.

Every check is a pure function of its inputs.  Sups are taken over the
interior nodes of a chart, so the Dirichlet layer never enters a verdict.
A verdict passes exactly when ``worst_violation <= tolerance_used``.
Unmet preconditions raise :class:`PreconditionError` instead of failing.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np

from .exact import ExactFlow, TopologyTag, eval_exact, volume_loss_rate
from .geometry import (
    Chart,
    ConformalField,
    HyperbolicModel,
    ShapeMismatchError,
    apply_laplacian,
    deviation_norm,
)
from .solver import DirichletExact, StepControl, Trajectory, evolve


class PreconditionError(ValueError):
    """The inputs do not satisfy the hypotheses of a check."""


@dataclass(frozen=True)
class CheckVerdict:
    name: str
    passed: bool
    worst_violation: float
    worst_location: tuple[float, tuple[int, ...]] | None
    tolerance_used: float
    fitted_rate: float | None = None
    details: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        if self.worst_location is not None:
            t, node = self.worst_location
            d["worst_location"] = {"t": t, "node": list(node)}
        return d


def _verdict(name, worst, location, tol, rate=None, **details) -> CheckVerdict:
    worst = float(worst)
    passed = bool(worst <= tol)  # NaN never passes
    return CheckVerdict(name, passed, worst, location, float(tol), rate, details)


@dataclass
class DiagnosticsReport:
    verdicts: list[CheckVerdict]
    series: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        names = [v.name for v in self.verdicts]
        if len(names) != len(set(names)):
            raise ValueError("each check may appear only once in a report")

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def __getitem__(self, name: str) -> CheckVerdict:
        for v in self.verdicts:
            if v.name == name:
                return v
        raise KeyError(name)

    def to_json(self) -> str:
        return json.dumps([v.to_dict() for v in self.verdicts], indent=2)


# -- helpers -----------------------------------------------------------------------


def _node(chart: Chart, flat_mask_index: int, mask: np.ndarray) -> tuple[int, ...]:
    flat = np.flatnonzero(mask.ravel())[flat_mask_index]
    return tuple(int(i) for i in np.unravel_index(flat, chart.shape))


def _curvature(f: ConformalField) -> np.ndarray:
    """Curvature on the full grid (values off the interior are meaningless)."""
    return -np.exp(-2.0 * f.u) * apply_laplacian(f.chart, f.u)


class _Worst:
    """Running maximum of a violation with its location."""

    def __init__(self):
        self.value = -math.inf
        self.location = None

    def update(self, values: np.ndarray, t: float, chart: Chart, mask: np.ndarray):
        if values.size == 0:
            return
        i = int(np.argmax(values))
        if values[i] > self.value:
            self.value = float(values[i])
            self.location = (float(t), _node(chart, i, mask))

    def result(self) -> float:
        return max(self.value, 0.0)


def _snapshots(traj: Trajectory, t_min: float = 0.0):
    phys = traj.physical()
    return [(s.time, s.field) for s in phys.snapshots if s.time > t_min]


# -- checks ------------------------------------------------------------------------


def check_chen(traj: Trajectory, tol: float) -> CheckVerdict:
    """``min K(t) >= -1/(2t)`` at every snapshot with ``t > 0``.

    ``details["saturation"]`` is ``max_t |min K + 1/(2t)|``, zero for the
    big-bang flow.
    """
    snaps = _snapshots(traj)
    if not snaps:
        raise PreconditionError("Chen's bound needs snapshots with t > 0")
    worst = _Worst()
    saturation = 0.0
    for t, f in snaps:
        mask = f.chart.interior
        margin = _curvature(f)[mask] + 1.0 / (2.0 * t)
        worst.update(-margin, t, f.chart, mask)
        saturation = max(saturation, abs(float(margin.min())))
    return _verdict("chen", worst.result(), worst.location, tol, saturation=saturation)


def _region(chart: Chart, region_radius: float | None) -> np.ndarray:
    mask = chart.interior.copy()
    if region_radius is not None:
        mask &= chart.r <= region_radius + 1e-12
    return mask


def check_barriers(
    traj: Trajectory,
    model: HyperbolicModel,
    M: float,
    tol: float,
    region_radius: float | None = None,
) -> CheckVerdict:
    """``h + log(2t)/2 - tol <= u <= h + log(2t + M)/2 + tol``.

    Checked on interior nodes inside the model domain (and within
    ``region_radius`` if given).  The initial snapshot must lie below the
    upper barrier.  The lower and upper violations are also reported
    separately in ``details``.
    """
    phys = traj.physical()
    chart = phys.chart
    mask = _region(chart, region_radius) & model.contains(chart.r)
    if not mask.any():
        raise PreconditionError("no interior nodes inside the barrier model")
    h = model.h(chart.r[mask])
    first = phys.snapshots[0]
    if 2.0 * first.time + M > 0:
        excess = float(np.max(first.field.u[mask] - h - 0.5 * math.log(2.0 * first.time + M)))
        if excess > tol:
            raise PreconditionError(f"initial data exceeds the upper barrier by {excess:.3g}")
    lower, upper = _Worst(), _Worst()
    for s in phys.snapshots:
        u = s.field.u[mask]
        if s.time > 0:
            lower.update(h + 0.5 * math.log(2.0 * s.time) - u, s.time, chart, mask)
        if 2.0 * s.time + M > 0:
            upper.update(u - h - 0.5 * math.log(2.0 * s.time + M), s.time, chart, mask)
    lo, up = lower.result(), upper.result()
    where = lower.location if lo >= up else upper.location
    return _verdict("barriers", max(lo, up), where, tol, lower_violation=lo, upper_violation=up)


def _fit_line(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def check_volume_law(
    traj: Trajectory,
    tag: TopologyTag,
    fit_window: tuple[float, float],
    tol_rel: float,
    scale: float = 1.0,
) -> CheckVerdict:
    """Least-squares slope of ``scale * Vol(t)`` against ``-8 pi`` or ``-4 pi``.

    ``scale`` corrects a known truncation factor.  The fitted zero crossing
    is returned as ``details["T_estimate"]``.  For infinite volume the law is
    vacuous and the check only asks that the volume stay positive.
    """
    s = traj.physical().series
    t, vol = s["t"], scale * s["volume"]
    a, b = fit_window
    sel = (t >= a - 1e-12) & (t <= b + 1e-12)
    if sel.sum() < 5:
        raise PreconditionError(f"fit window [{a}, {b}] holds {int(sel.sum())} samples, need at least 5")
    slope, intercept = _fit_line(t[sel], vol[sel])
    T_est = -intercept / slope if slope != 0 else math.inf
    i = int(np.argmax(sel))
    if math.isinf(tag.volume):
        bad = float(max(0.0, -np.min(vol[sel])))
        return _verdict("volume_law", bad, (float(t[i]), ()), tol_rel, slope, T_estimate=T_est)
    target = -volume_loss_rate(tag)
    rel = abs(slope - target) / abs(target)
    return _verdict("volume_law", rel, (float(t[i]), ()), tol_rel, slope, T_estimate=T_est, target=target)


_DEVIATION_FLOOR = 1e-12


def check_convergence(
    traj: Trajectory,
    model: HyperbolicModel,
    M: float,
    tol: float,
    eta: float = 0.2,
) -> CheckVerdict:
    """Sharp sandwich ``0 <= e^{2(u-h)}/(2t) - 1 <= M/(2t)`` plus decay rate.

    The log-log slope of the C^0 deviation against ``t`` must be at most
    ``-(1 - eta)``.  When the slope requirement fails the verdict carries an
    infinite violation; the slope itself is ``fitted_rate``.
    """
    phys = traj.physical()
    snaps = [(s.time, s.field) for s in phys.snapshots if s.time > 0]
    if len(snaps) < 2 or snaps[-1][0] < 10.0 * snaps[0][0]:
        raise PreconditionError("convergence check needs snapshots spanning at least one decade in t")
    chart = phys.chart
    mask = chart.interior & model.contains(chart.r)
    h = model.h(chart.r[mask])
    worst = _Worst()
    ts, devs = [], []
    for t, f in snaps:
        w = np.exp(2.0 * (f.u[mask] - h)) / (2.0 * t) - 1.0
        worst.update(np.maximum(-w, w - M / (2.0 * t)), t, chart, mask)
        ts.append(t)
        devs.append(float(np.max(np.abs(w))))
    devs = np.asarray(devs)
    if np.all(devs <= _DEVIATION_FLOOR):
        slope = -math.inf  # exact hyperbolic multiple: no deviation to decay
    else:
        slope, _ = _fit_line(np.log(ts), np.log(np.maximum(devs, _DEVIATION_FLOOR)))
    sandwich = worst.result()
    rate_ok = slope <= -(1.0 - eta)
    value = sandwich if rate_ok else math.inf
    return _verdict(
        "convergence", value, worst.location, tol, slope,
        sandwich_violation=sandwich, eta=eta, rate_ok=bool(rate_ok),
    )


def empirical_curvature_bound(traj: Trajectory, delta: float) -> tuple[float, tuple]:
    """``max t * sup|K(t)|`` over snapshots with ``t >= delta`` and its location."""
    snaps = _snapshots(traj, t_min=delta - 1e-15)
    if not snaps:
        raise PreconditionError(f"no snapshots with t >= {delta}")
    worst = _Worst()
    for t, f in snaps:
        mask = f.chart.interior
        worst.update(t * np.abs(_curvature(f)[mask]), t, f.chart, mask)
    return worst.value, worst.location


def check_curvature_decay(
    traj: Trajectory,
    delta: float,
    tol: float = 0.1,
    reference_B: float | None = None,
) -> CheckVerdict:
    """``|K(t)| <= B/t`` for ``t >= delta`` with a finite empirical ``B``.

    Without a reference the check asks only that ``B`` be finite.  With
    ``reference_B`` (e.g. from a refined grid) the relative difference must
    be within ``tol``.
    """
    B, where = empirical_curvature_bound(traj, delta)
    if not math.isfinite(B):
        return _verdict("curvature_decay", math.inf, where, tol, None, B=B)
    value = 0.0 if reference_B is None else abs(B - reference_B) / abs(reference_B)
    return _verdict("curvature_decay", value, where, tol, None, B=B)


def check_comparison(lower: Trajectory, upper: Trajectory, tol: float) -> CheckVerdict:
    """``lower <= upper`` nodewise at every common sample time.

    Requires a common chart, identical sample times and ordering at the
    first sample.  Ordering of boundary data at later times is the caller's
    responsibility.
    """
    a, b = lower.physical(), upper.physical()
    if a.chart != b.chart:
        raise ShapeMismatchError("comparison needs trajectories on a common chart")
    ta, tb = a.times, b.times
    if ta.shape != tb.shape or not np.allclose(ta, tb, rtol=1e-12, atol=1e-14):
        raise PreconditionError("comparison needs identical sample times")
    chart = a.chart
    mask = chart.active
    gap0 = float(np.max(a.snapshots[0].field.u[mask] - b.snapshots[0].field.u[mask]))
    if gap0 > tol:
        raise PreconditionError(f"initial data not ordered (gap {gap0:.3g})")
    worst = _Worst()
    for sa, sb in zip(a.snapshots, b.snapshots):
        worst.update(sa.field.u[mask] - sb.field.u[mask], sa.time, chart, mask)
    return _verdict("comparison", worst.result(), worst.location, tol)


def check_yau(f1: ConformalField, f2: ConformalField, a1: float, a2: float, tol: float) -> CheckVerdict:
    """Schwarz lemma for the identity map: ``u2 <= u1 + log(a1/a2)/2``.

    Preconditions (checked on interior nodes): ``K[f1] >= -a1 - tol`` and
    ``K[f2] <= -a2 + tol``.
    """
    if f1.chart != f2.chart:
        raise ShapeMismatchError("Schwarz lemma check needs a common chart")
    if a1 < 0 or a2 <= 0:
        raise PreconditionError("need a1 >= 0 and a2 > 0")
    mask = f1.chart.interior
    k1 = _curvature(f1)[mask]
    k2 = _curvature(f2)[mask]
    if k1.min() < -a1 - tol:
        raise PreconditionError(f"K[f1] = {k1.min():.6g} below -a1 = {-a1:.6g}")
    if k2.max() > -a2 + tol:
        raise PreconditionError(f"K[f2] = {k2.max():.6g} above -a2 = {-a2:.6g}")
    shift = 0.5 * math.log(a1 / a2) if a1 > 0 else -math.inf
    worst = _Worst()
    worst.update(f2.u[mask] - f1.u[mask] - shift, 0.0, f1.chart, mask)
    return _verdict("yau", worst.result(), worst.location, tol)


def plane_lower_constant(traj: Trajectory, inner: float = 2.0, outer_fraction: float = 0.9) -> float:
    """Smallest ``C`` with ``u >= -C - log(|z| log|z|) + log(2t)/2`` on the annulus."""
    phys = traj.physical()
    chart = phys.chart
    if chart.radius <= 2.0 * math.e:
        raise PreconditionError(f"chart radius {chart.radius} too small for the exterior bound")
    mask = chart.interior & (chart.r >= inner) & (chart.r <= outer_fraction * chart.radius)
    h = HyperbolicModel.exterior().h(chart.r[mask])
    C = -math.inf
    for s in phys.snapshots:
        if s.time > 0:
            C = max(C, float(np.max(h + 0.5 * math.log(2.0 * s.time) - s.field.u[mask])))
    if C == -math.inf:
        raise PreconditionError("exterior bound needs snapshots with t > 0")
    return C


def check_plane_lower_bound(
    traj: Trajectory,
    C_report: float | None = None,
    tol: float = 0.2,
    inner: float = 2.0,
    outer_fraction: float = 0.9,
) -> CheckVerdict:
    """Empirical constant of the exterior lower bound on ``inner <= |z| <= 0.9 R``.

    Passes when the constant is finite and, given a reference ``C_report``
    from another resolution or truncation, within ``tol`` relative to it.
    """
    C = plane_lower_constant(traj, inner, outer_fraction)
    if not math.isfinite(C):
        return _verdict("plane_lower_bound", math.inf, None, tol, None, C=C)
    value = 0.0 if C_report is None else abs(C - C_report) / max(abs(C_report), 1e-300)
    return _verdict("plane_lower_bound", value, None, tol, None, C=C)


# -- order of accuracy -------------------------------------------------------------


@dataclass(frozen=True)
class OrderResult:
    dx: tuple[float, ...]
    errors: tuple[float, ...]
    order: float | None
    degenerate: bool


def fit_order(dx: Sequence[float], errors: Sequence[float], floor: float = 1e-12) -> OrderResult:
    dx, errors = tuple(map(float, dx)), tuple(map(float, errors))
    if max(errors) <= floor:
        return OrderResult(dx, errors, None, True)
    slope, _ = _fit_line(np.log(dx), np.log(np.maximum(errors, 1e-300)))
    return OrderResult(dx, errors, slope, False)


def order_of_accuracy(
    flow: ExactFlow,
    grids: Sequence[Chart],
    c: StepControl,
    t_window: tuple[float, float],
    dt_refine: float = 4.0,
) -> OrderResult:
    """Convergence order against a closed-form flow with exact boundary data.

    ``c`` applies to the coarsest grid; ``dt_max`` is divided by
    ``dt_refine`` at each halving of ``dx``.  The error is the sup over
    interior nodes at the end of ``t_window``.
    """
    if len(grids) < 3:
        raise PreconditionError("need at least three grid levels")
    dxs = [g.dx for g in grids]
    for coarse, fine in zip(dxs, dxs[1:]):
        if abs(coarse / fine - 2.0) > 1e-6:
            raise PreconditionError("grid levels must refine by a factor of two")
    t0, t1 = t_window
    policy = DirichletExact(flow)
    errors = []
    for level, chart in enumerate(grids):
        control = c.scaled(dt_refine ** (-level))
        traj = evolve(eval_exact(flow, t0, chart), t0, t1, [t1], control, policy)
        if traj.failure:
            raise RuntimeError(f"level {level}: {traj.failure}")
        exact = eval_exact(flow, t1, chart).u
        diff = np.abs(traj.snapshots[-1].field.u - exact)[chart.interior]
        errors.append(float(diff.max()))
    return fit_order(dxs, errors)


def sup_error(traj: Trajectory, flow: ExactFlow) -> float:
    """Sup over snapshots and interior nodes of ``|u - exact|``."""
    chart = traj.chart
    worst = 0.0
    for s in traj.physical().snapshots:
        exact = eval_exact(flow, s.time, chart).u
        worst = max(worst, float(np.max(np.abs(s.field.u - exact)[chart.interior])))
    return worst


def deviation_series(traj: Trajectory, model: HyperbolicModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(t, C^0 deviation, C^1 deviation)`` at snapshots with ``t > 0``."""
    ts, d0, d1 = [], [], []
    for t, f in _snapshots(traj):
        ts.append(t)
        d0.append(deviation_norm(f, model, 0, t))
        d1.append(deviation_norm(f, model, 1, t))
    return np.asarray(ts), np.asarray(d0), np.asarray(d1)


def angular_variation(f: ConformalField) -> float:
    """Max over circles of grid nodes (equal ``i^2 + j^2``) of ``max u - min u``.

    Zero for radial charts.
    """
    chart = f.chart
    if chart.is_radial:
        return 0.0
    c = (chart.n - 1) / 2.0
    i, j = np.indices(chart.shape)
    key = np.rint((i - c) ** 2 + (j - c) ** 2).astype(np.int64)[chart.interior]
    vals = f.u[chart.interior]
    order = np.argsort(key, kind="stable")
    key, vals = key[order], vals[order]
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    spread = np.maximum.reduceat(vals, starts) - np.minimum.reduceat(vals, starts)
    return float(spread.max())


def check_symmetry(traj: Trajectory, tol: float | None = None) -> CheckVerdict:
    """Angular variation at every snapshot; ``tol`` defaults to ``10 dx^2``."""
    chart = traj.chart
    if tol is None:
        tol = 10.0 * chart.dx**2
    worst, where = 0.0, None
    for s in traj.physical().snapshots:
        v = angular_variation(s.field)
        if v > worst or where is None:
            worst, where = max(worst, v), (s.time, ())
    return _verdict("symmetry", worst, where, tol)


def check_exact_error(traj: Trajectory, flow: ExactFlow, tol: float) -> CheckVerdict:
    """Sup over snapshots and interior nodes of ``|u - exact|``."""
    chart = traj.chart
    worst = _Worst()
    for s in traj.physical().snapshots:
        exact = eval_exact(flow, s.time, chart).u
        worst.update(np.abs(s.field.u - exact)[chart.interior], s.time, chart, chart.interior)
    return _verdict("exact_error", worst.result(), worst.location, tol)
