"""Discrete charts, differential operators and hyperbolic model metrics.

A metric on a planar domain is stored as its conformal factor ``u`` sampled on
a uniform grid, the metric being ``exp(2u)|dz|^2``.  Two chart kinds exist:

* radial charts ``r_i = i*dx`` on ``[0, rho]`` for rotationally symmetric data,
* Cartesian charts on ``[-R, R]^2`` with a circular mask of radius ``rho <= R``.

Derived quantities (Laplacian, curvature) are only meaningful at interior
nodes; everywhere else they carry ``NaN`` so that reductions skip them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

RADIAL = "radial"
CARTESIAN = "cartesian"


class GeometryError(ValueError):
    """Base class for invalid charts and fields."""


class ChartError(GeometryError):
    pass


class ShapeMismatchError(GeometryError):
    pass


class DomainError(GeometryError):
    """A node lies on or outside the conformal boundary of a model."""


@dataclass(frozen=True)
class Chart:
    kind: str
    extent: float
    n: int
    mask_radius: float | None = None

    def __post_init__(self):
        if self.kind not in (RADIAL, CARTESIAN):
            raise ChartError(f"unknown chart kind {self.kind!r}")
        if not (self.extent > 0 and math.isfinite(self.extent)):
            raise ChartError(f"chart extent must be positive, got {self.extent}")
        if int(self.n) != self.n or self.n < 3:
            raise ChartError(f"chart needs at least 3 nodes per axis, got {self.n}")
        if self.kind == CARTESIAN:
            if self.mask_radius is None:
                object.__setattr__(self, "mask_radius", float(self.extent))
            if not 0 < self.mask_radius <= self.extent * (1 + 1e-12):
                raise ChartError("mask radius must lie in (0, half-width]")
            if not self.interior.any():
                raise ChartError("mask leaves no interior nodes")
        elif self.mask_radius is not None:
            raise ChartError("radial charts take no mask radius")

    @classmethod
    def radial(cls, rho: float, n: int) -> Chart:
        return cls(RADIAL, float(rho), int(n))

    @classmethod
    def cartesian(cls, half_width: float, n: int, mask_radius: float | None = None) -> Chart:
        return cls(CARTESIAN, float(half_width), int(n), mask_radius)

    # -- grid geometry -------------------------------------------------------

    @property
    def is_radial(self) -> bool:
        return self.kind == RADIAL

    @property
    def radius(self) -> float:
        """Radius of the simulated disc."""
        return self.extent if self.is_radial else self.mask_radius

    @cached_property
    def dx(self) -> float:
        if self.is_radial:
            return self.extent / (self.n - 1)
        return 2.0 * self.extent / (self.n - 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) if self.is_radial else (self.n, self.n)

    @cached_property
    def axis(self) -> np.ndarray:
        if self.is_radial:
            a = np.arange(self.n) * self.dx
        else:
            # exactly antisymmetric about the centre
            a = (np.arange(self.n) - (self.n - 1) / 2.0) * self.dx
            a[0] = -self.extent
        a[-1] = self.extent
        return a

    @cached_property
    def xy(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates; for radial charts the nodes sit on the positive x-axis."""
        if self.is_radial:
            return self.axis.copy(), np.zeros(self.n)
        x, y = np.meshgrid(self.axis, self.axis, indexing="ij")
        return x, y

    @cached_property
    def r(self) -> np.ndarray:
        """Distance of each node from the origin."""
        if self.is_radial:
            return self.axis.copy()
        x, y = self.xy
        return np.hypot(x, y)

    @cached_property
    def active(self) -> np.ndarray:
        if self.is_radial:
            return np.ones(self.n, dtype=bool)
        return self.r <= self.mask_radius * (1 + 1e-12)

    @cached_property
    def interior(self) -> np.ndarray:
        if self.is_radial:
            mask = np.ones(self.n, dtype=bool)
            mask[-1] = False
            return mask
        a = np.pad(self.active, 1, constant_values=False)
        return (
            self.active
            & a[2:, 1:-1]
            & a[:-2, 1:-1]
            & a[1:-1, 2:]
            & a[1:-1, :-2]
        )

    @cached_property
    def boundary(self) -> np.ndarray:
        return self.active & ~self.interior

    # -- discrete operators ---------------------------------------------------

    @cached_property
    def laplacian_matrix(self) -> sp.csr_matrix:
        """Second-order Laplacian; rows of non-interior nodes are zero."""
        h2 = self.dx * self.dx
        if self.is_radial:
            n = self.n
            rows, cols, vals = [0, 0], [0, 1], [-4.0 / h2, 4.0 / h2]
            i = np.arange(1, n - 1)
            half = 1.0 / (2.0 * i)
            rows += list(i) * 3
            cols += list(i - 1) + list(i) + list(i + 1)
            vals += list((1.0 - half) / h2) + [-2.0 / h2] * len(i) + list((1.0 + half) / h2)
            return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        n = self.n
        idx = np.arange(n * n).reshape(n, n)
        inner = np.flatnonzero(self.interior.ravel())
        ii, jj = np.unravel_index(inner, (n, n))
        rows = [inner]
        cols = [inner]
        vals = [np.full(inner.size, -4.0 / h2)]
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            rows.append(inner)
            cols.append(idx[ii + di, jj + dj])
            vals.append(np.full(inner.size, 1.0 / h2))
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n * n, n * n),
        )

    @cached_property
    def cell_areas(self) -> np.ndarray:
        """Quadrature weights for integrals over the simulated disc.

        Radial charts use annular control volumes around each node.  Cartesian
        charts use the exact area of each node's cell clipped to the disc; the
        clipped area of cells whose node falls outside the mask is handed to
        the nearest active node, so the weights sum to ``pi*rho^2``.
        """
        dx = self.dx
        if self.is_radial:
            edges = np.concatenate(([0.0], (self.axis[:-1] + 0.5 * dx), [self.extent]))
            return np.pi * np.diff(edges**2)
        x, y = self.xy
        h = 0.5 * dx
        area = _disc_rect_area(x - h, x + h, y - h, y + h, self.mask_radius)
        area = np.where(area > 1e-15 * dx * dx, area, 0.0)
        stray = (~self.active) & (area > 0)
        weights = np.where(self.active, area, 0.0)
        if stray.any():
            act = np.flatnonzero(self.active.ravel())
            tree = cKDTree(np.column_stack((x.ravel()[act], y.ravel()[act])))
            _, nearest = tree.query(np.column_stack((x[stray], y[stray])))
            flat = weights.ravel()
            np.add.at(flat, act[nearest], area[stray])
            weights = flat.reshape(self.shape)
        return weights

    @cached_property
    def flux_areas(self) -> np.ndarray:
        """Control volumes matching the finite-volume form of the Laplacian.

        ``sum(flux_areas * lap(u))`` over interior nodes equals the discrete
        outward flux of ``u`` through the boundary.
        """
        if self.is_radial:
            return np.where(self.interior, self.cell_areas, 0.0)
        return np.where(self.interior, self.dx * self.dx, 0.0)

    def sub_chart(self, rho: float) -> tuple[Chart, tuple[slice, ...]]:
        """Node-aligned chart of radius ``rho`` with the same spacing.

        Returns the chart and the index slices selecting its nodes from this
        chart.  ``rho`` is rounded down to a whole number of cells.
        """
        m = int(math.floor(rho / self.dx + 1e-9))
        if self.is_radial:
            if m < 2 or m > self.n - 1:
                raise ChartError(f"sub-chart radius {rho} incompatible with chart")
            return Chart.radial(m * self.dx, m + 1), (slice(0, m + 1),)
        if (self.n - 1) % 2:
            raise ChartError("Cartesian sub-charts need an odd node count")
        c = (self.n - 1) // 2
        if m < 1 or m > c:
            raise ChartError(f"sub-chart radius {rho} incompatible with chart")
        sub = Chart.cartesian(m * self.dx, 2 * m + 1, min(rho, m * self.dx))
        sl = slice(c - m, c + m + 1)
        return sub, (sl, sl)


def _corner_area(x, y, rho):
    """Area of the disc intersected with [0,x]x[0,y] for x, y >= 0."""
    x = np.minimum(x, rho)
    y = np.minimum(y, rho)
    inside = x * x + y * y <= rho * rho
    a_star = np.sqrt(np.maximum(rho * rho - y * y, 0.0))
    a_star = np.minimum(a_star, x)

    def prim(a):
        return 0.5 * (a * np.sqrt(np.maximum(rho * rho - a * a, 0.0)) + rho * rho * np.arcsin(np.clip(a / rho, -1.0, 1.0)))

    outside = y * a_star + prim(x) - prim(a_star)
    return np.where(inside, x * y, outside)


def _disc_rect_area(x0, x1, y0, y1, rho):
    def g(x, y):
        return np.sign(x) * np.sign(y) * _corner_area(np.abs(x), np.abs(y), rho)

    return g(x1, y1) - g(x0, y1) - g(x1, y0) + g(x0, y0)


def _check_same_chart(a: Chart, b: Chart) -> None:
    if a != b:
        raise ShapeMismatchError(f"fields live on different charts: {a} vs {b}")


@dataclass(frozen=True, eq=False)
class ConformalField:
    """Samples of the conformal factor on the active nodes of a chart.

    Inactive (masked-out) nodes are stored as zero and never read.
    """

    chart: Chart
    u: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        if u.shape != self.chart.shape:
            raise ShapeMismatchError(f"samples of shape {u.shape} do not fit chart shape {self.chart.shape}")
        active = self.chart.active
        if not np.all(np.isfinite(u[active])):
            raise GeometryError("conformal factor must be finite at every active node")
        u[~active] = 0.0
        u.flags.writeable = False
        object.__setattr__(self, "u", u)

    def __add__(self, other):
        if isinstance(other, ConformalField):
            _check_same_chart(self.chart, other.chart)
            return ConformalField(self.chart, self.u + other.u)
        return ConformalField(self.chart, self.u + np.where(self.chart.active, other, 0.0))

    def __sub__(self, other):
        if isinstance(other, ConformalField):
            _check_same_chart(self.chart, other.chart)
            return ConformalField(self.chart, self.u - other.u)
        return self + (-other)

    def restrict(self, sub: Chart, index: tuple[slice, ...]) -> ConformalField:
        return ConformalField(sub, self.u[index])

    @classmethod
    def from_function(cls, chart: Chart, fn) -> ConformalField:
        """Sample ``fn(x, y)`` on the active nodes."""
        x, y = chart.xy
        act = chart.active
        u = np.zeros(chart.shape)
        u[act] = fn(x[act], y[act])
        return cls(chart, u)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Scalar defined at interior nodes only; ``NaN`` elsewhere."""

    chart: Chart
    values: np.ndarray

    def interior_values(self) -> np.ndarray:
        return self.values[self.chart.interior]

    def min(self) -> float:
        return float(np.nanmin(self.values))

    def max(self) -> float:
        return float(np.nanmax(self.values))

    def abs_max(self) -> float:
        return float(np.nanmax(np.abs(self.values)))


def _interior_only(chart: Chart, values: np.ndarray) -> GridFunction:
    out = np.full(chart.shape, np.nan)
    out[chart.interior] = values[chart.interior]
    return GridFunction(chart, out)


def apply_laplacian(chart: Chart, u: np.ndarray) -> np.ndarray:
    """Raw Laplacian of nodal values; zero on non-interior nodes."""
    return (chart.laplacian_matrix @ u.ravel()).reshape(chart.shape)


def laplacian(f: ConformalField) -> GridFunction:
    return _interior_only(f.chart, apply_laplacian(f.chart, f.u))


def gauss_curvature(f: ConformalField) -> GridFunction:
    """Gaussian curvature ``K = -exp(-2u) * lap(u)`` of ``exp(2u)|dz|^2``."""
    lap = apply_laplacian(f.chart, f.u)
    return _interior_only(f.chart, -np.exp(-2.0 * f.u) * lap)


def volume(f: ConformalField) -> float:
    """Area of the chart's disc measured in the metric ``exp(2u)|dz|^2``."""
    return float(np.sum(f.chart.cell_areas * np.exp(2.0 * f.u)))


# -- hyperbolic models ---------------------------------------------------------

DISC = "disc"
EXTERIOR = "exterior"


@dataclass(frozen=True)
class HyperbolicModel:
    """Complete curvature -1 metric ``exp(2h)|dz|^2`` on a planar domain.

    ``disc``: the Poincare metric on the disc of radius ``radius``,
    ``h = log(2r / (r^2 - |z|^2))``.  ``exterior``: the complete hyperbolic
    metric on ``|z| > 1``, ``h = -log(|z| log|z|)``.
    """

    kind: str
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in (DISC, EXTERIOR):
            raise ValueError(f"unknown hyperbolic model {self.kind!r}")
        if self.kind == DISC and not self.radius > 0:
            raise ValueError("disc radius must be positive")

    @classmethod
    def disc(cls, radius: float = 1.0) -> HyperbolicModel:
        return cls(DISC, float(radius))

    @classmethod
    def exterior(cls) -> HyperbolicModel:
        return cls(EXTERIOR, 1.0)

    def contains(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.kind == DISC:
            return r < self.radius
        return r > 1.0

    def h(self, r) -> np.ndarray:
        """Conformal factor as a function of ``|z|``."""
        r = np.asarray(r, dtype=float)
        if not np.all(self.contains(r)):
            raise DomainError(f"points outside the domain of the {self.kind} model")
        if self.kind == DISC:
            a = self.radius
            return np.log(2.0 * a / (a * a - r * r))
        return -np.log(r * np.log(r))

    def laplacian(self, r) -> np.ndarray:
        """Exact Laplacian of ``h``; equal to ``exp(2h)`` since ``K = -1``."""
        return np.exp(2.0 * self.h(r))


def eval_hyperbolic(m: HyperbolicModel, chart: Chart) -> ConformalField:
    r = chart.r
    act = chart.active
    u = np.zeros(chart.shape)
    u[act] = m.h(r[act])
    return ConformalField(chart, u)


def _normalized_deviation(f: ConformalField, m: HyperbolicModel, t: float):
    h = np.zeros(f.chart.shape)
    act = f.chart.active
    h[act] = m.h(f.chart.r[act])
    w = np.where(act, np.exp(2.0 * (f.u - h)) / (2.0 * t) - 1.0, 0.0)
    return w, h


def deviation_scalar(f: ConformalField, m: HyperbolicModel, t: float) -> GridFunction:
    """The scalar ``exp(2(u-h))/(2t) - 1`` at interior nodes.

    It measures ``g/(2t) - H`` relative to ``H`` and vanishes exactly on the
    big-bang flow ``u = h + log(2t)/2``.
    """
    w, _ = _normalized_deviation(f, m, t)
    return _interior_only(f.chart, w)


def _gradient_norm(chart: Chart, w: np.ndarray) -> np.ndarray:
    dx = chart.dx
    g = np.zeros(chart.shape)
    if chart.is_radial:
        g[1:-1] = np.abs(w[2:] - w[:-2]) / (2 * dx)
        return g
    gx = np.zeros(chart.shape)
    gy = np.zeros(chart.shape)
    gx[1:-1, :] = (w[2:, :] - w[:-2, :]) / (2 * dx)
    gy[:, 1:-1] = (w[:, 2:] - w[:, :-2]) / (2 * dx)
    return np.hypot(gx, gy)


def deviation_norm(f: ConformalField, m: HyperbolicModel, k: int, t: float) -> float:
    """Discrete ``C^k(H)`` norm of ``g/(2t) - H`` for ``k`` in {0, 1}.

    ``k = 1`` adds the sup of the hyperbolic gradient length ``exp(-h)|Dw|``.
    """
    if k not in (0, 1):
        raise ValueError("only k = 0 and k = 1 are implemented")
    w, h = _normalized_deviation(f, m, t)
    inner = f.chart.interior
    norm = float(np.max(np.abs(w[inner])))
    if k == 1:
        grad = np.exp(-h) * _gradient_norm(f.chart, w)
        norm += float(np.max(grad[inner]))
    return norm


@dataclass(frozen=True)
class OrderReport:
    """Outcome of the pointwise test ``u1 <= u2``."""

    ordered: bool
    max_gap: float
    location: tuple[int, ...] | None


def metric_order(f1: ConformalField, f2: ConformalField, tol: float = 0.0) -> OrderReport:
    _check_same_chart(f1.chart, f2.chart)
    inner = f1.chart.interior
    gap = np.where(inner, f1.u - f2.u, -np.inf)
    flat = int(np.argmax(gap))
    worst = float(gap.ravel()[flat])
    if worst <= tol:
        return OrderReport(True, max(worst, 0.0), None)
    return OrderReport(False, worst, tuple(int(i) for i in np.unravel_index(flat, f1.chart.shape)))
