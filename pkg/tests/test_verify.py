import copy
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ricci2d.exact import BigBang, ExpandingHyperbolic, FlatStatic, ShrinkingSphere, TopologyTag, eval_exact
from ricci2d.geometry import Chart, ConformalField, HyperbolicModel, ShapeMismatchError
from ricci2d.solver import DirichletFrozen, Scheme, Snapshot, StepControl, Trajectory, evolve, sample_exact
from ricci2d.verify import (
    CheckVerdict,
    DiagnosticsReport,
    PreconditionError,
    check_barriers,
    check_chen,
    check_comparison,
    check_convergence,
    check_curvature_decay,
    check_exact_error,
    check_plane_lower_bound,
    check_symmetry,
    check_volume_law,
    check_yau,
    empirical_curvature_bound,
    fit_order,
    order_of_accuracy,
    plane_lower_constant,
)

DISC1 = HyperbolicModel.disc(1.0)
EXTERIOR = HyperbolicModel.exterior()
RADIAL = Chart.radial(0.8, 401)
TIMES = [0.1, 0.5, 1.0, 2.0]


def _flat_frozen(t_end=0.5):
    c = Chart.radial(1.0, 101)
    return evolve(ConformalField(c, np.zeros(c.shape)), 0.0, t_end, np.linspace(0, t_end, 6),
                  StepControl(dt_max=0.01), DirichletFrozen())


class TestChen:
    def test_bigbang_saturates(self):
        v = check_chen(sample_exact(BigBang(DISC1), RADIAL, TIMES), 1e-2)
        assert v.passed
        # discrete curvature of h is -1 up to O(dx^2), so the bound is attained
        assert v.details["saturation"] < 1e-2

    def test_sphere_has_room(self):
        v = check_chen(sample_exact(ShrinkingSphere(), Chart.cartesian(3.0, 61), [0.1, 0.3]), 0.0)
        assert v.passed and v.worst_violation == 0.0
        assert v.details["saturation"] > 1.0

    def test_expanding_margin(self):
        M = 2.0
        v = check_chen(sample_exact(ExpandingHyperbolic(DISC1, M), RADIAL, [1.0]), 1e-2)
        # min K + 1/(2t) = 1/(2t) - 1/(2t + M)
        assert v.details["saturation"] == pytest.approx(0.5 - 1 / 4, abs=1e-2)

    def test_negative_violation_located(self):
        c = Chart.radial(0.8, 101)
        traj = sample_exact(BigBang(DISC1), c, [1.0])
        # rescaling the metric by e^{-2} pushes K below -1/(2t)
        shifted = Trajectory(c, [Snapshot(1.0, traj.snapshots[0].field + (-1.0), None)], {})
        v = check_chen(shifted, 1e-3)
        assert not v.passed
        assert v.worst_violation == pytest.approx(0.5 * (math.e**2 - 1), rel=1e-2)
        assert v.worst_location[0] == 1.0

    def test_needs_positive_times(self):
        with pytest.raises(PreconditionError):
            check_chen(sample_exact(FlatStatic(), RADIAL, [0.0]), 0.1)


class TestBarriers:
    def test_expanding_sits_on_upper_barrier(self):
        M = 1.5
        v = check_barriers(sample_exact(ExpandingHyperbolic(DISC1, M), RADIAL, [0.0] + TIMES), DISC1, M, 1e-12)
        assert v.passed
        assert v.details["lower_violation"] == 0.0

    def test_frozen_control_fails_lower(self):
        v = check_barriers(_flat_frozen(), DISC1, 0.25, 1e-2, region_radius=0.5)
        assert not v.passed
        assert v.details["lower_violation"] > 0.5
        assert v.details["upper_violation"] == 0.0

    def test_initial_above_upper(self):
        traj = sample_exact(ExpandingHyperbolic(DISC1, 4.0), RADIAL, [0.0, 1.0])
        with pytest.raises(PreconditionError, match="upper barrier"):
            check_barriers(traj, DISC1, 1.0, 1e-3)

    def test_model_must_cover_nodes(self):
        with pytest.raises(PreconditionError):
            check_barriers(sample_exact(FlatStatic(), Chart.radial(0.5, 11), [1.0]), EXTERIOR, 1.0, 1.0)


class TestVolumeLaw:
    def test_sphere_slope(self):
        R = 6.0
        ts = np.linspace(0.0, 0.45, 10)
        c = Chart.cartesian(R, 121)
        from ricci2d.geometry import volume

        traj = sample_exact(ShrinkingSphere(), c, ts)
        traj.series = {"t": ts, "volume": np.array([volume(f) for f in traj.fields])}
        v = check_volume_law(traj, TopologyTag("sphere", 4 * math.pi), (0.0, 0.45), 5e-3, scale=(1 + R * R) / (R * R))
        assert v.passed
        assert v.fitted_rate == pytest.approx(-8 * math.pi, rel=5e-3)
        assert v.details["T_estimate"] == pytest.approx(0.5, rel=5e-3)

    def test_wrong_topology_fails(self):
        ts = np.linspace(0, 0.4, 6)
        traj = Trajectory(RADIAL, [], {"t": ts, "volume": 4 * math.pi * (1 - 2 * ts)})
        assert check_volume_law(traj, TopologyTag("sphere", 4 * math.pi), (0, 0.4), 1e-9).passed
        assert not check_volume_law(traj, TopologyTag("plane", 4 * math.pi), (0, 0.4), 0.1).passed

    def test_infinite_volume_only_needs_positivity(self):
        ts = np.linspace(0, 1, 6)
        traj = Trajectory(RADIAL, [], {"t": ts, "volume": 10 + ts})
        v = check_volume_law(traj, TopologyTag("plane"), (0, 1), 0.0)
        assert v.passed

    def test_too_few_samples(self):
        ts = np.linspace(0, 1, 4)
        traj = Trajectory(RADIAL, [], {"t": ts, "volume": 1 - ts})
        with pytest.raises(PreconditionError, match="need at least 5"):
            check_volume_law(traj, TopologyTag("sphere", 1.0), (0, 1), 0.1)


class TestConvergence:
    def test_expanding_rate_minus_one(self):
        M = 1.0
        ts = np.geomspace(1, 100, 7)
        v = check_convergence(sample_exact(ExpandingHyperbolic(DISC1, M), RADIAL, ts), DISC1, M, 1e-12)
        assert v.passed
        assert v.fitted_rate == pytest.approx(-1.0, abs=0.02)
        assert v.details["rate_ok"]

    def test_bigbang_has_no_deviation(self):
        v = check_convergence(sample_exact(BigBang(DISC1), RADIAL, [1.0, 10.0]), DISC1, 1.0, 1e-12)
        assert v.passed and v.fitted_rate == -math.inf

    def test_stalled_rate_fails(self):
        c = Chart.radial(0.8, 41)
        h = DISC1.h(c.r)
        snaps = [Snapshot(t, ConformalField(c, h + 0.5 * math.log(2 * t) + 0.01), None) for t in (1.0, 10.0, 100.0)]
        v = check_convergence(Trajectory(c, snaps, {}), DISC1, 1.0, 1e-3)
        assert not v.passed and v.worst_violation == math.inf
        assert v.fitted_rate == pytest.approx(0.0, abs=1e-12)
        assert v.details["sandwich_violation"] > 0

    def test_needs_a_decade(self):
        with pytest.raises(PreconditionError, match="decade"):
            check_convergence(sample_exact(BigBang(DISC1), RADIAL, [1.0, 5.0]), DISC1, 1.0, 1e-3)


class TestCurvatureDecay:
    def test_bigbang_constant_is_half(self):
        B, where = empirical_curvature_bound(sample_exact(BigBang(DISC1), RADIAL, TIMES), 0.1)
        assert B == pytest.approx(0.5, abs=5e-3)
        v = check_curvature_decay(sample_exact(BigBang(DISC1), RADIAL, TIMES), 0.1, reference_B=0.5, tol=1e-2)
        assert v.passed

    def test_expanding_below_half(self):
        B, _ = empirical_curvature_bound(sample_exact(ExpandingHyperbolic(DISC1, 4.0), RADIAL, TIMES), 0.1)
        assert B <= 0.5
        assert B == pytest.approx(2.0 / 8.0, abs=5e-3)

    def test_flat_finite(self):
        v = check_curvature_decay(sample_exact(FlatStatic(), RADIAL, TIMES), 0.1)
        assert v.passed and v.details["B"] == 0.0

    def test_delta_beyond_samples(self):
        with pytest.raises(PreconditionError):
            empirical_curvature_bound(sample_exact(FlatStatic(), RADIAL, [0.5]), 1.0)


class TestComparison:
    def test_nesting(self):
        lo = sample_exact(BigBang(DISC1), RADIAL, TIMES)
        hi = sample_exact(ExpandingHyperbolic(DISC1, 1.0), RADIAL, TIMES)
        assert check_comparison(lo, hi, 0.0).passed

    def test_reversed_fails_precondition(self):
        lo = sample_exact(BigBang(DISC1), RADIAL, TIMES)
        hi = sample_exact(ExpandingHyperbolic(DISC1, 1.0), RADIAL, TIMES)
        with pytest.raises(PreconditionError, match="not ordered"):
            check_comparison(hi, lo, 1e-3)

    def test_identical_is_zero(self):
        a = sample_exact(BigBang(DISC1), RADIAL, TIMES)
        v = check_comparison(a, a, 0.0)
        assert v.passed and v.worst_violation == 0.0

    def test_crossing_detected(self):
        c = Chart.radial(0.8, 41)
        f0 = ConformalField(c, np.zeros(c.shape))
        a = Trajectory(c, [Snapshot(0.0, f0, None), Snapshot(1.0, f0 + 0.2, None)], {})
        b = Trajectory(c, [Snapshot(0.0, f0, None), Snapshot(1.0, f0, None)], {})
        v = check_comparison(a, b, 1e-3)
        assert not v.passed and v.worst_violation == pytest.approx(0.2)
        assert v.worst_location[0] == 1.0

    def test_chart_and_times_must_match(self):
        a = sample_exact(FlatStatic(), RADIAL, TIMES)
        with pytest.raises(ShapeMismatchError):
            check_comparison(a, sample_exact(FlatStatic(), Chart.radial(0.8, 21), TIMES), 0.0)
        with pytest.raises(PreconditionError):
            check_comparison(a, sample_exact(FlatStatic(), RADIAL, TIMES[:-1]), 0.0)

    @settings(max_examples=20, deadline=None)
    @given(m1=st.floats(0.1, 5), m2=st.floats(0.1, 5))
    def test_transitivity(self, m1, m2):
        lo, hi = sorted((m1, m2))
        a = sample_exact(BigBang(DISC1), RADIAL, TIMES)
        b = sample_exact(ExpandingHyperbolic(DISC1, lo), RADIAL, TIMES)
        c = sample_exact(ExpandingHyperbolic(DISC1, hi), RADIAL, TIMES)
        assert check_comparison(a, b, 1e-14).passed
        assert check_comparison(b, c, 1e-14).passed
        assert check_comparison(a, c, 1e-14).passed


class TestYau:
    TOL = 1e-2

    def test_equality_case(self):
        f = ConformalField(RADIAL, DISC1.h(RADIAL.r))
        v = check_yau(f, f, 1.0, 1.0, self.TOL)
        assert v.passed and v.worst_violation == 0.0

    def test_bigbang_rescaling_is_sharp(self):
        flow = BigBang(DISC1)
        t1, t2 = 0.5, 3.0
        f1, f2 = eval_exact(flow, t1, RADIAL), eval_exact(flow, t2, RADIAL)
        v = check_yau(f1, f2, 1 / (2 * t1), 1 / (2 * t2), self.TOL)
        assert v.passed and v.worst_violation < 1e-12

    def test_incomplete_source_violates(self):
        # the radius-2 metric is not complete on the chart, so the lemma does not apply
        f1 = ConformalField(RADIAL, HyperbolicModel.disc(2.0).h(RADIAL.r))
        f2 = ConformalField(RADIAL, DISC1.h(RADIAL.r))
        v = check_yau(f1, f2, 1.0, 1.0, self.TOL)
        assert not v.passed
        assert v.worst_violation == pytest.approx(float(np.max((f2.u - f1.u)[RADIAL.interior])))

    def test_precondition_on_f1(self):
        f = ConformalField(RADIAL, DISC1.h(RADIAL.r) - 0.1)
        with pytest.raises(PreconditionError, match="K\\[f1\\]"):
            check_yau(f, f, 1.0, 1.0, self.TOL)

    def test_precondition_on_f2(self):
        f = ConformalField(RADIAL, DISC1.h(RADIAL.r) + 0.1)
        with pytest.raises(PreconditionError, match="K\\[f2\\]"):
            check_yau(f, f, 1.0, 1.0, self.TOL)


class TestPlaneLowerBound:
    def _traj(self, C):
        c = Chart.radial(20.0, 401)
        h = np.where(c.r > 1.5, EXTERIOR.h(np.maximum(c.r, 1.5)), 0.0)
        snaps = [Snapshot(t, ConformalField(c, h + 0.5 * math.log(2 * t) - C), None) for t in (0.1, 0.5, 1.0)]
        return Trajectory(c, snaps, {})

    def test_recovers_offset(self):
        assert plane_lower_constant(self._traj(0.3)) == pytest.approx(0.3, abs=1e-12)
        v = check_plane_lower_bound(self._traj(0.3), C_report=0.3)
        assert v.passed and v.details["C"] == pytest.approx(0.3)
        assert not check_plane_lower_bound(self._traj(0.3), C_report=0.2, tol=0.2).passed

    def test_flat_finite(self):
        c = Chart.radial(20.0, 201)
        traj = sample_exact(FlatStatic(), c, [0.2])
        v = check_plane_lower_bound(traj)
        assert v.passed and math.isfinite(v.details["C"])

    def test_small_chart(self):
        with pytest.raises(PreconditionError):
            plane_lower_constant(sample_exact(FlatStatic(), Chart.radial(5.0, 51), [1.0]))


class TestOrder:
    def test_flat_is_degenerate(self):
        grids = [Chart.radial(0.8, n) for n in (21, 41, 81)]
        res = order_of_accuracy(FlatStatic(), grids, StepControl(dt_max=0.05), (0.0, 0.1))
        assert res.degenerate and res.order is None

    def test_bigbang_explicit_second_order(self):
        grids = [Chart.radial(0.8, n) for n in (41, 81, 161)]
        res = order_of_accuracy(BigBang(HyperbolicModel.disc(0.9)), grids,
                                StepControl(Scheme.EXPLICIT_RK2, dt_max=1.0, cfl_safety=0.8), (0.5, 0.7))
        assert res.order == pytest.approx(2.0, abs=0.25)

    def test_grid_levels(self):
        with pytest.raises(PreconditionError):
            order_of_accuracy(FlatStatic(), [Chart.radial(0.8, 21)] * 2, StepControl(), (0.0, 0.1))
        with pytest.raises(PreconditionError):
            order_of_accuracy(FlatStatic(), [Chart.radial(0.8, n) for n in (21, 31, 41)], StepControl(), (0.0, 0.1))

    def test_fit_order_exact_power(self):
        dx = [0.1, 0.05, 0.025]
        assert fit_order(dx, [3 * d**2 for d in dx]).order == pytest.approx(2.0)


class TestMisc:
    def test_exact_error_zero_on_samples(self):
        traj = sample_exact(ShrinkingSphere(), Chart.cartesian(2.0, 21), [0.0, 0.2])
        assert check_exact_error(traj, ShrinkingSphere(), 0.0).passed
        assert check_symmetry(traj).worst_violation < 1e-14

    def test_checks_are_pure(self):
        traj = sample_exact(ExpandingHyperbolic(DISC1, 1.0), RADIAL, np.geomspace(1, 100, 4))
        before = copy.deepcopy([s.field.u for s in traj.snapshots])
        v1 = check_convergence(traj, DISC1, 1.0, 1e-6)
        v2 = check_convergence(traj, DISC1, 1.0, 1e-6)
        assert v1 == v2
        assert all(np.array_equal(a, s.field.u) for a, s in zip(before, traj.snapshots))

    def test_nan_never_passes(self):
        ts = np.linspace(0, 1, 6)
        traj = Trajectory(RADIAL, [], {"t": ts, "volume": np.full(6, np.nan)})
        assert not check_volume_law(traj, TopologyTag("sphere", 1.0), (0, 1), 1e9).passed

    def test_report(self):
        a = check_chen(sample_exact(BigBang(DISC1), RADIAL, TIMES), 1e-2)
        b = check_exact_error(sample_exact(BigBang(DISC1), RADIAL, TIMES), BigBang(DISC1), 0.0)
        rep = DiagnosticsReport([a, b])
        assert rep.passed and rep["chen"] is a
        data = json.loads(rep.to_json())
        assert {d["name"] for d in data} == {"chen", "exact_error"}
        with pytest.raises(ValueError):
            DiagnosticsReport([a, a])
        with pytest.raises(KeyError):
            rep["yau"]

    def test_verdict_dict(self):
        v = CheckVerdict("x", False, 1.0, (0.5, (3,)), 0.1)
        assert v.to_dict()["worst_location"] == {"t": 0.5, "node": [3]}
