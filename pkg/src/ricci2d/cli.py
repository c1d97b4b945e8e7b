"""Scenario runner.

A scenario is a YAML file describing a chart, initial data, a boundary
policy, step control, sample times and a list of checks; see
``ricci2d/scenarios`` for examples and README.md for the grammar.

Exit codes: 0 when every check passes, 2 when a check fails, 1 on a
configuration or runtime error.  ``RICCI2D_OUTPUT_ROOT`` overrides the
directory under which each scenario writes its outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np
import yaml

from .exact import (
    BigBang,
    ExactFlow,
    ExpandingHyperbolic,
    FlatStatic,
    ShrinkingSphere,
    TopologyTag,
    eval_exact,
    sphere_factor,
)
from .geometry import Chart, ConformalField, GeometryError, HyperbolicModel, deviation_norm
from .solver import (
    BoundaryPolicy,
    DirichletBarrier,
    DirichletExact,
    DirichletFrozen,
    Scheme,
    StepControl,
    Trajectory,
    evolve,
    evolve_normalized,
    normalized_time,
    plane_barrier_offset,
)
from . import verify

log = logging.getLogger("ricci2d")

OUTPUT_ROOT_ENV = "RICCI2D_OUTPUT_ROOT"
EXIT_OK, EXIT_ERROR, EXIT_CHECK_FAILED = 0, 1, 2


class ScenarioError(ValueError):
    """Configuration that cannot be turned into a run."""


# -- schema --------------------------------------------------------------------------

_POS = {"type": "number", "exclusiveMinimum": 0}
_MODEL = {
    "type": "object",
    "properties": {"kind": {"enum": ["disc", "exterior"]}, "radius": _POS},
    "required": ["kind"],
    "additionalProperties": False,
}
_FLOW = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["bigbang", "expanding_hyperbolic", "shrinking_sphere", "flat"]},
        "model": _MODEL,
        "M": _POS,
    },
    "required": ["kind"],
    "additionalProperties": False,
}
_TERM = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["flat", "hyperbolic_multiple", "sphere_factor", "bump", "constant"]},
        "model": _MODEL,
        "M": _POS,
        "center": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "radius": _POS,
        "amplitude": {"type": "number"},
        "value": {"type": "number"},
    },
    "required": ["kind"],
    "additionalProperties": False,
}
_CHECK = {
    "type": "object",
    "properties": {
        "kind": {
            "enum": [
                "chen", "barriers", "volume_law", "convergence", "curvature_decay",
                "plane_lower_bound", "exact_error", "symmetry",
            ]
        },
        "tol": _POS,
        "model": _MODEL,
        "M": {"type": "number", "minimum": 0},
        "region_radius": _POS,
        "topology": {"enum": ["sphere", "plane", "hyperbolic"]},
        "volume": {"oneOf": [_POS, {"const": "inf"}]},
        "window": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "scale": _POS,
        "eta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "delta": _POS,
        "reference_B": _POS,
        "C_report": {"type": "number"},
        "flow": _FLOW,
    },
    "required": ["kind", "tol"],
    "additionalProperties": False,
}
SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "description": {"type": "string"},
        "expect_exit": {"enum": [0, 1, 2]},
        "chart": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["radial", "cartesian"]},
                "extent": _POS,
                "n": {"type": "integer", "minimum": 3},
                "mask_radius": _POS,
            },
            "required": ["kind", "extent", "n"],
            "additionalProperties": False,
        },
        "initial": {
            "type": "object",
            "properties": {"exact": _FLOW, "terms": {"type": "array", "items": _TERM, "minItems": 1}},
            "oneOf": [{"required": ["exact"]}, {"required": ["terms"]}],
            "additionalProperties": False,
        },
        "boundary": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["exact", "barrier", "frozen"]},
                "flow": _FLOW,
                "model": _MODEL,
                "M": {"oneOf": [{"type": "number", "minimum": 0}, {"const": "auto"}]},
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
        "control": {
            "type": "object",
            "properties": {
                "scheme": {"enum": [s.value for s in Scheme]},
                "dt_max": _POS,
                "dt_min": _POS,
                "cfl_safety": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "newton_tol": _POS,
                "newton_max_iters": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "time": {
            "type": "object",
            "properties": {
                "t0": {"type": "number", "minimum": 0},
                "t_end": _POS,
                "samples": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "count": {"type": "integer", "minimum": 2},
                "spacing": {"enum": ["linear", "geometric"]},
            },
            "required": ["t0", "t_end"],
            "additionalProperties": False,
        },
        "normalized": {"type": "boolean"},
        "reference_model": _MODEL,
        "series_stride": {"type": "integer", "minimum": 1},
        "checks": {"type": "array", "items": _CHECK},
        "study": {
            "type": "object",
            "properties": {"order": {"type": "number"}, "tol": _POS},
            "required": ["order", "tol"],
            "additionalProperties": False,
        },
        "output_dir": {"type": "string"},
    },
    "required": ["name", "chart", "initial", "boundary", "time"],
    "additionalProperties": False,
}


def _error_path(err: jsonschema.ValidationError) -> str:
    path = ".".join(str(p) for p in err.absolute_path)
    return path or "<root>"


def validate_config(cfg: Any) -> list[str]:
    """All schema and semantic problems, each prefixed by its path."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    problems = [f"{_error_path(e)}: {e.message}" for e in sorted(validator.iter_errors(cfg), key=str)]
    if problems:
        return problems
    t = cfg["time"]
    if not t["t0"] < t["t_end"]:
        problems.append("time: t0 must be smaller than t_end")
    samples = t.get("samples")
    if samples is not None:
        if any(b <= a for a, b in zip(samples, samples[1:])):
            problems.append("time.samples: must be strictly increasing")
        if samples[0] < t["t0"] or samples[-1] > t["t_end"]:
            problems.append("time.samples: must lie in [t0, t_end]")
    if t.get("spacing") == "geometric" and t["t0"] <= 0:
        problems.append("time.spacing: geometric sampling needs t0 > 0")
    if cfg.get("normalized") and t["t0"] <= 0:
        problems.append("normalized: needs t0 > 0")
    chart = cfg["chart"]
    if chart["kind"] == "radial" and "mask_radius" in chart:
        problems.append("chart.mask_radius: radial charts take no mask radius")
    b = cfg["boundary"]
    if b["kind"] == "exact" and "flow" not in b:
        problems.append("boundary.flow: required for exact boundary data")
    if b["kind"] == "barrier" and ("model" not in b or "M" not in b):
        problems.append("boundary: barrier data needs 'model' and 'M'")
    names = [c["kind"] for c in cfg.get("checks", [])]
    if len(names) != len(set(names)):
        problems.append("checks: each check kind may appear once")
    return problems


def load_config(path: str | os.PathLike) -> dict:
    path = Path(path)
    try:
        cfg = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from exc
    problems = validate_config(cfg)
    if problems:
        raise ScenarioError("invalid scenario " + str(path) + ":\n  " + "\n  ".join(problems))
    return cfg


# -- building objects from config --------------------------------------------------


def build_model(spec: dict) -> HyperbolicModel:
    if spec["kind"] == "disc":
        return HyperbolicModel.disc(spec.get("radius", 1.0))
    return HyperbolicModel.exterior()


def build_flow(spec: dict) -> ExactFlow:
    kind = spec["kind"]
    if kind in ("bigbang", "expanding_hyperbolic") and "model" not in spec:
        raise ScenarioError(f"{kind}: 'model' is required")
    if kind == "bigbang":
        return BigBang(build_model(spec["model"]))
    if kind == "expanding_hyperbolic":
        if "M" not in spec:
            raise ScenarioError("expanding_hyperbolic: 'M' is required")
        return ExpandingHyperbolic(build_model(spec["model"]), spec["M"])
    if kind == "shrinking_sphere":
        return ShrinkingSphere()
    return FlatStatic()


def build_chart(spec: dict) -> Chart:
    if spec["kind"] == "radial":
        return Chart.radial(spec["extent"], spec["n"])
    return Chart.cartesian(spec["extent"], spec["n"], spec.get("mask_radius"))


def chart_spec(chart: Chart) -> dict:
    d = {"kind": chart.kind, "extent": chart.extent, "n": chart.n}
    if not chart.is_radial:
        d["mask_radius"] = chart.mask_radius
    return d


def bump(r: np.ndarray, radius: float) -> np.ndarray:
    """Smooth compactly supported bump, 1 at the centre and 0 beyond ``radius``."""
    x2 = (np.asarray(r) / radius) ** 2
    out = np.zeros_like(x2)
    inside = x2 < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - x2[inside]))
    return out


def _term(chart: Chart, spec: dict) -> np.ndarray:
    kind = spec["kind"]
    x, y = chart.xy
    r = chart.r
    if kind == "flat":
        return np.zeros(chart.shape)
    if kind == "constant":
        return np.full(chart.shape, float(spec.get("value", 0.0)))
    if kind == "sphere_factor":
        return sphere_factor(r)
    if kind == "hyperbolic_multiple":
        if "model" not in spec or "M" not in spec:
            raise ScenarioError("hyperbolic_multiple needs 'model' and 'M'")
        model = build_model(spec["model"])
        act = chart.active
        out = np.zeros(chart.shape)
        out[act] = model.h(r[act]) + 0.5 * math.log(spec["M"])
        return out
    # bump
    cx, cy = spec.get("center", (0.0, 0.0))
    if chart.is_radial and (cx, cy) != (0.0, 0.0):
        raise ScenarioError("bump: radial charts need a centred bump")
    dist = np.hypot(x - cx, y - cy) if not chart.is_radial else r
    return spec.get("amplitude", 1.0) * bump(dist, spec.get("radius", 0.5))


def build_initial(cfg: dict, chart: Chart) -> ConformalField:
    init = cfg["initial"]
    t0 = cfg["time"]["t0"]
    if "exact" in init:
        return eval_exact(build_flow(init["exact"]), t0, chart)
    u = sum(_term(chart, spec) for spec in init["terms"])
    u = np.where(chart.active, u, 0.0)
    return ConformalField(chart, u)


def auto_offset(model: HyperbolicModel, u0: ConformalField) -> float:
    """Smallest ``M`` putting ``u0`` under the barrier (doubled, on the boundary, for the exterior)."""
    if model.kind == "exterior":
        return plane_barrier_offset(u0)
    chart = u0.chart
    act = chart.active
    return math.exp(2.0 * float(np.max(u0.u[act] - model.h(chart.r[act]))))


def build_policy(cfg: dict, u0: ConformalField) -> BoundaryPolicy:
    b = cfg["boundary"]
    if b["kind"] == "exact":
        return DirichletExact(build_flow(b["flow"]))
    if b["kind"] == "frozen":
        return DirichletFrozen()
    model = build_model(b["model"])
    M = auto_offset(model, u0) if b["M"] == "auto" else float(b["M"])
    return DirichletBarrier(model, M)


def build_control(cfg: dict) -> StepControl:
    return StepControl(**cfg.get("control", {}))


def sample_times(cfg: dict) -> list[float]:
    t = cfg["time"]
    if "samples" in t:
        return [float(x) for x in t["samples"]]
    count = t.get("count", 11)
    if t.get("spacing") == "geometric":
        vals = np.geomspace(t["t0"], t["t_end"], count)
    else:
        vals = np.linspace(t["t0"], t["t_end"], count)
    vals[0], vals[-1] = t["t0"], t["t_end"]
    return [float(x) for x in vals]


def reference_model(cfg: dict) -> HyperbolicModel | None:
    if "reference_model" in cfg:
        return build_model(cfg["reference_model"])
    for spec in (cfg["initial"].get("exact"), cfg["boundary"].get("flow")):
        if spec and "model" in spec:
            return build_model(spec["model"])
    if "model" in cfg["boundary"]:
        return build_model(cfg["boundary"]["model"])
    return None


# -- running ------------------------------------------------------------------------


@dataclass
class Scenario:
    cfg: dict
    chart: Chart
    u0: ConformalField
    policy: BoundaryPolicy
    control: StepControl
    samples: list[float]

    @property
    def name(self) -> str:
        return self.cfg["name"]

    @classmethod
    def from_config(cls, cfg: dict) -> Scenario:
        try:
            chart = build_chart(cfg["chart"])
            u0 = build_initial(cfg, chart)
            return cls(cfg, chart, u0, build_policy(cfg, u0), build_control(cfg), sample_times(cfg))
        except (GeometryError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(str(exc)) from exc


def _monitor(model: HyperbolicModel | None, chart: Chart):
    if model is not None and not np.all(model.contains(chart.r[chart.interior])):
        model = None  # deviation columns need the model on every interior node

    def mon(f: ConformalField, t: float):
        if model is None or t <= 0:
            return {"deviation_c0": math.nan, "deviation_c1": math.nan}
        return {"deviation_c0": deviation_norm(f, model, 0, t), "deviation_c1": deviation_norm(f, model, 1, t)}

    return mon


def integrate(sc: Scenario, u_start: ConformalField, t_start: float, samples: list[float], step_origin=None) -> Trajectory:
    """Run the scenario from ``(t_start, u_start)`` in physical variables."""
    cfg = sc.cfg
    t_end = cfg["time"]["t_end"]
    mon = _monitor(reference_model(cfg), sc.chart)
    stride = cfg.get("series_stride", 1)
    if cfg.get("normalized"):
        s0 = normalized_time(t_start)
        v0 = u_start - s0
        s_samples = [normalized_time(t) for t in samples]
        s_samples[0] = max(s_samples[0], s0)
        return evolve_normalized(
            v0, s0, normalized_time(t_end), sc.control, sc.policy, s_samples,
            monitor=mon, series_stride=stride,
        )
    return evolve(
        u_start, t_start, t_end, samples, sc.control, sc.policy,
        monitor=mon, step_origin=step_origin, series_stride=stride,
    )


def run_checks(sc: Scenario, traj: Trajectory) -> list[verify.CheckVerdict]:
    out = []
    for spec in sc.cfg.get("checks", []):
        kind, tol = spec["kind"], spec["tol"]
        if kind == "chen":
            v = verify.check_chen(traj, tol)
        elif kind == "barriers":
            v = verify.check_barriers(traj, build_model(spec["model"]), spec["M"], tol, spec.get("region_radius"))
        elif kind == "volume_law":
            vol = spec.get("volume", "inf")
            tag = TopologyTag(spec["topology"], math.inf if vol == "inf" else vol)
            window = tuple(spec.get("window", (sc.cfg["time"]["t0"], sc.cfg["time"]["t_end"])))
            v = verify.check_volume_law(traj, tag, window, tol, spec.get("scale", 1.0))
        elif kind == "convergence":
            v = verify.check_convergence(traj, build_model(spec["model"]), spec["M"], tol, spec.get("eta", 0.2))
        elif kind == "curvature_decay":
            v = verify.check_curvature_decay(traj, spec.get("delta", 0.0), tol, spec.get("reference_B"))
        elif kind == "plane_lower_bound":
            v = verify.check_plane_lower_bound(traj, spec.get("C_report"), tol)
        elif kind == "exact_error":
            v = verify.check_exact_error(traj, build_flow(spec["flow"]), tol)
        else:
            v = verify.check_symmetry(traj, tol)
        out.append(v)
    return out


def output_dir(cfg: dict) -> Path:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root:
        return Path(root) / cfg["name"]
    return Path(cfg.get("output_dir", os.path.join("ricci2d_runs", cfg["name"])))


def _fmt(x: float) -> str:
    return repr(float(x))


def write_series(path: Path, traj: Trajectory) -> None:
    cols = ["t", "volume", "min_K", "max_K", "deviation_c0", "deviation_c1"]
    s = traj.series
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i in range(len(s["t"])):
            w.writerow([_fmt(s[c][i]) for c in cols])


def snapshot_name(t: float) -> str:
    return f"snapshot_{float(t)!r}.json"


def write_snapshots(out: Path, sc: Scenario, traj: Trajectory) -> list[Path]:
    paths = []
    normalized = traj.normalized
    for snap in traj.snapshots:
        if normalized:
            t = 0.5 * math.exp(2.0 * snap.time)
            u = snap.field.u + snap.time
        else:
            t, u = snap.time, snap.field.u
        record = {
            "scenario": sc.name,
            "chart": chart_spec(traj.chart),
            "t": t,
            "u": np.asarray(u).ravel().tolist(),
            "normalized": normalized,
            "state": {
                "time": snap.state_time if snap.state_time is not None else snap.time,
                "step": snap.step,
                "t_origin": traj.t_origin,
                "scheme": sc.control.scheme.value,
                "dt_max": sc.control.dt_max,
                "values": np.asarray(snap.field.u).ravel().tolist() if normalized else None,
            },
        }
        p = out / snapshot_name(t)
        p.write_text(json.dumps(record))
        paths.append(p)
    return paths


def _finish(sc: Scenario, traj: Trajectory, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    write_series(out / "series.csv", traj)
    write_snapshots(out, sc, traj)
    if traj.failure:
        (out / "verdicts.json").write_text("[]")
        log.error("%s: solver stopped: %s", sc.name, traj.failure)
        return EXIT_ERROR
    try:
        verdicts = run_checks(sc, traj)
    except verify.PreconditionError as exc:
        log.error("%s: check precondition failed: %s", sc.name, exc)
        return EXIT_ERROR
    report = verify.DiagnosticsReport(verdicts)
    (out / "verdicts.json").write_text(report.to_json())
    for v in verdicts:
        log.info("%s: %-18s %s  worst=%.3e tol=%.1e", sc.name, v.name, "PASS" if v.passed else "FAIL",
                 v.worst_violation, v.tolerance_used)
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def run_scenario(path: str | os.PathLike) -> int:
    try:
        cfg = load_config(path)
        sc = Scenario.from_config(cfg)
        traj = integrate(sc, sc.u0, cfg["time"]["t0"], sc.samples)
        return _finish(sc, traj, output_dir(cfg))
    except ScenarioError as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    except Exception as exc:  # runtime failure: report, do not crash the batch
        log.error("%s: runtime error: %s", path, exc)
        return EXIT_ERROR


class SnapshotError(ValueError):
    pass


def load_snapshot(path: str | os.PathLike) -> dict:
    try:
        rec = json.loads(Path(path).read_text())
        for key in ("chart", "t", "u", "state"):
            if key not in rec:
                raise SnapshotError(f"snapshot lacks '{key}'")
        rec["chart_obj"] = Chart(**rec["chart"])
        rec["u_arr"] = np.asarray(rec["u"], dtype=float).reshape(rec["chart_obj"].shape)
    except SnapshotError:
        raise
    except Exception as exc:
        raise SnapshotError(f"corrupt snapshot {path}: {exc}") from exc
    return rec


def resume(snapshot_path: str | os.PathLike, config_path: str | os.PathLike) -> int:
    """Continue a scenario from a snapshot.

    Implicit Euler runs continue on the same fixed step grid, so the resumed
    states agree bit for bit with an uninterrupted run.
    """
    try:
        cfg = load_config(config_path)
        sc = Scenario.from_config(cfg)
        rec = load_snapshot(snapshot_path)
        if rec["chart_obj"] != sc.chart:
            raise ScenarioError(f"snapshot chart {rec['chart']} does not match scenario chart {chart_spec(sc.chart)}")
        state = rec["state"]
        t_snap = float(rec["t"])
        if not t_snap < cfg["time"]["t_end"]:
            raise ScenarioError("snapshot is already at the end of the run")
        start = ConformalField(sc.chart, rec["u_arr"])
        later = [t for t in sc.samples if t > t_snap * (1 + 1e-12) + 1e-15]
        origin = None
        if not cfg.get("normalized"):
            t_start = float(state["time"])
            if state.get("step") is not None and sc.control.scheme is Scheme.IMPLICIT_EULER:
                origin = (float(state["t_origin"]), int(state["step"]))
        else:
            t_start = t_snap
        traj = integrate(sc, start, t_start, [t_start] + later, step_origin=origin)
        return _finish(sc, traj, output_dir(cfg))
    except (ScenarioError, SnapshotError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    except Exception as exc:
        log.error("runtime error: %s", exc)
        return EXIT_ERROR


def _refine(chart: Chart, level: int) -> Chart:
    n = (chart.n - 1) * 2**level + 1
    return Chart(chart.kind, chart.extent, n, chart.mask_radius)


def convergence_study(config_path: str | os.PathLike, levels: int) -> int:
    """Order of accuracy against the scenario's exact flow; writes ``order.csv``."""
    try:
        cfg = load_config(config_path)
        if "exact" not in cfg["initial"] or cfg["boundary"]["kind"] != "exact":
            raise ScenarioError("study needs exact initial data and exact boundary data")
        if levels < 3:
            raise ScenarioError("study needs at least 3 levels")
        flow = build_flow(cfg["boundary"]["flow"])
        base = build_chart(cfg["chart"])
        grids = [_refine(base, k) for k in range(levels)]
        control = build_control(cfg)
        window = (cfg["time"]["t0"], cfg["time"]["t_end"])
        result = verify.order_of_accuracy(flow, grids, control, window)
    except (ScenarioError, verify.PreconditionError, GeometryError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    except Exception as exc:
        log.error("runtime error: %s", exc)
        return EXIT_ERROR
    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "order.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "n", "dx", "sup_error", "fitted_order"])
        order = "" if result.order is None else _fmt(result.order)
        for k, (g, err) in enumerate(zip(grids, result.errors)):
            w.writerow([k, g.n, _fmt(g.dx), _fmt(err), order])
    if result.degenerate:
        log.info("%s: errors at round-off level, order fit skipped", cfg["name"])
        return EXIT_OK
    log.info("%s: fitted order %.3f", cfg["name"], result.order)
    expect = cfg.get("study")
    if expect and abs(result.order - expect["order"]) > expect["tol"]:
        return EXIT_CHECK_FAILED
    return EXIT_OK


def bundled_dir() -> Path:
    return Path(str(resources.files("ricci2d") / "scenarios"))


def _resolve(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    bundled = bundled_dir() / f"{path}.yaml"
    return bundled if bundled.exists() else p


def _batch_one(path: str) -> tuple[str, int, int]:
    expect = EXIT_OK
    try:
        cfg = yaml.safe_load(Path(path).read_text())
        expect = int(cfg.get("expect_exit", EXIT_OK))
    except Exception:
        pass
    return path, run_scenario(path), expect


def batch(directory: str | os.PathLike | None, jobs: int | None = None) -> int:
    """Run every ``*.yaml`` in ``directory`` concurrently.

    Returns 0 when each scenario exits with its declared ``expect_exit``
    (default 0), 2 otherwise.
    """
    d = Path(directory) if directory else bundled_dir()
    paths = sorted(str(p) for p in d.glob("*.yaml"))
    if not paths:
        log.error("no scenarios in %s", d)
        return EXIT_ERROR
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        results = list(pool.map(_batch_one, paths))
    ok = True
    for path, code, expect in results:
        match = code == expect
        ok &= match
        print(f"{'ok  ' if match else 'MISMATCH'} {Path(path).stem:<28} exit={code} expected={expect}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="ricci2d", description="Ricci flow scenario runner")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run a scenario file (or bundled scenario name)")
    p.add_argument("config")
    p = sub.add_parser("resume", help="continue a scenario from a snapshot")
    p.add_argument("snapshot")
    p.add_argument("config")
    p = sub.add_parser("study", help="convergence study against the exact flow")
    p.add_argument("config")
    p.add_argument("--levels", type=int, default=3)
    p = sub.add_parser("batch", help="run all scenarios of a directory concurrently")
    p.add_argument("directory", nargs="?", default=None, help="defaults to the bundled scenarios")
    p.add_argument("--jobs", type=int, default=None)
    sub.add_parser("list", help="list bundled scenarios")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")

    if args.command == "run":
        return run_scenario(_resolve(args.config))
    if args.command == "resume":
        return resume(args.snapshot, _resolve(args.config))
    if args.command == "study":
        return convergence_study(_resolve(args.config), args.levels)
    if args.command == "batch":
        return batch(args.directory, args.jobs)
    for p in sorted(bundled_dir().glob("*.yaml")):
        print(p.stem)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
