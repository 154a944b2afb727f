"""Receding-horizon closed loop, twin-plant prediction errors and metrics.

Each step builds the configured controller's program from current
measurements and the (prescient) forecast window, solves it, applies the
first input to the true plant and records everything.  Evaluation replays
each stored plan on a twin plant started from the measured state, producing
per-prediction-step error samples, box-plot statistics and violation metrics;
CSV emission is byte-stable so repeated runs can be compared directly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .plant import ControlInput, Exogenous, GridParams, PlantState, battery_step, stage_cost, step
from .problems import History, MpcConfig, build_hammerstein_dd, build_linear_dd, build_reference
from .scenario import IODataset, Profile
from .solver import SolveResult, SolverSettings, solve_minlp

__all__ = [
    "CONTROLLERS",
    "PlanRecord",
    "StepRecord",
    "Trace",
    "BoxStats",
    "ViolationMetrics",
    "ClosedLoopError",
    "run_closed_loop",
    "prediction_error_eval",
    "violation_metrics",
    "box_stats",
    "emit_csv",
    "load_trace_csv",
    "save_plans_csv",
    "load_plans_csv",
    "twin_plant_errors",
]

CONTROLLERS = ("reference", "linear-dd", "hammerstein-dd")


class ClosedLoopError(RuntimeError):
    """Raised when a receding-horizon solve fails; carries the step index."""

    def __init__(self, t: int, detail: str):
        super().__init__(f"closed loop aborted at step {t}: {detail}")
        self.step_index = t
        self.detail = detail


@dataclass(frozen=True)
class PlanRecord:
    """Planned storage inputs and predicted states of one solve.

    ``x[i]`` predicts the state at offset ``k0 + i``; the reference
    controller exposes ``k = 1..L``, the data-driven ones ``k = 0..L-1``
    (their trajectory window ends one step earlier).
    """

    kind: str
    k0: int
    p_s: np.ndarray
    x: np.ndarray


@dataclass(frozen=True)
class StepRecord:
    t: int
    state: PlantState
    inp: ControlInput
    exo: Exogenous
    state_after: PlantState
    stage_cost: float
    solver_stats: dict = field(default_factory=dict)
    plan: PlanRecord | None = None


@dataclass
class Trace:
    controller: str
    params: GridParams
    records: list[StepRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def total_cost(self) -> float:
        return float(sum(r.stage_cost for r in self.records))


@dataclass(frozen=True)
class BoxStats:
    k: int
    median: float
    q1: float
    q3: float
    lo: float
    hi: float
    outliers: int
    n: int


@dataclass(frozen=True)
class ViolationMetrics:
    average_capacity: float
    max_capacity: float
    max_balance_residual: float


def _bootstrap_input(state: PlantState, exo: Exogenous, params: GridParams) -> ControlInput:
    """Balance policy for the warm-up steps: hold the storage idle if the
    conventional unit and the renewable can carry the load, otherwise use the
    smallest storage assist that restores balance."""
    load = -exo.w_d
    p_r = min(exo.w_r, load)
    residual = load - p_r
    if residual <= 1e-12:
        return ControlInput(p_t=0.0, p_s=0.0, p_r=p_r, delta=0)
    if params.p_t_min <= residual <= params.p_t_max:
        return ControlInput(p_t=residual, p_s=0.0, p_r=p_r, delta=1)
    if residual < params.p_t_min:
        return ControlInput(p_t=params.p_t_min, p_s=residual - params.p_t_min, p_r=p_r, delta=1)
    p_s = residual - params.p_t_max
    if p_s > params.p_s_max:
        raise ClosedLoopError(-1, f"bootstrap cannot balance load {load}")
    return ControlInput(p_t=params.p_t_max, p_s=p_s, p_r=p_r, delta=1)


def run_closed_loop(
    controller: str,
    profile: Profile,
    dataset: IODataset | None,
    params: GridParams,
    cfg: MpcConfig,
    settings: SolverSettings,
    T: int,
    x0: float,
    delta0: int = 0,
) -> Trace:
    """Simulate ``T`` receding-horizon steps with prescient forecasts.

    Data-driven controllers need ``dataset`` and bootstrap their first
    ``n_tilde`` steps with the balance policy so the measurement history
    exists.  A failed solve aborts with the step index rather than recovering
    silently.
    """
    if controller not in CONTROLLERS:
        raise ValueError(f"unknown controller {controller!r}, expected one of {CONTROLLERS}")
    if controller != "reference" and dataset is None:
        raise ValueError(f"controller {controller!r} requires an excitation dataset")
    L, nt = cfg.L, cfg.n_tilde
    if profile.steps < T + L:
        raise ValueError(f"profile covers {profile.steps} steps, need T + L = {T + L} for prescient forecasts")

    trace = Trace(controller=controller, params=params)
    state = PlantState(x=x0, delta_prev=delta0)
    applied_u: list[float] = []
    measured_x: list[float] = [x0]
    for t in range(T):
        exo = Exogenous(w_r=float(profile.w_r[t]), w_d=float(profile.w_d[t]))
        plan = None
        stats: dict = {}
        if controller != "reference" and t < nt:
            inp = _bootstrap_input(state, exo, params)
        else:
            if t >= nt:
                hist = History(
                    u_hist=np.array(applied_u[t - nt : t]),
                    y_hist=np.array(measured_x[t - nt : t]),
                    delta_m=state.delta_prev,
                    x_m=state.x,
                )
            else:  # reference controller before nt inputs exist: pairs unused
                pad = nt - t
                hist = History(
                    u_hist=np.array([0.0] * pad + applied_u[:t]),
                    y_hist=np.array([measured_x[0]] * pad + measured_x[:t]),
                    delta_m=state.delta_prev,
                    x_m=state.x,
                )
            forecast = profile.window(t, L)
            if controller == "reference":
                prog = build_reference(hist, forecast, params, cfg)
            elif controller == "linear-dd":
                prog = build_linear_dd(hist, dataset, forecast, params, cfg)
            else:
                prog = build_hammerstein_dd(hist, dataset, forecast, params, cfg)
            res: SolveResult = solve_minlp(prog, settings)
            if res.status != "optimal":
                raise ClosedLoopError(t, f"solver returned {res.status}")
            first = prog.meta["first_input"]
            inp = ControlInput(
                p_t=res.assignment[first["p_t"]],
                p_s=res.assignment[first["p_s"]],
                p_r=res.assignment[first["p_r"]],
                delta=int(round(res.assignment[first["delta"]])),
            )
            plan = PlanRecord(
                kind=controller,
                k0=int(prog.meta["plan_state_k0"]),
                p_s=np.array([res.assignment[name] for name in prog.meta["plan_inputs"]]),
                x=np.array([res.assignment[name] for name in prog.meta["plan_states"]]),
            )
            stats = {
                "objective": res.objective,
                "nodes": res.stats.nodes_explored,
                "sqp_iterations": res.stats.sqp_iterations,
                "qp_iterations": res.stats.qp_iterations,
                "max_residual": res.stats.max_residual,
            }
        cost = stage_cost(inp, state.delta_prev, params)
        nxt = step(state, inp, exo, params)
        trace.records.append(
            StepRecord(t=t, state=state, inp=inp, exo=exo, state_after=nxt, stage_cost=cost, solver_stats=stats, plan=plan)
        )
        applied_u.append(inp.p_s)
        measured_x.append(nxt.x)
        state = nxt
    return trace


def twin_plant_errors(x_measured: float, plan: PlanRecord, params: GridParams) -> dict[int, float]:
    """Apply a full plan to an exact plant copy started from the measured
    state; absolute state-prediction error per prediction step."""
    errors: dict[int, float] = {}
    if plan.k0 == 0:
        errors[0] = abs(x_measured - plan.x[0])
    x = x_measured
    for i, u in enumerate(plan.p_s):
        x = battery_step(x, float(u), params)
        k = i + 1
        idx = k - plan.k0
        if 0 <= idx < len(plan.x):
            errors[k] = abs(x - plan.x[idx])
    return errors


def prediction_error_eval(trace: Trace, params: GridParams | None = None) -> dict[int, np.ndarray]:
    """Twin-plant prediction-error samples grouped by prediction step."""
    params = params or trace.params
    groups: dict[int, list[float]] = {}
    for rec in trace.records:
        if rec.plan is None:
            continue
        for k, err in twin_plant_errors(rec.state.x, rec.plan, params).items():
            groups.setdefault(k, []).append(err)
    return {k: np.array(v) for k, v in sorted(groups.items())}


def violation_metrics(trace: Trace, params: GridParams | None = None) -> ViolationMetrics:
    """Average/max capacity violation of the realized states and the worst
    power-balance residual of the applied inputs."""
    params = params or trace.params
    if not trace.records:
        return ViolationMetrics(0.0, 0.0, 0.0)
    cap = []
    bal = []
    for rec in trace.records:
        x = rec.state_after.x
        cap.append(max(0.0, x - params.x_max) + max(0.0, params.x_min - x))
        bal.append(abs(rec.inp.p_t + rec.inp.p_s + rec.inp.p_r + rec.exo.w_d))
    return ViolationMetrics(float(np.mean(cap)), float(np.max(cap)), float(np.max(bal)))


def box_stats(groups: Mapping[int, np.ndarray]) -> list[BoxStats]:
    """Box-plot statistics per prediction step: midpoint-interpolated
    quartiles, Tukey 1.5*IQR whiskers clipped to the data, outlier count."""
    out = []
    for k in sorted(groups):
        vals = np.asarray(groups[k], dtype=float)
        if vals.size == 0:
            raise ValueError(f"prediction step {k} has no samples")
        q1, med, q3 = np.percentile(vals, [25.0, 50.0, 75.0], method="midpoint")
        iqr = q3 - q1
        fence_lo, fence_hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
        inside = vals[(vals >= fence_lo) & (vals <= fence_hi)]
        lo = float(inside.min()) if inside.size else float(med)
        hi = float(inside.max()) if inside.size else float(med)
        outliers = int(np.count_nonzero((vals < fence_lo) | (vals > fence_hi)))
        out.append(BoxStats(k=k, median=float(med), q1=float(q1), q3=float(q3), lo=lo, hi=hi, outliers=outliers, n=vals.size))
    return out


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def emit_csv(obj, path) -> None:
    """Write a trace, box statistics or violation metrics as CSV."""
    if isinstance(obj, Trace):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "p_t", "p_s", "p_r", "w_r", "w_d", "x", "delta", "stage_cost"])
            for rec in obj.records:
                w.writerow(
                    [
                        rec.t,
                        _fmt(rec.inp.p_t),
                        _fmt(rec.inp.p_s),
                        _fmt(rec.inp.p_r),
                        _fmt(rec.exo.w_r),
                        _fmt(rec.exo.w_d),
                        _fmt(rec.state.x),
                        rec.inp.delta,
                        _fmt(rec.stage_cost),
                    ]
                )
    elif isinstance(obj, ViolationMetrics):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            w.writerow(["average_capacity_violation", _fmt(obj.average_capacity)])
            w.writerow(["max_capacity_violation", _fmt(obj.max_capacity)])
            w.writerow(["max_balance_residual", _fmt(obj.max_balance_residual)])
    elif isinstance(obj, list) and all(isinstance(b, BoxStats) for b in obj):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "median", "q1", "q3", "lo", "hi", "outliers", "n"])
            for b in obj:
                w.writerow([b.k, _fmt(b.median), _fmt(b.q1), _fmt(b.q3), _fmt(b.lo), _fmt(b.hi), b.outliers, b.n])
    else:
        raise TypeError(f"emit_csv cannot serialize {type(obj)!r}")


def load_trace_csv(path) -> dict:
    """Columns of a trace CSV as arrays (enough to recompute costs/metrics)."""
    cols: dict[str, list] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"step", "p_t", "p_s", "p_r", "w_r", "w_d", "x", "delta", "stage_cost"}
        if reader.fieldnames is None or not expected.issubset(reader.fieldnames):
            raise ValueError(f"{path}: expected trace columns {sorted(expected)}")
        for row in reader:
            for key in expected:
                cols.setdefault(key, []).append(float(row[key]))
    if not cols:
        raise ValueError(f"{path}: trace file has no rows")
    return {k: np.array(v) for k, v in cols.items()}


def save_plans_csv(trace: Trace, path) -> None:
    """Sidecar with the per-step plans: one row per (t, k)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "k", "p_s", "x"])
        for rec in trace.records:
            if rec.plan is None:
                continue
            plan = rec.plan
            ks = sorted(set(range(len(plan.p_s))) | set(range(plan.k0, plan.k0 + len(plan.x))))
            for k in ks:
                ps = _fmt(plan.p_s[k]) if k < len(plan.p_s) else ""
                xv = _fmt(plan.x[k - plan.k0]) if 0 <= k - plan.k0 < len(plan.x) else ""
                w.writerow([rec.t, k, ps, xv])


def load_plans_csv(path, kind: str = "") -> dict[int, PlanRecord]:
    rows: dict[int, dict[int, tuple]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"t", "k", "p_s", "x"}.issubset(reader.fieldnames):
            raise ValueError(f"{path}: expected plan columns t,k,p_s,x")
        for row in reader:
            t, k = int(row["t"]), int(row["k"])
            ps = float(row["p_s"]) if row["p_s"] != "" else None
            xv = float(row["x"]) if row["x"] != "" else None
            rows.setdefault(t, {})[k] = (ps, xv)
    plans = {}
    for t, by_k in rows.items():
        ks = sorted(by_k)
        p_s = np.array([by_k[k][0] for k in ks if by_k[k][0] is not None])
        x_ks = [k for k in ks if by_k[k][1] is not None]
        x = np.array([by_k[k][1] for k in x_ks])
        plans[t] = PlanRecord(kind=kind, k0=x_ks[0] if x_ks else 0, p_s=p_s, x=x)
    return plans


def run_summary(trace: Trace, metrics: ViolationMetrics) -> dict:
    solved = [r for r in trace.records if r.solver_stats]
    return {
        "controller": trace.controller,
        "steps": len(trace.records),
        "total_stage_cost": trace.total_cost,
        "average_capacity_violation": metrics.average_capacity,
        "max_capacity_violation": metrics.max_capacity,
        "max_balance_residual": metrics.max_balance_residual,
        "solver": {
            "solves": len(solved),
            "total_nodes": int(sum(r.solver_stats["nodes"] for r in solved)),
            "total_sqp_iterations": int(sum(r.solver_stats["sqp_iterations"] for r in solved)),
            "max_residual": max((r.solver_stats["max_residual"] for r in solved), default=0.0),
        },
    }


def save_summary_json(summary: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
