"""Builders translating the three MPC formulations into solver-agnostic programs.

A `Program` is a plain description of a mixed-integer quadratically
constrained problem: boxed continuous variables, binary variables, sparse
linear equality/inequality rows, nonconvex square equalities ``z = p**2`` and
a quadratic objective.  The three builders emit, respectively,

* the model-based reference controller (exact battery dynamics via square
  auxiliaries),
* the linear data-driven controller (recorded-trajectory Hankel equality with
  a penalized slack absorbing plant-model mismatch), and
* the Hammerstein-type data-driven controller (lifted-input Hankel equality,
  exact by construction, with square equalities tying the lift together).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .hankel import build_hankel, is_persistently_exciting
from .plant import GridParams
from .scenario import IODataset, Profile

__all__ = [
    "LinearRow",
    "Program",
    "MpcConfig",
    "History",
    "build_reference",
    "build_linear_dd",
    "build_hammerstein_dd",
]


@dataclass(frozen=True)
class LinearRow:
    """Sparse linear row ``sum(coef * z[idx]) (= | <=) rhs``."""

    idx: np.ndarray
    coef: np.ndarray
    rhs: float

    def __post_init__(self):
        idx = np.asarray(self.idx, dtype=np.int64)
        coef = np.asarray(self.coef, dtype=float)
        if idx.shape != coef.shape or idx.ndim != 1 or idx.size == 0:
            raise ValueError("row needs matching, nonempty index/coefficient arrays")
        object.__setattr__(self, "idx", idx)
        object.__setattr__(self, "coef", coef)


@dataclass(frozen=True)
class Program:
    """Solver-agnostic optimization program.

    The objective is ``0.5 * z' Q z + c' z + const`` where ``Q`` is given by
    the symmetric entries in ``obj_quad`` (each ``(i, j, Q_ij)`` with
    ``i <= j`` stated once).
    """

    var_names: tuple[str, ...]
    lb: np.ndarray
    ub: np.ndarray
    binary: np.ndarray
    eq_rows: tuple[LinearRow, ...]
    ineq_rows: tuple[LinearRow, ...]
    square_eqs: tuple[tuple[int, int], ...]
    obj_quad: tuple[tuple[int, int, float], ...]
    obj_lin: np.ndarray
    obj_const: float
    kind: str = "custom"
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.var_names)
        if len(set(self.var_names)) != n:
            raise ValueError("variable names must be unique")
        lb = np.asarray(self.lb, dtype=float)
        ub = np.asarray(self.ub, dtype=float)
        binary = np.asarray(self.binary, dtype=bool)
        lin = np.asarray(self.obj_lin, dtype=float)
        for name, arr in (("lb", lb), ("ub", ub), ("binary", binary), ("obj_lin", lin)):
            if arr.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},), got {arr.shape}")
        for row in list(self.eq_rows) + list(self.ineq_rows):
            if np.any(row.idx < 0) or np.any(row.idx >= n):
                raise ValueError("row references an undeclared variable")
        for z_idx, p_idx in self.square_eqs:
            if not (0 <= z_idx < n and 0 <= p_idx < n):
                raise ValueError("square equality references an undeclared variable")
            if binary[z_idx] or binary[p_idx]:
                raise ValueError("square equalities must reference continuous variables")
        for i, j, _ in self.obj_quad:
            if not (0 <= i <= j < n):
                raise ValueError("objective entries must be upper-triangular indices of declared variables")
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)
        object.__setattr__(self, "binary", binary)
        object.__setattr__(self, "obj_lin", lin)
        object.__setattr__(self, "_index", {name: i for i, name in enumerate(self.var_names)})

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    @property
    def n_binary(self) -> int:
        return int(np.count_nonzero(self.binary))

    def var_index(self, name: str) -> int:
        return self._index[name]

    def value(self, assignment: Mapping[str, float]) -> float:
        """Objective value at a full assignment by variable name."""
        z = np.array([assignment[name] for name in self.var_names])
        val = self.obj_const + float(self.obj_lin @ z)
        for i, j, q in self.obj_quad:
            val += 0.5 * q * z[i] * z[j] if i == j else q * z[i] * z[j]
        return val

    def to_json_dict(self) -> dict:
        """Debug dump of variables, rows and square pairs."""
        return {
            "kind": self.kind,
            "variables": [
                {
                    "name": name,
                    "lb": self.lb[i],
                    "ub": self.ub[i],
                    "binary": bool(self.binary[i]),
                }
                for i, name in enumerate(self.var_names)
            ],
            "eq_rows": [
                {"idx": row.idx.tolist(), "coef": row.coef.tolist(), "rhs": row.rhs} for row in self.eq_rows
            ],
            "ineq_rows": [
                {"idx": row.idx.tolist(), "coef": row.coef.tolist(), "rhs": row.rhs} for row in self.ineq_rows
            ],
            "square_eqs": [[int(z), int(p)] for z, p in self.square_eqs],
            "objective": {
                "quad": [[int(i), int(j), q] for i, j, q in self.obj_quad],
                "lin": self.obj_lin.tolist(),
                "const": self.obj_const,
            },
        }

    def dump_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)


@dataclass(frozen=True)
class MpcConfig:
    """Horizon, order bound and regularization weights of the MPC problems."""

    L: int = 10
    n_tilde: int = 1
    gamma: float | None = None  # None: use the grid discount factor
    c_alpha: float = 5.0
    c_beta: float = 1e4
    alpha_tikhonov: float = 1e-9

    def __post_init__(self):
        if self.L < 1:
            raise ValueError(f"prediction horizon must be >= 1, got {self.L}")
        if self.n_tilde < 1:
            raise ValueError(f"order bound n_tilde must be >= 1, got {self.n_tilde}")
        if self.c_alpha <= 0 or self.c_beta <= 0 or self.alpha_tikhonov <= 0:
            raise ValueError("regularization weights must be positive")

    def discount(self, params: GridParams) -> float:
        return params.gamma if self.gamma is None else self.gamma


@dataclass(frozen=True)
class History:
    """Most recent measurements: n_tilde (p_s, x) pairs ending at t-1 plus the current state."""

    u_hist: np.ndarray
    y_hist: np.ndarray
    delta_m: int
    x_m: float

    def __post_init__(self):
        u = np.asarray(self.u_hist, dtype=float).reshape(-1)
        y = np.asarray(self.y_hist, dtype=float).reshape(-1)
        if u.shape != y.shape or u.size < 1:
            raise ValueError(f"history needs matching nonempty input/output windows, got {u.size} and {y.size}")
        if self.delta_m not in (0, 1):
            raise ValueError(f"delta_m must be 0 or 1, got {self.delta_m}")
        object.__setattr__(self, "u_hist", u)
        object.__setattr__(self, "y_hist", y)

    @property
    def n_tilde(self) -> int:
        return self.u_hist.shape[0]


class _ProgramBuilder:
    def __init__(self):
        self.names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.binary: list[bool] = []
        self.eq: list[LinearRow] = []
        self.ineq: list[LinearRow] = []
        self.squares: list[tuple[int, int]] = []
        self.quad: list[tuple[int, int, float]] = []
        self.lin: dict[int, float] = {}
        self.const = 0.0

    def add_var(self, name: str, lb: float = -np.inf, ub: float = np.inf, binary: bool = False) -> int:
        self.names.append(name)
        self.lb.append(0.0 if binary else lb)
        self.ub.append(1.0 if binary else ub)
        self.binary.append(binary)
        return len(self.names) - 1

    def add_eq(self, idx, coef, rhs: float):
        self.eq.append(LinearRow(np.asarray(idx), np.asarray(coef, dtype=float), float(rhs)))

    def add_ineq(self, idx, coef, rhs: float):
        self.ineq.append(LinearRow(np.asarray(idx), np.asarray(coef, dtype=float), float(rhs)))

    def add_lin_cost(self, idx: int, coef: float):
        self.lin[idx] = self.lin.get(idx, 0.0) + coef

    def add_square_cost(self, idx: int, weight: float):
        # weight * z_i^2  ->  Q_ii = 2 * weight
        self.quad.append((idx, idx, 2.0 * weight))

    def finish(self, kind: str, meta: dict) -> Program:
        n = len(self.names)
        lin = np.zeros(n)
        for i, c in self.lin.items():
            lin[i] = c
        return Program(
            var_names=tuple(self.names),
            lb=np.array(self.lb),
            ub=np.array(self.ub),
            binary=np.array(self.binary, dtype=bool),
            eq_rows=tuple(self.eq),
            ineq_rows=tuple(self.ineq),
            square_eqs=tuple(self.squares),
            obj_quad=tuple(self.quad),
            obj_lin=lin,
            obj_const=self.const,
            kind=kind,
            meta=meta,
        )


def _check_forecast(forecast: Profile, L: int):
    if forecast.steps < L:
        raise ValueError(f"forecast window covers {forecast.steps} steps, horizon needs {L}")


def _add_grid_stage(b: _ProgramBuilder, k: int, params: GridParams, forecast: Profile, gamma: float):
    """Stage variables and grid constraints shared by all three problems.

    Returns the indices (p_t, p_r, s, delta) of step ``k``; the caller wires
    the storage power into the balance row.
    """
    disc = gamma**k
    i_pt = b.add_var(f"p_t[{k}]", 0.0, params.p_t_max)
    i_pr = b.add_var(f"p_r[{k}]", params.p_r_min, float(forecast.w_r[k]))
    i_s = b.add_var(f"s[{k}]", 0.0, 1.0)
    i_d = b.add_var(f"delta[{k}]", binary=True)
    # Commitment window p_t_min*delta <= p_t <= p_t_max*delta.
    b.add_ineq([i_pt, i_d], [1.0, -params.p_t_max], 0.0)
    b.add_ineq([i_pt, i_d], [-1.0, params.p_t_min], 0.0)
    b.add_lin_cost(i_pt, disc * params.c0)
    b.add_lin_cost(i_pr, -disc * params.c0)
    b.add_lin_cost(i_s, disc * params.c1)
    b.add_lin_cost(i_d, disc * params.c2)
    return i_pt, i_pr, i_s, i_d


def _add_switch_epigraph(b: _ProgramBuilder, i_s: int, i_d: int, i_d_prev: int | None, delta_m: int):
    """Rows making s(k) >= |delta(k) - delta(k-1)| at any optimum."""
    if i_d_prev is None:
        b.add_ineq([i_d, i_s], [1.0, -1.0], float(delta_m))
        b.add_ineq([i_d, i_s], [-1.0, -1.0], float(-delta_m))
    else:
        b.add_ineq([i_d, i_d_prev, i_s], [1.0, -1.0, -1.0], 0.0)
        b.add_ineq([i_d, i_d_prev, i_s], [-1.0, 1.0, -1.0], 0.0)


def build_reference(history: History, forecast: Profile, params: GridParams, cfg: MpcConfig) -> Program:
    """Model-based reference problem with exact (quadratic-loss) battery dynamics.

    Decision variables per step: powers, commitment, switch epigraph and the
    square auxiliary ``z(k) = p_s(k)^2`` feeding the dynamics row; states run
    from the measured ``x(0) = x_m`` through ``x(L)``.
    """
    L = cfg.L
    _check_forecast(forecast, L)
    gamma = cfg.discount(params)
    b = _ProgramBuilder()
    z_cap = max(params.p_s_min**2, params.p_s_max**2)

    stage = [_add_grid_stage(b, k, params, forecast, gamma) for k in range(L)]
    i_ps = [b.add_var(f"p_s[{k}]", params.p_s_min, params.p_s_max) for k in range(L)]
    i_z = [b.add_var(f"z[{k}]", 0.0, z_cap) for k in range(L)]
    i_x = [b.add_var("x[0]", history.x_m, history.x_m)]
    i_x += [b.add_var(f"x[{k}]", params.x_min, params.x_max) for k in range(1, L + 1)]

    for k in range(L):
        i_pt, i_pr, i_s, i_d = stage[k]
        b.add_eq([i_pt, i_ps[k], i_pr], [1.0, 1.0, 1.0], -float(forecast.w_d[k]))
        b.add_eq(
            [i_x[k + 1], i_x[k], i_ps[k], i_z[k]],
            [1.0, -params.A, -params.B_l, -params.B_q],
            0.0,
        )
        b.squares.append((i_z[k], i_ps[k]))
        _add_switch_epigraph(b, i_s, i_d, stage[k - 1][3] if k > 0 else None, history.delta_m)

    meta = {
        "L": L,
        "n_tilde": cfg.n_tilde,
        "first_input": {"p_t": "p_t[0]", "p_s": "p_s[0]", "p_r": "p_r[0]", "delta": "delta[0]"},
        "plan_inputs": [f"p_s[{k}]" for k in range(L)],
        "plan_states": [f"x[{k}]" for k in range(1, L + 1)],
        "plan_state_k0": 1,
    }
    return b.finish("reference", meta)


def _check_history(history: History, cfg: MpcConfig):
    if history.n_tilde != cfg.n_tilde:
        raise ValueError(f"history holds {history.n_tilde} pairs, configuration expects {cfg.n_tilde}")


def build_linear_dd(
    history: History,
    dataset: IODataset,
    forecast: Profile,
    params: GridParams,
    cfg: MpcConfig,
) -> Program:
    """Linear data-driven problem: Hankel trajectory equality with output slack.

    The storage window spans ``k = -n_tilde .. L-1``; the first ``n_tilde``
    pairs are pinned to the measured history, the slack ``beta`` (one entry
    per output-window row) absorbs the mismatch between the linear trajectory
    space and the input-nonlinear plant, and both ``alpha`` and ``beta`` are
    penalized quadratically.
    """
    L, nt = cfg.L, cfg.n_tilde
    _check_forecast(forecast, L)
    _check_history(history, cfg)
    W = L + nt
    if dataset.N < 2 * W - 1:
        raise ValueError(f"dataset of length {dataset.N} too short for Hankel order {W}")
    if not is_persistently_exciting(dataset.u, W):
        raise ValueError(
            f"recorded input sequence is not persistently exciting of order {W} "
            f"(full row rank of its order-{W} Hankel matrix is required)"
        )
    gamma = cfg.discount(params)
    H_u = build_hankel(dataset.u, W).data
    H_y = build_hankel(dataset.y, W).data
    n_alpha = H_u.shape[1]

    b = _ProgramBuilder()
    stage = [_add_grid_stage(b, k, params, forecast, gamma) for k in range(L)]
    i_ps, i_x = {}, {}
    for k in range(-nt, L):
        if k < 0:
            u_m, y_m = history.u_hist[nt + k], history.y_hist[nt + k]
            i_ps[k] = b.add_var(f"p_s[{k}]", u_m, u_m)
            i_x[k] = b.add_var(f"x[{k}]", y_m, y_m)
        else:
            i_ps[k] = b.add_var(f"p_s[{k}]", params.p_s_min, params.p_s_max)
            lo, hi = (params.x_min, params.x_max) if k >= 1 else (-np.inf, np.inf)
            i_x[k] = b.add_var(f"x[{k}]", lo, hi)
    i_beta = [b.add_var(f"beta[{j}]") for j in range(W)]
    i_alpha = [b.add_var(f"alpha[{i}]") for i in range(n_alpha)]

    for j in range(W):
        b.add_eq([i_ps[-nt + j], *i_alpha], [1.0, *(-H_u[j])], 0.0)
        b.add_eq([i_x[-nt + j], i_beta[j], *i_alpha], [1.0, 1.0, *(-H_y[j])], 0.0)
    for k in range(L):
        i_pt, i_pr, i_s, i_d = stage[k]
        b.add_eq([i_pt, i_ps[k], i_pr], [1.0, 1.0, 1.0], -float(forecast.w_d[k]))
        _add_switch_epigraph(b, i_s, i_d, stage[k - 1][3] if k > 0 else None, history.delta_m)
    for i in i_alpha:
        b.add_square_cost(i, cfg.c_alpha)
    for i in i_beta:
        b.add_square_cost(i, cfg.c_beta)

    meta = {
        "L": L,
        "n_tilde": nt,
        "first_input": {"p_t": "p_t[0]", "p_s": "p_s[0]", "p_r": "p_r[0]", "delta": "delta[0]"},
        "plan_inputs": [f"p_s[{k}]" for k in range(L)],
        "plan_states": [f"x[{k}]" for k in range(L)],
        "plan_state_k0": 0,
    }
    return b.finish("linear-dd", meta)


def build_hammerstein_dd(
    history: History,
    dataset: IODataset,
    forecast: Profile,
    params: GridParams,
    cfg: MpcConfig,
) -> Program:
    """Hammerstein-type data-driven problem with lifted inputs ``(v1, v2)``.

    The lifted Hankel equality represents the input-nonlinear battery exactly;
    the square equalities ``v2(k) = v1(k)^2`` tie the lift to a realizable
    scalar input, and ``v1`` replaces the storage power in the balance rows.
    A tiny Tikhonov term selects the minimum-norm combination weights.
    """
    L, nt = cfg.L, cfg.n_tilde
    _check_forecast(forecast, L)
    _check_history(history, cfg)
    W = L + nt
    if dataset.N < 2 * W - 1:
        raise ValueError(f"dataset of length {dataset.N} too short for Hankel order {W}")
    if not is_persistently_exciting(dataset.v, W):
        raise ValueError(
            f"lifted input sequence is not persistently exciting of order {W} "
            f"(full row rank 2*{W} of its order-{W} Hankel matrix is required)"
        )
    gamma = cfg.discount(params)
    H_v = build_hankel(dataset.v, W).data
    H_y = build_hankel(dataset.y, W).data
    n_alpha = H_v.shape[1]
    v2_cap = max(params.p_s_min**2, params.p_s_max**2)

    b = _ProgramBuilder()
    stage = [_add_grid_stage(b, k, params, forecast, gamma) for k in range(L)]
    i_v1, i_v2, i_x = {}, {}, {}
    for k in range(-nt, L):
        if k < 0:
            u_m, y_m = history.u_hist[nt + k], history.y_hist[nt + k]
            i_v1[k] = b.add_var(f"v1[{k}]", u_m, u_m)
            i_v2[k] = b.add_var(f"v2[{k}]", u_m * u_m, u_m * u_m)
            i_x[k] = b.add_var(f"x[{k}]", y_m, y_m)
        else:
            i_v1[k] = b.add_var(f"v1[{k}]", params.p_s_min, params.p_s_max)
            i_v2[k] = b.add_var(f"v2[{k}]", 0.0, v2_cap)
            lo, hi = (params.x_min, params.x_max) if k >= 1 else (-np.inf, np.inf)
            i_x[k] = b.add_var(f"x[{k}]", lo, hi)
    i_alpha = [b.add_var(f"alpha[{i}]") for i in range(n_alpha)]

    for j in range(W):
        b.add_eq([i_v1[-nt + j], *i_alpha], [1.0, *(-H_v[2 * j])], 0.0)
        b.add_eq([i_v2[-nt + j], *i_alpha], [1.0, *(-H_v[2 * j + 1])], 0.0)
        b.add_eq([i_x[-nt + j], *i_alpha], [1.0, *(-H_y[j])], 0.0)
    for k in range(-nt, L):
        b.squares.append((i_v2[k], i_v1[k]))
    for k in range(L):
        i_pt, i_pr, i_s, i_d = stage[k]
        b.add_eq([i_pt, i_v1[k], i_pr], [1.0, 1.0, 1.0], -float(forecast.w_d[k]))
        _add_switch_epigraph(b, i_s, i_d, stage[k - 1][3] if k > 0 else None, history.delta_m)
    for i in i_alpha:
        b.add_square_cost(i, cfg.alpha_tikhonov)

    meta = {
        "L": L,
        "n_tilde": nt,
        "first_input": {"p_t": "p_t[0]", "p_s": "v1[0]", "p_r": "p_r[0]", "delta": "delta[0]"},
        "plan_inputs": [f"v1[{k}]" for k in range(L)],
        "plan_states": [f"x[{k}]" for k in range(L)],
        "plan_state_k0": 0,
    }
    return b.finish("hammerstein-dd", meta)
