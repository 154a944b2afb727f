"""Deterministic solver for the MPC programs.

Solves are layered: a dual active-set QP engine (`qp_kernel`), a trust-region
SQP loop handling the nonconvex square equalities by tangent re-linearization,
a convex secant/tangent relaxation providing valid lower bounds, and a binary
search layer.  For small binary counts the search enumerates all assignments
in lexicographic order; leaves that provably cannot beat the incumbent are
skipped using admissible bounds (a Lagrangian bound from the root-relaxation
duals plus each survivor's own convex relaxation), which leaves the returned
result identical to brute-force enumeration, ties resolved towards the
lexicographically smallest binary word.  Larger binary counts fall back to
best-first branch and bound on the same relaxation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..problems import Program
from .core import CoreProgram, KernelResult
from .qp_kernel import STATUS_INFEASIBLE, STATUS_ITER_LIMIT, STATUS_OPTIMAL

__all__ = ["SolverSettings", "SolveStats", "SolveResult", "solve_qp", "solve_sqp", "relax_lower_bound", "solve_minlp"]

_TIE_TOL = 1e-11
_BOUND_MARGIN = 1e-6


@dataclass(frozen=True)
class SolverSettings:
    feas_tol: float = 1e-8
    opt_tol: float = 1e-8
    sqp_max_iter: int = 50
    sqp_trust_radius: float = 0.5
    sqp_trust_shrink: float = 0.5
    bnb_node_limit: int = 100_000
    enumerate_threshold: int = 12

    def __post_init__(self):
        for name in ("feas_tol", "opt_tol", "sqp_max_iter", "sqp_trust_radius", "sqp_trust_shrink", "bnb_node_limit", "enumerate_threshold"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class SolveStats:
    nodes_explored: int = 0
    sqp_iterations: int = 0
    qp_iterations: int = 0
    max_residual: float = np.nan


@dataclass
class SolveResult:
    status: str
    objective: float
    assignment: dict = field(default_factory=dict)
    stats: SolveStats = field(default_factory=SolveStats)


class _Accounting:
    def __init__(self):
        self.nodes = 0
        self.sqp_iters = 0
        self.qp_iters = 0

    def add(self, res: KernelResult):
        self.qp_iters += res.iters


def _result_from_leaf(core: CoreProgram, delta: np.ndarray, x_cont: np.ndarray, status: str, acct: _Accounting) -> SolveResult:
    full = core.assemble_full(core.keep_from_leaf(delta.astype(float), x_cont))
    stats = SolveStats(acct.nodes, acct.sqp_iters, acct.qp_iters, core.max_residual(full))
    return SolveResult(status, core.objective(full), core.assignment(full), stats)


def _infeasible(acct: _Accounting) -> SolveResult:
    return SolveResult("infeasible", np.inf, {}, SolveStats(acct.nodes, acct.sqp_iters, acct.qp_iters))


# --------------------------------------------------------------------- SQP
def _sqp_at_leaf(core: CoreProgram, delta: np.ndarray, settings: SolverSettings, acct: _Accounting, p0: np.ndarray | None = None):
    """Trust-region SQP on the square equalities at a fixed binary word.

    Returns (status_str, x_cont or None, relax_value).  The leaf's convex
    relaxation is solved first: it certifies infeasibility, provides the
    linearization start and a valid leaf bound.
    """
    nsq = len(core.squares_cont)
    relax = core.solve_leaf(delta, envelope=True, feas_tol=settings.feas_tol)
    acct.add(relax)
    acct.nodes += 1
    if relax.status == STATUS_INFEASIBLE:
        return "infeasible", None, np.inf
    if relax.status == STATUS_ITER_LIMIT:
        return "iteration-limit", None, -np.inf
    if nsq == 0:
        return "optimal", relax.x, _leaf_value(core, delta, relax.x)
    p_pos = np.array([p for _, p in core.squares_cont])
    z_pos = np.array([z for z, _ in core.squares_cont])
    p_hat = relax.x[p_pos].copy() if p0 is None else p0.copy()
    radius = settings.sqp_trust_radius
    prev_res = np.inf
    best_x = None
    status = "iteration-limit"
    for _ in range(settings.sqp_max_iter):
        acct.sqp_iters += 1
        res = core.solve_leaf(delta, tangents=p_hat, trust=(p_hat, radius), feas_tol=settings.feas_tol)
        acct.add(res)
        if res.status != STATUS_OPTIMAL:
            radius *= settings.sqp_trust_shrink
            if radius < 1e-9:
                break
            continue
        sq_res = float(np.max(np.abs(res.x[z_pos] - res.x[p_pos] ** 2)))
        step = float(np.max(np.abs(res.x[p_pos] - p_hat)))
        if sq_res <= prev_res + 1e-14:
            p_hat = res.x[p_pos].copy()
            prev_res = sq_res
            best_x = res.x
            if sq_res <= settings.feas_tol and step <= settings.opt_tol:
                status = "optimal"
                break
            if step >= 0.99 * radius:
                # accepted step pinned to the trust boundary: widen again so a
                # distant competing optimum is reached in few iterations
                radius = min(radius / settings.sqp_trust_shrink, settings.sqp_trust_radius)
        else:
            radius *= settings.sqp_trust_shrink
            if radius < 1e-9:
                break
    if best_x is None:
        return "infeasible", None, np.inf
    return status, best_x, _relax_value(core, delta, relax.x)


def _relax_value(core: CoreProgram, delta: np.ndarray, x_cont: np.ndarray) -> float:
    return _leaf_value(core, delta, x_cont)


def _leaf_value(core: CoreProgram, delta: np.ndarray, x_cont: np.ndarray) -> float:
    x_keep = core.keep_from_leaf(delta.astype(float), x_cont)
    return 0.5 * float(x_keep @ (core.Q_keep @ x_keep)) + float(core.c_keep @ x_keep) + core.const_keep


# ------------------------------------------------------- Lagrangian leaf bound
def _leaf_bound_coeffs(core: CoreProgram, root: KernelResult, A_in_all: np.ndarray, b_in_all: np.ndarray):
    """Affine-in-delta lower bound on every leaf optimum from root duals.

    Dualizes all root rows (signs clamped for validity), keeps the boxes in a
    separable inner minimization, and under-estimates the eliminated block's
    dense quadratic by its tangent at the root optimum.  Returns
    (base, g) with  bound(delta) = base + g . delta - margin,  or None when a
    free direction makes the separable bound vacuous.
    """
    if core.base_offdiag:
        return None
    u_eq = root.u_rows[: core.E_eq.shape[0]]
    u_in = np.maximum(root.u_rows[core.E_eq.shape[0] :], 0.0)
    x_star = root.x
    Q_add = core.Q_keep - np.diag(core.Q_base_diag)
    c_add = core.c_keep - core.c_base
    g_phi = Q_add @ x_star + c_add
    phi_val = 0.5 * float(x_star @ (Q_add @ x_star)) + float(c_add @ x_star) + (core.const_keep - core.const_base)
    c_hat = core.c_base + g_phi
    if core.E_eq.shape[0]:
        c_hat = c_hat - core.E_eq.T @ u_eq
    if A_in_all.shape[0]:
        c_hat = c_hat + A_in_all.T @ u_in
    const_hat = (
        core.const_base
        + (phi_val - float(g_phi @ x_star))
        + (float(u_eq @ core.e_eq) if u_eq.size else 0.0)
        - (float(u_in @ b_in_all) if u_in.size else 0.0)
    )
    base = const_hat
    for pos in core.cont_pos:
        qd = core.Q_base_diag[pos]
        ch = c_hat[pos]
        lo, hi = core.lb_keep[pos], core.ub_keep[pos]
        if qd > 0.0:
            z = np.clip(-ch / qd, lo, hi)
            base += 0.5 * qd * z * z + ch * z
        elif ch > 1e-7:
            if not np.isfinite(lo):
                return None
            base += ch * lo
        elif ch < -1e-7:
            if not np.isfinite(hi):
                return None
            base += ch * hi
        # |ch| <= 1e-7 on an unbounded direction: treated as zero, covered by
        # the bound margin for any optimum of physical magnitude.
    g = np.array([c_hat[p] + 0.5 * core.Q_base_diag[p] for p in core.bin_pos])
    return base, g


# ------------------------------------------------------ single-bit propagation
def _bit_infeasible(core: CoreProgram, bit: int, val: int, tol: float = 1e-9) -> bool:
    """Interval propagation over the rows near one binary fixing."""
    pos = core.bin_pos[bit]
    rows = []
    for mat, rhs, eq in ((core.E_eq, core.e_eq, True), (core.I_in, core.i_rhs, False)):
        touching = np.flatnonzero(mat[:, pos] != 0.0) if mat.size else []
        vars_near = set()
        for r in touching:
            vars_near.update(np.flatnonzero(mat[r] != 0.0).tolist())
        for r in range(mat.shape[0]):
            if mat[r, pos] != 0.0 or (vars_near and np.any(mat[r, list(vars_near)] != 0.0)):
                rows.append((mat[r], rhs[r], eq))
    lb = core.lb_keep.copy()
    ub = core.ub_keep.copy()
    lb[pos] = ub[pos] = float(val)
    for _ in range(3):
        for a, b, eq in rows:
            nz = np.flatnonzero(a)
            lo_terms = np.where(a[nz] > 0, a[nz] * lb[nz], a[nz] * ub[nz])
            hi_terms = np.where(a[nz] > 0, a[nz] * ub[nz], a[nz] * lb[nz])
            lo, hi = lo_terms.sum(), hi_terms.sum()
            if lo > b + tol or (eq and hi < b - tol):
                return True
            for k, i in enumerate(nz):
                rest_lo = lo - lo_terms[k]
                rest_hi = hi - hi_terms[k]
                coef = a[i]
                if np.isfinite(rest_lo):  # a_i z_i <= b - rest_lo
                    v = (b - rest_lo) / coef
                    if coef > 0:
                        ub[i] = min(ub[i], v)
                    else:
                        lb[i] = max(lb[i], v)
                if eq and np.isfinite(rest_hi):  # a_i z_i >= b - rest_hi
                    v = (b - rest_hi) / coef
                    if coef > 0:
                        lb[i] = max(lb[i], v)
                    else:
                        ub[i] = min(ub[i], v)
            if np.any(lb > ub + tol):
                return True
    return False


# ----------------------------------------------------------------- public API
def _as_settings(settings: SolverSettings | None) -> SolverSettings:
    return settings if settings is not None else SolverSettings()


def _full_fixing(core: CoreProgram, binaries: Mapping[str, int] | None) -> np.ndarray:
    fixing = core.binary_fixing_array(binaries or {})
    if np.any(fixing < 0):
        missing = [core.bin_names[i] for i in np.flatnonzero(fixing < 0)]
        raise ValueError(f"all binary variables must be fixed, missing {missing}")
    return fixing


def solve_qp(
    program: Program,
    binaries: Mapping[str, int] | None = None,
    linearizations: Mapping[str, float] | None = None,
    settings: SolverSettings | None = None,
) -> SolveResult:
    """Convex QP solve with binaries fixed and each square equality replaced
    by its tangent at the given linearization point (keyed by the base
    variable's name)."""
    settings = _as_settings(settings)
    core = CoreProgram(program)
    delta = _full_fixing(core, binaries)
    acct = _Accounting()
    tangents = None
    if core.squares_cont:
        if linearizations is None:
            raise ValueError("program has square equalities; linearization points are required")
        tangents = np.empty(len(core.squares_cont))
        for s, (_, p_loc) in enumerate(core.squares_cont):
            name = program.var_names[core.keep_idx[core.cont_pos[p_loc]]]
            if name not in linearizations:
                raise ValueError(f"missing linearization point for {name!r}")
            tangents[s] = linearizations[name]
    res = core.solve_leaf(delta, tangents=tangents, feas_tol=settings.feas_tol)
    acct.add(res)
    acct.nodes += 1
    if res.status == STATUS_INFEASIBLE:
        return _infeasible(acct)
    status = "optimal" if res.status == STATUS_OPTIMAL else "iteration-limit"
    return _result_from_leaf(core, delta, res.x, status, acct)


def solve_sqp(
    program: Program,
    binaries: Mapping[str, int] | None = None,
    warm_start: Mapping[str, float] | None = None,
    settings: SolverSettings | None = None,
) -> SolveResult:
    """SQP refinement of the square equalities at a fixed binary word.

    Without an explicit warm start the leaf's convex relaxation provides the
    initial linearization points.
    """
    settings = _as_settings(settings)
    core = CoreProgram(program)
    delta = _full_fixing(core, binaries)
    acct = _Accounting()
    p0 = None
    if warm_start is not None and core.squares_cont:
        p0 = np.empty(len(core.squares_cont))
        for s, (_, p_loc) in enumerate(core.squares_cont):
            name = program.var_names[core.keep_idx[core.cont_pos[p_loc]]]
            p0[s] = warm_start.get(name, 0.0)
    status, x_cont, _ = _sqp_at_leaf(core, delta, settings, acct, p0=p0)
    if x_cont is None:
        if status == "infeasible":
            return _infeasible(acct)
        return SolveResult(status, np.inf, {}, SolveStats(acct.nodes, acct.sqp_iters, acct.qp_iters))
    return _result_from_leaf(core, delta, x_cont, status, acct)


def relax_lower_bound(
    program: Program,
    fixing: Mapping[str, int] | None = None,
    settings: SolverSettings | None = None,
) -> float:
    """Objective of the convex relaxation (binaries in [0,1] unless fixed,
    squares replaced by tangent/secant envelopes); +inf when infeasible.
    A valid lower bound: the relaxed feasible set contains the original."""
    settings = _as_settings(settings)
    core = CoreProgram(program)
    part = core.binary_fixing_array(fixing or {})
    res, value, _, _ = core.solve_root(part, feas_tol=settings.feas_tol)
    if res.status == STATUS_INFEASIBLE:
        return np.inf
    return value


def solve_minlp(program: Program, settings: SolverSettings | None = None) -> SolveResult:
    """Global solve: exhaustive (pruned) binary enumeration below the
    enumeration threshold, best-first branch and bound above it."""
    settings = _as_settings(settings)
    core = CoreProgram(program)
    nb = core.n_binary
    acct = _Accounting()
    if nb == 0:
        status, x_cont, _ = _sqp_at_leaf(core, np.zeros(0), settings, acct)
        if x_cont is None:
            return _infeasible(acct) if status == "infeasible" else SolveResult(status, np.inf, {}, SolveStats(acct.nodes, acct.sqp_iters, acct.qp_iters))
        return _result_from_leaf(core, np.zeros(0), x_cont, status, acct)
    if nb <= settings.enumerate_threshold:
        return _solve_enumerate(core, settings, acct)
    return _solve_bnb(core, settings, acct)


def _delta_of_index(idx: int, nb: int) -> np.ndarray:
    # delta[0] is the most significant bit: index order == lexicographic order.
    return np.array([(idx >> (nb - 1 - k)) & 1 for k in range(nb)], dtype=np.int64)


def _solve_enumerate(core: CoreProgram, settings: SolverSettings, acct: _Accounting) -> SolveResult:
    nb = core.n_binary
    total = 1 << nb
    root, root_value, A_in_all, b_in_all = core.solve_root(None, feas_tol=settings.feas_tol)
    acct.add(root)
    acct.nodes += 1
    if root.status == STATUS_INFEASIBLE:
        return _infeasible(acct)
    bound_data = _leaf_bound_coeffs(core, root, A_in_all, b_in_all) if root.status == STATUS_OPTIMAL else None

    bad0 = np.array([_bit_infeasible(core, b, 0) for b in range(nb)])
    bad1 = np.array([_bit_infeasible(core, b, 1) for b in range(nb)])
    if np.any(bad0 & bad1):
        return _infeasible(acct)

    shifts = np.array([nb - 1 - k for k in range(nb)])
    all_idx = np.arange(total, dtype=np.int64)
    bits = (all_idx[:, None] >> shifts[None, :]) & 1
    feasible_mask = ~(np.any((bits == 0) & bad0[None, :], axis=1) | np.any((bits == 1) & bad1[None, :], axis=1))
    if bound_data is not None:
        base, g = bound_data
        d_all = base + bits @ g - _BOUND_MARGIN
    else:
        d_all = np.full(total, -np.inf)

    warm_idx = -1
    if root.status == STATUS_OPTIMAL:
        delta_star = root.x[core.bin_pos]
        warm_bits = (delta_star >= 0.5).astype(np.int64)
        warm_idx = int(warm_bits @ (1 << shifts))

    inc_val = np.inf
    inc_idx = -1
    inc_x = None
    inc_delta = None
    hit_limit = False

    def try_leaf(idx: int):
        nonlocal inc_val, inc_idx, inc_x, inc_delta, hit_limit
        delta = bits[idx].copy()
        p0 = None
        status, x_cont, relax_val = _sqp_at_leaf(core, delta, settings, acct, p0=p0)
        if x_cont is None:
            if status == "iteration-limit":
                hit_limit = True
            return
        if status != "optimal":
            hit_limit = True
        full = core.assemble_full(core.keep_from_leaf(delta.astype(float), x_cont))
        val = core.objective(full)
        if val < inc_val - _TIE_TOL or (val <= inc_val + _TIE_TOL and idx < inc_idx):
            inc_val = val
            inc_idx = idx
            inc_x = x_cont
            inc_delta = delta

    if warm_idx >= 0 and feasible_mask[warm_idx]:
        try_leaf(warm_idx)
    for idx in range(total):
        if idx == warm_idx or not feasible_mask[idx]:
            continue
        if inc_idx >= 0:
            d = d_all[idx]
            if d > inc_val + _TIE_TOL or (d >= inc_val - _TIE_TOL and idx > inc_idx):
                continue
        try_leaf(idx)

    if inc_idx < 0:
        return _infeasible(acct)
    status = "iteration-limit" if hit_limit else "optimal"
    return _result_from_leaf(core, inc_delta, inc_x, status, acct)


def _solve_bnb(core: CoreProgram, settings: SolverSettings, acct: _Accounting) -> SolveResult:
    import heapq

    nb = core.n_binary
    counter = 0
    heap: list = []

    def push(fixing: np.ndarray):
        nonlocal counter
        res, value, _, _ = core.solve_root(fixing, feas_tol=settings.feas_tol)
        acct.add(res)
        acct.nodes += 1
        if res.status == STATUS_INFEASIBLE or not np.isfinite(value):
            return
        heapq.heappush(heap, (value, counter, fixing.copy(), res.x[core.bin_pos].copy()))
        counter += 1

    inc_val = np.inf
    inc_x = None
    inc_delta = None
    hit_limit = False
    push(np.full(nb, -1, dtype=np.int64))
    while heap:
        if acct.nodes >= settings.bnb_node_limit:
            hit_limit = True
            break
        bound, _, fixing, delta_star = heapq.heappop(heap)
        if bound >= inc_val - 1e-12:
            continue
        free = np.flatnonzero(fixing < 0)
        integral = free.size == 0 or np.all(np.abs(delta_star[free] - np.round(delta_star[free])) <= 1e-9)
        if integral:
            delta = fixing.copy()
            delta[free] = np.round(delta_star[free]).astype(np.int64)
            status, x_cont, _ = _sqp_at_leaf(core, delta, settings, acct)
            if x_cont is None:
                if status == "iteration-limit":
                    hit_limit = True
                continue
            if status != "optimal":
                hit_limit = True
            val = _leaf_value(core, delta, x_cont)
            full = core.assemble_full(core.keep_from_leaf(delta.astype(float), x_cont))
            val = core.objective(full)
            if val < inc_val - _TIE_TOL:
                inc_val, inc_x, inc_delta = val, x_cont, delta
            continue
        # branch on the fractional binary nearest 0.5, lowest index first
        frac = np.abs(delta_star[free] - 0.5)
        b = free[int(np.argmin(frac))]
        for v in (0, 1):
            child = fixing.copy()
            child[b] = v
            push(child)
    if inc_delta is None:
        if hit_limit:
            return SolveResult("iteration-limit", np.inf, {}, SolveStats(acct.nodes, acct.sqp_iters, acct.qp_iters))
        return _infeasible(acct)
    status = "iteration-limit" if hit_limit else "optimal"
    return _result_from_leaf(core, inc_delta, inc_x, status, acct)
