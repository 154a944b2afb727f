"""Dense dual active-set solver for strictly convex quadratic programs.

This is the hot kernel of the package: every relaxation, leaf and SQP
subproblem lands here.  The method is the classic dual active-set scheme:
start at the unconstrained minimum (dual feasible by construction), repeatedly
pick the most violated constraint and take mixed primal/dual steps until it
can be added to the working set, dropping blocking constraints whose
multipliers hit zero.  Equalities are prioritized and never leave the working
set.  Ties are broken by the lowest canonical constraint index (rows, then
lower bounds, then upper bounds), so the solve is fully deterministic.

Constraint convention: rows satisfy ``A[j] . x >= b[j]`` (``is_eq[j]`` marks
equalities), plus box bounds ``lb <= x <= ub`` with infinities allowed.  The
Hessian ``Q`` must be symmetric positive definite (callers add a tiny
Tikhonov lift to directions the objective does not penalize).

The same source runs compiled under numba (default) or as plain numpy when
``GRIDMPC_DISABLE_NUMBA`` is set; array-level operations carry the numpy path.
"""

import numpy as np

from .._accel import maybe_jit

STATUS_OPTIMAL = 1
STATUS_INFEASIBLE = 2
STATUS_ITER_LIMIT = 3

_DEP_TOL = 1e-11  # curvature threshold declaring a candidate normal dependent


def _qp_gi_impl(Q, c, A, b, is_eq, lb, ub, feas_tol, max_iter):
    n = Q.shape[0]
    m = A.shape[0]
    x = np.zeros(n)
    u_rows = np.zeros(m)
    u_lo = np.zeros(n)
    u_hi = np.zeros(n)

    for i in range(n):
        if lb[i] > ub[i] + feas_tol:
            return STATUS_INFEASIBLE, x, u_rows, u_lo, u_hi, 0

    # Working set storage; codes: j < m row j, m <= j < m+n lower bound,
    # m+n <= j upper bound of variable j - m - n.
    cap = n + 1
    act = np.zeros(cap, dtype=np.int64)
    sgn = np.zeros(cap)
    dval = np.zeros(cap)
    u = np.zeros(cap)
    N = np.zeros((n, cap))
    q = 0
    row_active = np.zeros(m, dtype=np.bool_)
    lo_active = np.zeros(n, dtype=np.bool_)
    hi_active = np.zeros(n, dtype=np.bool_)

    x = np.linalg.solve(Q, -c)

    # Warm bound clamp: activate the bounds the unconstrained minimum escapes
    # (dropping wrong-sign multipliers), so iterates start at sane magnitudes
    # even when most of the Hessian is the tiny lift.
    ns = 0
    sel = np.zeros(n, dtype=np.int64)
    selb = np.zeros(n)
    sels = np.zeros(n)
    for i in range(n):
        if np.isfinite(lb[i]) and x[i] < lb[i]:
            sel[ns] = i
            selb[ns] = lb[i]
            sels[ns] = 1.0
            ns += 1
        elif np.isfinite(ub[i]) and x[i] > ub[i]:
            sel[ns] = i
            selb[ns] = ub[i]
            sels[ns] = -1.0
            ns += 1
    for _ in range(6):
        if ns == 0:
            break
        K = np.zeros((n + ns, n + ns))
        K[:n, :n] = Q
        rhs = np.zeros(n + ns)
        rhs[:n] = -c
        for a in range(ns):
            i = sel[a]
            K[i, n + a] = sels[a]
            K[n + a, i] = sels[a]
            rhs[n + a] = sels[a] * selb[a]
        sol = np.linalg.solve(K, rhs)
        keep = 0
        for a in range(ns):
            if -sol[n + a] >= -1e-12:
                sel[keep] = sel[a]
                selb[keep] = selb[a]
                sels[keep] = sels[a]
                keep += 1
        if keep == ns:
            x = sol[:n].copy()
            for a in range(ns):
                i = sel[a]
                act[q] = m + i if sels[a] > 0 else m + n + i
                sgn[q] = 1.0
                dval[q] = sels[a] * selb[a]
                u[q] = -sol[n + a]
                N[:, q] = 0.0
                N[i, q] = sels[a]
                if sels[a] > 0:
                    lo_active[i] = True
                else:
                    hi_active[i] = True
                q += 1
            break
        ns = keep

    np_vec = np.zeros(n)
    iters = 0
    status = STATUS_OPTIMAL
    while True:
        # --- select the most violated constraint (equalities first) ---------
        xscale = 1.0
        for i in range(n):
            if np.abs(x[i]) > xscale:
                xscale = np.abs(x[i])
        tol_sel = feas_tol + 1e-12 * xscale

        s_rows = A @ x - b
        chosen = -1
        ch_sgn = 1.0
        worst = -tol_sel
        for j in range(m):
            if is_eq[j] and not row_active[j]:
                v = -np.abs(s_rows[j])
                if v < worst:
                    worst = v
                    chosen = j
                    ch_sgn = -1.0 if s_rows[j] > 0 else 1.0
        if chosen < 0:
            worst = -tol_sel
            for j in range(m):
                if not is_eq[j] and not row_active[j] and s_rows[j] < worst:
                    worst = s_rows[j]
                    chosen = j
                    ch_sgn = 1.0
            for i in range(n):
                if not lo_active[i] and np.isfinite(lb[i]) and x[i] - lb[i] < worst:
                    worst = x[i] - lb[i]
                    chosen = m + i
                    ch_sgn = 1.0
                if not hi_active[i] and np.isfinite(ub[i]) and ub[i] - x[i] < worst:
                    worst = ub[i] - x[i]
                    chosen = m + n + i
                    ch_sgn = 1.0
        if chosen < 0:
            break  # all constraints satisfied

        if chosen < m:
            np_vec[:] = ch_sgn * A[chosen]
            d_p = ch_sgn * b[chosen]
        elif chosen < m + n:
            np_vec[:] = 0.0
            np_vec[chosen - m] = 1.0
            d_p = lb[chosen - m]
        else:
            np_vec[:] = 0.0
            np_vec[chosen - m - n] = -1.0
            d_p = -ub[chosen - m - n]
        s_p = np_vec @ x - d_p
        u_p = 0.0

        stop = False
        while True:
            iters += 1
            if iters > max_iter:
                status = STATUS_ITER_LIMIT
                stop = True
                break
            K = np.zeros((n + q, n + q))
            K[:n, :n] = Q
            K[:n, n : n + q] = N[:, :q]
            K[n : n + q, :n] = N[:, :q].T
            rhs = np.zeros(n + q)
            rhs[:n] = np_vec
            sol = np.linalg.solve(K, rhs)
            z = sol[:n]
            ztn = np_vec @ z

            t1 = np.inf
            l1 = -1
            for a in range(q):
                if act[a] < m and is_eq[act[a]]:
                    continue  # equalities never leave the working set
                r_a = -sol[n + a]
                if r_a < -1e-14:
                    cand = -u[a] / r_a
                    if cand < t1 - 1e-15:
                        t1 = cand
                        l1 = a
            t2 = np.inf
            if ztn > _DEP_TOL:
                t2 = -s_p / ztn
                if t2 < 0.0:
                    t2 = 0.0
            if not np.isfinite(t1) and not np.isfinite(t2):
                status = STATUS_INFEASIBLE
                stop = True
                break

            if t2 <= t1:  # full step: candidate enters the working set
                x = x + t2 * z
                for a in range(q):
                    u[a] += t2 * (-sol[n + a])
                u_p += t2
                act[q] = chosen
                sgn[q] = ch_sgn
                dval[q] = d_p
                u[q] = u_p
                N[:, q] = np_vec
                if chosen < m:
                    row_active[chosen] = True
                elif chosen < m + n:
                    lo_active[chosen - m] = True
                else:
                    hi_active[chosen - m - n] = True
                q += 1
                break
            # partial or pure dual step: the blocking constraint leaves
            if np.isfinite(t2):
                x = x + t1 * z
            for a in range(q):
                u[a] += t1 * (-sol[n + a])
            u_p += t1
            dropped = act[l1]
            if dropped < m:
                row_active[dropped] = False
            elif dropped < m + n:
                lo_active[dropped - m] = False
            else:
                hi_active[dropped - m - n] = False
            for a in range(l1, q - 1):
                act[a] = act[a + 1]
                sgn[a] = sgn[a + 1]
                dval[a] = dval[a + 1]
                u[a] = u[a + 1]
                N[:, a] = N[:, a + 1]
            q -= 1
            s_p = np_vec @ x - d_p
        if stop:
            break

    if status == STATUS_OPTIMAL and q >= 0:
        # Polish: re-solve the KKT system of the final working set from
        # scratch so equality residuals do not inherit path roundoff.
        K = np.zeros((n + q, n + q))
        K[:n, :n] = Q
        K[:n, n : n + q] = N[:, :q]
        K[n : n + q, :n] = N[:, :q].T
        rhs = np.zeros(n + q)
        rhs[:n] = -c
        rhs[n : n + q] = dval[:q]
        sol = np.linalg.solve(K, rhs)
        x = sol[:n].copy()
        for a in range(q):
            u[a] = -sol[n + a]

    if status != STATUS_INFEASIBLE:
        for a in range(q):
            j = act[a]
            if j < m:
                u_rows[j] = sgn[a] * u[a]
            elif j < m + n:
                u_lo[j - m] = u[a]
            else:
                u_hi[j - m - n] = u[a]
    return status, x, u_rows, u_lo, u_hi, iters


qp_gi = maybe_jit(_qp_gi_impl)
