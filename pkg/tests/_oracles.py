"""Independent brute-force oracles used by the solver and acceptance tests.

Everything here works directly on problem data (grid constants, exogenous
series), never through the Program/solver machinery it is checking.
"""

import itertools

import numpy as np

from gridmpc.plant import GridParams


def qp_active_set_oracle(Q, c, A_eq, b_eq, A_in, b_in, tol=1e-9):
    """Exhaustive active-set search: solve the KKT system for every subset of
    inequality rows, keep points that are primal feasible with valid dual
    signs.  Returns (x, value) or (None, inf) when infeasible."""
    n = Q.shape[0]
    m_e, m_i = len(b_eq), len(b_in)
    best_val, best_x = np.inf, None
    for mask in range(2**m_i):
        act = [i for i in range(m_i) if mask >> i & 1]
        q = m_e + len(act)
        K = np.zeros((n + q, n + q))
        K[:n, :n] = Q
        rows = np.vstack([A_eq, A_in[act]]) if q else np.zeros((0, n))
        if q:
            K[:n, n:] = rows.T
            K[n:, :n] = rows
        rhs = np.concatenate([-c, b_eq, b_in[act] if act else np.zeros(0)])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            continue
        x = sol[:n]
        mult = sol[n + m_e :]
        if m_i and np.any(A_in @ x > b_in + tol):
            continue
        # Stationarity: Qx + c + rows' mult = 0; multipliers of active <= rows
        # must be >= 0 in the +(Ax-b) Lagrangian convention.
        if np.any(mult < -tol):
            continue
        val = 0.5 * x @ Q @ x + c @ x
        if val < best_val - 1e-12:
            best_val, best_x = val, x
    return best_x, best_val


def _stage_cost_given_ps(p_s, load, w_r, delta, params: GridParams):
    """Optimal conventional/renewable split at one step for given storage power.

    Vectorized over p_s.  Returns per-candidate economic cost (without the
    commitment terms) with NaN marking infeasible splits.
    """
    q = load - p_s
    tmin, tmax = params.p_t_min * delta, params.p_t_max * delta
    rmin, rcap = params.p_r_min, w_r
    p_r = np.minimum(rcap, q - tmin)
    p_r = np.maximum(p_r, np.maximum(rmin, q - tmax))
    p_t = q - p_r
    bad = (p_r > rcap + 1e-7) | (p_r < rmin - 1e-7) | (p_t > tmax + 1e-7) | (p_t < tmin - 1e-7)
    cost = params.c0 * (p_t - p_r)
    return np.where(bad, np.nan, cost)


def _trajectory_penalty(x0, ps_matrix, params: GridParams):
    """Capacity feasibility of storage plans (rows of ps_matrix); returns a
    boolean feasible mask, checking x(1..L) within bounds.

    The tolerance is loose (1e-7) on purpose: optima often sit exactly on the
    capacity boundary, and a strict mask would keep every grid point a full
    resolution step away from it."""
    x = np.full(ps_matrix.shape[0], x0)
    ok = np.ones(ps_matrix.shape[0], dtype=bool)
    for k in range(ps_matrix.shape[1]):
        x = params.A * x + params.B_l * ps_matrix[:, k] + params.B_q * ps_matrix[:, k] ** 2
        ok &= (x >= params.x_min - 1e-7) & (x <= params.x_max + 1e-7)
    return ok


def _word_cost(ps_matrix, x0, delta, delta_prev, w_r, w_d, params: GridParams):
    """Discounted cost of storage plans under a fixed commitment word; NaN when
    the split is infeasible, +inf when capacity fails."""
    L = len(delta)
    gamma = params.gamma
    total = np.zeros(ps_matrix.shape[0])
    for k in range(L):
        c = _stage_cost_given_ps(ps_matrix[:, k], -w_d[k], w_r[k], delta[k], params)
        d_prev = delta_prev if k == 0 else delta[k - 1]
        c = c + params.c1 * abs(delta[k] - d_prev) + params.c2 * delta[k]
        total = total + gamma**k * c
    total = np.where(np.isnan(total), np.inf, total)
    total = np.where(_trajectory_penalty(x0, ps_matrix, params), total, np.inf)
    return total


def _coordinate_candidates(k, ps, x0, delta, w_r, w_d, params: GridParams):
    """Boundary/kink candidates for the step-k storage power.

    The per-step cost is piecewise linear in p_s with kinks where the
    renewable clip or the conventional window switches, and optima often sit
    exactly on those kinks or on a capacity boundary of a later state; grid
    points never land there, so the scan evaluates them explicitly.
    """
    L = len(delta)
    load = -w_d[k]
    tmin, tmax = params.p_t_min * delta[k], params.p_t_max * delta[k]
    rmin, rcap = params.p_r_min, w_r[k]
    cands = [load - tmin - rcap, load - tmax - rmin, load - tmax - rcap, load - tmin - rmin]
    x = x0
    for i in range(k):
        x = params.A * x + params.B_l * ps[i] + params.B_q * ps[i] ** 2
    # x_j = base_j + A^(j-1-k) * (B_l p + B_q p^2) for j > k with others fixed
    base = params.A * x
    factor = 1.0
    for j in range(k + 1, L + 1):
        for bound in (params.x_min, params.x_max):
            rhs = (bound - base) / factor
            disc = params.B_l**2 + 4.0 * params.B_q * rhs
            if disc >= 0.0:
                root = np.sqrt(disc)
                cands.append((-params.B_l + root) / (2.0 * params.B_q))
                cands.append((-params.B_l - root) / (2.0 * params.B_q))
        if j == L:
            break
        base = params.A * base + params.B_l * ps[j] + params.B_q * ps[j] ** 2
        factor *= params.A
    return [v for v in cands if params.p_s_min <= v <= params.p_s_max]


def reference_mpc_oracle(x0, delta_prev, w_r, w_d, params: GridParams, grid_pts=9):
    """Exhaustive oracle for the reference problem at small horizons.

    Enumerates every commitment word; for each, seeds from a coarse joint grid
    over the storage plan and polishes with per-coordinate grid scans refined
    to 1e-6 resolution from several starts.
    """
    L = len(w_r)
    best = np.inf
    axis = np.linspace(params.p_s_min, params.p_s_max, grid_pts)
    coarse = np.array(list(itertools.product(axis, repeat=L)))
    for delta in itertools.product((0, 1), repeat=L):
        costs = _word_cost(coarse, x0, delta, delta_prev, w_r, w_d, params)
        order = np.argsort(costs)
        starts = [coarse[order[0]], np.zeros(L)]
        if np.isfinite(costs[order[0]]) and len(order) > 20:
            starts.append(coarse[order[20]])
        # balance-feasible starts built from the per-step storage intervals
        lo = np.maximum(params.p_s_min, -w_d - (params.p_t_max * np.array(delta) + w_r))
        hi = np.minimum(params.p_s_max, -w_d - (params.p_t_min * np.array(delta) + params.p_r_min))
        if np.all(lo <= hi):
            starts.append(0.5 * (lo + hi))
            starts.append(np.clip(0.0, lo, hi))
        word_best = np.inf
        for start in starts:
            ps = np.array(start, dtype=float)
            val = _word_cost(ps[None, :], x0, delta, delta_prev, w_r, w_d, params)[0]
            for resolution in (2e-2, 1e-3, 5e-5, 2e-6, 1e-6):
                improved = True
                sweeps = 0
                while improved and sweeps < 4:
                    improved = False
                    sweeps += 1
                    # single-coordinate grid scans plus exact kink candidates
                    for k in range(L):
                        lo = max(params.p_s_min, ps[k] - 150 * resolution)
                        hi = min(params.p_s_max, ps[k] + 150 * resolution)
                        cand = np.arange(lo, hi + resolution / 2, resolution)
                        cand = np.concatenate([cand, _coordinate_candidates(k, ps, x0, delta, w_r, w_d, params)])
                        trial = np.repeat(ps[None, :], len(cand), axis=0)
                        trial[:, k] = cand
                        vals = _word_cost(trial, x0, delta, delta_prev, w_r, w_d, params)
                        j = int(np.argmin(vals))
                        if vals[j] < val - 1e-15:
                            val = vals[j]
                            ps = trial[j]
                            improved = True
                    # pairwise scans escape valleys the single sweeps cannot
                    # (e.g. shifting discharge between adjacent steps); the
                    # kink candidates handle the fine scales
                    if resolution < 1e-3:
                        continue
                    for k1 in range(L):
                        for k2 in range(k1 + 1, L):
                            c1 = np.arange(
                                max(params.p_s_min, ps[k1] - 40 * resolution),
                                min(params.p_s_max, ps[k1] + 40 * resolution) + resolution / 2,
                                resolution,
                            )
                            c2 = np.arange(
                                max(params.p_s_min, ps[k2] - 40 * resolution),
                                min(params.p_s_max, ps[k2] + 40 * resolution) + resolution / 2,
                                resolution,
                            )
                            g1, g2 = np.meshgrid(c1, c2, indexing="ij")
                            trial = np.repeat(ps[None, :], g1.size, axis=0)
                            trial[:, k1] = g1.ravel()
                            trial[:, k2] = g2.ravel()
                            vals = _word_cost(trial, x0, delta, delta_prev, w_r, w_d, params)
                            j = int(np.argmin(vals))
                            if vals[j] < val - 1e-15:
                                val = vals[j]
                                ps = trial[j]
                                improved = True
            word_best = min(word_best, val)
        best = min(best, word_best)
    return best
