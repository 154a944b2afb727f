"""Shared reduction of a Program into the dense form the QP kernel consumes.

A `CoreProgram` is built once per Program and reused across the many QP
solves of a mixed-integer solve.  It performs three exact reductions:

* fixed variables (equal bounds) are substituted out;
* "free blocks" -- variables with no bounds, no inequality or square
  participation, zero linear cost and a positive diagonal objective (the
  Hankel combination weights and the output slack) -- are eliminated
  analytically: minimizing over them under the equality rows they appear in
  yields a small dense quadratic form on the remaining window variables plus
  range-membership rows, and the eliminated values are recovered in closed
  form after the solve;
* at a leaf (all binaries fixed), rows whose remaining support is a single
  continuous variable collapse into bound updates.

The reductions keep the data-driven problems' KKT systems at the size of the
physical window instead of the recorded-data length.
"""

from __future__ import annotations

import numpy as np

from ..problems import Program
from .qp_kernel import STATUS_INFEASIBLE, STATUS_ITER_LIMIT, STATUS_OPTIMAL, qp_gi

LIFT = 1e-9  # Tikhonov lift on objective directions the program does not penalize
_RANK_EPS = np.finfo(float).eps


def _normalize(A: np.ndarray, b: np.ndarray):
    if A.shape[0] == 0:
        return A, b, np.ones(0)
    norms = np.linalg.norm(A, axis=1)
    norms[norms == 0.0] = 1.0
    return A / norms[:, None], b / norms, norms


class KernelResult:
    __slots__ = ("status", "x", "u_rows", "u_lo", "u_hi", "iters")

    def __init__(self, status, x, u_rows, u_lo, u_hi, iters):
        self.status = status
        self.x = x
        self.u_rows = u_rows
        self.u_lo = u_lo
        self.u_hi = u_hi
        self.iters = int(iters)


class CoreProgram:
    def __init__(self, program: Program):
        self.program = program
        n = program.n_vars
        lb = program.lb.astype(float).copy()
        ub = program.ub.astype(float).copy()
        binary = program.binary.copy()

        # Dense rows over the original variables.
        m_e, m_i = len(program.eq_rows), len(program.ineq_rows)
        A_eq = np.zeros((m_e, n))
        b_eq = np.zeros(m_e)
        for r, row in enumerate(program.eq_rows):
            np.add.at(A_eq[r], row.idx, row.coef)
            b_eq[r] = row.rhs
        A_in = np.zeros((m_i, n))
        b_in = np.zeros(m_i)
        for r, row in enumerate(program.ineq_rows):
            np.add.at(A_in[r], row.idx, row.coef)
            b_in[r] = row.rhs

        # Objective pieces.
        Qdiag = np.zeros(n)
        off: list[tuple[int, int, float]] = []
        for i, j, v in program.obj_quad:
            if i == j:
                Qdiag[i] += v
            else:
                off.append((i, j, v))
        c = program.obj_lin.astype(float).copy()
        const = float(program.obj_const)

        # Squares whose base variable is pinned collapse to pinning the aux.
        squares: list[tuple[int, int]] = []
        for z_i, p_i in program.square_eqs:
            if lb[p_i] == ub[p_i] and np.isfinite(lb[p_i]):
                val = lb[p_i] * lb[p_i]
                lb[z_i] = max(lb[z_i], val)
                ub[z_i] = min(ub[z_i], val)
            else:
                if lb[z_i] == ub[z_i] and np.isfinite(lb[z_i]):
                    raise ValueError("square equality with pinned auxiliary but free base is unsupported")
                squares.append((z_i, p_i))

        fixed = (~binary) & np.isfinite(lb) & (lb == ub)
        fixed_val = np.where(fixed, lb, 0.0)

        in_square = np.zeros(n, dtype=bool)
        for z_i, p_i in squares:
            in_square[z_i] = True
            in_square[p_i] = True
        in_off = np.zeros(n, dtype=bool)
        for i, j, _ in off:
            in_off[i] = True
            in_off[j] = True
        in_ineq = np.any(A_in != 0.0, axis=0) if m_i else np.zeros(n, dtype=bool)

        free_block = (
            (~binary)
            & (~fixed)
            & ~np.isfinite(lb)
            & ~np.isfinite(ub)
            & (~in_square)
            & (~in_off)
            & (~in_ineq)
            & (c == 0.0)
            & (Qdiag > 0.0)
        )
        keep = (~fixed) & (~free_block)
        self.keep_idx = np.flatnonzero(keep)
        self.free_idx = np.flatnonzero(free_block)
        self.fixed_mask = fixed
        self.fixed_val = fixed_val
        nk = self.keep_idx.size

        b_eq_adj = b_eq - A_eq[:, fixed] @ fixed_val[fixed]
        b_in_adj = b_in - A_in[:, fixed] @ fixed_val[fixed]
        const += float(c[fixed] @ fixed_val[fixed]) + 0.5 * float(Qdiag[fixed] @ fixed_val[fixed] ** 2)
        for i, j, v in off:
            if fixed[i] and fixed[j]:
                const += v * fixed_val[i] * fixed_val[j]

        # Analytic elimination of the free block from the rows it appears in.
        self.elim_rows = np.any(A_eq[:, free_block] != 0.0, axis=1) if self.free_idx.size else np.zeros(m_e, dtype=bool)
        E_plain = A_eq[~self.elim_rows][:, keep]
        e_plain = b_eq_adj[~self.elim_rows]
        Q_add = np.zeros((nk, nk))
        c_add = np.zeros(nk)
        const_add = 0.0
        if self.free_idx.size:
            D = Qdiag[free_block]
            M = A_eq[self.elim_rows][:, free_block]
            G = A_eq[self.elim_rows][:, keep]
            r_vec = b_eq_adj[self.elim_rows]
            B = M / np.sqrt(D)[None, :]
            U, S, Vt = np.linalg.svd(B, full_matrices=True)
            tol = (S[0] * max(B.shape) * _RANK_EPS) if S.size else 0.0
            rho = int(np.count_nonzero(S > tol))
            U_r, U_perp = U[:, :rho], U[:, rho:]
            E_range = U_perp.T @ G
            e_range = U_perp.T @ r_vec
            T = U_r / S[:rho][None, :]
            Q_add = G.T @ (T @ (T.T @ G))
            c_add = -G.T @ (T @ (T.T @ r_vec))
            const_add = 0.5 * float(r_vec @ (T @ (T.T @ r_vec)))
            # alpha = Recovery @ (r - G z_keep), the minimum-D-norm solution.
            self._recovery = (Vt[:rho].T / S[:rho][None, :]) @ U_r.T / np.sqrt(D)[:, None]
            self._elim_G = G
            self._elim_r = r_vec
            E_eq = np.vstack([E_plain, E_range]) if E_range.size else E_plain
            e_eq = np.concatenate([e_plain, e_range])
        else:
            self._recovery = None
            E_eq, e_eq = E_plain, e_plain

        # Keep-space objective (dense; the window block from the elimination
        # is the only off-diagonal content the builders produce).
        Q_keep = np.diag(Qdiag[keep]).astype(float)
        kpos = -np.ones(n, dtype=np.int64)
        kpos[self.keep_idx] = np.arange(nk)
        for i, j, v in off:
            if keep[i] and keep[j]:
                Q_keep[kpos[i], kpos[j]] += v
                Q_keep[kpos[j], kpos[i]] += v
            elif keep[i] and fixed[j]:
                c[i] += v * fixed_val[j]
            elif fixed[i] and keep[j]:
                c[j] += v * fixed_val[i]
        self.base_offdiag = bool(off)
        self.Q_base_diag = Qdiag[keep].copy()
        self.c_base = c[keep].copy()
        self.const_base = const
        self.Q_keep = Q_keep + Q_add
        self.c_keep = self.c_base + c_add
        self.const_keep = const + const_add

        self.E_eq, self.e_eq = E_eq, e_eq
        self.I_in, self.i_rhs = A_in[:, keep], b_in_adj
        self.lb_keep, self.ub_keep = lb[self.keep_idx], ub[self.keep_idx]
        self.binary_keep = binary[self.keep_idx]
        self.bin_pos = np.flatnonzero(self.binary_keep)
        self.cont_pos = np.flatnonzero(~self.binary_keep)
        self.bin_names = [program.var_names[self.keep_idx[p]] for p in self.bin_pos]
        self.squares_keep = [(int(kpos[z]), int(kpos[p])) for z, p in squares]

        # Leaf view: binaries substituted, rows split by continuous support.
        self.E_cont = self.E_eq[:, self.cont_pos]
        self.E_bin = self.E_eq[:, self.bin_pos]
        self.I_cont = self.I_in[:, self.cont_pos]
        self.I_bin = self.I_in[:, self.bin_pos]
        self.lb_cont, self.ub_cont = self.lb_keep[self.cont_pos], self.ub_keep[self.cont_pos]
        cpos = -np.ones(nk, dtype=np.int64)
        cpos[self.cont_pos] = np.arange(self.cont_pos.size)
        self.squares_cont = [(int(cpos[z]), int(cpos[p])) for z, p in self.squares_keep]
        self.c_cont = self.c_keep[self.cont_pos]
        self.Q_cont = self.Q_keep[np.ix_(self.cont_pos, self.cont_pos)]
        self.Q_cross = self.Q_keep[np.ix_(self.cont_pos, self.bin_pos)]
        self.c_bin = self.c_keep[self.bin_pos]

        def classify(mat):
            supp = np.count_nonzero(mat != 0.0, axis=1)
            single = [
                (r, int(np.flatnonzero(mat[r] != 0.0)[0]), float(mat[r, np.flatnonzero(mat[r] != 0.0)[0]]))
                for r in np.flatnonzero(supp == 1)
            ]
            return np.flatnonzero(supp == 0), single, np.flatnonzero(supp >= 2)

        self.eq_const_rows, self.eq_single, self.eq_general = classify(self.E_cont)
        self.in_const_rows, self.in_single, self.in_general = classify(self.I_cont)

        self._root_cache: dict = {}

    # ------------------------------------------------------------------ util
    @property
    def n_binary(self) -> int:
        return self.bin_pos.size

    def binary_fixing_array(self, fixing) -> np.ndarray:
        """Translate a name->value mapping into a dense 0/1 array over binaries."""
        out = np.full(self.n_binary, -1, dtype=np.int64)
        for name, val in fixing.items():
            if name not in self.bin_names:
                raise ValueError(f"{name!r} is not a binary variable of this program")
            if val not in (0, 1):
                raise ValueError(f"binary fixing for {name!r} must be 0 or 1, got {val}")
            out[self.bin_names.index(name)] = val
        return out

    def _envelope_rows(self, squares, lo, hi):
        """Convex envelope of z = p^2: tangents (z >= 2 t p - t^2) and secant."""
        rows, rhs = [], []
        ncols = lo.size
        for z_i, p_i in squares:
            pl, pu = lo[p_i], hi[p_i]
            points = [0.0]
            if np.isfinite(pl):
                points.append(pl)
            if np.isfinite(pu):
                points.append(pu)
            for t in points:
                row = np.zeros(ncols)
                row[z_i] = -1.0
                row[p_i] = 2.0 * t
                rows.append(row)
                rhs.append(t * t)
            if np.isfinite(pl) and np.isfinite(pu):
                row = np.zeros(ncols)
                row[z_i] = 1.0
                row[p_i] = -(pl + pu)
                rows.append(row)
                rhs.append(-pl * pu)
        if not rows:
            return np.zeros((0, ncols)), np.zeros(0)
        return np.asarray(rows), np.asarray(rhs)

    def _call_kernel(self, Q, c, A_eq, b_eq, A_in, b_in, lb, ub, feas_tol, max_iter) -> KernelResult:
        nv = Q.shape[0]
        Ae, be, neq = _normalize(A_eq, b_eq)
        Ai, bi, nin = _normalize(A_in, b_in)
        # Kernel convention is A x >= b: inequalities a x <= b flip sign.
        A = np.vstack([Ae, -Ai]) if nv else np.zeros((Ae.shape[0] + Ai.shape[0], 0))
        b = np.concatenate([be, -bi])
        is_eq = np.zeros(A.shape[0], dtype=bool)
        is_eq[: Ae.shape[0]] = True
        Qk = Q.copy()
        Qk[np.diag_indices_from(Qk)] += LIFT
        status, x, u_rows, u_lo, u_hi, iters = qp_gi(
            np.ascontiguousarray(Qk),
            np.ascontiguousarray(c),
            np.ascontiguousarray(A),
            np.ascontiguousarray(b),
            is_eq,
            np.ascontiguousarray(lb),
            np.ascontiguousarray(ub),
            feas_tol,
            max_iter,
        )
        me = Ae.shape[0]
        u_eq = u_rows[:me] / neq if me else np.zeros(0)
        # In the kernel's >= convention flipped inequalities keep u >= 0.
        u_in = u_rows[me:] / nin if nin.size else np.zeros(0)
        return KernelResult(status, x, np.concatenate([u_eq, u_in]), u_lo, u_hi, iters)

    # ------------------------------------------------------------- root solve
    def solve_root(self, fixing: np.ndarray | None = None, feas_tol: float = 1e-8, max_iter: int = 0):
        """Convex relaxation over the keep space: binaries in [0,1] (or fixed),
        square equalities replaced by their envelope."""
        nk = self.keep_idx.size
        lb = self.lb_keep.copy()
        ub = self.ub_keep.copy()
        if fixing is not None:
            for pos, val in zip(self.bin_pos, fixing):
                if val >= 0:
                    lb[pos] = float(val)
                    ub[pos] = float(val)
        env_A, env_b = self._envelope_rows(self.squares_keep, self.lb_keep, self.ub_keep)
        A_in = np.vstack([self.I_in, env_A]) if env_A.size else self.I_in
        b_in = np.concatenate([self.i_rhs, env_b])
        if max_iter <= 0:
            max_iter = 200 + 30 * (nk + A_in.shape[0] + self.E_eq.shape[0])
        res = self._call_kernel(self.Q_keep, self.c_keep, self.E_eq, self.e_eq, A_in, b_in, lb, ub, feas_tol, max_iter)
        value = np.inf
        if res.status == STATUS_OPTIMAL:
            value = 0.5 * float(res.x @ (self.Q_keep @ res.x)) + float(self.c_keep @ res.x) + self.const_keep
        return res, value, A_in, b_in

    # ------------------------------------------------------------- leaf solve
    def leaf_arrays(self, delta: np.ndarray):
        """Bounds/rhs of the continuous subproblem at a full binary fixing."""
        e_leaf = self.e_eq - self.E_bin @ delta if self.E_bin.size else self.e_eq.copy()
        i_leaf = self.i_rhs - self.I_bin @ delta if self.I_bin.size else self.i_rhs.copy()
        lb = self.lb_cont.copy()
        ub = self.ub_cont.copy()
        feasible = True
        for r in self.eq_const_rows:
            if abs(e_leaf[r]) > 1e-9:
                feasible = False
        for r in self.in_const_rows:
            if i_leaf[r] < -1e-9:
                feasible = False
        for r, v, a in self.eq_single:
            val = e_leaf[r] / a
            lb[v] = max(lb[v], val)
            ub[v] = min(ub[v], val)
        for r, v, a in self.in_single:
            val = i_leaf[r] / a
            if a > 0:
                ub[v] = min(ub[v], val)
            else:
                lb[v] = max(lb[v], val)
        if np.any(lb > ub + 1e-9):
            feasible = False
        return feasible, e_leaf[self.eq_general], i_leaf[self.in_general], lb, ub

    def solve_leaf(
        self,
        delta: np.ndarray,
        tangents: np.ndarray | None = None,
        trust: tuple[np.ndarray, float] | None = None,
        envelope: bool = False,
        feas_tol: float = 1e-8,
    ):
        """Continuous QP at a binary fixing.

        ``tangents`` gives linearization points for the square pairs (the
        equality ``z = 2 t p - t^2`` replaces each square); ``envelope``
        relaxes the squares convexly instead; with neither, squares are
        ignored (callers decide).  ``trust`` is ``(p_hat, radius)`` shrinking
        the base-variable boxes around the current iterate.
        """
        feasible, e_gen, i_gen, lb, ub = self.leaf_arrays(delta)
        ncv = self.cont_pos.size
        if not feasible:
            return KernelResult(STATUS_INFEASIBLE, np.zeros(ncv), np.zeros(0), np.zeros(ncv), np.zeros(ncv), 0)
        A_eq = self.E_cont[self.eq_general]
        A_in = self.I_in[self.in_general][:, self.cont_pos] if self.in_general.size else np.zeros((0, ncv))
        b_in = i_gen
        if tangents is not None:
            T = np.zeros((len(self.squares_cont), ncv))
            tr = np.zeros(len(self.squares_cont))
            for s, (z_i, p_i) in enumerate(self.squares_cont):
                t = tangents[s]
                T[s, z_i] = 1.0
                T[s, p_i] = -2.0 * t
                tr[s] = -t * t
            A_eq = np.vstack([A_eq, T])
            e_gen = np.concatenate([e_gen, tr])
        elif envelope:
            env_A, env_b = self._envelope_rows(self.squares_cont, lb, ub)
            if env_A.size:
                A_in = np.vstack([A_in, env_A])
                b_in = np.concatenate([b_in, env_b])
        if trust is not None:
            p_hat, radius = trust
            for s, (_, p_i) in enumerate(self.squares_cont):
                lb[p_i] = max(lb[p_i], p_hat[s] - radius)
                ub[p_i] = min(ub[p_i], p_hat[s] + radius)
            if np.any(lb > ub + 1e-12):
                return KernelResult(STATUS_INFEASIBLE, np.zeros(ncv), np.zeros(0), np.zeros(ncv), np.zeros(ncv), 0)
        c = self.c_cont + (self.Q_cross @ delta if self.Q_cross.size else 0.0)
        max_iter = 200 + 30 * (ncv + A_eq.shape[0] + A_in.shape[0])
        return self._call_kernel(self.Q_cont, c, A_eq, e_gen, A_in, b_in, lb, ub, feas_tol, max_iter)

    # --------------------------------------------------------------- recovery
    def assemble_full(self, x_keep: np.ndarray) -> np.ndarray:
        """Full original-variable vector from a keep-space point (eliminated
        block recovered as the minimum-norm solution of its rows)."""
        n = self.program.n_vars
        full = np.array(self.fixed_val, dtype=float)
        full[self.keep_idx] = x_keep
        if self._recovery is not None:
            full[self.free_idx] = self._recovery @ (self._elim_r - self._elim_G @ x_keep)
        return full

    def keep_from_leaf(self, delta: np.ndarray, x_cont: np.ndarray) -> np.ndarray:
        x_keep = np.zeros(self.keep_idx.size)
        x_keep[self.cont_pos] = x_cont
        x_keep[self.bin_pos] = delta
        return x_keep

    def assignment(self, full: np.ndarray) -> dict:
        return {name: float(full[i]) for i, name in enumerate(self.program.var_names)}

    def objective(self, full: np.ndarray) -> float:
        p = self.program
        val = p.obj_const + float(p.obj_lin @ full)
        for i, j, qv in p.obj_quad:
            val += 0.5 * qv * full[i] * full[i] if i == j else qv * full[i] * full[j]
        return val

    def max_residual(self, full: np.ndarray) -> float:
        p = self.program
        worst = 0.0
        for row in p.eq_rows:
            worst = max(worst, abs(float(row.coef @ full[row.idx]) - row.rhs))
        for row in p.ineq_rows:
            worst = max(worst, float(row.coef @ full[row.idx]) - row.rhs)
        finite_lb = np.isfinite(p.lb)
        finite_ub = np.isfinite(p.ub)
        if np.any(finite_lb):
            worst = max(worst, float(np.max(p.lb[finite_lb] - full[finite_lb])))
        if np.any(finite_ub):
            worst = max(worst, float(np.max(full[finite_ub] - p.ub[finite_ub])))
        for z_i, p_i in p.square_eqs:
            worst = max(worst, abs(full[z_i] - full[p_i] * full[p_i]))
        return worst
