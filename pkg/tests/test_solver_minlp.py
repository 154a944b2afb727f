import numpy as np
import pytest

from gridmpc.plant import ControlInput, Exogenous, GridParams, PlantState, battery_step, validate_input
from gridmpc.problems import History, LinearRow, MpcConfig, Program, build_reference
from gridmpc.scenario import Profile
from gridmpc.solver import SolverSettings, relax_lower_bound, solve_minlp, solve_sqp

from _oracles import reference_mpc_oracle

PARAMS = GridParams()


def random_instance(rng, L=4):
    """Feasible reference-problem instance with varied exogenous conditions."""
    w_r = rng.uniform(0.0, 1.2, L)
    w_d = -rng.uniform(0.2, 1.6, L)
    x0 = rng.uniform(1.5, 5.5)
    delta_prev = int(rng.integers(0, 2))
    hist = History(u_hist=[0.0], y_hist=[x0], delta_m=delta_prev, x_m=x0)
    forecast = Profile(30.0, w_r, w_d)
    prog = build_reference(hist, forecast, PARAMS, MpcConfig(L=L))
    return prog, x0, delta_prev, w_r, w_d


class TestSolveSqp:
    def test_pinned_square(self):
        # minimize z s.t. z = p^2, p pinned to 0.5: converges in a few iterations.
        prog = Program(
            var_names=("z", "p"),
            lb=np.array([0.0, 0.5]),
            ub=np.array([4.0, 0.5]),
            binary=np.zeros(2, dtype=bool),
            eq_rows=(),
            ineq_rows=(),
            square_eqs=((0, 1),),
            obj_quad=(),
            obj_lin=np.array([1.0, 0.0]),
            obj_const=0.0,
        )
        res = solve_sqp(prog)
        assert res.status == "optimal"
        assert res.objective == pytest.approx(0.25, abs=1e-9)
        assert res.stats.sqp_iterations <= 3

    def test_square_at_bound(self):
        # maximize p with z = p^2 forces z = 1 exactly at p = 1.
        prog = Program(
            var_names=("z", "p"),
            lb=np.array([0.0, 0.0]),
            ub=np.array([1.0, 1.0]),
            binary=np.zeros(2, dtype=bool),
            eq_rows=(),
            ineq_rows=(),
            square_eqs=((0, 1),),
            obj_quad=(),
            obj_lin=np.array([0.0, -1.0]),
            obj_const=0.0,
        )
        res = solve_sqp(prog)
        assert res.status == "optimal"
        assert res.assignment["p"] == pytest.approx(1.0, abs=1e-10)
        assert res.assignment["z"] == pytest.approx(1.0, abs=1e-10)

    def test_one_step_commitment_fixed(self):
        # 1-step problem with delta forced on: oracle by fine scan over p_s.
        hist = History(u_hist=[0.0], y_hist=[3.0], delta_m=1, x_m=3.0)
        forecast = Profile(30.0, np.array([0.0]), np.array([-0.5]))
        prog = build_reference(hist, forecast, PARAMS, MpcConfig(L=1))
        res = solve_sqp(prog, binaries={"delta[0]": 1})
        assert res.status == "optimal"
        ps_grid = np.arange(-1.0, 1.0 + 1e-9, 1e-6)
        p_t = 0.5 - ps_grid
        ok = (p_t >= PARAMS.p_t_min) & (p_t <= PARAMS.p_t_max)
        x1 = battery_step(3.0, ps_grid, PARAMS)
        ok &= (x1 >= PARAMS.x_min) & (x1 <= PARAMS.x_max)
        cost = np.where(ok, PARAMS.c0 * p_t + PARAMS.c2, np.inf)
        assert res.objective == pytest.approx(float(cost.min()), abs=1e-6)
        assert res.stats.max_residual <= 1e-8

    def test_sqp_residual_converges(self):
        prog, *_ = random_instance(np.random.default_rng(0))
        res = solve_sqp(prog, binaries={f"delta[{k}]": 1 for k in range(4)})
        assert res.status == "optimal"
        assert res.stats.max_residual <= 1e-8


class TestRelaxLowerBound:
    def test_square_envelope_interval(self):
        # On p in [-1,1] the envelope pins z between the tangents and the secant z <= 1.
        prog = Program(
            var_names=("z", "p"),
            lb=np.array([0.0, -1.0]),
            ub=np.array([1.0, 1.0]),
            binary=np.zeros(2, dtype=bool),
            eq_rows=(LinearRow(np.array([1]), np.array([1.0]), 0.3),),
            ineq_rows=(),
            square_eqs=((0, 1),),
            obj_quad=(),
            obj_lin=np.array([-1.0, 0.0]),  # maximize z -> secant binds
            obj_const=0.0,
        )
        bound = relax_lower_bound(prog)
        # max z on the envelope at p = 0.3 is the secant value (0+? actually
        # z <= (pl+pu)p - pl*pu = 0*p + 1) -> objective -1.
        assert bound == pytest.approx(-1.0, abs=1e-8)
        prog_min = Program(
            var_names=("z", "p"),
            lb=np.array([0.0, -1.0]),
            ub=np.array([1.0, 1.0]),
            binary=np.zeros(2, dtype=bool),
            eq_rows=(LinearRow(np.array([1]), np.array([1.0]), 0.3),),
            ineq_rows=(),
            square_eqs=((0, 1),),
            obj_quad=(),
            obj_lin=np.array([1.0, 0.0]),  # minimize z -> tangent at 0 binds? max tangent
            obj_const=0.0,
        )
        bound_min = relax_lower_bound(prog_min)
        # Tangents at {-1, 0, 1}: z >= max(0, -2p-1, 2p-1); at p=0.3 -> 0.
        assert bound_min == pytest.approx(0.0, abs=1e-8)

    def test_bound_below_enumerated_optimum(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            prog, x0, dp, w_r, w_d = random_instance(rng, L=2)
            bound = relax_lower_bound(prog)
            opt = reference_mpc_oracle(x0, dp, w_r, w_d, PARAMS)
            if np.isinf(opt):
                continue
            assert bound <= opt + 1e-8

    def test_relaxation_tight_without_squares(self):
        # No square terms binding and binaries fixed: bound equals the optimum.
        prog, *_ = random_instance(np.random.default_rng(5))
        fixing = {f"delta[{k}]": 1 for k in range(4)}
        bound = relax_lower_bound(prog, fixing=fixing)
        res = solve_sqp(prog, binaries=fixing)
        assert bound <= res.objective + 1e-9
        assert bound == pytest.approx(res.objective, abs=1e-4)


class TestSolveMinlp:
    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(100)
        for trial in range(8):
            prog, x0, dp, w_r, w_d = random_instance(rng)
            res = solve_minlp(prog)
            opt = reference_mpc_oracle(x0, dp, w_r, w_d, PARAMS)
            assert res.status == "optimal"
            assert res.objective == pytest.approx(opt, abs=1e-6)

    def test_tie_break_lexicographic_smallest(self):
        # Irrelevant binaries: zero switching and commitment costs, no load,
        # ample renewables -> delta can be anything, all-zeros word returned.
        params = GridParams(c1=1e-12, c2=1e-12)  # weights must stay positive
        hist = History(u_hist=[0.0], y_hist=[3.0], delta_m=0, x_m=3.0)
        forecast = Profile(30.0, np.array([2.0, 2.0, 2.0]), np.array([-0.0, -0.0, -0.0]))
        prog = build_reference(hist, forecast, params, MpcConfig(L=3))
        res = solve_minlp(prog)
        assert res.status == "optimal"
        assert [res.assignment[f"delta[{k}]"] for k in range(3)] == [0.0, 0.0, 0.0]

    def test_infeasible_balance(self):
        # Load beyond every dispatchable resource.
        hist = History(u_hist=[0.0], y_hist=[3.0], delta_m=0, x_m=3.0)
        forecast = Profile(30.0, np.array([0.0, 0.0]), np.array([-3.0, -3.0]))
        prog = build_reference(hist, forecast, PARAMS, MpcConfig(L=2))
        res = solve_minlp(prog)
        assert res.status == "infeasible"

    def test_determinism_bit_identical(self):
        prog, *_ = random_instance(np.random.default_rng(17))
        a = solve_minlp(prog)
        b = solve_minlp(prog)
        assert a.objective == b.objective
        assert a.assignment == b.assignment
        assert a.stats.nodes_explored == b.stats.nodes_explored

    def test_feasibility_certificate(self):
        # Optimal assignments replay through the plant validator cleanly.
        rng = np.random.default_rng(23)
        prog, x0, dp, w_r, w_d = random_instance(rng)
        res = solve_minlp(prog)
        assert res.status == "optimal"
        a = res.assignment
        x = x0
        for k in range(4):
            inp = ControlInput(
                p_t=a[f"p_t[{k}]"], p_s=a[f"p_s[{k}]"], p_r=a[f"p_r[{k}]"], delta=int(a[f"delta[{k}]"])
            )
            state = PlantState(x=x, delta_prev=dp if k == 0 else int(a[f"delta[{k-1}]"]))
            violations = validate_input(state, inp, Exogenous(w_r=w_r[k], w_d=w_d[k]), PARAMS)
            assert all(v.magnitude <= 1e-6 for v in violations), violations
            x_next = battery_step(x, inp.p_s, PARAMS)
            assert abs(x_next - a[f"x[{k+1}]"]) <= 1e-8
            x = x_next

    def test_binaries_exact_and_epigraph_tight(self):
        rng = np.random.default_rng(29)
        prog, x0, dp, *_ = random_instance(rng)
        res = solve_minlp(prog)
        assert res.status == "optimal"
        prev = dp
        for k in range(4):
            d = res.assignment[f"delta[{k}]"]
            assert d in (0.0, 1.0)
            s = res.assignment[f"s[{k}]"]
            assert s == pytest.approx(abs(d - prev), abs=1e-9)
            prev = d

    def test_bnb_matches_enumeration(self):
        # Same instance through both search modes.
        rng = np.random.default_rng(31)
        prog, *_ = random_instance(rng, L=5)
        res_enum = solve_minlp(prog, SolverSettings(enumerate_threshold=12))
        res_bnb = solve_minlp(prog, SolverSettings(enumerate_threshold=2))
        assert res_enum.status == res_bnb.status == "optimal"
        assert res_bnb.objective == pytest.approx(res_enum.objective, abs=1e-8)

    def test_solver_stats_populated(self):
        prog, *_ = random_instance(np.random.default_rng(37))
        res = solve_minlp(prog)
        assert res.stats.nodes_explored >= 1
        assert res.stats.qp_iterations > 0
        assert np.isfinite(res.stats.max_residual)
        assert res.stats.max_residual <= 1e-8
