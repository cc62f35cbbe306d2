import numpy as np
import pytest

from vem_oc import InfeasibleInitError, SolverConfig, solve_fssop, straight_line_init
from vem_oc.evolution import feasibility_violations
from vem_oc.feasible_init import fssop_problem
from vem_oc.problems import LineInitSpec, example1, example2, lq_double_integrator


def test_straight_line_initializer_values():
    ex = example2()
    traj = straight_line_init(ex.problem, ex.init, 101, ex.config)
    assert np.isclose(traj.x[-1, 2], 2 * np.sqrt(5))
    assert np.allclose(traj.x[50, :2], [0.5, -0.25])
    C = ex.problem.evaluate("C", traj.x, traj.u, traj.t)
    assert np.allclose(C, -0.35)
    assert np.allclose(traj.u, np.arctan(2.0))


def test_straight_line_initializer_rejects_infeasible_guess():
    ex = example2()
    bad = LineInitSpec(1.0, ex.init.x, lambda t: np.full(np.shape(t) + (1,), 0.5))
    with pytest.raises(InfeasibleInitError, match="dynamics"):
        straight_line_init(ex.problem, bad, 41)


def test_fssop_energy_start_matches_closed_form(ex1, ex1_init):
    # minimum energy to the origin on [0, 8]: u = -19/32 + 15 t / 128
    assert ex1_init.tf == ex1.tf_guess
    oracle = -19 / 32 + 15 * ex1_init.t / 128
    assert np.max(np.abs(ex1_init.u[:, 0] - oracle)) < 1e-2
    assert not feasibility_violations(ex1.problem, ex1_init, ex1.config.feas_tol)


def test_fssop_without_constraints_returns_propagated_zero_control():
    p = lq_double_integrator(2.0)
    traj = solve_fssop(p, 2.0, SolverConfig(N=11))
    assert np.all(traj.u == 0.0)
    assert np.allclose(traj.x[:, 1], 1.0) and np.isclose(traj.x[-1, 0], 3.0)


def test_fssop_constraint_sum_cost_on_fixed_horizon():
    ex = example2()
    p = ex.problem.with_fixed_tf(0.9)
    cfg = SolverConfig(N=41, K=0.1, k_C=0.2, k_g=0.2)
    traj = solve_fssop(p, 0.9, cfg)
    assert traj.tf == 0.9
    assert not feasibility_violations(p, traj, cfg.feas_tol)


def test_fssop_problem_cost_choices():
    ex = example2()
    aux = fssop_problem(ex.problem, 0.9)
    assert aux.r == 0 and aux.tf_fixed == 0.9 and aux.phi is None
    x = np.array([[0.2, -0.5, 1.0]])
    u = np.array([[0.1]])
    t = np.array([0.3])
    C = ex.problem.evaluate("C", x, u, t)[0, 0]
    # pure-state constraints get a tiny control penalty
    assert np.isclose(aux.evaluate("L", x, u, t)[0], C + 0.5e-6 * 0.01)
    weighted = fssop_problem(ex.problem, 0.9, weights=[3.0])
    assert np.isclose(weighted.evaluate("L", x, u, t)[0], 3 * C + 0.5e-6 * 0.01)
    with pytest.raises(ValueError):
        fssop_problem(ex.problem, 0.9, weights=[-1.0])
    mixed = fssop_problem(example1().problem, 5.0)
    assert np.isclose(mixed.evaluate("L", x[:, :2], u, t)[0], 0.01 - 1.0)
