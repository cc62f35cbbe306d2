import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vem_oc import (MultiplierSolveError, OcpProblem, Trajectory, build_grid, propagate,
                    recover_costate, solve_pi)
from vem_oc.problems import brachistochrone_range, lq_double_integrator
from vem_oc.verification import (classic_residuals, constraint_rate_identity,
                                 fd_gradient_check, optimality_residuals)


def _traj(p, N, tf, u_fn):
    grid = build_grid(N, 0.0, tf)
    u = u_fn(grid.t)[:, None]
    return Trajectory(propagate(p, u, grid), u, tf, grid.s)


def _analytic(ex):
    grid = build_grid(ex.config.N, 0.0, ex.oracle.tf)
    return Trajectory(ex.oracle.x(grid.t), ex.oracle.u(grid.t), ex.oracle.tf, grid.s)


def test_analytic_optimum_needs_regularised_multipliers(ex1):
    traj = _analytic(ex1)
    with pytest.raises(MultiplierSolveError):
        optimality_residuals(ex1.problem, traj, ex1.config)
    cfg = dataclasses.replace(ex1.config, tikhonov=1e-10)
    res = optimality_residuals(ex1.problem, traj, cfg)
    assert res.pu_pc_inf < 0.1 and res.transversality < 1e-2


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.5, 3.0))
def test_gradient_matches_finite_differences_lq(seed, tf):
    p = lq_double_integrator(tf)
    traj = _traj(p, 41, tf, lambda t: np.sin(2 * t) - 0.2)
    assert fd_gradient_check(p, traj, seed=seed) < 1e-3


@pytest.mark.parametrize("tf", [0.6, 0.8, 1.0])
def test_gradient_matches_finite_differences_brachistochrone(tf):
    p = brachistochrone_range(tf)
    traj = _traj(p, 41, tf, lambda t: 0.3 + 1.5 * t / tf)
    assert fd_gradient_check(p, traj, seed=1) < 1e-2


def test_gradient_check_without_cost_is_zero():
    p = OcpProblem(n=1, m=1, x0=[0.0], f=lambda x, u, t: u, f_x=lambda x, u, t: [[0.0]],
                   f_u=lambda x, u, t: [[1.0]], tf_fixed=1.0)
    assert fd_gradient_check(p, _traj(p, 11, 1.0, np.cos)) == 0.0


def test_converged_brachistochrone_certificates(ex2, ex2_result):
    p, traj = ex2.problem, ex2_result.trajectory
    lam = recover_costate(p, traj, ex2_result.pi, ex2_result.multipliers)
    classic = classic_residuals(p, traj, lam, ex2_result.pi, ex2_result.multipliers)
    assert classic.terminal < 1e-12
    assert classic.transversality < 1e-4
    assert classic.stationarity < 1e-2
    assert classic.complementarity < 1e-6
    assert set(classic.as_dict()) == {"costate", "stationarity", "transversality",
                                      "terminal", "complementarity"}
    opt = optimality_residuals(p, traj, ex2.config)
    assert opt.pu_pc_inf < 1e-3 and opt.transversality < 1e-4
    pi = solve_pi(p, traj, ex2_result.multipliers, ex2.config)
    assert np.allclose(pi, ex2_result.pi, atol=1e-6)


def test_fixed_horizon_has_no_transversality(ex2, ex2_result):
    traj = ex2_result.trajectory
    p = ex2.problem.with_fixed_tf(traj.tf)
    lam = recover_costate(p, traj, ex2_result.pi, ex2_result.multipliers)
    assert classic_residuals(p, traj, lam, ex2_result.pi,
                             ex2_result.multipliers).transversality == 0.0
    assert optimality_residuals(p, traj, ex2.config).transversality == 0.0


def test_rate_identity_on_start_and_counts_active_nodes(ex1, ex1_init, ex2_result, ex2):
    # nothing active on the interior start, but the terminal rows still hold
    ident = constraint_rate_identity(ex1.problem, ex1_init, ex1.config)
    assert ident.active == 0 and ident.path == 0.0 and ident.terminal < 1e-10
    final = constraint_rate_identity(ex2.problem, ex2_result.trajectory, ex2.config)
    assert final.active > 0 and final.path < 1e-6
