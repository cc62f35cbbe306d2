import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vem_oc import (SolverConfig, Trajectory, build_grid, compute_pu, compute_pu_pc, propagate,
                    recover_costate, solve_pi)
from vem_oc.errors import ControllabilityError
from vem_oc.evolution import evaluate_cost
from vem_oc.gradients import Assembly
from vem_oc.problems import example1, example2, lq_double_integrator


def _traj(problem, N, tf, u):
    grid = build_grid(N, 0.0, tf)
    u = np.asarray(u(grid.t), dtype=float).reshape(N, problem.m)
    return Trajectory(propagate(problem, u, grid), u, tf, grid.s)


@pytest.fixture(scope="module")
def brach_asm():
    ex = example2()
    traj = _traj(ex.problem, 25, 0.8, lambda t: 0.3 + 1.2 * t)
    return Assembly(ex.problem, traj, ex.config)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_backward_operator_is_the_trapezoid_adjoint(brach_asm, seed):
    rng = np.random.default_rng(seed)
    N = brach_asm.grid.N
    v = rng.normal(size=(N, 1))
    a = rng.normal(size=(N, 3))
    W = brach_asm.W
    lhs = np.sum(W[:, None] * a * brach_asm.state_rate(v))
    rhs = np.sum(W[:, None] * v * brach_asm.backward(a))
    assert np.isclose(lhs, rhs, rtol=1e-10, atol=1e-12)


def test_pu_is_the_discrete_cost_gradient():
    p = lq_double_integrator(1.5)
    traj = _traj(p, 21, 1.5, lambda t: np.cos(3 * t))
    pu = compute_pu(p, traj)
    W = traj.grid.weights
    eps = 1e-6
    for j in (0, 4, 13, 20):
        up, down = traj.u.copy(), traj.u.copy()
        up[j] += eps
        down[j] -= eps
        J = [evaluate_cost(p, traj.copy(x=propagate(p, u, traj.grid), u=u)) for u in (up, down)]
        assert np.isclose((J[0] - J[1]) / (2 * eps), W[j] * pu[j, 0], rtol=1e-6, atol=1e-9)


def test_pi_solves_the_terminal_system(brach_asm):
    mu = np.zeros((brach_asm.grid.N, 1))
    pi = solve_pi(brach_asm.problem, brach_asm.traj, cfg=brach_asm.cfg)
    lhs = brach_asm.M @ pi
    rhs = -brach_asm.h1 + brach_asm.cfg.k_g * brach_asm.lin.g - brach_asm.mu_terminal(mu)
    assert np.allclose(lhs, rhs)


def test_pi_zeroes_the_terminal_rate(brach_asm):
    # with pi in place the demanded decay dg/dtau = -k_g g holds
    asm = brach_asm
    pi = asm.pi_from_mu(np.zeros((asm.grid.N, 1)))
    du = asm.gain_times(asm.pu + asm.pi_direction @ pi)
    dtf = asm.tf_rate(pi)
    dg = asm.lin.gx @ (asm.state_rate(du)[-1] + asm.D[-1] * dtf) + asm.lin.g_t * dtf
    assert np.allclose(dg, -asm.cfg.k_g * asm.lin.g, atol=1e-12)


def test_pu_pc_without_multipliers_equals_pu():
    p = lq_double_integrator()
    traj = _traj(p, 11, 1.0, np.sin)
    assert np.allclose(compute_pu_pc(p, traj, np.zeros(0), np.zeros((11, 0))),
                       compute_pu(p, traj))


def test_costate_terminal_identity():
    ex = example2()
    traj = _traj(ex.problem, 15, 0.8, lambda t: 0.5 + t)
    pi = np.array([0.37])
    lam = recover_costate(ex.problem, traj, pi, np.zeros((15, 1)))
    phi_x = ex.problem.evaluate_point("phi_x", traj.x[-1], traj.tf)
    gx = ex.problem.evaluate_point("g_xf", traj.x[-1], traj.tf)
    assert np.allclose(lam[-1], phi_x + gx.T @ pi, atol=1e-14)


def test_costate_of_double_integrator_with_terminal_multiplier():
    ex = example1()
    traj = _traj(ex.problem, 21, 3.0, lambda t: -np.ones_like(t))
    pi = np.array([0.8, -1.0])
    lam = recover_costate(ex.problem, traj, pi, np.zeros((21, 1)))
    # lambda1 constant, lambda2 = pi1 (tf - t) + pi2
    assert np.allclose(lam[:, 0], 0.8)
    assert np.allclose(lam[:, 1], 0.8 * (3.0 - traj.t) - 1.0)


def test_uncontrollable_terminal_system_is_reported():
    ex = example1()
    traj = _traj(ex.problem, 11, 2.0, lambda t: 0 * t)
    p = ex.problem.replace(f_u=lambda x, u, t: np.zeros(np.shape(u)[:-1] + (2, 1)),
                           f=lambda x, u, t: np.stack([x[..., 1], 0 * u[..., 0]], axis=-1))
    cfg = dataclasses.replace(ex.config, k_tf=0.0)
    with pytest.raises(ControllabilityError):
        solve_pi(p, traj, cfg=cfg)


@pytest.mark.parametrize("changes", [
    dict(K=0.0), dict(K=[[1.0, 2.0], [0.0, 1.0]]), dict(K=[[1.0, 0.0], [0.0, -1.0]]),
    dict(rtol=0.0), dict(k_tf=-1.0), dict(N=2), dict(repropagate_every=-1),
])
def test_config_rejects_bad_values(changes):
    with pytest.raises(ValueError):
        SolverConfig(**changes)


def test_config_gain_and_serialisation():
    cfg = SolverConfig(K=0.5)
    assert np.allclose(cfg.gain(2), 0.5 * np.eye(2))
    mat = SolverConfig(K=np.diag([1.0, 2.0]))
    assert np.allclose(mat.gain(2), np.diag([1.0, 2.0]))
    assert mat.to_dict()["K"] == [[1.0, 0.0], [0.0, 2.0]]
    assert SolverConfig(repropagate_every=np.inf).repropagate_every == np.inf
    assert cfg.tf_gain(lq_double_integrator()) == 0.0
