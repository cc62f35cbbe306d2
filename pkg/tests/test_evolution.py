import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vem_oc import (Diagnostics, InfeasibleInitError, SolverConfig, Trajectory, build_grid,
                    evolution_rhs, propagate, solve, stacked_size)
from vem_oc.evolution import HISTORY_COLUMNS, feasibility_violations, pack, unpack
from vem_oc.problems import example1, example2, lq_double_integrator

T = 2.0


def _min_energy_transfer():
    # double integrator from (1, 1) to the origin at fixed T with cost u^2 / 2
    p = lq_double_integrator(T)
    return p.replace(q=2, g=lambda x, t: np.asarray(x, dtype=float),
                     g_xf=lambda x, t: np.broadcast_to(np.eye(2), np.shape(x)[:-1] + (2, 2)),
                     g_tf=lambda x, t: np.zeros(np.shape(x)))


def _start(p, N, u=None):
    grid = build_grid(N, 0.0, T)
    u = np.zeros((N, p.m)) if u is None else u
    return Trajectory(propagate(p, u, grid), u, T, grid.s)


def test_stacked_sizes_of_builtins():
    assert stacked_size(example1().problem, 41) == 124
    assert stacked_size(example2().problem, 101) == 405


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 30), st.integers(1, 4), st.integers(1, 3), st.floats(0.5, 9.0))
def test_pack_unpack_roundtrip(N, n, m, tf):
    rng = np.random.default_rng(N * 100 + n * 10 + m)
    s = np.linspace(0.0, 1.0, N)
    traj = Trajectory(rng.normal(size=(N, n)), rng.normal(size=(N, m)), tf, s, 0.25)
    y = pack(traj)
    assert y.size == N * (n + m) + 1
    back = unpack(y, traj)
    assert np.array_equal(back.x, traj.x) and np.array_equal(back.u, traj.u)
    assert back.tf == tf and back.t0 == 0.25


def test_diagnostics_require_increasing_tau():
    diag = Diagnostics()
    row = {k: 0.0 for k in HISTORY_COLUMNS}
    diag.append(**row)
    with pytest.raises(ValueError):
        diag.append(**row)
    diag.append(**{**row, "tau": 1.0, "J": 2.0})
    assert np.array_equal(diag.column("J"), [0.0, 2.0]) and len(diag) == 2


def test_infeasible_start_is_rejected():
    ex = example1()
    with pytest.raises(InfeasibleInitError, match="terminal"):
        solve(ex.problem, _start(ex.problem, 41), ex.config)
    p = lq_double_integrator(T)
    traj = _start(p, 11)
    traj.x[5] += 1.0
    assert any("dynamics" in v for v in feasibility_violations(p, traj, 1e-6))


def test_optimal_start_takes_no_steps():
    p = lq_double_integrator(T)
    result = solve(p, _start(p, 21), SolverConfig(N=21))
    assert result.status == "converged" and result.steps == 0
    assert len(result.diagnostics) == 1


@pytest.fixture(scope="module")
def transfer():
    p = _min_energy_transfer()
    start = _start(p, 21)
    cfg = SolverConfig(N=21, K=1.0, k_g=1.0, tau_end=200.0, rtol=1e-6, atol=1e-8)
    return p, start, cfg, solve(p, start, cfg, check_init=False, snapshot_taus=[0.0, 1.0, 5.0])


def _discrete_min_energy(p, grid):
    # exact minimiser of sum W u^2 / 2 subject to x_N = 0; the map u -> x_N is
    # affine, so its columns come from propagating unit controls
    N = grid.N
    free = propagate(p, np.zeros((N, 1)), grid)[-1]
    cols = np.column_stack([propagate(p, np.eye(N)[:, [j]], grid)[-1] - free
                            for j in range(N)])
    Winv = 1.0 / grid.weights
    nu = np.linalg.solve(cols @ (Winv[:, None] * cols.T), -free)
    return Winv * (cols.T @ nu)


def test_minimum_energy_transfer_reaches_discrete_optimum(transfer):
    p, _, cfg, result = transfer
    traj = result.trajectory
    assert result.status == "converged"
    assert np.max(np.abs(traj.u[:, 0] - _discrete_min_energy(p, traj.grid))) < 1e-4
    # interior nodes sit close to the continuous answer u = -3.5 + 3 t
    inner = slice(1, -1)
    assert np.max(np.abs(traj.u[inner, 0] - (-3.5 + 3.0 * traj.t[inner]))) < 2e-2
    # u = -lambda2 = -(pi1 (T - t) + pi2)
    assert np.allclose(result.pi, [3.0, -2.5], atol=2e-2)
    assert np.max(np.abs(traj.x[-1])) < 1e-6


def test_history_and_snapshots(transfer):
    _, start, _, result = transfer
    tau = result.diagnostics.column("tau")
    assert tau[0] == 0.0 and np.all(np.diff(tau) > 0)
    assert len(result.diagnostics) == result.steps + 1
    snap_taus = [s[0] for s in result.snapshots]
    assert snap_taus[0] == 0.0 and np.array_equal(result.snapshots[0][1].u, start.u)
    assert len(snap_taus) == 3 and snap_taus[1] >= 1.0 and snap_taus[2] >= 5.0
    g = result.diagnostics.column("g_norm")
    assert g[-1] < 1e-6 < g[0]


def test_stop_callback_and_tau_end(transfer):
    p, start, cfg, _ = transfer
    stopped = solve(p, start, cfg, check_init=False, stop=lambda traj, rates: True)
    assert stopped.status == "stopped" and stopped.steps == 1
    short = solve(p, start, dataclasses.replace(cfg, tau_end=0.5, repropagate_every=0),
                  check_init=False)
    assert short.status == "tau_end" and short.tau == 0.5


def test_rates_keep_initial_state_fixed():
    ex = example2()
    grid = build_grid(21, 0.0, 1.0)
    traj = Trajectory(ex.init.x(grid.t), ex.init.u(grid.t), 1.0, grid.s)
    rates = evolution_rhs(ex.problem, traj, ex.config)
    assert np.all(rates.dx[0] == 0.0)
    assert rates.dx.shape == (21, 3) and rates.du.shape == (21, 1)
    assert np.isclose(rates.dtf, -ex.config.k_tf * rates.transversality)
