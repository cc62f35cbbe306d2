"""Shared solver runs; the two examples are solved once per session."""

import dataclasses
import time

import numpy as np
import pytest

from vem_oc import example1, example2, solve, solve_fssop, straight_line_init

SNAPSHOT_TAUS = np.array([0.0, 15.0, 35.0, 55.0, 75.0, 95.0, 120.0])


@pytest.fixture(scope="session")
def ex1():
    return example1()


@pytest.fixture(scope="session")
def ex2():
    return example2()


@pytest.fixture(scope="session")
def ex1_init(ex1):
    return solve_fssop(ex1.problem, ex1.tf_guess, ex1.config, cost_override=ex1.fssop_cost)


@pytest.fixture(scope="session")
def ex2_init(ex2):
    return straight_line_init(ex2.problem, ex2.init, ex2.config.N, ex2.config)


def _timed_solve(problem, init, cfg, **kw):
    start = time.perf_counter()
    result = solve(problem, init, cfg, **kw)
    result.wall_time = time.perf_counter() - start
    return result


@pytest.fixture(scope="session")
def ex1_result(ex1, ex1_init):
    return _timed_solve(ex1.problem, ex1_init, ex1.config, snapshot_taus=SNAPSHOT_TAUS)


@pytest.fixture(scope="session")
def ex1_result_double_gain(ex1, ex1_init):
    cfg = dataclasses.replace(ex1.config, K=2 * ex1.config.K)
    return solve(ex1.problem, ex1_init, cfg)


@pytest.fixture(scope="session")
def ex2_result(ex2, ex2_init):
    return _timed_solve(ex2.problem, ex2_init, ex2.config, snapshot_taus=SNAPSHOT_TAUS)
