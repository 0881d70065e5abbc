import numpy as np
import pytest

from cachefem.blocked import solve
from cachefem.errors import ConfigurationError
from cachefem.fem import SolverConfig
from cachefem.fixtures import bar, cast_in_mold_problem
from cachefem.fem import FixedTemperature, Material, Problem
from cachefem.parallel import parallel_solve, partition_workers, setup_workers

from conftest import rel_dev


@pytest.fixture(scope="module")
def casting():
    return cast_in_mold_problem(4, 1)


@pytest.fixture(scope="module")
def reference(casting):
    return solve(casting, blocks=0, steps=25)[1]


def test_one_worker_is_the_blocked_solver(casting):
    _, ref = solve(casting, blocks=1, steps=25)
    res = parallel_solve(casting, workers=1, steps=25)
    np.testing.assert_array_equal(res.state.T, ref.T)
    assert res.schedule.n_stages == 0


@pytest.mark.parametrize("workers, blocks", [(2, 1), (3, 2), (4, 1), (8, 4), (2, "auto")])
def test_workers_match_serial(casting, reference, workers, blocks):
    res = parallel_solve(casting, workers=workers, blocks_per_worker=blocks, steps=25)
    assert rel_dev(res.state.T, reference.T) <= 1e-10
    assert res.state.t == pytest.approx(reference.t, rel=1e-12)
    assert res.state.step == 25
    assert len(res.block_counts) == workers


def test_plain_partition_matches_serial(casting, reference):
    res = parallel_solve(casting, workers=6, steps=25, augment=False)
    assert rel_dev(res.state.T, reference.T) <= 1e-10


def test_series_and_t_end():
    mesh = bar(10)
    mat = Material(1.0, 1.0, 1.0, T0=1.0, t_range=(0, 2))
    prob = Problem(mesh, {0: mat}, {"left": FixedTemperature(0.0), "right": FixedTemperature(0.0)},
                   SolverConfig(safety=0.9, output_every=10))
    ser, ref = solve(prob, blocks=1, t_end=0.02)
    res = parallel_solve(prob, workers=3, t_end=0.02)
    assert res.state.t == pytest.approx(0.02, rel=1e-13)
    assert rel_dev(res.state.T, ref.T) <= 1e-10
    assert [r.step for r in res.series] == [r.step for r in ser]


def test_schedule_is_valid_for_the_partition(casting):
    pm = partition_workers(casting, 5)
    setups, sched, graph = setup_workers(casting, pm)
    sched.validate(graph)
    assert sched.n_stages <= graph.max_degree + 1
    for ws in setups:
        assert ws.n_owned + sum(v.size for v in ws.buffers.recv_temp.values()) \
            == ws.global_of.size


def test_bad_arguments(casting):
    with pytest.raises(ConfigurationError):
        parallel_solve(casting, workers=0, steps=1)
    pm = partition_workers(casting, 2)
    with pytest.raises(ConfigurationError):
        parallel_solve(casting, workers=3, steps=1, partmap=pm)
