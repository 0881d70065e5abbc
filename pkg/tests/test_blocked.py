import numpy as np
import pytest

from cachefem.blocked import (autotune_block_count, blocked_step, build_block_plan,
                              choose_block_count, default_candidates, improvement_factor, run,
                              solve)
from cachefem.errors import SolverError
from cachefem.fem import GlobalAssembly, assemble_local, initial_state, stable_timestep
from cachefem.fixtures import cast_in_mold_problem

from conftest import chain_mesh, insulated, rel_dev


@pytest.fixture(scope="module")
def casting():
    return cast_in_mold_problem(4, 1)


def test_one_block_has_no_merge_lists(casting):
    plan = build_block_plan(casting, 1)
    assert plan.merge_lists() == {}
    assert plan.total_slots == casting.mesh.n_nodes


def test_chain_of_four_in_two_blocks():
    prob = insulated(chain_mesh(4))
    plan = build_block_plan(prob, 2)
    ml = plan.merge_lists()
    assert sorted(ml) == [2, 3, 4]
    assert all(len(v) == 2 and [b for b, _ in v] == [0, 1] for v in ml.values())


@pytest.mark.parametrize("b", [2, 3, 8])
def test_slot_count_exceeds_node_count(casting, b):
    plan = build_block_plan(casting, b)
    assert plan.total_slots > casting.mesh.n_nodes
    assert plan.total_slots == casting.mesh.n_nodes + sum(
        len(v) - 1 for v in plan.merge_lists().values())


def test_one_block_identical_to_global_sweep(casting):
    s0 = initial_state(casting)
    asm = GlobalAssembly(casting)
    plan = build_block_plan(casting, 1)
    a, b = s0, s0
    for _ in range(20):
        a = asm.step(a)
        b = blocked_step(plan, b, casting)
    np.testing.assert_array_equal(a.T, b.T)
    assert a.t == b.t


@pytest.mark.parametrize("b", [2, 4, 8])
def test_blocked_matches_unblocked(casting, b):
    _, ref = solve(casting, blocks=0, steps=30)
    _, got = solve(casting, blocks=b, steps=30)
    assert rel_dev(got.T, ref.T) <= 1e-10
    assert got.t == pytest.approx(ref.t, rel=1e-12)


def test_merge_is_sum_over_blocks(casting):
    plan = build_block_plan(casting, 4)
    s = initial_state(casting)
    s.T += np.random.default_rng(0).uniform(-30, 30, s.T.size)
    amb = plan.ambient(s.T)
    C, r = plan.assemble(s.T, s.H, amb)
    Cr = np.zeros_like(C)
    rr = np.zeros_like(r)
    for blk in plan.blocks:
        c, q = assemble_local(blk, s.T[blk.gather], s.H[blk.gather], amb)
        np.add.at(Cr, blk.gather, c)
        np.add.at(rr, blk.gather, q)
    np.testing.assert_allclose(C, Cr, rtol=1e-13)
    np.testing.assert_allclose(r, rr, rtol=1e-12, atol=1e-12 * np.abs(rr).max())


def test_block_count_errors(casting):
    with pytest.raises(SolverError):
        build_block_plan(casting, 0)


def test_choose_block_count():
    assert choose_block_count({1: 10.0, 2: 8.0, 4: 9.0}) == 2
    assert choose_block_count({4: 1.0, 2: 1.0}) == 2
    assert choose_block_count({8: 3.0}) == 8
    with pytest.raises(ValueError):
        choose_block_count({})


def test_improvement_factor():
    assert improvement_factor(2.0, 1.0) == 2.0
    assert improvement_factor(1.0, 1.0) == 1.0
    with pytest.raises(ValueError):
        improvement_factor(1.0, 0.0)


def test_default_candidates():
    assert default_candidates(100) == [1]
    assert default_candidates(1000) == [1, 2, 4, 8]


def test_autotune_with_fake_timer(casting):
    # a timer that makes every candidate cost the same: ties go to 1 block
    clock = iter(range(10_000))
    rep = autotune_block_count(casting, initial_state(casting), candidates=[4, 1, 2],
                               trial_steps=2, repeats=1, timer=lambda: next(clock),
                               total_steps=100)
    assert rep.chosen == 1
    assert rep.rows() == [(4, 1), (1, 1), (2, 1)]
    assert 0 < rep.overhead < 1


def test_autotune_does_not_touch_state(casting):
    s = initial_state(casting)
    T = s.T.copy()
    rep = autotune_block_count(casting, s, candidates=[1, 2], trial_steps=2)
    np.testing.assert_array_equal(s.T, T)
    assert rep.chosen in (1, 2)
    with pytest.raises(ValueError):
        autotune_block_count(casting, s, candidates=[])


def test_run_lands_on_t_end():
    prob = insulated(chain_mesh(4))
    s = initial_state(prob)
    s.T[:] = np.arange(s.T.size, dtype=float)
    s.H[:] = s.T
    t_end = 23.7 * stable_timestep(prob, T=s.T)
    series, end = solve(prob, blocks=2, t_end=t_end, state=s, output_every=5)
    assert end.t == pytest.approx(t_end, rel=1e-13)
    assert series[0].step == 0 and series[-1].step == end.step
    assert all(rec.step % 5 == 0 for rec in series[1:-1])
    with pytest.raises(SolverError):
        run(lambda st, dt: st, s)


@pytest.mark.parametrize("safety", [0.5, 1.0])
def test_temperatures_stay_within_initial_and_ambient_range(safety):
    prob = cast_in_mold_problem(4, 1, safety=safety)
    series, _ = solve(prob, blocks=2, steps=400, output_every=1)
    lo = min(min(m.T0 for m in prob.materials.values()), 300.0)
    hi = max(max(m.T0 for m in prob.materials.values()), 300.0)
    assert min(r.T_min for r in series) >= lo - 1e-9
    assert max(r.T_max for r in series) <= hi + 1e-9
