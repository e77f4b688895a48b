"""Platoon dynamics, local game, shields, and kernel parity."""

import numpy as np
import pytest

from agshield.errors import EmptyWinningSet, TooLarge
from agshield.learning import LearnerConfig, train_agent
from agshield.projection import project_lts
from agshield.sim import allow_matrix, evaluate, random_tables
from agshield.synthesis import (assume_guarantee_synthesize,
                                synthesize_local_shield)
from agshield.casestudies.platoon import (PlatoonModel, PlatoonParams,
                                          build_global_lts, build_local_game,
                                          front_car_policy, global_size,
                                          step_state)

REDUCED = PlatoonParams(n_cars=3, d_max=40, v_min=-4, v_max=4)


def vi(params, v):
    return (v - params.v_min) // 2


def test_params_validation():
    with pytest.raises(ValueError):
        PlatoonParams(n_cars=1)
    with pytest.raises(ValueError):
        PlatoonParams(v_min=-9)
    with pytest.raises(ValueError):
        PlatoonParams(accelerations=(-1, 0, 1))
    with pytest.raises(ValueError):
        PlatoonParams(init_gap=0)
    with pytest.raises(ValueError):
        PlatoonParams(init_speed=7)


def test_velocity_cap():
    p = PlatoonParams(n_cars=2)
    v = np.array([vi(p, 20), vi(p, 20)])
    d = np.array([50])
    v2, g2 = step_state(p, v, d, [2], 2)     # both try to accelerate
    assert v2.tolist() == [vi(p, 20), vi(p, 20)]


def test_trapezoid_gap_update():
    # self 10 -> 12, front 10 -> 8: gap shrinks by 2
    p = PlatoonParams(n_cars=2)
    v = np.array([vi(p, 10), vi(p, 10)])
    d = np.array([50])
    v2, g2 = step_state(p, v, d, [2], 0)
    assert p.v_min + 2 * v2[0] == 12
    assert p.v_min + 2 * v2[1] == 8
    assert g2[0] == 48
    # cross-check against the constant-acceleration closed form
    closed = 50 + ((10 + 8) / 2 - (10 + 12) / 2)
    assert g2[0] == closed


def test_gap_delta_is_integral_and_bounded():
    p = PlatoonParams(n_cars=2)
    for v1 in range(p.nv):
        for v2_ in range(p.nv):
            for a1 in range(3):
                for a2 in range(3):
                    v = np.array([v1, v2_])
                    d = np.array([100])
                    vv, gg = step_state(p, v, d, [a1], a2)
                    delta_values = (
                        (p.v_min + 2 * v2_) + (p.v_min + 2 * vv[1])
                        - (p.v_min + 2 * v1) - (p.v_min + 2 * vv[0])
                    )
                    assert delta_values % 2 == 0
                    delta = delta_values // 2
                    assert abs(delta) <= 31
                    assert gg[0] == 100 + delta


def test_damage_brakes_both_cars_to_permanent_standstill():
    p = PlatoonParams(n_cars=2)
    v = np.array([vi(p, 12), vi(p, -6)])
    d = np.array([0])
    for _ in range(10):
        v, d = step_state(p, v, d, [2], 2)   # acceleration requests ignored
        assert d[0] == 0
    assert v.tolist() == [vi(p, 0), vi(p, 0)]
    v2, d2 = step_state(p, v, d, [2], 2)
    assert v2.tolist() == [vi(p, 0), vi(p, 0)] and d2[0] == 0


def test_too_far_marker_absorbing():
    p = PlatoonParams(n_cars=2)
    v = np.array([vi(p, 0), vi(p, 0)])
    d = np.array([p.d_max])
    v2, g2 = step_state(p, v, d, [0], 2)
    assert g2[0] == p.d_max
    assert v2[1] == vi(p, 2)     # cars still drive


def test_front_car_policy_weighted_draw_values():
    assert front_car_policy(12) == (0.5, 0.25, 0.25)
    assert front_car_policy(-2) == (0.25, 0.25, 0.5)
    assert front_car_policy(5) == (1 / 3, 1 / 3, 1 / 3)


def test_local_game_state_count_full_scale():
    game = build_local_game(PlatoonParams(), rear_crash=False)
    assert game.n_states == 16 * 16 * 201 == 51456


def test_every_local_state_has_all_accelerations_enabled():
    game = build_local_game(REDUCED, rear_crash=False)
    assert (game.enabled_mask == np.uint64(0b111)).all()


def test_local_game_matches_projected_two_car_global():
    # the hand-written local generator is validated by the projection oracle
    p = PlatoonParams(n_cars=2, d_max=30, v_min=-4, v_max=4)
    game = build_local_game(p, rear_crash=False)
    ns = PlatoonModel(p).global_nagent()
    projected = project_lts(ns, 0)
    assert game.transition_set() == projected.transition_set()


def test_local_shield_regressions():
    m = PlatoonModel(PlatoonParams(n_cars=10))
    sh = synthesize_local_shield(m.local_game(1, True), m.local_safe_member(1))
    assert sh.winning_fraction() == pytest.approx(0.597520, abs=1e-6)
    sp = m.obs_space(1)
    assert sh.winning[sp.index_of_values((0, 0, 10))]
    assert not sh.winning[sp.index_of_values((20, -10, 1))]
    # at standstill with a 10m gap only braking arrests the worst case
    assert sh.allowed(sp.index_of_values((0, 0, 10))) == [0]


def test_rear_crash_variant_has_empty_winning_set():
    m = PlatoonModel(PlatoonParams(n_cars=10))
    with pytest.raises(EmptyWinningSet):
        synthesize_local_shield(m.local_game(1, False),
                                m.local_safe_member(1))


def test_agent_one_never_plays_the_rear_crash_game():
    m = PlatoonModel(REDUCED)
    assert m.variant_key(0, False) == m.variant_key(0, True)
    shields, report = assume_guarantee_synthesize(m, assume=True)
    assert len({r.variant for r in report.per_agent}) == 1
    assert shields[0].equals(shields[1])


def test_no_assumptions_fails_at_agent_two():
    m = PlatoonModel(PlatoonParams(n_cars=10))
    with pytest.raises(EmptyWinningSet) as exc:
        assume_guarantee_synthesize(m, assume=False)
    assert exc.value.agent == 1     # 0-based; reported as agent 2


def test_global_size_guard():
    with pytest.raises(TooLarge):
        build_global_lts(PlatoonParams(n_cars=10))
    assert global_size(PlatoonParams(n_cars=10)) > 10**20


def test_shielded_episode_never_reaches_damaged_or_marker():
    m = PlatoonModel(REDUCED)
    shields, _ = assume_guarantee_synthesize(m, assume=True)
    stats, rows = evaluate(m, None, shields, 200, master_seed=31)
    assert stats.fraction_safe == 1.0
    p = m.params

    class NoKernel(PlatoonModel):
        eval_episodes = property()

    stats2, rows2 = evaluate(NoKernel(p), None, shields, 50, master_seed=31)
    assert stats2.fraction_safe == 1.0


def test_agent_cost_is_observed_gap():
    m = PlatoonModel(PlatoonParams(n_cars=3))
    sp = m.obs_space(0)
    obs = sp.index_of_values((4, -2, 137))
    assert m.agent_cost(0, obs, 1) == 137.0


def test_damaged_and_marker_states_are_unsafe():
    m = PlatoonModel(PlatoonParams(n_cars=3))
    state = m.initial_state()
    assert m.is_safe(state)
    crashed = state.copy()
    crashed[3] = 0           # gap of pair 1 hits zero
    assert not m.is_safe(crashed)
    far = state.copy()
    far[4] = m.params.d_max  # too-far marker on pair 2
    assert not m.is_safe(far)


def test_constant_gap_costs_accumulate():
    # hold every car at standstill: gap 10 for 100 steps = 1000 per agent
    p = PlatoonParams(n_cars=3)
    m = PlatoonModel(p)
    n_obs = m.n_obs(0)
    hold = np.full((2, n_obs), 1, dtype=np.int64)
    # front car must also hold: velocities all zero means only draws with
    # acceleration 0 keep the gap fixed, so pin the front by checking the
    # agents' own costs only on a crafted two-step reference run
    from agshield.kernels import Stream
    state = m.initial_state()
    rng = Stream(1)
    total = np.zeros(2)
    for _ in range(100):
        state, costs, safe = m.step(state, np.array([1, 1]), rng)
        total += costs
    # both agents track the (random) front car's influence only through
    # the trapezoid; agent 0's gap stays 10 because car 0 and car 1 hold
    assert total[0] == 1000.0


def test_train_kernel_matches_python_reference():
    m = PlatoonModel(REDUCED)
    shields, _ = assume_guarantee_synthesize(m, assume=True)
    allow = allow_matrix(m, shields)
    tables = random_tables(m)
    cfg = LearnerConfig(episodes=30, episode_len=25, master_seed=17)
    res_k = train_agent(m, 1, allow, tables.copy(), cfg, slot=0,
                        use_kernel=True)
    res_p = train_agent(m, 1, allow, tables.copy(), cfg, slot=0,
                        use_kernel=False)
    assert np.array_equal(res_k.q, res_p.q)
    assert np.array_equal(res_k.costs, res_p.costs)
    assert np.array_equal(res_k.unsafe, res_p.unsafe)
    assert np.array_equal(res_k.greedy, res_p.greedy)
