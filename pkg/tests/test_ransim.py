import numpy as np
import pytest

from ranevo.ransim import (
    CellState,
    EnvSpec,
    RanAction,
    RanEnv,
    TrapProfile,
    UeState,
    cqi_to_efficiency,
    jain_fairness,
    reward_breakdown,
    served_vector,
    total_prbs_for_bandwidth,
    ue_throughput,
)


def test_cqi_efficiency_endpoints():
    assert cqi_to_efficiency(1) == pytest.approx(0.4)
    assert cqi_to_efficiency(10) == pytest.approx(4.0)
    assert cqi_to_efficiency(15) == pytest.approx(6.0)
    with pytest.raises(ValueError):
        cqi_to_efficiency(0)
    with pytest.raises(ValueError):
        cqi_to_efficiency(16)


def test_prb_grid():
    assert total_prbs_for_bandwidth(10e6) == 50
    assert total_prbs_for_bandwidth(4e6) == 20
    assert total_prbs_for_bandwidth(1.6e6) == 8


def test_ue_throughput_worked_examples():
    cell = CellState(0, 10e6, 50, {0: 10, 1: 1, 2: 0})
    # 10/50 of 10 MHz at efficiency 6.0 = 12 Mbps, capped by 1 Mbps demand
    assert ue_throughput(UeState(0, 0, 15, 1e6), cell) == pytest.approx(1e6)
    # 1/50 of 10 MHz at efficiency 0.4 = 80 kbps, below demand
    assert ue_throughput(UeState(1, 0, 1, 1e6), cell) == pytest.approx(80_000.0)
    assert ue_throughput(UeState(2, 0, 15, 1e6), cell) == 0.0


def test_jain_fairness():
    assert jain_fairness([5.0, 5.0, 5.0]) == pytest.approx(1.0)
    assert jain_fairness([1.0, 0.0, 0.0, 0.0]) == pytest.approx(0.25)
    assert jain_fairness([0.0, 0.0]) == 1.0
    assert 0 < jain_fairness([3.0, 1.0]) < 1
    with pytest.raises(ValueError):
        jain_fairness([])
    with pytest.raises(ValueError):
        jain_fairness([1.0, -1.0])


def test_jain_bounds_random():
    rng = np.random.default_rng(9)
    for _ in range(200):
        x = rng.random(rng.integers(1, 20)) * 1e6
        f = jain_fairness(x)
        assert 1.0 / len(x) - 1e-12 <= f <= 1.0 + 1e-12


def _flat_spec(**kw):
    base = dict(
        cells=1,
        ues=4,
        bandwidth_hz=2e6,
        max_demand_bps=1e6,
        episode_steps=50,
        cqi_init_range=(10, 10),
        cqi_walk_prob=0.0,
    )
    base.update(kw)
    return EnvSpec(**base)


def test_reward_full_service_is_1000():
    env = RanEnv(_flat_spec())
    env.reset(seed=0)
    # 10 PRBs, 4 UEs: shares (3,3,2,2); cqi 10 -> (2/10)*2e6*4.0 = 1.6e6 > demand
    b = reward_breakdown(env.snap)
    assert b.total == pytest.approx(1000.0)
    assert b.fairness == pytest.approx(1.0)
    assert b.served_bps == pytest.approx(4e6)


def test_reward_partial_service_hand_computed():
    env = RanEnv(_flat_spec(ues=2, bandwidth_hz=2e6, cqi_init_range=(5, 5)))
    snap = env.reset(seed=0)
    snap.prbs[:] = [5, 0]
    # served: ue0 (5/10)*2e6*2.0 = 2e6 capped to 1e6; ue1 0
    # ratio 0.5, jain([1e6, 0]) = 0.5 -> 250
    b = reward_breakdown(snap)
    assert b.total == pytest.approx(250.0)


def test_reset_equal_split_remainder_to_low_ids():
    env = RanEnv(EnvSpec(cells=1, ues=13, bandwidth_hz=10e6))
    snap = env.reset(seed=1)
    assert snap.prbs.sum() == 50
    assert list(snap.prbs[:11]) == [4] * 11
    assert list(snap.prbs[11:]) == [3, 3]


def test_observation_shape_and_range():
    env = RanEnv(EnvSpec(cells=1, ues=13, bandwidth_hz=10e6))
    env.reset(seed=2)
    obs = env.observe()
    assert obs.shape == (40,)
    assert np.all(obs >= 0.0) and np.all(obs <= 1.0)
    assert obs[-1] == pytest.approx(1.0)


def test_action_decode_round_trip():
    env = RanEnv(EnvSpec(cells=1, ues=13))
    assert env.verbs == ("prb_up", "prb_down", "noop")
    assert env.n_actions == 39
    env2 = RanEnv(EnvSpec(cells=2, ues=13), n_agents=2)
    assert env2.n_actions == 52
    a = env2.decode_action(13 * 4 - 1)
    assert a == RanAction(12, "noop")
    assert env2.decode_action(2) == RanAction(0, "handover")
    with pytest.raises(ValueError):
        env2.decode_action(52)


def test_noop_with_frozen_walk_changes_only_time():
    env = RanEnv(_flat_spec())
    snap = env.reset(seed=3)
    before = snap.clone()
    env.step([RanAction(0, "noop")])
    assert snap.time_step == before.time_step + 1
    assert np.array_equal(snap.cqi, before.cqi)
    assert np.array_equal(snap.prbs, before.prbs)
    assert np.array_equal(snap.cell_of, before.cell_of)


def test_prb_up_down_and_budget_edges():
    env = RanEnv(_flat_spec(ues=2))
    snap = env.reset(seed=4)
    snap.prbs[:] = [10, 0]  # cell budget is 10: full
    env.step([RanAction(0, "prb_up")])  # no capacity left: no-op
    assert list(snap.prbs) == [10, 0]
    env.step([RanAction(1, "prb_down")])  # already at zero: no-op
    assert list(snap.prbs) == [10, 0]
    env.step([RanAction(0, "prb_down")])
    env.step([RanAction(1, "prb_up")])
    assert list(snap.prbs) == [9, 1]


def test_prb_conservation_under_random_actions():
    spec = EnvSpec(cells=2, ues=9, bandwidth_hz=2e6, trap=TrapProfile())
    env = RanEnv(spec, n_agents=2)
    snap = env.reset(seed=5)
    rng = np.random.default_rng(5)
    for _ in range(300):
        acts = [env.decode_action(int(rng.integers(env.n_actions))) for _ in range(2)]
        env.step(acts)
        assert np.all(snap.prbs >= 0)
        for c in range(2):
            assert snap.prbs[snap.cell_of == c].sum() <= spec.total_prbs
        assert np.all(snap.cqi >= 1) and np.all(snap.cqi <= 15)


def test_trajectory_determinism_same_seed():
    spec = EnvSpec(cells=1, ues=13, bandwidth_hz=10e6, cqi_walk_prob=0.2)
    rewards = []
    states = []
    for _ in range(2):
        env = RanEnv(spec)
        snap = env.reset(seed=42)
        rng = np.random.default_rng(0)
        rs = []
        for _ in range(10):
            r, _ = env.step([env.decode_action(int(rng.integers(env.n_actions)))])
            rs.append(r[0])
        rewards.append(rs)
        states.append((snap.cqi.copy(), snap.prbs.copy()))
    assert rewards[0] == rewards[1]
    assert np.array_equal(states[0][0], states[1][0])
    assert np.array_equal(states[0][1], states[1][1])


def test_clone_replays_identically():
    spec = EnvSpec(cells=1, ues=6, bandwidth_hz=2e6, cqi_walk_prob=0.3)
    env = RanEnv(spec)
    env.reset(seed=8)
    env.step([RanAction(0, "prb_up")])
    fork = RanEnv(spec)
    fork.snap = env.snap.clone()
    seq = [RanAction(i % 6, "prb_up") for i in range(20)]
    r1 = [env.step([a])[0][0] for a in seq]
    r2 = [fork.step([a])[0][0] for a in seq]
    assert r1 == r2
    assert np.array_equal(env.snap.cqi, fork.snap.cqi)


def test_more_prbs_never_less_throughput():
    rng = np.random.default_rng(13)
    for _ in range(200):
        cqi = int(rng.integers(1, 16))
        prbs = int(rng.integers(0, 50))
        cell_a = CellState(0, 10e6, 50, {0: prbs})
        cell_b = CellState(0, 10e6, 50, {0: prbs + 1})
        ue = UeState(0, 0, cqi, float(rng.uniform(1e3, 1e6)))
        assert ue_throughput(ue, cell_b) >= ue_throughput(ue, cell_a)


def test_handover_rejected_in_single_cell():
    env = RanEnv(_flat_spec())
    env.reset(seed=0)
    with pytest.raises(ValueError):
        env.step([RanAction(0, "handover")])


def _two_cell_env():
    spec = EnvSpec(
        cells=2,
        ues=4,
        bandwidth_hz=2e6,
        cqi_init_range=(10, 10),
        cqi_walk_prob=0.0,
        trap=TrapProfile(handover_penalty=400.0, penalty_duration=3),
    )
    env = RanEnv(spec, n_agents=2)
    env.reset(seed=0)
    return env


def test_handover_moves_ue_and_resets_prbs():
    env = _two_cell_env()
    snap = env.snap
    assert list(snap.cell_of) == [0, 1, 0, 1]
    env.step([RanAction(0, "handover"), RanAction(0, "noop")])
    assert list(snap.cell_of) == [1, 1, 0, 1]
    assert snap.prbs[0] == 0


def test_trap_penalty_window_timing():
    env = _two_cell_env()
    noop = RanAction(0, "noop")
    r0, _ = env.step([RanAction(0, "handover"), noop])
    # reward is collected on the post-action state but the penalty only
    # covers the following steps
    assert r0[0] == pytest.approx(1000.0)
    for _ in range(3):
        r, _ = env.step([noop, noop])
        assert r[0] == pytest.approx(600.0)
    r4, _ = env.step([noop, noop])
    assert r4[0] == pytest.approx(1000.0)


def test_trap_penalty_charged_to_acting_agent_only():
    env = _two_cell_env()
    noop = RanAction(0, "noop")
    env.step([RanAction(0, "handover"), noop])
    r, b = env.step([noop, noop])
    # agent 1 absorbed the UE (0 PRBs yet) but pays no handover penalty
    assert r[0] == pytest.approx(600.0)
    assert b[1].total == pytest.approx(1000.0 * (2 / 3) * (2 / 3))


def test_reward_clamped_at_zero():
    spec = EnvSpec(
        cells=2,
        ues=4,
        bandwidth_hz=2e6,
        cqi_init_range=(1, 1),
        cqi_walk_prob=0.0,
        trap=TrapProfile(handover_penalty=5000.0, penalty_duration=2),
    )
    env = RanEnv(spec, n_agents=2)
    env.reset(seed=0)
    noop = RanAction(0, "noop")
    env.step([RanAction(0, "handover"), noop])
    r, _ = env.step([noop, noop])
    assert r[0] == 0.0


def test_empty_scope_scores_zero():
    env = _two_cell_env()
    noop = RanAction(0, "noop")
    env.step([RanAction(0, "handover"), noop])
    env.step([RanAction(0, "handover"), noop])  # slot 0 is now ue2
    b = env.rewards()
    assert b[0].total == 0.0
    assert b[0].fairness == 1.0
    assert b[0].demand_bps == 0.0


def test_empty_slot_action_is_noop():
    env = _two_cell_env()
    snap = env.snap
    env.step([RanAction(0, "handover"), RanAction(0, "noop")])
    before = snap.prbs.copy()
    env.step([RanAction(3, "prb_up"), RanAction(0, "noop")])  # agent 0 has 1 UE
    assert np.array_equal(snap.prbs, before)


def test_per_cell_overrides():
    spec = EnvSpec(
        cells=2,
        ues=4,
        cell_cqi_init_ranges=((3, 3), (12, 12)),
        cell_demand_bps=(1e6, 2e5),
    )
    env = RanEnv(spec, n_agents=2)
    snap = env.reset(seed=0)
    assert list(snap.cqi) == [3, 12, 3, 12]
    assert list(snap.demand) == [1e6, 2e5, 1e6, 2e5]


def test_served_vector_matches_scalar_op():
    env = RanEnv(EnvSpec(cells=2, ues=9, bandwidth_hz=4e6), n_agents=2)
    snap = env.reset(seed=17)
    vec = served_vector(snap)
    cells = snap.cells
    for ue in snap.ues:
        assert vec[ue.ue_id] == pytest.approx(ue_throughput(ue, cells[ue.cell]))


def test_trace_dump_writes_rows(tmp_path):
    import csv

    out = tmp_path / "trace.csv"
    env = RanEnv(_flat_spec())
    env.reset(seed=0)
    with open(out, "w", newline="") as fh:
        env.attach_trace(fh)
        for _ in range(5):
            env.step([RanAction(0, "noop")])
        env._trace = None
    rows = list(csv.reader(open(out)))
    assert len(rows) == 6
    assert rows[0][0] == "time_step"
    assert rows[0].count("reward_0") == 1
