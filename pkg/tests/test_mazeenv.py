import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmaslab import mazeenv as me
from gmaslab.oracles import bfs_reachable


def open_maze(agent=(3, 3), key=(5, 5)):
    walls = np.ones((8, 8), dtype=bool)
    walls[1:-1, 1:-1] = False
    return me.MazeState(walls=walls, agent=agent, key=key)


def test_generate_is_deterministic():
    a, b = me.generate(7), me.generate(7)
    assert np.array_equal(a.walls, b.walls)
    assert (a.agent, a.key) == (b.agent, b.key)


def test_different_seeds_differ():
    layouts = {me.generate(s).walls.tobytes() for s in range(50)}
    assert len(layouts) > 40


@pytest.mark.parametrize("seed", range(0, 1000, 37))
def test_border_is_wall(seed):
    w = me.generate(seed).walls
    assert w[0].all() and w[-1].all() and w[:, 0].all() and w[:, -1].all()


def test_every_maze_is_solvable():
    for seed in range(1000):
        st_ = me.generate(seed)
        assert st_.agent != st_.key
        assert not st_.walls[st_.agent] and not st_.walls[st_.key]
        assert bfs_reachable(st_.walls, st_.agent, st_.key) > 0


def test_free_cells_form_one_component():
    for seed in range(100):
        st_ = me.generate(seed)
        free = [tuple(c) for c in np.argwhere(~st_.walls)]
        assert all(bfs_reachable(st_.walls, free[0], c) >= 0 for c in free)


def test_config_rejects_sizes_not_dividing_48():
    with pytest.raises(ValueError):
        me.MazeConfig(size=10)
    assert me.MazeConfig(size=12).block == 4


def test_render_shape_and_levels():
    obs = me.render(me.generate(3))
    assert obs.shape == (48, 48)
    assert set(np.unique(obs)) <= {-1.0, 0.0, 0.5, 1.0}


def test_open_interior_shows_agent_and_key():
    obs = me.render(open_maze())
    assert (obs == 1.0).sum() >= 36 and (obs == 0.5).sum() >= 36


def test_moving_changes_exactly_two_blocks():
    st_ = open_maze()
    before = me.render(st_)
    after = me.step(st_, 3).observation  # right
    diff = (before != after).reshape(8, 6, 8, 6).any(axis=(1, 3))
    assert diff.sum() == 2
    assert diff[3, 3] and diff[3, 4]
    blocks = (before != after).reshape(8, 6, 8, 6)
    assert blocks[3, :, 3, :].all() and blocks[3, :, 4, :].all()


def test_bump_into_wall_costs_step_reward():
    st_ = open_maze(agent=(1, 1))
    res = me.step(st_, 0)  # up into the border
    assert res.state.agent == (1, 1)
    assert res.reward == pytest.approx(-0.1)
    assert res.discount == me.GAMMA_ENV and not res.terminal


def test_reaching_key_pays_and_terminates():
    st_ = open_maze(agent=(5, 4), key=(5, 5))
    res = me.step(st_, 3)
    assert (res.reward, res.terminal, res.discount) == (1.0, True, 0.0)
    with pytest.raises(ValueError):
        me.step(res.state, 0)


def test_opposite_moves_return_to_start():
    st_ = open_maze()
    back = me.step(me.step(st_, 0).state, 1).state
    assert back.agent == st_.agent and back.steps_taken == 2


def test_invalid_action_rejected():
    with pytest.raises(ValueError):
        me.step(open_maze(), 4)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.lists(st.integers(0, 3), min_size=1, max_size=30))
def test_seed_and_actions_determine_trajectory(seed, actions):
    def roll():
        s = me.generate(seed)
        out = []
        for a in actions:
            if s.terminal:
                break
            res = me.step(s, a)
            out.append((res.observation.tobytes(), res.reward, res.discount))
            s = res.state
        return out
    assert roll() == roll()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.lists(st.integers(0, 3), min_size=1, max_size=60))
def test_terminal_iff_zero_discount(seed, actions):
    s = me.generate(seed)
    for a in actions:
        if s.terminal:
            break
        res = me.step(s, a)
        assert res.terminal == (res.discount == 0.0)
        assert res.reward in (me.KEY_REWARD, me.STEP_REWARD)
        s = res.state


def test_collect_exact_count_and_supports():
    data = me.collect_offpolicy(3000, seed=1)
    assert len(data) == 3000
    assert set(np.unique(data.r)) <= {np.float32(1.0), np.float32(-0.1)}
    assert set(np.unique(data.gamma)) <= {0.0, np.float32(me.GAMMA_ENV)}
    assert np.mean(data.gamma == 0) == np.mean(data.r > 0)
    assert data.s.shape == (3000, 2304) and data.s_next.shape == (3000, 2304)


def test_collect_is_seeded():
    a, b = me.collect_offpolicy(500, 4), me.collect_offpolicy(500, 4)
    assert np.array_equal(a.s, b.s) and np.array_equal(a.a, b.a)


def test_collect_resets_after_episode_cap():
    data = me.collect_offpolicy(2000, seed=2)
    # consecutive transitions chain unless an episode ended
    breaks = ~np.all(data.s[1:] == data.s_next[:-1], axis=1)
    ended = data.gamma[:-1] == 0
    assert np.all(breaks[ended])
    run = 0
    for b in breaks:
        run = 0 if b else run + 1
        assert run < me.EPISODE_CAP


def test_collect_rejects_nonpositive_n():
    with pytest.raises(ValueError):
        me.collect_offpolicy(0, 0)


def test_optimal_policy_score_matches_bfs():
    for seed in me.eval_seeds(3, 30):
        st_ = me.generate(seed)
        length = bfs_reachable(st_.walls, st_.agent, st_.key)
        res = me.run_episodes(lambda sts: [me.optimal_policy(s) for s in sts], [seed])
        assert res.scores[0] == pytest.approx(1.0 - 0.1 * (length - 1))
        assert res.lengths[0] == length


def test_random_policy_below_optimal():
    rng = np.random.default_rng(0)
    rand = me.evaluate_policy(lambda s: int(rng.integers(4)), 100, seed=9)
    best = me.evaluate_policy(me.optimal_policy, 100, seed=9)
    assert rand.mean < best.mean


def test_policy_avoiding_key_scores_minus_five():
    def avoid(s):
        for a, (dr, dc) in enumerate(me.MOVES):
            if (s.agent[0] + dr, s.agent[1] + dc) != s.key:
                return a
        raise AssertionError("unreachable")
    res = me.evaluate_policy(avoid, 20, seed=1)
    assert res.mean == pytest.approx(-5.0)
    assert set(res.lengths) == {me.EPISODE_CAP}


def test_dataset_file_layout(tmp_path):
    path = tmp_path / "d.bin"
    me.write_dataset(path, 100, seed=3)
    raw = path.read_bytes()
    magic, version, n, obs_dim = me.HEADER.unpack(raw[:me.HEADER.size])
    assert (magic, version, n, obs_dim) == (b"GMASDATA", 1, 100, 2304)
    assert len(raw) == 24 + 100 * (2304 * 4 + 1 + 4 + 4 + 2304 * 4)
    first = np.frombuffer(raw, dtype="<f4", count=2304, offset=24)
    assert np.array_equal(first, me.collect_offpolicy(100, 3).s[0])
