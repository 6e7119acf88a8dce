import math

import numpy as np
import pytest

from anm.anm6 import ANM6Easy
from anm.env import ANMEnv, GridState, InitCollapse, NotReset, UnknownKeyword
from anm.regions import gen_region

from conftest import two_bus_dict


class RampEnv(ANMEnv):
    """Two-bus test environment whose single load follows a fixed list (p.u.)."""

    def __init__(self, loads, **kw):
        super().__init__(two_bus_dict(load_min=-10000.), K=1, **kw)
        self.loads = loads

    def init_state(self, rng):
        return GridState(np.zeros(2), np.zeros(2), np.zeros(0), np.zeros(0), np.zeros(1))

    def next_vars(self, state):
        t = int(state.aux[0]) + 1
        return np.array([self.loads[t % len(self.loads)]]), np.zeros(0), np.array([float(t)])


def test_state_observation_length(env):
    obs = env.reset(seed=3)
    assert obs.shape == (18,)
    assert env.action_dim == 6


def test_reset_deterministic():
    a, b = ANM6Easy(), ANM6Easy()
    assert np.array_equal(a.reset(seed=11), b.reset(seed=11))
    steps_a = [a.step(np.zeros(6)).reward for _ in range(20)]
    steps_b = [b.step(np.zeros(6)).reward for _ in range(20)]
    assert steps_a == steps_b


def test_step_before_reset():
    with pytest.raises(NotReset):
        ANM6Easy().step(np.zeros(6))


def test_initial_state_is_feasible_and_balanced(env):
    for seed in range(20):
        env.reset(seed=seed)
        s = env.state
        # generators start at (or, after projection, below) their maximum; DES idle
        assert np.all(s.dev_p[[2, 4]] <= s.gen_p_max + 1e-12)
        assert s.dev_p[6] == 0 and s.dev_q[6] == 0
        assert 0 <= s.soc[0] <= 1
        # loads on their power-factor line
        assert np.allclose(s.dev_q[[1, 3, 5]], 0.2 * s.dev_p[[1, 3, 5]])
        # the slack closes the balance: sum of injections = losses
        assert np.sum(s.dev_p) == pytest.approx(env.pf.losses, abs=1e-7)


def test_initial_generator_q_projected(env):
    # reactive power is sampled over the box; the cap lines must still hold
    for seed in range(30):
        env.reset(seed=seed)
        for g, pmax in zip((2, 4), env.state.gen_p_max):
            dev = env.network.devices[g]
            p, q = env.state.dev_p[g], env.state.dev_q[g]
            assert gen_region(dev, pmax).contains((p, q))


def test_next_vars_at_slot_30(env):
    s = env.state.copy()
    s.aux[:] = 29
    load_p, gen_p_max, aux = env.next_vars(s)
    assert aux[0] == 30
    assert np.allclose(load_p * 100, [-4, -8.5, -18.75])
    assert np.allclose(gen_p_max * 100, [3, 18.25])


def test_time_wraps(env):
    s = env.state.copy()
    s.aux[:] = 95
    assert env.next_vars(s)[2][0] == 0


def test_action_bounds(env):
    low, high = env.action_space_bounds()
    assert (low[0], high[0]) == pytest.approx((0, 0.30))
    assert (low[1], high[1]) == pytest.approx((0, 0.50))
    assert (low[4], high[4]) == pytest.approx((-0.5, 0.5))
    assert (low[2], high[2]) == pytest.approx((-0.3, 0.3))


def test_observation_bounds_contain_observations(env):
    low, high = env.observation_bounds()
    for seed in range(5):
        obs = env.reset(seed=seed)
        for _ in range(10):
            obs = env.step(np.random.default_rng(seed).uniform(*env.action_space_bounds())).observation
            assert np.all(obs >= low - 1e-9) and np.all(obs <= high + 1e-9)


def test_slack_voltage_in_kv():
    e = ANM6Easy(observation=[('bus_v_magn', [0], 'kV'), ('bus_v_ang', [0], 'degree')])
    obs = e.reset(seed=0)
    assert obs[0] == pytest.approx(137.28)
    assert obs[1] == pytest.approx(0.0)


def test_keyword_observation_matches_power_flow():
    e = ANM6Easy(observation=[('branch_s', [(2, 5), (5, 2)], 'MVA'), ('dev_p', [1], 'MW'),
                              ('des_soc', 'all', 'MWh'), ('aux', 'all')])
    obs = e.reset(seed=4)
    assert obs[0] == pytest.approx(abs(e.pf.s_from[4]) * 100)
    assert obs[1] == pytest.approx(abs(e.pf.s_to[4]) * 100)
    assert obs[2] == pytest.approx(e.state.dev_p[1] * 100)
    assert obs[3] == pytest.approx(e.state.soc[0] * 100)
    assert obs[4] == e.state.aux[0]


def test_current_magnitude_in_ka():
    e = ANM6Easy(observation=[('bus_i_magn', [1], 'kA'), ('bus_i_magn', [1])])
    obs = e.reset(seed=2)
    assert obs[0] == pytest.approx(obs[1] * 100 / (math.sqrt(3) * 33))


def test_callable_observation():
    e = ANM6Easy(observation=lambda env: env.state.soc * 2)
    obs = e.reset(seed=0)
    assert obs == pytest.approx(e.state.soc * 2)


@pytest.mark.parametrize('bad', [
    'partial', [('volts', 'all')], [('bus_p', [9])], [('branch_s', [(0, 5)])],
    [('bus_p', 'all', 'kW')], [('branch_i_magn', 'all', 'kA')], [('bus_p',)],
])
def test_unknown_observation_rejected(bad):
    with pytest.raises(UnknownKeyword):
        ANM6Easy(observation=bad)


def test_info_contents(env):
    req = np.array([0.5, 0.5, 0.3, 0.3, 0.6, 0.0])
    r = env.step(req)
    info = r.info
    assert np.array_equal(info['action_requested'], req)
    assert info['action_applied'][0] <= env.state.gen_p_max[0] + 1e-12
    assert info['action_gap'] > 0
    assert set(info['violations']) == {'v_over', 'v_under', 'branch'}
    assert -100 <= r.reward <= 100


def test_markov_replay():
    e = ANM6Easy()
    e.reset(seed=8)
    rng = np.random.default_rng(0)
    for _ in range(15):
        e.step(rng.uniform(*e.action_space_bounds()))
    saved = e.state.to_vector()
    action = rng.uniform(*e.action_space_bounds())
    first = e.step(action)
    e.set_state(saved)
    second = e.step(action)
    assert np.array_equal(first.observation, second.observation)
    assert first.reward == second.reward


def test_vector_round_trip(env):
    s = env.state
    back = GridState.from_vector(s.to_vector(), 7, 1, 2, 1)
    assert np.array_equal(back.to_vector(), s.to_vector())
    with pytest.raises(ValueError):
        GridState.from_vector(np.zeros(17), 7, 1, 2, 1)


def test_bad_action_shape(env):
    with pytest.raises(ValueError):
        env.step(np.zeros(5))
    with pytest.raises(ValueError):
        env.step(np.full(6, np.nan))


def test_terminal_transition_and_after():
    e = RampEnv([0., -0.2, -60.])
    obs0 = e.reset(seed=0)
    r1 = e.step(np.zeros(0))
    assert not r1.done and -100 <= r1.reward <= 100
    r2 = e.step(np.zeros(0))
    assert r2.done and r2.reward == -20000.0
    assert np.array_equal(r2.observation, r1.observation)
    for _ in range(3):
        r = e.step(np.zeros(0))
        assert r.done and r.reward == 0.
    # a fresh trajectory is possible after a collapse
    assert np.array_equal(e.reset(seed=0), obs0)


def test_init_collapse():
    class Bad(RampEnv):
        def init_state(self, rng):
            return GridState(np.array([0., -60.]), np.zeros(2), np.zeros(0), np.zeros(0),
                             np.zeros(1))

    with pytest.raises(InitCollapse):
        Bad([0.]).reset()


def test_custom_slack_voltage():
    e = ANM6Easy(slack_v_magnitude=1.0)
    e.reset(seed=0)
    assert abs(e.pf.v[0]) == pytest.approx(1.0)


def test_render_close_noop(env):
    assert env.render() is None and env.close() is None
