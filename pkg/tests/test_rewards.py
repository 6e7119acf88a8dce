from types import SimpleNamespace

import numpy as np
import pytest

from anm.env import GridState
from anm.rewards import (clipped_reward, compute_reward, constraint_violations, energy_loss,
                         penalty_phi, terminal_reward)


def state(p, gen_p_max=(0.3, 0.5)):
    p = np.array(p, dtype=float)
    return GridState(p, np.zeros_like(p), np.array([0.5]), np.array(gen_p_max), np.array([0.]))


def flows(v, s_from=None, s_to=None, n_br=5):
    s_from = np.zeros(n_br, complex) if s_from is None else np.asarray(s_from, complex)
    s_to = -s_from if s_to is None else np.asarray(s_to, complex)
    return SimpleNamespace(v=np.asarray(v, complex), s_from=s_from, s_to=s_to)


def test_clip_to_minus_r_clip():
    # -(0.02 + 1000 * 0.5) = -500.02
    assert clipped_reward(0.02, 0.5, 1000., 100.) == -100.


def test_unclipped():
    assert clipped_reward(0.02, 0.0001, 1000., 100.) == pytest.approx(-0.12)


def test_terminal_exact():
    assert terminal_reward(100., 0.995) == -20000.0
    assert terminal_reward(100, 0.9) == -1000.0


def test_curtailment(anm6_pu):
    # solar at 0.2 with 0.3 available, wind at its maximum
    s = state([0.0, 0, 0.2, 0, 0.5, 0, 0])
    e1, e2, e3 = energy_loss(anm6_pu, s, 0.25)
    assert e3 == pytest.approx(0.025)
    assert e2 == 0.


def test_storage_energy(anm6_pu):
    s = state([0, 0, 0.3, 0, 0.5, 0, -0.2])
    assert energy_loss(anm6_pu, s, 0.25)[1] == pytest.approx(0.05)


def test_transmission_loss_is_sum_of_injections(anm6_pu):
    s = state([0.31, -0.1, 0.3, -0.2, 0.5, -0.8, 0.0])
    assert energy_loss(anm6_pu, s, 0.25)[0] == pytest.approx(0.25 * 0.01)


def test_overvoltage_penalty(anm6_pu):
    v = [1.04, 1.12, 1.0, 1.0, 1.0, 1.0]
    assert penalty_phi(flows(v), anm6_pu, 0.25) == pytest.approx(0.005)


def test_undervoltage_penalty(anm6_pu):
    v = [1.04, 1.0, 0.85, 1.0, 1.0, 1.0]
    over_v, under_v, _ = constraint_violations(anm6_pu, flows(v))
    assert under_v[2] == pytest.approx(0.05) and over_v.sum() == 0


def test_branch_overload_penalty(anm6_pu):
    # branch 2-5 (rating 0.18) loaded at 104% on its receiving end
    s_from = np.zeros(5, complex)
    s_to = np.zeros(5, complex)
    s_to[4] = 1.04 * 0.18
    s_from[4] = -0.18
    pf = flows([1.04, 1, 1, 1, 1, 1], s_from, s_to)
    assert penalty_phi(pf, anm6_pu, 0.25) == pytest.approx(0.25 * 0.0072)


def test_compute_reward_terminal(anm6_pu):
    s = state([0] * 7)
    s.terminal = True
    assert compute_reward(anm6_pu, s, None, 0.25, 1000., 100., 0.995) == -20000.0
    assert compute_reward(anm6_pu, s, None, 0.25, 1000., 100., 0.995, prev_terminal=True) == 0.
