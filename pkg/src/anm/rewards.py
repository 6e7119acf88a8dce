"""Energy-loss and constraint-violation terms of the reward signal (p.u.)."""

from fractions import Fraction

import numpy as np


def energy_loss(spec, state, delta_t):
    """
    Split the energy lost during one transition into its three sources.

    :return: ``(transmission, storage, curtailment)`` energies in p.u. hours.
        Transmission loss is the sum of all device injections (slack
        included), storage is the net energy flowing into DES units, and
        curtailment is the unused renewable potential.
    """
    p = state.dev_p
    e1 = delta_t * float(np.sum(p))
    e2 = -delta_t * float(np.sum(p[spec.des_ids]))
    gens = spec.gen_ids
    rer = [k for k, g in enumerate(gens) if spec.devices[g].is_renewable]
    curtail = state.gen_p_max[rer] - p[[gens[k] for k in rer]]
    e3 = delta_t * float(np.sum(curtail))
    return e1, e2, e3


def constraint_violations(spec, pf):
    """Per-bus voltage and per-branch rating violations (p.u., non-negative)."""
    vm = np.abs(pf.v)
    v_max = np.array([b.v_max for b in spec.buses])
    v_min = np.array([b.v_min for b in spec.buses])
    over_v = np.maximum(0., vm - v_max)
    under_v = np.maximum(0., v_min - vm)
    rating = np.array([br.s_max for br in spec.branches])
    over_s = np.maximum.reduce([np.zeros_like(rating),
                                np.abs(pf.s_from) - rating,
                                np.abs(pf.s_to) - rating])
    return over_v, under_v, over_s


def penalty_phi(pf, spec, delta_t):
    """Constraint-violation penalty of a converged power flow, scaled by delta_t."""
    over_v, under_v, over_s = constraint_violations(spec, pf)
    return delta_t * float(np.sum(over_v) + np.sum(under_v) + np.sum(over_s))


def clipped_reward(total_loss, phi, lamb, r_clip):
    c = -(total_loss + lamb * phi)
    return float(np.clip(c, -r_clip, r_clip))


def terminal_reward(r_clip, gamma):
    """``-r_clip / (1 - gamma)`` evaluated exactly on the decimal parameters."""
    # 100 / (1 - 0.995) is -19999.99999999998 in floating point
    return float(-Fraction(str(r_clip)) / (1 - Fraction(str(gamma))))


def compute_reward(spec, next_state, pf, delta_t, lamb, r_clip, gamma, prev_terminal=False):
    """
    Reward of a transition into ``next_state``.

    Entering a terminal state costs ``r_clip / (1 - gamma)``; once terminal,
    rewards are zero.
    """
    if prev_terminal:
        return 0.
    if next_state.terminal:
        return terminal_reward(r_clip, gamma)
    loss = sum(energy_loss(spec, next_state, delta_t))
    return clipped_reward(loss, penalty_phi(pf, spec, delta_t), lamb, r_clip)
