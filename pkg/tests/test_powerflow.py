import dataclasses
import math

import numpy as np
import pytest

from anm.network import network_from_dict, to_per_unit
from anm.powerflow import (NotConverged, SingularBranch, branch_apparent_flows, branch_currents,
                           build_admittance, solve_power_flow)

from conftest import two_bus_dict


def two_bus_oracle(v0, z, s_load):
    """
    Closed-form receiving-end voltage of a lossy line feeding a PQ load.

    With V1 = a + jb and the load absorbing ``s_load``, the line equation
    V1 * conj((V0 - V1) / z) = s_load gives b*V0 = Im(s_load*conj(z)) and
    a^2 - V0*a + b^2 + Re(s_load*conj(z)) = 0 (high-voltage root).
    """
    w = s_load * np.conj(z)
    b = w.imag / v0
    disc = v0 ** 2 - 4 * (b ** 2 + w.real)
    if disc < 0:
        return None
    return complex((v0 + math.sqrt(disc)) / 2, b)


def pi_branch_currents(br, vi, vj):
    """Currents of an ideal transformer (ratio t:1 on the sending side) in series with a pi line."""
    t = br.tap * np.exp(1j * math.radians(br.shift))
    y = 1 / complex(br.r, br.x)
    ysh = 1j * br.b / 2
    vi_prime = vi / t
    i_prime = (y + ysh) * vi_prime - y * vj      # current leaving the transformer secondary
    i_ij = i_prime / np.conj(t)                  # lossless transformer conserves power
    i_ji = (y + ysh) * vj - y * vi_prime
    return i_ij, i_ji


@pytest.mark.parametrize('p, q', [(-0.2, -0.04), (-0.5, -0.1), (0.3, 0.05), (-1.0, 0.2)])
@pytest.mark.parametrize('v0', [1.0, 1.04])
def test_two_bus_matches_closed_form(p, q, v0):
    spec = to_per_unit(network_from_dict(two_bus_dict(r=0.01, x=0.1)))
    sol = solve_power_flow(build_admittance(spec), [0, p], [0, q], 0, v0)
    expected = two_bus_oracle(v0, complex(0.01, 0.1), -complex(p, q))
    assert sol.converged
    assert abs(sol.v[1] - expected) < 1e-9


def test_two_bus_no_solution():
    spec = to_per_unit(network_from_dict(two_bus_dict(r=0.01, x=0.1)))
    assert two_bus_oracle(1.0, complex(0.01, 0.1), complex(50, 0)) is None
    sol = solve_power_flow(build_admittance(spec), [0, -50.], [0, 0.], 0, 1.0)
    assert not sol.converged
    with pytest.raises(NotConverged):
        branch_apparent_flows(sol)


def test_flat_start_is_already_solution():
    spec = to_per_unit(network_from_dict(two_bus_dict()))
    sol = solve_power_flow(build_admittance(spec), [0, 0], [0, 0], 0, 1.0)
    assert sol.converged and sol.iterations == 1
    assert abs(sol.slack_p) < 1e-12 and abs(sol.losses) < 1e-12


def test_residual_and_slack_balance(anm6_pu):
    ybus = build_admittance(anm6_pu)
    p = np.array([0, -0.1, -0.2, 0.3, 0.1, -0.15])
    q = np.array([0, -0.02, 0.05, -0.06, 0.01, -0.03])
    sol = solve_power_flow(ybus, p, q, 0, 1.04)
    assert sol.converged
    s = sol.v * np.conj(ybus.Y @ sol.v)
    assert np.max(np.abs(s[1:] - (p[1:] + 1j * q[1:]))) <= 1e-8
    # slack injection + other injections = total branch losses
    total = complex(sol.slack_p, sol.slack_q) + complex(p[1:].sum(), q[1:].sum())
    assert abs(total - np.sum(sol.s_from + sol.s_to)) <= 1e-9
    assert sol.losses == pytest.approx(total.real, abs=1e-9)


def test_admittance_matches_pi_model():
    doc = two_bus_dict(r=0.02, x=0.08, b=0.1)
    doc['branch'][0][6:8] = [1.05, 15.0]
    spec = to_per_unit(network_from_dict(doc))
    ybus = build_admittance(spec)
    rng = np.random.default_rng(7)
    for _ in range(5):
        v = rng.normal(1, 0.05, 2) * np.exp(1j * rng.normal(0, 0.1, 2))
        i_ij, i_ji = branch_currents(ybus, v)
        e_ij, e_ji = pi_branch_currents(spec.branches[0], v[0], v[1])
        assert abs(i_ij[0] - e_ij) < 1e-12 and abs(i_ji[0] - e_ji) < 1e-12
        # nodal currents agree with branch currents
        assert np.allclose(ybus.Y @ v, [e_ij, e_ji], atol=1e-12)


def test_admittance_symmetric_without_shift(anm6_pu):
    Y = build_admittance(anm6_pu).Y
    assert np.allclose(Y, Y.T)
    # no shunts: rows sum to zero
    assert np.allclose(Y.sum(axis=1), 0)


def test_zero_impedance_rejected():
    doc = two_bus_dict()
    spec = to_per_unit(network_from_dict(doc))
    bad = dataclasses.replace(spec, branches=(dataclasses.replace(spec.branches[0], r=0., x=0.),))
    with pytest.raises(SingularBranch):
        build_admittance(bad)


def test_apparent_flows_shape(anm6_pu):
    ybus = build_admittance(anm6_pu)
    sol = solve_power_flow(ybus, [0, -.1, 0, 0, 0, 0], [0] * 6, 0, 1.04)
    s = branch_apparent_flows(sol)
    assert s.shape == (5, 2)
    assert np.allclose(s[:, 0], np.abs(sol.s_from))


def test_warm_start_converges_faster(anm6_pu):
    ybus = build_admittance(anm6_pu)
    p, q = [0, -.2, .1, -.3, .2, -.1], [0, -.04, 0, -.06, 0, -.02]
    cold = solve_power_flow(ybus, p, q, 0, 1.04)
    warm = solve_power_flow(ybus, p, q, 0, 1.04, v0=cold.v)
    assert warm.converged and warm.iterations <= cold.iterations
    assert np.allclose(warm.v, cold.v, atol=1e-9)
