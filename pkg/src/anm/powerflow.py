"""
AC power flow: nodal admittance matrix and a Newton-Raphson solver.

Every non-slack bus is a PQ bus; the slack bus voltage is fixed to
``slack_v_magnitude`` at angle 0. All quantities are per-unit.
"""

from dataclasses import dataclass

import numpy as np


class SingularBranch(ValueError):
    """A branch has zero series impedance."""


class NotConverged(RuntimeError):
    """Raised when flows are requested from a diverged power flow."""


@dataclass(frozen=True)
class AdmittanceMatrix:
    """
    Dense nodal admittance matrix plus the per-branch 2x2 current blocks.

    ``blocks[k]`` maps ``(V_i, V_j)`` to ``(I_ij, I_ji)`` for branch k, with
    ``i = from_bus[k]`` and ``j = to_bus[k]``.
    """
    Y: np.ndarray
    from_bus: np.ndarray
    to_bus: np.ndarray
    blocks: np.ndarray

    @property
    def n(self):
        return self.Y.shape[0]


@dataclass
class PowerFlowSolution:
    v: np.ndarray                 # complex bus voltages
    slack_p: float                # total injection at the slack bus
    slack_q: float
    i_from: np.ndarray            # I_ij, measured at the sending bus
    i_to: np.ndarray              # I_ji, measured at the receiving bus
    s_from: np.ndarray            # S_ij = V_i conj(I_ij)
    s_to: np.ndarray              # S_ji = V_j conj(I_ji)
    converged: bool
    iterations: int
    max_residual: float
    bus_i: np.ndarray = None      # bus current injections I = Y V
    bus_s: np.ndarray = None      # bus power injections

    @property
    def losses(self):
        """Total active power loss over all branches (p.u.)."""
        return float(np.sum(self.s_from.real + self.s_to.real))


def build_admittance(spec) -> AdmittanceMatrix:
    """
    Assemble the nodal admittance matrix of a network.

    Each branch contributes a series admittance ``y = 1/(r + jx)``, two shunt
    halves ``j b/2`` and an off-nominal tap ``t = tau * exp(j shift)`` on the
    sending side.

    :raises SingularBranch: if a branch has ``r = x = 0``.
    """
    n = spec.n_bus
    nbr = len(spec.branches)
    Y = np.zeros((n, n), dtype=complex)
    blocks = np.zeros((nbr, 2, 2), dtype=complex)
    f = np.array([br.from_bus for br in spec.branches], dtype=int)
    t = np.array([br.to_bus for br in spec.branches], dtype=int)

    for k, br in enumerate(spec.branches):
        if br.r == 0 and br.x == 0:
            raise SingularBranch(f'branch {k} ({br.from_bus}-{br.to_bus}) has zero impedance')
        y = 1. / complex(br.r, br.x)
        y_sh = 1j * br.b / 2.
        tap = br.tap * np.exp(1j * np.deg2rad(br.shift))

        blocks[k] = [[(y + y_sh) / abs(tap) ** 2, -y / np.conj(tap)],
                     [-y / tap, y + y_sh]]

        i, j = br.from_bus, br.to_bus
        Y[i, j] += blocks[k, 0, 1]
        Y[j, i] += blocks[k, 1, 0]
        Y[i, i] += blocks[k, 0, 0]
        Y[j, j] += blocks[k, 1, 1]

    return AdmittanceMatrix(Y, f, t, blocks)


def branch_currents(ybus, v):
    """Return ``(I_ij, I_ji)`` for every branch given bus voltages."""
    vi, vj = v[ybus.from_bus], v[ybus.to_bus]
    b = ybus.blocks
    i_from = b[:, 0, 0] * vi + b[:, 0, 1] * vj
    i_to = b[:, 1, 0] * vi + b[:, 1, 1] * vj
    return i_from, i_to


def _jacobian(Y, v, ibus, pq):
    # Derivatives of complex bus injections w.r.t. voltage angle / magnitude.
    diag_v = np.diag(v)
    dS_dVa = 1j * diag_v @ np.conj(np.diag(ibus) - Y @ diag_v)
    v_norm = v / np.abs(v)
    dS_dVm = diag_v @ np.conj(Y @ np.diag(v_norm)) + np.diag(np.conj(ibus) * v_norm)
    a = dS_dVa[np.ix_(pq, pq)]
    m = dS_dVm[np.ix_(pq, pq)]
    return np.block([[a.real, m.real], [a.imag, m.imag]])


def solve_power_flow(ybus, bus_p, bus_q, slack_bus, slack_v_magnitude=1.0,
                     tolerance=1e-8, max_iterations=50, v0=None) -> PowerFlowSolution:
    """
    Solve the AC power flow equations with Newton-Raphson.

    The mismatch ``V * conj(Y V) - S_spec`` is evaluated at every PQ bus and
    driven to zero by updating voltage angles and magnitudes. The solver
    never raises on divergence; it returns ``converged=False`` instead.

    :param ybus: the AdmittanceMatrix of the network.
    :param bus_p: active power injection at each bus (p.u.); slack entry ignored.
    :param bus_q: reactive power injection at each bus (p.u.); slack entry ignored.
    :param slack_bus: index of the slack bus.
    :param slack_v_magnitude: fixed voltage magnitude at the slack bus.
    :param tolerance: convergence threshold on the largest complex mismatch.
    :param max_iterations: maximum number of Newton updates.
    :param v0: optional initial voltage guess (defaults to a flat start).
    :return: a PowerFlowSolution. ``iterations`` counts mismatch evaluations,
        so a start point that already solves the equations reports 1.
    """
    Y = ybus.Y
    n = ybus.n
    s_spec = np.asarray(bus_p, dtype=float) + 1j * np.asarray(bus_q, dtype=float)
    pq = np.array([i for i in range(n) if i != slack_bus], dtype=int)
    npq = len(pq)

    if v0 is None:
        v = np.full(n, slack_v_magnitude, dtype=complex)
    else:
        v = np.array(v0, dtype=complex)
    v[slack_bus] = slack_v_magnitude

    converged = False
    iterations = 0
    residual = np.inf
    with np.errstate(all='ignore'):
        while True:
            ibus = Y @ v
            mis = v[pq] * np.conj(ibus[pq]) - s_spec[pq]
            iterations += 1
            residual = float(np.max(np.abs(mis))) if npq else 0.
            if residual <= tolerance:
                converged = True
                break
            if not np.isfinite(residual) or residual > 1e10 or iterations > max_iterations:
                break
            J = _jacobian(Y, v, ibus, pq)
            F = np.concatenate([mis.real, mis.imag])
            try:
                dx = np.linalg.solve(J, -F)
            except np.linalg.LinAlgError:
                break
            va = np.angle(v[pq]) + dx[:npq]
            vm = np.abs(v[pq]) + dx[npq:]
            v[pq] = vm * np.exp(1j * va)

        ibus = Y @ v
        s_bus = v * np.conj(ibus)
        i_from, i_to = branch_currents(ybus, v)
        s_from = v[ybus.from_bus] * np.conj(i_from)
        s_to = v[ybus.to_bus] * np.conj(i_to)

    return PowerFlowSolution(
        v=v, slack_p=float(s_bus[slack_bus].real), slack_q=float(s_bus[slack_bus].imag),
        i_from=i_from, i_to=i_to, s_from=s_from, s_to=s_to,
        converged=converged, iterations=iterations, max_residual=residual,
        bus_i=ibus, bus_s=s_bus)


def branch_apparent_flows(solution) -> np.ndarray:
    """
    Apparent power flow magnitudes at both ends of every branch.

    :return: array of shape (n_branch, 2) holding ``(|S_ij|, |S_ji|)``.
    :raises NotConverged: if the solution did not converge.
    """
    if not solution.converged:
        raise NotConverged('power flow did not converge')
    return np.column_stack([np.abs(solution.s_from), np.abs(solution.s_to)])
