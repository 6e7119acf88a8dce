"""
Markov decision process engine for active network management tasks.

Subclasses provide the initial-state sampler and the ``next_vars`` process;
the transition itself (action mapping, power flow, storage update) and the
reward are shared by every task.
"""

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .network import (NetworkSpec, network_from_dict, load_network, to_per_unit,
                      validate_network, ValidationError)
from .powerflow import build_admittance, solve_power_flow
from .regions import load_region, gen_region, des_region, project, clip_load, soc_update
from .rewards import (energy_loss, penalty_phi, constraint_violations, clipped_reward,
                      terminal_reward)


class NotReset(RuntimeError):
    """step() was called before reset()."""


class InitCollapse(RuntimeError):
    """The power flow has no solution at the initial state."""


class UnknownKeyword(ValueError):
    pass


@dataclass
class GridState:
    """
    State vector of an ANM task, all powers in p.u.

    The flat layout is ``[P_dev..., Q_dev..., SoC..., P_max..., aux...]``.
    """
    dev_p: np.ndarray
    dev_q: np.ndarray
    soc: np.ndarray
    gen_p_max: np.ndarray
    aux: np.ndarray
    terminal: bool = False

    def to_vector(self):
        return np.concatenate([self.dev_p, self.dev_q, self.soc, self.gen_p_max, self.aux])

    @classmethod
    def from_vector(cls, vec, n_dev, n_des, n_gen, K, terminal=False):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (2 * n_dev + n_des + n_gen + K,):
            raise ValueError(f'state vector has shape {vec.shape}')
        cuts = np.cumsum([n_dev, n_dev, n_des, n_gen])
        p, q, soc, pmax, aux = np.split(vec, cuts)
        return cls(p.copy(), q.copy(), soc.copy(), pmax.copy(), aux.copy(), terminal)

    def copy(self):
        return GridState(self.dev_p.copy(), self.dev_q.copy(), self.soc.copy(),
                         self.gen_p_max.copy(), self.aux.copy(), self.terminal)


class StepResult(NamedTuple):
    observation: np.ndarray
    reward: float
    done: bool
    info: dict


# Keyword -> accepted units (first entry is the default).
KEYWORD_UNITS = {
    'bus_p': ('pu', 'MW'),
    'bus_q': ('pu', 'MVAr'),
    'dev_p': ('pu', 'MW'),
    'dev_q': ('pu', 'MVAr'),
    'bus_v_magn': ('pu', 'kV'),
    'bus_v_ang': ('rad', 'degree'),
    'bus_i_magn': ('pu', 'kA'),
    'bus_i_ang': ('rad', 'degree'),
    'branch_p': ('pu', 'MW'),
    'branch_q': ('pu', 'MVAr'),
    'branch_s': ('pu', 'MVA'),
    'branch_i_magn': ('pu',),
    'branch_i_ang': ('rad', 'degree'),
    'des_soc': ('pu', 'MWh'),
    'gen_p_max': ('pu', 'MW'),
    'aux': (None,),
}


class ObservationSpec:
    """
    Which quantities an observation contains.

    Built from ``'state'`` (full state), a callable ``f(env) -> vector``, or a
    list of ``(keyword, ids, unit)`` tuples where ``ids`` is ``'all'`` or a
    list of bus / device / branch ``(i, j)`` / aux indices. Everything is
    checked here so that emitting observations cannot fail later.
    """

    def __init__(self, obs, spec, K):
        self.full_state = isinstance(obs, str) and obs == 'state'
        self.func = obs if callable(obs) else None
        self.items = []
        if self.full_state or self.func is not None:
            return
        if isinstance(obs, str):
            raise UnknownKeyword(f'unknown observation spec {obs!r}')
        for item in obs:
            self.items.append(self._resolve(tuple(item), spec, K))

    @staticmethod
    def _resolve(item, spec, K):
        if len(item) not in (2, 3):
            raise UnknownKeyword(f'observation item {item!r} must be (keyword, ids[, unit])')
        key, ids = item[0], item[1]
        if key not in KEYWORD_UNITS:
            raise UnknownKeyword(f'unknown observation keyword {key!r}')
        units = KEYWORD_UNITS[key]
        unit = item[2] if len(item) == 3 else units[0]
        if unit not in units:
            raise UnknownKeyword(f'unit {unit!r} not available for {key!r} (choose from {units})')

        if key.startswith('bus_'):
            valid = list(range(spec.n_bus))
        elif key.startswith('dev_'):
            valid = list(range(spec.n_dev))
        elif key.startswith('branch_'):
            valid = [(br.from_bus, br.to_bus) for br in spec.branches]
        elif key == 'des_soc':
            valid = spec.des_ids
        elif key == 'gen_p_max':
            valid = spec.gen_ids
        else:
            valid = list(range(K))

        if isinstance(ids, str):
            if ids != 'all':
                raise UnknownKeyword(f'ids must be a list or "all", got {ids!r}')
            ids = list(valid)
        elif key.startswith('branch_'):
            ids = [tuple(int(x) for x in pair) for pair in ids]
            both = set(valid) | {(j, i) for i, j in valid}
            bad = [p for p in ids if p not in both]
            if bad:
                raise UnknownKeyword(f'{key}: no branch for {bad}')
        else:
            ids = [int(x) for x in ids]
            bad = [x for x in ids if x not in valid]
            if bad:
                raise UnknownKeyword(f'{key}: invalid ids {bad}')
        return key, ids, unit


class ANMEnv:
    """
    Generic ANM environment.

    :param network: a NetworkSpec, the four-key network dictionary, or a
        path to a JSON network file. Values in MW/MVAr/MWh are converted to
        p.u. once, here.
    :param observation: ``'state'``, a callable, or a list of keyword tuples.
    :param K: number of auxiliary variables in the state.
    :param delta_t: timestep length (hours).
    :param gamma: discount factor.
    :param lamb: weight of the constraint-violation penalty.
    :param r_clip: reward clipping value.
    :param seed: seed of the environment's random generator.
    :param slack_v_magnitude: fixed slack voltage magnitude; defaults to the
        slack bus ``v_max``.
    """

    def __init__(self, network, observation='state', K=1, delta_t=0.25, gamma=0.995,
                 lamb=1000., r_clip=100., seed=None, slack_v_magnitude=None):
        if isinstance(network, (str, Path)):
            network = load_network(network)
        elif isinstance(network, dict):
            network = network_from_dict(network)
        if not network.per_unit:
            diags = validate_network(network)
            if diags:
                raise ValidationError(diags)
            network = to_per_unit(network)
        self.network: NetworkSpec = network
        self.ybus = build_admittance(network)

        self.K = K
        self.delta_t = delta_t
        self.gamma = gamma
        self.lamb = lamb
        self.r_clip = r_clip
        self.obs_spec = ObservationSpec(observation, network, K)

        self.slack_bus = network.slack_bus
        self.slack_dev = network.slack_device
        if slack_v_magnitude is None:
            slack_v_magnitude = network.buses[self.slack_bus].v_max
        self.slack_v_magnitude = slack_v_magnitude

        self.load_ids = network.load_ids
        self.gen_ids = network.gen_ids
        self.des_ids = network.des_ids
        self.dev_bus = np.array([d.bus for d in network.devices], dtype=int)
        self.n_dev, self.n_des, self.n_gen = network.n_dev, len(self.des_ids), len(self.gen_ids)
        self.action_dim = 2 * self.n_gen + 2 * self.n_des

        self.terminal_reward = terminal_reward(r_clip, gamma)

        self.np_random = np.random.default_rng(seed)
        self.state = None
        self.pf = None
        self._obs = None

    # -- task-specific components --------------------------------------------

    def init_state(self, rng):
        """Sample an initial GridState (p.u.); may lie outside the feasible set."""
        raise NotImplementedError

    def next_vars(self, state):
        """Return ``(load_p, gen_p_max, aux)`` for the next timestep (p.u.)."""
        raise NotImplementedError

    def observation_aux_bounds(self):
        """Bounds on the auxiliary variables; unbounded unless overridden."""
        return np.full(self.K, -np.inf), np.full(self.K, np.inf)

    # -- gym-style interface -------------------------------------------------

    def reset(self, seed=None):
        """
        Start a new trajectory and return the first observation.

        Devices sampled outside their operating region are moved to the
        closest feasible point before the initial power flow is solved.
        """
        if seed is not None:
            self.np_random = np.random.default_rng(seed)
        s0 = self.init_state(self.np_random)
        s0 = self._project_state(s0)
        pf = self._solve(s0.dev_p, s0.dev_q)
        if not pf.converged:
            raise InitCollapse('no power flow solution at the initial state')
        self._set_slack(s0, pf)
        self.state, self.pf = s0, pf
        self._obs = self.observation(s0, pf)
        return self._obs

    def step(self, action):
        """
        Apply an action and advance one timestep.

        :param action: vector ``[gen P..., gen Q..., DES P..., DES Q...]`` (p.u.).
        :return: StepResult ``(observation, reward, done, info)``.
        """
        if self.state is None:
            raise NotReset('call reset() before step()')
        if self.state.terminal:
            return StepResult(self._obs, 0., True, {'terminal': True})

        load_p, gen_p_max, aux = self.next_vars(self.state)
        next_state, pf, applied = self.transition(self.state, action, load_p, gen_p_max, aux)
        requested = np.asarray(action, dtype=float)
        info = {
            'action_requested': requested,
            'action_applied': applied,
            'action_gap': float(np.linalg.norm(requested - applied)),
            'pf_converged': pf.converged,
            'pf_iterations': pf.iterations,
        }

        if next_state.terminal:
            reward = self.terminal_reward
            self.state = next_state
            info['terminal'] = True
            return StepResult(self._obs, reward, True, info)

        losses = energy_loss(self.network, next_state, self.delta_t)
        phi = penalty_phi(pf, self.network, self.delta_t)
        reward = clipped_reward(sum(losses), phi, self.lamb, self.r_clip)
        over_v, under_v, over_s = constraint_violations(self.network, pf)
        info.update(energy_loss=losses, penalty=phi, violations={
            'v_over': over_v.tolist(), 'v_under': under_v.tolist(), 'branch': over_s.tolist()})

        self.state, self.pf = next_state, pf
        self._obs = self.observation(next_state, pf)
        return StepResult(self._obs, reward, False, info)

    def render(self, mode='human'):
        pass

    def close(self):
        pass

    # -- transition ----------------------------------------------------------

    def _solve(self, dev_p, dev_q, v0=None):
        bus_p = np.zeros(self.network.n_bus)
        bus_q = np.zeros(self.network.n_bus)
        others = np.arange(self.n_dev) != self.slack_dev
        np.add.at(bus_p, self.dev_bus[others], dev_p[others])
        np.add.at(bus_q, self.dev_bus[others], dev_q[others])
        return solve_power_flow(self.ybus, bus_p, bus_q, self.slack_bus,
                                self.slack_v_magnitude, v0=v0)

    def _set_slack(self, state, pf):
        # Other devices sharing the slack bus are netted out of its injection.
        same_bus = (self.dev_bus == self.slack_bus) & (np.arange(self.n_dev) != self.slack_dev)
        state.dev_p[self.slack_dev] = pf.slack_p - np.sum(state.dev_p[same_bus])
        state.dev_q[self.slack_dev] = pf.slack_q - np.sum(state.dev_q[same_bus])

    def _project_state(self, s):
        s = s.copy()
        devs = self.network.devices
        for d in self.load_ids:
            s.dev_p[d], s.dev_q[d] = project(load_region(devs[d]), (s.dev_p[d], s.dev_q[d]))
        for k, g in enumerate(self.gen_ids):
            dev = devs[g]
            s.gen_p_max[k] = min(max(s.gen_p_max[k], dev.p_min), dev.p_max)
            region = gen_region(dev, s.gen_p_max[k])
            s.dev_p[g], s.dev_q[g] = project(region, (s.dev_p[g], s.dev_q[g]))
        for k, d in enumerate(self.des_ids):
            dev = devs[d]
            s.soc[k] = min(max(s.soc[k], dev.soc_min), dev.soc_max)
            region = des_region(dev, s.soc[k], self.delta_t)
            s.dev_p[d], s.dev_q[d] = project(region, (s.dev_p[d], s.dev_q[d]))
        return s

    def transition(self, state, action, load_p, gen_p_max, aux):
        """
        Deterministic part of a transition.

        :return: ``(next_state, power_flow, applied_action)``. If the power
            flow diverges, ``next_state.terminal`` is set and the slack
            injection is carried over from ``state``.
        """
        action = np.asarray(action, dtype=float)
        if action.shape != (self.action_dim,):
            raise ValueError(f'expected an action of length {self.action_dim}, got {action.shape}')
        if not np.all(np.isfinite(action)):
            raise ValueError('action contains non-finite values')
        devs = self.network.devices
        ng, nd = self.n_gen, self.n_des
        nxt = state.copy()
        nxt.gen_p_max = np.array(gen_p_max, dtype=float)
        nxt.aux = np.array(aux, dtype=float)
        applied = np.empty_like(action)

        for k, l in enumerate(self.load_ids):
            nxt.dev_p[l], nxt.dev_q[l] = clip_load(devs[l], load_p[k])

        for k, g in enumerate(self.gen_ids):
            region = gen_region(devs[g], nxt.gen_p_max[k])
            p, q = project(region, (action[k], action[ng + k]))
            nxt.dev_p[g], nxt.dev_q[g] = p, q
            applied[k], applied[ng + k] = p, q

        for k, d in enumerate(self.des_ids):
            region = des_region(devs[d], state.soc[k], self.delta_t)
            p, q = project(region, (action[2 * ng + k], action[2 * ng + nd + k]))
            nxt.dev_p[d], nxt.dev_q[d] = p, q
            applied[2 * ng + k], applied[2 * ng + nd + k] = p, q
            # the projection keeps the charge in band; clamping only removes rounding
            soc = soc_update(devs[d], state.soc[k], p, self.delta_t)
            nxt.soc[k] = min(max(soc, devs[d].soc_min), devs[d].soc_max)

        pf = self._solve(nxt.dev_p, nxt.dev_q)
        if pf.converged:
            self._set_slack(nxt, pf)
        else:
            nxt.terminal = True
        return nxt, pf, applied

    # -- state access --------------------------------------------------------

    def set_state(self, state):
        """Overwrite the current state (GridState or flat vector) and re-solve flows."""
        if not isinstance(state, GridState):
            state = GridState.from_vector(state, self.n_dev, self.n_des, self.n_gen, self.K)
        state = state.copy()
        pf = self._solve(state.dev_p, state.dev_q)
        if not pf.converged:
            raise InitCollapse('no power flow solution at the given state')
        self._set_slack(state, pf)
        self.state, self.pf = state, pf
        self._obs = self.observation(state, pf)
        return self._obs

    # -- observations --------------------------------------------------------

    def observation(self, state, pf):
        spec = self.obs_spec
        if spec.full_state:
            return state.to_vector()
        if spec.func is not None:
            return np.asarray(spec.func(self), dtype=float)
        return np.concatenate([self._quantity(state, pf, key, ids, unit)
                               for key, ids, unit in spec.items])

    def _branch_values(self, pf, ids, which):
        out = []
        for i, j in ids:
            k, rev = self.network.branch_index(i, j)
            if which == 's':
                out.append(pf.s_to[k] if rev else pf.s_from[k])
            else:
                out.append(pf.i_to[k] if rev else pf.i_from[k])
        return np.array(out, dtype=complex)

    def _quantity(self, state, pf, key, ids, unit):
        net = self.network
        base = net.base_mva
        kv = np.array([b.base_kv for b in net.buses])
        ids_arr = np.array(ids, dtype=int) if not key.startswith('branch_') else None

        if key == 'bus_p':
            val = pf.bus_s.real[ids_arr]
        elif key == 'bus_q':
            val = pf.bus_s.imag[ids_arr]
        elif key == 'dev_p':
            val = state.dev_p[ids_arr]
        elif key == 'dev_q':
            val = state.dev_q[ids_arr]
        elif key == 'bus_v_magn':
            val = np.abs(pf.v[ids_arr])
            if unit == 'kV':
                val = val * kv[ids_arr]
        elif key == 'bus_v_ang':
            val = np.angle(pf.v[ids_arr])
        elif key == 'bus_i_magn':
            val = np.abs(pf.bus_i[ids_arr])
            if unit == 'kA':
                val = val * base / (math.sqrt(3) * kv[ids_arr])
        elif key == 'bus_i_ang':
            val = np.angle(pf.bus_i[ids_arr])
        elif key == 'branch_p':
            val = self._branch_values(pf, ids, 's').real
        elif key == 'branch_q':
            val = self._branch_values(pf, ids, 's').imag
        elif key == 'branch_s':
            val = np.abs(self._branch_values(pf, ids, 's'))
        elif key == 'branch_i_magn':
            val = np.abs(self._branch_values(pf, ids, 'i'))
        elif key == 'branch_i_ang':
            val = np.angle(self._branch_values(pf, ids, 'i'))
        elif key == 'des_soc':
            val = state.soc[[self.des_ids.index(d) for d in ids]]
        elif key == 'gen_p_max':
            val = state.gen_p_max[[self.gen_ids.index(g) for g in ids]]
        else:
            val = state.aux[ids_arr]

        val = np.asarray(val, dtype=float)
        if unit in ('MW', 'MVAr', 'MVA', 'MWh'):
            val = val * base
        elif unit == 'degree':
            val = np.rad2deg(val)
        return val

    # -- bounds --------------------------------------------------------------

    def action_space_bounds(self):
        """
        Box bounds of the action vector from device limits only.

        Capability curves and storage levels are ignored; the environment maps
        any action in this box onto the feasible set.
        """
        devs = self.network.devices

        def lim(v, default):
            return default if v is None else v

        gens = [devs[g] for g in self.gen_ids]
        des = [devs[d] for d in self.des_ids]
        low = ([g.p_min for g in gens] + [lim(g.q_min, -np.inf) for g in gens]
               + [d.p_min for d in des] + [d.q_min for d in des])
        high = ([g.p_max for g in gens] + [lim(g.q_max, np.inf) for g in gens]
                + [d.p_max for d in des] + [d.q_max for d in des])
        return np.array(low, dtype=float), np.array(high, dtype=float)

    def _device_bounds(self):
        """Loose (P, Q) bounds per device; the slack absorbs everything else."""
        devs = self.network.devices
        p_lo, p_hi, q_lo, q_hi = [], [], [], []
        for d in devs:
            if d.is_load:
                plo = d.p_min if d.p_min is not None else -np.inf
                qs = (plo * d.qp_ratio, 0.)
                p_lo.append(plo), p_hi.append(0.)
                q_lo.append(min(qs)), q_hi.append(max(qs))
            elif d.is_slack:
                p_lo.append(np.nan), p_hi.append(np.nan), q_lo.append(np.nan), q_hi.append(np.nan)
            else:
                p_lo.append(d.p_min), p_hi.append(d.p_max)
                q_lo.append(d.q_min if d.q_min is not None else -np.inf)
                q_hi.append(d.q_max if d.q_max is not None else np.inf)
        p_lo, p_hi, q_lo, q_hi = map(np.array, (p_lo, p_hi, q_lo, q_hi))
        s = self.slack_dev
        others = np.arange(self.n_dev) != s
        p_cap = np.sum(np.maximum(np.abs(p_lo[others]), np.abs(p_hi[others])))
        q_cap = np.sum(np.maximum(np.abs(q_lo[others]), np.abs(q_hi[others])))
        p_lo[s], p_hi[s], q_lo[s], q_hi[s] = -p_cap, p_cap, -q_cap, q_cap
        return p_lo, p_hi, q_lo, q_hi, p_cap, q_cap

    def observation_bounds(self):
        """
        Loose per-coordinate bounds on the observation vector.

        Network-wide flows are bounded by the total device capability,
        voltage magnitudes by ``[0, 2 * v_max]`` and angles by ``[-pi, pi]``.
        """
        spec = self.obs_spec
        if spec.func is not None:
            raise NotImplementedError('override observation_bounds() for callable observations')
        net = self.network
        p_lo, p_hi, q_lo, q_hi, p_cap, q_cap = self._device_bounds()
        devs = net.devices
        soc_lo = np.array([devs[d].soc_min for d in self.des_ids])
        soc_hi = np.array([devs[d].soc_max for d in self.des_ids])
        pmax_lo = np.array([devs[g].p_min for g in self.gen_ids])
        pmax_hi = np.array([devs[g].p_max for g in self.gen_ids])
        aux_lo, aux_hi = self.observation_aux_bounds()

        if spec.full_state:
            low = np.concatenate([p_lo, q_lo, soc_lo, pmax_lo, aux_lo])
            high = np.concatenate([p_hi, q_hi, soc_hi, pmax_hi, aux_hi])
            return low, high

        s_cap = math.hypot(p_cap, q_cap)
        v_max = np.array([b.v_max for b in net.buses])
        kv = np.array([b.base_kv for b in net.buses])
        v_min_floor = 0.5  # loose floor used to bound currents from powers
        lows, highs = [], []
        for key, ids, unit in spec.items:
            n = len(ids)
            idx = np.array(ids, dtype=int) if not key.startswith('branch_') else None
            if key in ('bus_p', 'branch_p'):
                lo, hi = np.full(n, -p_cap), np.full(n, p_cap)
            elif key in ('bus_q', 'branch_q'):
                lo, hi = np.full(n, -q_cap), np.full(n, q_cap)
            elif key == 'branch_s':
                lo, hi = np.zeros(n), np.full(n, s_cap)
            elif key == 'dev_p':
                lo, hi = p_lo[idx], p_hi[idx]
            elif key == 'dev_q':
                lo, hi = q_lo[idx], q_hi[idx]
            elif key == 'bus_v_magn':
                lo, hi = np.zeros(n), 2 * v_max[idx]
                if unit == 'kV':
                    hi = hi * kv[idx]
            elif key in ('bus_i_magn', 'branch_i_magn'):
                lo, hi = np.zeros(n), np.full(n, s_cap / v_min_floor)
                if unit == 'kA':
                    hi = hi * net.base_mva / (math.sqrt(3) * kv[idx])
            elif key.endswith('_ang'):
                lo, hi = np.full(n, -np.pi), np.full(n, np.pi)
            elif key == 'des_soc':
                pos = [self.des_ids.index(d) for d in ids]
                lo, hi = soc_lo[pos], soc_hi[pos]
            elif key == 'gen_p_max':
                pos = [self.gen_ids.index(g) for g in ids]
                lo, hi = pmax_lo[pos], pmax_hi[pos]
            else:
                lo, hi = aux_lo[idx], aux_hi[idx]
            lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
            if unit in ('MW', 'MVAr', 'MVA', 'MWh'):
                lo, hi = lo * net.base_mva, hi * net.base_mva
            elif unit == 'degree':
                lo, hi = np.rad2deg(lo), np.rad2deg(hi)
            lows.append(lo)
            highs.append(hi)
        return np.concatenate(lows), np.concatenate(highs)
