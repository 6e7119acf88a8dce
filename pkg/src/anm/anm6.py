"""
ANM6-Easy: a 6-bus distribution network driven by fixed daily time series.
"""

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .env import ANMEnv, GridState
from .network import network_from_dict

DELTA_T = 0.25
GAMMA = 0.995
LAMB = 1000.
R_CLIP = 100.
K = 1
SLOTS = 96  # 24 h / DELTA_T


def _data(name):
    return json.loads(resources.files('anm').joinpath('data', name).read_text())


def build_anm6_network():
    """The ANM6-Easy network in MW/MVAr/MWh units (not yet per-unit)."""
    return network_from_dict(_data('anm6_easy.json'))


@dataclass(frozen=True)
class DailySeries:
    """
    Daily profiles indexed by time of day.

    ``values[d]`` is the 96-slot profile (MW) of device ``d``: the demand of a
    load or the available power of a renewable generator.
    """
    values: dict

    @classmethod
    def load(cls):
        raw = _data('anm6_series.json')['series']
        return cls({int(d): tuple(float(x) for x in v) for d, v in raw.items()})

    def at(self, dev_id, index):
        return self.values[dev_id][index % SLOTS]

    def window(self, dev_id, start, n):
        """Values at slots ``start, start+1, ..., start+n-1`` (wrapping)."""
        v = self.values[dev_id]
        return np.array([v[(start + k) % SLOTS] for k in range(n)])


class ANM6Easy(ANMEnv):
    """
    The ANM6-Easy task: full-state observations, one auxiliary variable
    holding the time of day, and fixed daily load/generation profiles.
    """

    def __init__(self, seed=None, slack_v_magnitude=None, observation='state', lamb=LAMB):
        super().__init__(build_anm6_network(), observation=observation, K=K, delta_t=DELTA_T,
                         gamma=GAMMA, lamb=lamb, r_clip=R_CLIP, seed=seed,
                         slack_v_magnitude=slack_v_magnitude)
        self.series = DailySeries.load()
        base = self.network.base_mva
        # p.u. lookup tables, one row per tracked device
        self._load_pu = np.array([self.series.values[l] for l in self.load_ids]) / base
        self._gen_pu = np.array([self.series.values[g] for g in self.gen_ids]) / base

    def observation_aux_bounds(self):
        return np.zeros(1), np.full(1, SLOTS - 1.)

    def time_of_day(self, state=None):
        state = self.state if state is None else state
        return int(round(state.aux[0]))

    def next_vars(self, state):
        t = (int(round(state.aux[0])) + 1) % SLOTS
        return self._load_pu[:, t].copy(), self._gen_pu[:, t].copy(), np.array([float(t)])

    def init_state(self, rng):
        net = self.network
        devs = net.devices
        t0 = int(rng.integers(0, SLOTS))
        p = np.zeros(self.n_dev)
        q = np.zeros(self.n_dev)
        for k, l in enumerate(self.load_ids):
            p[l] = self._load_pu[k, t0]
            q[l] = p[l] * devs[l].qp_ratio
        gen_p_max = self._gen_pu[:, t0].copy()
        for k, g in enumerate(self.gen_ids):
            p[g] = gen_p_max[k]
            q[g] = rng.uniform(devs[g].q_min, devs[g].q_max)
        soc = np.array([rng.uniform(devs[d].soc_min, devs[d].soc_max) for d in self.des_ids])
        # generator points are mapped into their regions by reset()
        return GridState(p, q, soc, gen_p_max, np.array([float(t0)]))
