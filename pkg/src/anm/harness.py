"""
Rollouts, discounted-return evaluation and the MPC return grid.
"""

import csv
import io
import json
import time
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .anm6 import ANM6Easy
from .mpc import MpcConfig, MpcPolicy

ENVS = {'anm6-easy': ANM6Easy}
POLICIES = ('random', 'mpc-constant', 'mpc-perfect')
CSV_COLUMNS = ('mode', 'N', 'beta', 'seed', 'rollout', 'return', 'mean', 'std', 'truncation_bound')


def discounted_return(rewards, gamma):
    """Sum of ``gamma**t * r_t`` over the sequence."""
    r = np.asarray(rewards, dtype=float)
    return float(np.sum(r * gamma ** np.arange(len(r))))


def truncation_bound(r_clip, gamma, T):
    """Largest possible gap between a T-step and an infinite discounted return."""
    return r_clip * gamma ** T / (1. - gamma)


class RandomPolicy:
    """Uniform sampling inside the environment's action box."""

    def __init__(self, env, seed=None):
        self.env = env
        self.low, self.high = env.action_space_bounds()
        self.rng = np.random.default_rng(seed)

    def reset(self, seed):
        self.rng = np.random.default_rng(seed)

    def act(self, state=None):
        return self.rng.uniform(self.low, self.high)


def make_env(env_id, **kwargs):
    try:
        return ENVS[env_id](**kwargs)
    except KeyError:
        raise ValueError(f'unknown environment {env_id!r}; choose from {sorted(ENVS)}') from None


def make_policy(policy_id, env, N=16, beta=1.0, lamb=None):
    if policy_id == 'random':
        return RandomPolicy(env)
    if policy_id in ('mpc-constant', 'mpc-perfect'):
        mode = policy_id.split('-')[1]
        lamb = env.lamb if lamb is None else lamb
        return MpcPolicy(env, MpcConfig(N, beta, lamb, mode))
    raise ValueError(f'unknown policy {policy_id!r}; choose from {POLICIES}')


def _trace_record(t, state, info, reward, done):
    viol = info.get('violations', {})
    return {
        't': t,
        'state': state.to_vector().tolist(),
        'action_requested': np.asarray(info.get('action_requested', [])).tolist(),
        'action_applied': np.asarray(info.get('action_applied', [])).tolist(),
        'reward': reward,
        'done': done,
        'violations': viol,
    }


def run_rollout(env, policy, T, seed, trace=None):
    """
    Reset ``env`` with ``seed`` and step it T times, or until a terminal state.

    :param policy: object with ``act(state) -> action``; an optional
        ``reset(seed)`` is called first.
    :param trace: optional writable text stream receiving one JSON line per step.
    :return: list of rewards (shorter than T if the trajectory terminated).
    """
    if T < 1:
        raise ValueError('T must be at least 1')
    env.reset(seed=seed)
    if hasattr(policy, 'reset'):
        policy.reset(seed)
    rewards = []
    for t in range(T):
        obs, reward, done, info = env.step(policy.act(env.state))
        rewards.append(reward)
        if trace is not None:
            trace.write(json.dumps(_trace_record(t, env.state, info, reward, done)) + '\n')
        if done:
            break
    return rewards


@dataclass
class EvalConfig:
    env: str = 'anm6-easy'
    policy: str = 'mpc-perfect'
    N: int = 16
    beta: float = 1.0
    lamb: Optional[float] = None      # reward and MPC penalty weight; env default if None
    rollouts: int = 5
    T: int = 3000
    gamma: Optional[float] = None     # discount used in the metric; env default if None
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    out: Optional[str] = None

    def __post_init__(self):
        if self.T < 1:
            raise ValueError('T must be at least 1')
        if self.rollouts < 1:
            raise ValueError('rollouts must be at least 1')
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError('seeds must be distinct')
        if self.policy not in POLICIES:
            raise ValueError(f'unknown policy {self.policy!r}')
        if self.env not in ENVS:
            raise ValueError(f'unknown environment {self.env!r}')

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f'unknown config keys: {sorted(extra)}')
        return cls(**d)


@dataclass
class EvalReport:
    config: EvalConfig
    returns: np.ndarray           # (n_seeds, rollouts)
    mean: float
    std: float
    truncation_bound: float
    wall_clock: float

    def to_dict(self):
        return {'config': asdict(self.config), 'returns': self.returns.tolist(),
                'mean': self.mean, 'std': self.std,
                'truncation_bound': self.truncation_bound, 'wall_clock': self.wall_clock}


def _env_kwargs(cfg):
    return {} if cfg.lamb is None else {'lamb': cfg.lamb}


def evaluate(cfg: EvalConfig, progress=None) -> EvalReport:
    """
    Mean and spread of discounted returns over ``rollouts`` per seed.

    Rollout i of seed s starts from ``reset(seed=[s, i])`` so every rollout
    has its own reproducible random stream. One environment and one policy
    are reused across rollouts; policies hold no trajectory state.
    """
    start = time.perf_counter()
    env = make_env(cfg.env, **_env_kwargs(cfg))
    policy = make_policy(cfg.policy, env, cfg.N, cfg.beta, cfg.lamb)
    gamma = env.gamma if cfg.gamma is None else cfg.gamma
    returns = np.zeros((len(cfg.seeds), cfg.rollouts))
    for a, s in enumerate(cfg.seeds):
        for i in range(cfg.rollouts):
            rewards = run_rollout(env, policy, cfg.T, [s, i])
            returns[a, i] = discounted_return(rewards, gamma)
            if progress is not None:
                progress(s, i, returns[a, i])
    report = EvalReport(cfg, returns, float(returns.mean()), float(returns.std()),
                        truncation_bound(env.r_clip, gamma, cfg.T), time.perf_counter() - start)
    if cfg.out:
        with open(cfg.out, 'w') as f:
            json.dump(report.to_dict(), f, indent=2)
    return report


def table_rows(mode, report):
    cfg = report.config
    rows = []
    for a, s in enumerate(cfg.seeds):
        for i in range(cfg.rollouts):
            rows.append((mode, cfg.N, cfg.beta, s, i, repr(float(report.returns[a, i])),
                         repr(report.mean), repr(report.std), repr(report.truncation_bound)))
    return rows


def mpc_table(mode, Ns=(8, 16, 32), betas=(0.92, 0.94, 0.96, 0.98, 1.0), rollouts=5,
              seeds=(0, 1, 2, 3, 4), T=3000, lamb=None, out=None, progress=None):
    """
    Evaluate the MPC policy on every (N, beta) cell and return the CSV text.

    One row per rollout; the cell mean, std and truncation bound are repeated
    on each row. Output contains no timing information, so reruns with the
    same arguments are byte-identical.
    """
    if mode not in ('constant', 'perfect'):
        raise ValueError("mode must be 'constant' or 'perfect'")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator='\n')
    w.writerow(CSV_COLUMNS)
    reports = {}
    for beta in betas:
        for N in Ns:
            cfg = EvalConfig(policy=f'mpc-{mode}', N=N, beta=beta, lamb=lamb, rollouts=rollouts,
                             T=T, seeds=list(seeds))
            rep = evaluate(cfg)
            reports[(N, beta)] = rep
            w.writerows(table_rows(mode, rep))
            if progress is not None:
                progress(N, beta, rep)
    text = buf.getvalue()
    if out:
        with open(out, 'w', newline='') as f:
            f.write(text)
    return text, reports
