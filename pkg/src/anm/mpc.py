"""
Receding-horizon MPC policy built on a multi-stage DC optimal power flow.

At every step an N-stage linear program is solved over forecasts of the
loads and of the available renewable power; only the first stage's active
power setpoints are applied and every reactive setpoint is zero.

The LP is lossless DC: branch flows are ``(theta_i - theta_j) / x_ij``, bus
voltages are 1 p.u. and reactive power is ignored. Branch ratings are
softened with overflow slacks weighted by ``lamb``, against a limit of
``beta * S_max``. Storage units get separate charge/discharge variables so
that the state-of-charge recursion stays linear.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

log = logging.getLogger(__name__)

FORECAST_MODES = ('constant', 'perfect')


class InfeasibleModel(RuntimeError):
    pass


class SolverFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class Forecast:
    """Forecasts for stages ``t+1 .. t+N``; rows follow ``load_ids`` / ``gen_ids`` (p.u.)."""
    load_p: np.ndarray     # (n_load, N)
    gen_p_max: np.ndarray  # (n_gen, N)

    @property
    def N(self):
        return self.load_p.shape[1]


@dataclass(frozen=True)
class MpcConfig:
    N: int
    beta: float
    lamb: float = 1000.
    forecast_mode: str = 'constant'

    def __post_init__(self):
        if self.N < 1:
            raise ValueError('horizon N must be at least 1')
        if not 0 <= self.beta <= 1:
            raise ValueError('safety margin beta must lie in [0, 1]')
        if self.forecast_mode not in FORECAST_MODES:
            raise ValueError(f'forecast_mode must be one of {FORECAST_MODES}')


def forecast_constant(state, load_ids, N):
    """Hold the current loads and generation maxima over the whole horizon."""
    load_p = np.repeat(state.dev_p[list(load_ids)][:, None], N, axis=1)
    gen_p_max = np.repeat(np.asarray(state.gen_p_max)[:, None], N, axis=1)
    return Forecast(load_p, gen_p_max)


def forecast_perfect(series, load_ids, gen_ids, aux0, N, base_mva):
    """Exact future values of a periodic daily series, at slots ``aux0 + 1 .. aux0 + N``."""
    start = int(aux0) + 1
    load_p = np.array([series.window(l, start, N) for l in load_ids]).reshape(len(load_ids), N)
    gen_p_max = np.array([series.window(g, start, N) for g in gen_ids]).reshape(len(gen_ids), N)
    return Forecast(load_p / base_mva, gen_p_max / base_mva)


@dataclass
class MpcProblem:
    """LP ``min c x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  lo <= x <= hi``."""
    c: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    layout: 'StageLayout'
    N: int

    def var_names(self):
        return self.layout.names(self.N)


class StageLayout:
    """Variable offsets inside one stage block."""

    def __init__(self, spec):
        self.spec = spec
        self.n_dev, self.n_bus = spec.n_dev, spec.n_bus
        self.n_des, self.n_br = len(spec.des_ids), len(spec.branches)
        self.p = 0
        self.theta = self.p + self.n_dev
        self.chg = self.theta + self.n_bus
        self.dis = self.chg + self.n_des
        self.soc = self.dis + self.n_des    # charge level at the end of the stage
        self.over = self.soc + self.n_des
        self.size = self.over + self.n_br

    def names(self, N):
        out = []
        for k in range(N):
            out += [f'p_{d}_{k}' for d in range(self.n_dev)]
            out += [f'th_{i}_{k}' for i in range(self.n_bus)]
            out += [f'chg_{d}_{k}' for d in self.spec.des_ids]
            out += [f'dis_{d}_{k}' for d in self.spec.des_ids]
            out += [f'soc_{d}_{k}' for d in self.spec.des_ids]
            out += [f'ovf_{b}_{k}' for b in range(self.n_br)]
        return out


class DcopfTemplate:
    """
    Constraint matrices of the N-stage DCOPF for a fixed network, horizon and
    safety margin. Only bounds and right-hand sides depend on the forecast and
    the current charge levels, so the matrices are assembled once.

    :param spec: per-unit NetworkSpec.
    """

    def __init__(self, spec, N, beta, lamb, gamma, delta_t):
        if not spec.per_unit:
            raise ValueError('the DCOPF works on a per-unit network')
        self.spec, self.N, self.beta, self.lamb = spec, N, beta, lamb
        self.gamma, self.delta_t = gamma, delta_t
        L = self.layout = StageLayout(spec)
        n = L.size * N
        devs = spec.devices
        des = spec.des_ids
        eta = np.array([devs[d].efficiency for d in des])
        soc_lo = np.array([devs[d].soc_min for d in des])
        soc_hi = np.array([devs[d].soc_max for d in des])

        def col(k, off):
            return k * L.size + off

        # cost: non-renewable generators (slack included) and overflow
        c = np.zeros(n)
        costly = [d.id for d in devs if (d.is_slack or d.is_generator) and not d.is_renewable]
        for k in range(N):
            w = gamma ** k
            for d in costly:
                c[col(k, L.p + d)] = w
            c[col(k, L.over):col(k, L.over) + L.n_br] = w * lamb
        self.c = c

        eq_rows, eq_cols, eq_vals = [], [], []
        ub_rows, ub_cols, ub_vals = [], [], []
        b_ub = []
        r_eq = 0
        r_ub = 0
        self.soc_eq_rows = []   # equality rows of the first-stage SoC recursion
        self.soc_ub_rows = []   # (row, sign) of later-stage SoC-coupled bounds

        ratings = np.array([br.s_max for br in spec.branches])
        for k in range(N):
            # bus balance: sum of device injections = sum of outgoing DC flows
            for i in range(L.n_bus):
                for d in devs:
                    if d.bus == i:
                        eq_rows.append(r_eq), eq_cols.append(col(k, L.p + d.id)), eq_vals.append(1.)
                for br in spec.branches:
                    if i not in (br.from_bus, br.to_bus):
                        continue
                    sign = 1. if i == br.from_bus else -1.
                    b = 1. / br.x
                    eq_rows += [r_eq, r_eq]
                    eq_cols += [col(k, L.theta + br.from_bus), col(k, L.theta + br.to_bus)]
                    eq_vals += [-sign * b, sign * b]
                r_eq += 1
            # storage: P = dis - chg, and the charge recursion
            for m, d in enumerate(des):
                eq_rows += [r_eq] * 3
                eq_cols += [col(k, L.p + d), col(k, L.dis + m), col(k, L.chg + m)]
                eq_vals += [1., -1., 1.]
                r_eq += 1
                eq_rows += [r_eq] * 3
                eq_cols += [col(k, L.soc + m), col(k, L.chg + m), col(k, L.dis + m)]
                eq_vals += [1., -delta_t * eta[m], delta_t / eta[m]]
                if k > 0:
                    eq_rows.append(r_eq), eq_cols.append(col(k - 1, L.soc + m)), eq_vals.append(-1.)
                else:
                    self.soc_eq_rows.append(r_eq)
                r_eq += 1
            # overflow slacks: |flow| - ovf <= beta * rating
            for b_i, br in enumerate(spec.branches):
                bb = 1. / br.x
                for sign in (1., -1.):
                    ub_rows += [r_ub] * 3
                    ub_cols += [col(k, L.theta + br.from_bus), col(k, L.theta + br.to_bus),
                                col(k, L.over + b_i)]
                    ub_vals += [sign * bb, -sign * bb, -1.]
                    b_ub.append(beta * ratings[b_i])
                    r_ub += 1
            # charge-level limits on the storage power, driven by the previous
            # stage's charge level (stage 0 uses the measured level, via bounds)
            if k > 0:
                for m, d in enumerate(des):
                    # P - eta/dt * soc_{k-1} <= -eta/dt * soc_min
                    ub_rows += [r_ub, r_ub]
                    ub_cols += [col(k, L.p + d), col(k - 1, L.soc + m)]
                    ub_vals += [1., -eta[m] / delta_t]
                    b_ub.append(-eta[m] * soc_lo[m] / delta_t)
                    r_ub += 1
                    # -P + soc_{k-1} / (dt eta) <= soc_max / (dt eta)
                    ub_rows += [r_ub, r_ub]
                    ub_cols += [col(k, L.p + d), col(k - 1, L.soc + m)]
                    ub_vals += [-1., 1. / (delta_t * eta[m])]
                    b_ub.append(soc_hi[m] / (delta_t * eta[m]))
                    r_ub += 1

        self.A_eq = sp.csr_matrix((eq_vals, (eq_rows, eq_cols)), shape=(r_eq, n))
        self.b_eq = np.zeros(r_eq)
        self.A_ub = sp.csr_matrix((ub_vals, (ub_rows, ub_cols)), shape=(r_ub, n))
        self.b_ub = np.array(b_ub)

        # static bounds
        lo = np.full(n, -np.inf)
        hi = np.full(n, np.inf)
        for k in range(N):
            for d in devs:
                j = col(k, L.p + d.id)
                if d.is_generator or d.is_des:
                    lo[j], hi[j] = d.p_min, d.p_max
            th = slice(col(k, L.theta), col(k, L.theta) + L.n_bus)
            lo[th], hi[th] = -np.pi, np.pi
            lo[col(k, L.theta + spec.slack_bus)] = hi[col(k, L.theta + spec.slack_bus)] = 0.
            for m, d in enumerate(des):
                lo[col(k, L.chg + m)], hi[col(k, L.chg + m)] = 0., -devs[d].p_min
                lo[col(k, L.dis + m)], hi[col(k, L.dis + m)] = 0., devs[d].p_max
                lo[col(k, L.soc + m)], hi[col(k, L.soc + m)] = soc_lo[m], soc_hi[m]
            ov = slice(col(k, L.over), col(k, L.over) + L.n_br)
            lo[ov] = 0.
        self.lo, self.hi = lo, hi
        self._eta, self._soc_lo, self._soc_hi = eta, soc_lo, soc_hi
        self._col = col

    def instantiate(self, forecast, soc0):
        """Fill in forecast-dependent bounds and the initial charge levels."""
        if forecast.N != self.N:
            raise ValueError(f'forecast horizon {forecast.N} != {self.N}')
        spec, L, col = self.spec, self.layout, self._col
        devs = spec.devices
        lo, hi = self.lo.copy(), self.hi.copy()
        b_eq = self.b_eq.copy()
        for k in range(self.N):
            for m, l in enumerate(spec.load_ids):
                p = min(max(forecast.load_p[m, k], devs[l].p_min), 0.)
                lo[col(k, L.p + l)] = hi[col(k, L.p + l)] = p
            for m, g in enumerate(spec.gen_ids):
                j = col(k, L.p + g)
                hi[j] = max(min(devs[g].p_max, forecast.gen_p_max[m, k]), lo[j])
        soc0 = np.asarray(soc0, dtype=float)
        dt, eta = self.delta_t, self._eta
        for m, d in enumerate(spec.des_ids):
            b_eq[self.soc_eq_rows[m]] = soc0[m]
            j = col(0, L.p + d)
            lo[j] = max(lo[j], (soc0[m] - self._soc_hi[m]) / (dt * eta[m]))
            hi[j] = min(hi[j], eta[m] * (soc0[m] - self._soc_lo[m]) / dt)
            if lo[j] > hi[j]:    # charge level outside its bounds: stay idle
                lo[j] = hi[j] = 0.
        return MpcProblem(self.c, self.A_ub, self.b_ub.copy(), self.A_eq, b_eq, lo, hi, L, self.N)


def build_dcopf(spec, state, forecast, cfg, gamma, delta_t):
    """One-off assembly of the N-stage DCOPF for the given state and forecast."""
    tpl = DcopfTemplate(spec, cfg.N, cfg.beta, cfg.lamb, gamma, delta_t)
    return tpl.instantiate(forecast, state.soc)


@dataclass
class LpSolution:
    x: np.ndarray
    objective: float
    p_first: np.ndarray     # device active powers of the first stage
    eq_duals: np.ndarray
    ub_duals: np.ndarray
    lower_duals: np.ndarray
    upper_duals: np.ndarray


def solve_lp(problem, tolerance=1e-8) -> LpSolution:
    """
    Solve an MpcProblem with HiGHS.

    :raises InfeasibleModel: if the LP is infeasible.
    :raises SolverFailure: on any other non-optimal termination.
    """
    bounds = np.column_stack([problem.lo, problem.hi])
    res = linprog(problem.c, A_ub=problem.A_ub, b_ub=problem.b_ub, A_eq=problem.A_eq,
                  b_eq=problem.b_eq, bounds=bounds, method='highs',
                  options={'primal_feasibility_tolerance': tolerance,
                           'dual_feasibility_tolerance': tolerance})
    if res.status == 2:
        raise InfeasibleModel(res.message)
    if res.status != 0:
        raise SolverFailure(res.message)
    L = problem.layout
    return LpSolution(res.x, float(res.fun), res.x[L.p:L.p + L.n_dev].copy(),
                      res.eqlin.marginals, res.ineqlin.marginals,
                      res.lower.marginals, res.upper.marginals)


def _fmt(v):
    return repr(float(v))


def write_lp(problem, path):
    """Dump the LP in CPLEX LP text format for cross-checking with other solvers."""
    names = problem.var_names()

    def expr(row):
        terms = []
        for j, v in zip(row.indices, row.data):
            if v != 0:
                terms.append(f'{"+" if v >= 0 else "-"} {_fmt(abs(v))} {names[j]}')
        return ' '.join(terms) if terms else '0 ' + names[0]

    lines = ['Minimize', ' obj: ' + expr(sp.csr_matrix(problem.c)), 'Subject To']
    for r in range(problem.A_eq.shape[0]):
        lines.append(f' e{r}: {expr(problem.A_eq.getrow(r))} = {_fmt(problem.b_eq[r])}')
    for r in range(problem.A_ub.shape[0]):
        lines.append(f' u{r}: {expr(problem.A_ub.getrow(r))} <= {_fmt(problem.b_ub[r])}')
    lines.append('Bounds')
    for j, name in enumerate(names):
        lo, hi = problem.lo[j], problem.hi[j]
        lo_s = '-inf' if np.isneginf(lo) else _fmt(lo)
        hi_s = '+inf' if np.isposinf(hi) else _fmt(hi)
        if lo == hi:
            lines.append(f' {name} = {_fmt(lo)}')
        else:
            lines.append(f' {lo_s} <= {name} <= {hi_s}')
    lines.append('End')
    with open(path, 'w') as f:
        f.write('\n'.join(lines) + '\n')


class MpcPolicy:
    """
    The MPC-N policy for an ANMEnv.

    :param env: environment providing the per-unit network, gamma and delta_t.
        Perfect forecasts additionally need ``env.series`` (a DailySeries).
    :param cfg: MpcConfig; ``cfg.lamb`` weights the overflow slacks.
    :param cache: memoise actions on the exact LP inputs. Deterministic
        trajectories often revisit identical inputs, and the LP solution is a
        pure function of them.
    """

    def __init__(self, env, cfg, cache=True, lp_dump=None):
        self.env, self.cfg = env, cfg
        if cfg.forecast_mode == 'perfect' and not hasattr(env, 'series'):
            raise ValueError('perfect forecasts need an environment with a daily series')
        self.template = DcopfTemplate(env.network, cfg.N, cfg.beta, cfg.lamb,
                                      env.gamma, env.delta_t)
        self.cache = {} if cache else None
        self.lp_dump = lp_dump
        self.failures = 0
        self.max_simultaneous = 0.   # largest min(chg, dis) seen at a solution

    def forecast(self, state):
        env, N = self.env, self.cfg.N
        if self.cfg.forecast_mode == 'perfect':
            return forecast_perfect(env.series, env.load_ids, env.gen_ids, round(state.aux[0]),
                                    N, env.network.base_mva)
        return forecast_constant(state, env.load_ids, N)

    def _key(self, state):
        env = self.env
        if self.cfg.forecast_mode == 'perfect':
            parts = (state.aux, state.soc)
        else:
            parts = (state.dev_p[env.load_ids], state.gen_p_max, state.soc)
        return b''.join(np.ascontiguousarray(p, dtype=float).tobytes() for p in parts)

    def act(self, state=None):
        """Action ``[gen P, gen Q, DES P, DES Q]`` for the given (default: current) state."""
        env = self.env
        state = env.state if state is None else state
        key = None
        if self.cache is not None:
            key = self._key(state)
            hit = self.cache.get(key)
            if hit is not None:
                return hit.copy()

        problem = self.template.instantiate(self.forecast(state), state.soc)
        if self.lp_dump is not None:
            write_lp(problem, self.lp_dump)
        action = np.zeros(env.action_dim)
        try:
            sol = solve_lp(problem)
        except (SolverFailure, InfeasibleModel) as exc:
            self.failures += 1
            log.warning('MPC solve failed (%s); emitting a zero action', exc)
            return action
        L = problem.layout
        chg = sol.x[L.chg:L.chg + L.n_des]
        dis = sol.x[L.dis:L.dis + L.n_des]
        if L.n_des:
            self.max_simultaneous = max(self.max_simultaneous, float(np.max(np.minimum(chg, dis))))
        ng, nd = env.n_gen, env.n_des
        action[:ng] = sol.p_first[env.gen_ids]
        action[2 * ng:2 * ng + nd] = sol.p_first[env.des_ids]
        if key is not None:
            self.cache[key] = action.copy()
        return action

    __call__ = act
