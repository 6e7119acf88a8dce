"""Brute-force reference implementations used only by the tests."""

import numpy as np
from anm.regions import soc_update


class GridProjectionOracle:
    """
    Nearest feasible point of a polygon by exhaustive search over a regular grid.

    Feasibility of each grid point is decided from the raw halfplanes. Within
    every grid column the feasible Q values form a contiguous run, so the
    nearest feasible grid point of a column is the query's Q clipped to that
    run (rounded to the grid); the best column wins.
    """

    def __init__(self, region, h=1e-4, box=2.0):
        hp = region.halfplanes
        ps = np.arange(-round(box / h), round(box / h) + 1) * h
        lo = np.full(ps.shape, -np.inf)
        hi = np.full(ps.shape, np.inf)
        ok = np.ones(ps.shape, dtype=bool)
        for a, b, c in hp:
            if abs(b) < 1e-14:
                ok &= a * ps <= c + 1e-12
            elif b > 0:
                hi = np.minimum(hi, (c - a * ps) / b)
            else:
                lo = np.maximum(lo, (c - a * ps) / b)
        k_lo = np.ceil(lo / h - 1e-9)
        k_hi = np.floor(hi / h + 1e-9)
        ok &= k_lo <= k_hi
        if not ok.any():
            raise ValueError('no feasible grid point')
        self.h = h
        self.ps, self.k_lo, self.k_hi = ps[ok], k_lo[ok], k_hi[ok]
        self.region = region

    def nearest(self, x):
        """The nearest feasible grid point and its distance to x."""
        k = np.clip(np.round(x[1] / self.h), self.k_lo, self.k_hi)
        qs = k * self.h
        d2 = (self.ps - x[0]) ** 2 + (qs - x[1]) ** 2
        i = int(np.argmin(d2))
        return np.array([self.ps[i], qs[i]]), float(np.sqrt(d2[i]))

    def distance(self, x):
        """Distance from x to the feasible set as seen on the grid (0 if x is feasible)."""
        hp = self.region.halfplanes
        if np.all(hp[:, 0] * x[0] + hp[:, 1] * x[1] <= hp[:, 2] + 1e-11):
            return 0.
        return self.nearest(x)[1]


def segment_oracle_distance(p_min, k, x, h=1e-4):
    """Nearest point of the load segment {(P, kP): p_min <= P <= 0} on a P grid."""
    ps = np.arange(0., p_min - h / 2, -h)
    d = np.hypot(ps - x[0], k * ps - x[1])
    return float(d.min())


def round_trip_grid_cost(dev, energy, n_charge, p_dis, dt):
    """
    Net energy drawn from the grid when a storage unit takes ``energy`` in
    ``n_charge`` equal steps and is then discharged back to its starting
    charge at ``p_dis`` (the last step shortened to empty it exactly).
    """
    soc0 = soc = 0.
    grid = 0.
    p_chg = energy / (n_charge * dt)
    for _ in range(n_charge):
        soc = soc_update(dev, soc, -p_chg, dt)
        grid += p_chg * dt
    while soc - soc0 > 1e-15:
        p = min(p_dis, dev.efficiency * (soc - soc0) / dt)
        soc = soc_update(dev, soc, p, dt)
        grid -= p * dt
    return grid
