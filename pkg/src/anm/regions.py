"""
Feasible (P, Q) injection regions of loads, generators and storage units.

A region is a convex polygon stored as halfplanes ``a P + b Q <= c`` with
``(a, b)`` normalised to unit length, so that ``a P + b Q - c`` is a signed
distance to the boundary line.
"""

import itertools
import warnings
from dataclasses import dataclass

import numpy as np

# Membership slack on the signed distance to each boundary line (p.u.).
TOL = 1e-11


class WrongDeviceType(TypeError):
    pass


class EmptyRegion(ValueError):
    pass


class InvalidDynamicMax(UserWarning):
    """A generator's dynamic maximum fell outside [P_min, P_max] and was clamped."""


@dataclass(frozen=True)
class OperatingRegion:
    halfplanes: np.ndarray          # shape (m, 3): rows (a, b, c)
    notes: tuple = ()

    @classmethod
    def from_halfplanes(cls, rows, notes=()):
        hp = np.array(rows, dtype=float).reshape(-1, 3)
        norm = np.hypot(hp[:, 0], hp[:, 1])
        return cls(hp / norm[:, None], tuple(notes))

    def violation(self, point):
        """Largest signed distance outside any halfplane (<= 0 inside)."""
        hp = self.halfplanes
        return float(np.max(hp[:, 0] * point[0] + hp[:, 1] * point[1] - hp[:, 2]))

    def contains(self, point, tol=TOL):
        return self.violation(point) <= tol

    def vertices(self, tol=TOL):
        """Feasible pairwise intersections of the boundary lines."""
        hp = self.halfplanes
        out = []
        for i, j in itertools.combinations(range(len(hp)), 2):
            a = hp[[i, j], :2]
            det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
            if abs(det) < 1e-12:
                continue
            x = np.linalg.solve(a, hp[[i, j], 2])
            if self.contains(x, tol):
                out.append(x)
        return np.array(out).reshape(-1, 2)


def _cap_lines(dev):
    """Halfplanes limiting Q near full active output (upper-right/left corners)."""
    rows = []
    has_q = dev.q_plus is not None and dev.q_minus is not None
    if has_q and dev.p_plus is not None and dev.p_max != dev.p_plus:
        tau1 = (dev.q_plus - dev.q_max) / (dev.p_max - dev.p_plus)
        rho1 = dev.q_max - tau1 * dev.p_plus
        tau2 = (dev.q_minus - dev.q_min) / (dev.p_max - dev.p_plus)
        rho2 = dev.q_min - tau2 * dev.p_plus
        rows.append((-tau1, 1., rho1))        # Q <= tau1 P + rho1
        rows.append((tau2, -1., -rho2))       # Q >= tau2 P + rho2
    if dev.is_des and has_q and dev.p_minus is not None and dev.p_minus != dev.p_min:
        tau3 = (dev.q_min - dev.q_minus) / (dev.p_minus - dev.p_min)
        rho3 = dev.q_min - tau3 * dev.p_minus
        tau4 = (dev.q_max - dev.q_plus) / (dev.p_minus - dev.p_min)
        rho4 = dev.q_max - tau4 * dev.p_minus
        rows.append((tau3, -1., -rho3))       # Q >= tau3 P + rho3
        rows.append((-tau4, 1., rho4))        # Q <= tau4 P + rho4
    return rows


def cap_coefficients(dev):
    """Slopes and intercepts ``[(tau, rho), ...]`` of the capability lines."""
    out = []
    for a, b, c in _cap_lines(dev):
        # rows are either (-tau, 1, rho) or (tau, -1, -rho)
        out.append((-a / b, c / b))
    return out


def load_region(dev) -> OperatingRegion:
    """Segment ``{(P, P * qp_ratio) : P_min <= P <= 0}`` of a passive load."""
    if not dev.is_load:
        raise WrongDeviceType(f'device {dev.id} is not a load')
    k = dev.qp_ratio
    rows = [(1., 0., 0.), (-k, 1., 0.), (k, -1., 0.)]
    if dev.p_min is not None and np.isfinite(dev.p_min):
        rows.append((-1., 0., -dev.p_min))
    return OperatingRegion.from_halfplanes(rows)


def gen_region(dev, p_max_dynamic) -> OperatingRegion:
    """
    Region of a non-slack generator for the current dynamic maximum.

    :param dev: generator DeviceSpec (p.u.).
    :param p_max_dynamic: available active power; clamped into [P_min, P_max]
        with an InvalidDynamicMax warning if it falls outside.
    """
    if not dev.is_generator:
        raise WrongDeviceType(f'device {dev.id} is not a non-slack generator')
    notes = []
    if not dev.p_min <= p_max_dynamic <= dev.p_max:
        msg = (f'device {dev.id}: dynamic maximum {p_max_dynamic} outside '
               f'[{dev.p_min}, {dev.p_max}], clamped')
        warnings.warn(msg, InvalidDynamicMax, stacklevel=2)
        notes.append(msg)
        p_max_dynamic = min(max(p_max_dynamic, dev.p_min), dev.p_max)
    rows = [(-1., 0., -dev.p_min), (1., 0., p_max_dynamic)]
    if dev.q_max is not None:
        rows.append((0., 1., dev.q_max))
    if dev.q_min is not None:
        rows.append((0., -1., -dev.q_min))
    rows += _cap_lines(dev)
    return OperatingRegion.from_halfplanes(rows, notes)


def des_region(dev, soc, delta_t) -> OperatingRegion:
    """
    Region of a storage unit given its charge level at the start of the step.

    Besides its box and capability lines, the active power is limited so that
    holding it for ``delta_t`` hours keeps the charge within bounds.
    """
    if not dev.is_des:
        raise WrongDeviceType(f'device {dev.id} is not a storage unit')
    eta = dev.efficiency
    p_lo = (soc - dev.soc_max) / (delta_t * eta)
    p_hi = eta * (soc - dev.soc_min) / delta_t
    rows = [(-1., 0., -dev.p_min), (1., 0., dev.p_max),
            (0., 1., dev.q_max), (0., -1., -dev.q_min)]
    rows += _cap_lines(dev)
    rows += [(-1., 0., -p_lo), (1., 0., p_hi)]
    return OperatingRegion.from_halfplanes(rows)


def project(region, requested):
    """
    Euclidean projection of a point onto a convex polygon.

    Points already inside are returned unchanged. Otherwise the nearest point
    is either the foot of the perpendicular on one of the boundary lines or a
    vertex, so all such feasible candidates are compared.

    :return: the projected point as a tuple ``(P, Q)``.
    """
    x = np.asarray(requested, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError(f'cannot project non-finite point {requested!r}')
    if region.contains(x):
        return float(x[0]), float(x[1])

    hp = region.halfplanes
    dist = hp[:, 0] * x[0] + hp[:, 1] * x[1] - hp[:, 2]
    feet = x[None, :] - dist[:, None] * hp[:, :2]
    candidates = [p for p in feet if region.contains(p)]
    candidates.extend(region.vertices())
    if not candidates:
        raise EmptyRegion('operating region is empty')
    candidates = np.array(candidates)
    d2 = np.sum((candidates - x) ** 2, axis=1)
    best = candidates[int(np.argmin(d2))]
    return float(best[0]), float(best[1])


def clip_load(dev, p):
    """Load injection point: clip P into [P_min, 0], then Q = P * qp_ratio."""
    lo = dev.p_min if dev.p_min is not None else -np.inf
    p = min(max(p, lo), 0.)
    return p, p * dev.qp_ratio


def soc_update(dev, soc, p_injection, delta_t):
    """Charge level after holding ``p_injection`` for ``delta_t`` hours."""
    if p_injection <= 0:
        return soc - delta_t * dev.efficiency * p_injection
    return soc - delta_t / dev.efficiency * p_injection
