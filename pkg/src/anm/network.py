"""
Distribution network description: parsing, validation and per-unit scaling.

A network file is a JSON document with four keys::

    {"baseMVA": 100,
     "bus":    [[id, type, base_kv, v_max, v_min], ...],
     "device": [[id, bus, type, qp, p_max, p_min, q_max, q_min,
                 p_plus, p_minus, q_plus, q_minus, soc_max, soc_min, eff], ...],
     "branch": [[from, to, r, x, b, s_max, tap, shift_deg], ...]}

Inapplicable device cells are ``null`` and stay ``None`` after parsing.
"""

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Optional, Union

BUS_SLACK, BUS_PQ = 0, 1

LOAD, SLACK, CLASSICAL_GEN, RENEWABLE_GEN, DES = -1, 0, 1, 2, 3
DEVICE_TYPES = (LOAD, SLACK, CLASSICAL_GEN, RENEWABLE_GEN, DES)

BUS_COLUMNS = ('id', 'bus_type', 'base_kv', 'v_max', 'v_min')
DEVICE_COLUMNS = ('id', 'bus', 'dev_type', 'qp_ratio', 'p_max', 'p_min',
                  'q_max', 'q_min', 'p_plus', 'p_minus', 'q_plus', 'q_minus',
                  'soc_max', 'soc_min', 'efficiency')
BRANCH_COLUMNS = ('from_bus', 'to_bus', 'r', 'x', 'b', 's_max', 'tap', 'shift')

# Device fields expressed in MW, MVAr or MWh (scaled by base power).
POWER_FIELDS = ('p_max', 'p_min', 'q_max', 'q_min', 'p_plus', 'p_minus',
                'q_plus', 'q_minus', 'soc_max', 'soc_min')


class NetworkError(Exception):
    """Base class for network description errors."""


class MalformedDocument(NetworkError):
    """The document does not have the expected keys or row layout."""

    def __init__(self, message, table=None, row=None):
        self.table, self.row = table, row
        where = '' if table is None else f'{table}[{row}]: ' if row is not None else f'{table}: '
        super().__init__(where + message)


class ValidationError(NetworkError):
    """One or more network invariants are violated.

    ``diagnostics`` holds every problem found, each prefixed with its row.
    """

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__('; '.join(self.diagnostics))


class AlreadyNormalized(NetworkError):
    """Raised when per-unit scaling is applied twice."""


@dataclass(frozen=True)
class BusSpec:
    id: int
    bus_type: int
    base_kv: float
    v_max: float
    v_min: float


@dataclass(frozen=True)
class DeviceSpec:
    id: int
    bus: int
    dev_type: int
    qp_ratio: Optional[float] = None
    p_max: Optional[float] = None
    p_min: Optional[float] = None
    q_max: Optional[float] = None
    q_min: Optional[float] = None
    p_plus: Optional[float] = None
    p_minus: Optional[float] = None
    q_plus: Optional[float] = None
    q_minus: Optional[float] = None
    soc_max: Optional[float] = None
    soc_min: Optional[float] = None
    efficiency: Optional[float] = None

    @property
    def is_load(self):
        return self.dev_type == LOAD

    @property
    def is_slack(self):
        return self.dev_type == SLACK

    @property
    def is_generator(self):
        """Non-slack generator (classical or renewable)."""
        return self.dev_type in (CLASSICAL_GEN, RENEWABLE_GEN)

    @property
    def is_renewable(self):
        return self.dev_type == RENEWABLE_GEN

    @property
    def is_des(self):
        return self.dev_type == DES


@dataclass(frozen=True)
class BranchSpec:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float
    s_max: float
    tap: float = 1.0
    shift: float = 0.0  # degrees


@dataclass(frozen=True)
class NetworkSpec:
    base_mva: float
    buses: tuple
    devices: tuple
    branches: tuple
    per_unit: bool = False

    @property
    def n_bus(self):
        return len(self.buses)

    @property
    def n_dev(self):
        return len(self.devices)

    @property
    def slack_bus(self):
        return next(b.id for b in self.buses if b.bus_type == BUS_SLACK)

    @property
    def slack_device(self):
        return next(d.id for d in self.devices if d.is_slack)

    @property
    def load_ids(self):
        return [d.id for d in self.devices if d.is_load]

    @property
    def gen_ids(self):
        """Non-slack generators, in device order."""
        return [d.id for d in self.devices if d.is_generator]

    @property
    def renewable_ids(self):
        return [d.id for d in self.devices if d.is_renewable]

    @property
    def des_ids(self):
        return [d.id for d in self.devices if d.is_des]

    def branch_index(self, i, j):
        """Return ``(k, reversed)`` for the branch linking buses i and j."""
        for k, br in enumerate(self.branches):
            if (br.from_bus, br.to_bus) == (i, j):
                return k, False
            if (br.from_bus, br.to_bus) == (j, i):
                return k, True
        raise KeyError(f'no branch between buses {i} and {j}')


def _number(value, table, row, col, optional=False):
    if value is None:
        if optional:
            return None
        raise MalformedDocument(f'column {col} must be a number, got null', table, row)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedDocument(f'column {col} must be a number, got {value!r}', table, row)
    return float(value)


def _index(value, table, row, col):
    v = _number(value, table, row, col)
    if not math.isfinite(v) or v != int(v):
        raise MalformedDocument(f'column {col} must be an integer, got {value!r}', table, row)
    return int(v)


def _rows(doc, key, width):
    rows = doc[key]
    if not isinstance(rows, list):
        raise MalformedDocument('expected a list of rows', key)
    for r, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != width:
            got = len(row) if isinstance(row, list) else type(row).__name__
            raise MalformedDocument(f'expected a row of {width} values, got {got}', key, r)
    return rows


def network_from_dict(doc):
    """
    Build a NetworkSpec from the four-key dictionary, without validating it.

    :param doc: mapping with keys 'baseMVA', 'bus', 'device' and 'branch'.
    :return: the (unvalidated, not normalized) NetworkSpec.
    :raises MalformedDocument: on missing keys, wrong row widths or
        non-numeric cells.
    """
    if not isinstance(doc, dict):
        raise MalformedDocument('top-level value must be an object')
    for key in ('baseMVA', 'bus', 'device', 'branch'):
        if key not in doc:
            raise MalformedDocument(f'missing key {key!r}')

    base_mva = _number(doc['baseMVA'], 'baseMVA', None, 0)

    buses = []
    for r, row in enumerate(_rows(doc, 'bus', len(BUS_COLUMNS))):
        buses.append(BusSpec(_index(row[0], 'bus', r, 0), _index(row[1], 'bus', r, 1),
                             *(_number(v, 'bus', r, c) for c, v in enumerate(row[2:], 2))))

    devices = []
    for r, row in enumerate(_rows(doc, 'device', len(DEVICE_COLUMNS))):
        ints = [_index(v, 'device', r, c) for c, v in enumerate(row[:3])]
        rest = [_number(v, 'device', r, c, optional=True) for c, v in enumerate(row[3:], 3)]
        devices.append(DeviceSpec(*ints, *rest))

    branches = []
    for r, row in enumerate(_rows(doc, 'branch', len(BRANCH_COLUMNS))):
        ends = [_index(v, 'branch', r, c) for c, v in enumerate(row[:2])]
        rest = [_number(v, 'branch', r, c) for c, v in enumerate(row[2:], 2)]
        branches.append(BranchSpec(*ends, *rest))

    buses.sort(key=lambda b: b.id)
    devices.sort(key=lambda d: d.id)
    return NetworkSpec(base_mva, tuple(buses), tuple(devices), tuple(branches))


def network_to_dict(spec):
    """Inverse of :func:`network_from_dict` (integers kept as ints)."""
    return {
        'baseMVA': spec.base_mva,
        'bus': [[b.id, b.bus_type, b.base_kv, b.v_max, b.v_min] for b in spec.buses],
        'device': [[getattr(d, c) for c in DEVICE_COLUMNS] for d in spec.devices],
        'branch': [[getattr(br, c) for c in BRANCH_COLUMNS] for br in spec.branches],
    }


def parse_network(source: Union[bytes, str, IO]) -> NetworkSpec:
    """
    Parse and validate a JSON network document.

    :param source: raw bytes, a JSON string, or a readable file object.
    :return: the validated NetworkSpec, quantities in MW/MVAr/MWh as given.
    :raises MalformedDocument: if the JSON or row layout is wrong.
    :raises ValidationError: if any network invariant is violated.
    """
    if hasattr(source, 'read'):
        source = source.read()
    try:
        doc = json.loads(source)
    except (ValueError, TypeError) as e:
        raise MalformedDocument(f'invalid JSON: {e}') from None
    spec = network_from_dict(doc)
    diagnostics = validate_network(spec)
    if diagnostics:
        raise ValidationError(diagnostics)
    return spec


def load_network(path) -> NetworkSpec:
    return parse_network(Path(path).read_bytes())


def dump_network(spec) -> str:
    return json.dumps(network_to_dict(spec))


def _finite(x):
    return x is not None and math.isfinite(x)


def _check_device(d, where):
    out = []

    def need(*names):
        missing = [n for n in names if not _finite(getattr(d, n))]
        if missing:
            out.append(f'{where}: missing value for {", ".join(missing)}')
        return not missing

    def ordered(*names):
        vals = [getattr(d, n) for n in names]
        if all(v is not None for v in vals):
            for (n1, v1), (n2, v2) in zip(zip(names, vals), zip(names[1:], vals[1:])):
                if v1 > v2:
                    out.append(f'{where}: expected {n1} <= {n2}, got {v1} > {v2}')

    if d.is_load:
        if need('qp_ratio', 'p_max'):
            if d.p_max != 0:
                out.append(f'{where}: load p_max must be 0, got {d.p_max}')
        if d.p_min is not None and d.p_min > 0:
            out.append(f'{where}: load p_min must be <= 0, got {d.p_min}')
    elif d.is_generator:
        if need('p_max', 'p_min', 'q_max', 'q_min'):
            ordered('p_min', 'p_max')
            if d.p_min < 0:
                out.append(f'{where}: generator p_min must be >= 0, got {d.p_min}')
            ordered('q_min', 'q_max')
            ordered('p_plus', 'p_max')
            ordered('q_min', 'q_minus', 'q_plus', 'q_max')
    elif d.is_des:
        if need('p_max', 'p_min', 'q_max', 'q_min', 'soc_max', 'soc_min', 'efficiency'):
            if not d.p_min < 0 < d.p_max:
                out.append(f'{where}: DES needs p_min < 0 < p_max, got [{d.p_min}, {d.p_max}]')
            ordered('q_min', 'q_max')
            ordered('soc_min', 'soc_max')
            ordered('p_min', 'p_minus')
            ordered('p_plus', 'p_max')
            ordered('q_min', 'q_minus', 'q_plus', 'q_max')
            if not 0 < d.efficiency <= 1:
                out.append(f'{where}: efficiency must lie in (0, 1], got {d.efficiency}')
    return out


def validate_network(spec) -> list:
    """
    Check every network invariant.

    :return: a list of human-readable diagnostics, empty if the network is valid.
    """
    diags = []
    try:
        if not (_finite(spec.base_mva) and spec.base_mva > 0):
            diags.append(f'baseMVA: must be a positive number, got {spec.base_mva}')

        bus_ids = [b.id for b in spec.buses]
        if sorted(bus_ids) != list(range(len(bus_ids))):
            diags.append(f'bus: ids must be unique and contiguous from 0, got {bus_ids}')
        for r, b in enumerate(spec.buses):
            where = f'bus[{r}]'
            if b.bus_type not in (BUS_SLACK, BUS_PQ):
                diags.append(f'{where}: unknown bus type {b.bus_type}')
            if not (_finite(b.base_kv) and b.base_kv > 0):
                diags.append(f'{where}: base_kv must be positive, got {b.base_kv}')
            if not (_finite(b.v_min) and _finite(b.v_max)) or b.v_min > b.v_max:
                diags.append(f'{where}: expected v_min <= v_max, got [{b.v_min}, {b.v_max}]')
        slack_buses = [b.id for b in spec.buses if b.bus_type == BUS_SLACK]
        if len(slack_buses) != 1:
            diags.append(f'bus: exactly one slack bus required, found {len(slack_buses)}')

        dev_ids = [d.id for d in spec.devices]
        if sorted(dev_ids) != list(range(len(dev_ids))):
            diags.append(f'device: ids must be unique and contiguous from 0, got {dev_ids}')
        known = set(bus_ids)
        for r, d in enumerate(spec.devices):
            where = f'device[{r}]'
            if d.dev_type not in DEVICE_TYPES:
                diags.append(f'{where}: unknown device type {d.dev_type}')
                continue
            if d.bus not in known:
                diags.append(f'{where}: references unknown bus {d.bus}')
            diags.extend(_check_device(d, where))
        slack_devs = [d for d in spec.devices if d.is_slack]
        if len(slack_devs) != 1:
            diags.append(f'device: exactly one slack device required, found {len(slack_devs)}')
        elif len(slack_buses) == 1 and slack_devs[0].bus != slack_buses[0]:
            diags.append(f'device[{slack_devs[0].id}]: slack device must sit on slack bus '
                         f'{slack_buses[0]}, found bus {slack_devs[0].bus}')

        for r, br in enumerate(spec.branches):
            where = f'branch[{r}]'
            for end in (br.from_bus, br.to_bus):
                if end not in known:
                    diags.append(f'{where}: references unknown bus {end}')
            if br.from_bus == br.to_bus:
                diags.append(f'{where}: both ends on bus {br.from_bus}')
            if not (_finite(br.r) and br.r >= 0):
                diags.append(f'{where}: r must be >= 0, got {br.r}')
            if not (_finite(br.x) and br.x != 0):
                diags.append(f'{where}: x must be non-zero, got {br.x}')
            if not _finite(br.b):
                diags.append(f'{where}: b must be finite, got {br.b}')
            if not (_finite(br.s_max) and br.s_max > 0):
                diags.append(f'{where}: s_max must be positive, got {br.s_max}')
            if not (_finite(br.tap) and br.tap > 0):
                diags.append(f'{where}: tap must be positive, got {br.tap}')
            if not _finite(br.shift):
                diags.append(f'{where}: shift must be finite, got {br.shift}')
    except Exception as e:  # keep validation total on hand-built specs
        diags.append(f'network: cannot be inspected ({type(e).__name__}: {e})')
    return diags


def to_per_unit(spec: NetworkSpec) -> NetworkSpec:
    """
    Divide every MW / MVAr / MWh / MVA quantity by the base power.

    Branch impedances are already per-unit and are left untouched.

    :raises AlreadyNormalized: if ``spec`` was already converted.
    """
    if spec.per_unit:
        raise AlreadyNormalized('network is already expressed in p.u.')
    base = spec.base_mva

    def scale(dev):
        vals = {f: (None if getattr(dev, f) is None else getattr(dev, f) / base)
                for f in POWER_FIELDS}
        return dataclasses.replace(dev, **vals)

    devices = tuple(scale(d) for d in spec.devices)
    branches = tuple(dataclasses.replace(br, s_max=br.s_max / base) for br in spec.branches)
    return dataclasses.replace(spec, devices=devices, branches=branches, per_unit=True)
