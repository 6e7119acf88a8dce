"""Active network management environments, an AC power-flow core and an MPC baseline."""

from .network import NetworkSpec, load_network, parse_network, validate_network, to_per_unit
from .powerflow import build_admittance, solve_power_flow
from .env import ANMEnv, GridState, ObservationSpec, StepResult
from .anm6 import ANM6Easy, build_anm6_network, DailySeries

__all__ = ['NetworkSpec', 'load_network', 'parse_network', 'validate_network', 'to_per_unit',
           'build_admittance', 'solve_power_flow', 'ANMEnv', 'GridState', 'ObservationSpec',
           'StepResult', 'ANM6Easy', 'build_anm6_network', 'DailySeries']
