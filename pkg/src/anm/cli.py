"""
Command line entry point: ``anm validate | rollout | evaluate | mpc-table``.

Exit codes: 0 on success, 2 when an input fails validation, 3 on any
runtime error.
"""

import json
import sys

import click

from . import harness
from .network import NetworkError, load_network

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


class InvalidInput(Exception):
    pass


def _int_list(text):
    try:
        return [int(s) for s in text.split(',') if s.strip()]
    except ValueError:
        raise InvalidInput(f'expected comma-separated integers, got {text!r}') from None


def _float_list(text):
    try:
        return [float(s) for s in text.split(',') if s.strip()]
    except ValueError:
        raise InvalidInput(f'expected comma-separated numbers, got {text!r}') from None


@click.group()
def cli():
    """Active network management simulator and MPC baseline."""


@cli.command()
@click.argument('path', type=click.Path(exists=True, dir_okay=False))
def validate(path):
    """Parse and validate a network file."""
    spec = load_network(path)
    click.echo(f'ok: {len(spec.buses)} buses, {len(spec.devices)} devices, '
               f'{len(spec.branches)} branches, base {spec.base_mva:g} MVA')


@cli.command()
@click.option('--env', 'env_id', default='anm6-easy', show_default=True)
@click.option('--policy', type=click.Choice(harness.POLICIES), default='random', show_default=True)
@click.option('--N', 'N', type=int, default=16, show_default=True, help='MPC horizon.')
@click.option('--beta', type=float, default=1.0, show_default=True, help='MPC safety margin.')
@click.option('--lamb', type=float, default=None, help='Penalty weight (environment default if omitted).')
@click.option('--T', 'T', type=int, default=3000, show_default=True)
@click.option('--seeds', default='0', show_default=True, help='Comma-separated seeds.')
@click.option('--out', type=click.Path(dir_okay=False), default=None, help='JSON-lines trace file.')
def rollout(env_id, policy, N, beta, lamb, T, seeds, out):
    """Run one rollout per seed and print its discounted return."""
    cfg = harness.EvalConfig(env=env_id, policy=policy, N=N, beta=beta, lamb=lamb,
                             rollouts=1, T=T, seeds=_int_list(seeds))
    env = harness.make_env(cfg.env, **harness._env_kwargs(cfg))
    pol = harness.make_policy(cfg.policy, env, cfg.N, cfg.beta, cfg.lamb)
    trace = open(out, 'w') if out else None
    try:
        for s in cfg.seeds:
            rewards = harness.run_rollout(env, pol, cfg.T, s, trace=trace)
            ret = harness.discounted_return(rewards, env.gamma)
            click.echo(f'seed {s}: steps {len(rewards)} return {ret:.6f}')
    finally:
        if trace is not None:
            trace.close()


@cli.command()
@click.option('--config', 'config_path', required=True, type=click.Path(exists=True, dir_okay=False))
def evaluate(config_path):
    """Evaluate a policy as described by a JSON config file."""
    with open(config_path) as f:
        try:
            raw = json.load(f)
        except ValueError as e:
            raise InvalidInput(f'invalid JSON config: {e}') from None
    if not isinstance(raw, dict):
        raise InvalidInput('config must be a JSON object')
    try:
        cfg = harness.EvalConfig.from_dict(raw)
    except (TypeError, ValueError) as e:
        raise InvalidInput(str(e)) from None
    rep = harness.evaluate(cfg)
    click.echo(f'mean {rep.mean:.4f} std {rep.std:.4f} '
               f'truncation_bound {rep.truncation_bound:.3e} wall_clock {rep.wall_clock:.1f}s')


@cli.command('mpc-table')
@click.option('--mode', type=click.Choice(['constant', 'perfect']), required=True)
@click.option('--out', type=click.Path(dir_okay=False), required=True)
@click.option('--Ns', 'Ns', default='8,16,32', show_default=True)
@click.option('--betas', default='0.92,0.94,0.96,0.98,1.0', show_default=True)
@click.option('--seeds', default='0,1,2,3,4', show_default=True)
@click.option('--rollouts', type=int, default=5, show_default=True)
@click.option('--T', 'T', type=int, default=3000, show_default=True)
@click.option('--lamb', type=float, default=None, help='Penalty weight (environment default if omitted).')
def mpc_table(mode, out, Ns, betas, seeds, rollouts, T, lamb):
    """Evaluate the MPC policy on an (N, beta) grid and write a CSV."""
    Ns, betas, seeds = _int_list(Ns), _float_list(betas), _int_list(seeds)
    try:
        harness.EvalConfig(rollouts=rollouts, T=T, seeds=seeds)
    except ValueError as e:
        raise InvalidInput(str(e)) from None

    def progress(N, beta, rep):
        click.echo(f'N={N} beta={beta:g}: mean {rep.mean:.2f} std {rep.std:.2f}', err=True)

    harness.mpc_table(mode, Ns, betas, rollouts, seeds, T, lamb, out, progress)


def main(argv=None):
    try:
        cli.main(args=argv, prog_name='anm', standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.exceptions.Abort:
        click.echo('aborted', err=True)
        return EXIT_RUNTIME
    except click.ClickException as e:
        e.show()
        return EXIT_INVALID
    except (NetworkError, InvalidInput) as e:
        click.echo(f'invalid input: {e}', err=True)
        return EXIT_INVALID
    except ValueError as e:
        # harness-level configuration errors (unknown env, T < 1, duplicate seeds)
        click.echo(f'invalid input: {e}', err=True)
        return EXIT_INVALID
    except Exception as e:
        click.echo(f'error: {type(e).__name__}: {e}', err=True)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
