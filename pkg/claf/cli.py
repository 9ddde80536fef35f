import logging
import os
import sys

import click

from claf import utils
from claf.ablations import ABLATIONS
from claf.errors import ClafError

LOG_FORMAT = '%(asctime)s %(levelname)-5.5s [%(name)s] %(message)s'


def _config_options(f):
    f = click.option('--config', 'config_path', type=click.Path(dir_okay=False),
                     help='Flat key = value configuration file')(f)
    f = click.option('--seed', type=int, help='Overrides the config seed')(f)
    f = click.option('--data-root', help='Directory holding the CIFAR-10 '
                     'binary batches')(f)
    return f


@click.group()
@click.option('-v', '--verbose', is_flag=True, help='Log at DEBUG level')
@click.option('--no-progress', is_flag=True, help='Hide progress bars')
@click.pass_context
def claf(ctx, verbose, no_progress):
    logging.basicConfig(format=LOG_FORMAT, level=logging.INFO)
    logging.getLogger('claf').setLevel(logging.DEBUG if verbose
                                       else logging.INFO)
    ctx.obj = {'progress': not no_progress}


@claf.command()
@_config_options
@click.option('--out-dir', help='Where checkpoints, metrics and reports go')
@click.option('--checkpoint', 'resume_from', type=click.Path(dir_okay=False),
              help='Resume from a stage 1 or stage 2 checkpoint')
@click.option('--baseline', is_flag=True,
              help='Stage 1 only for the whole encoder horizon')
@click.pass_obj
def train(obj, config_path, seed, data_root, out_dir, resume_from, baseline):
    config = utils.load_run_config(config_path, seed, data_root, out_dir)
    if baseline:
        config = config.replace(baseline=True)
    utils.train(config, resume_from=resume_from, progress=obj['progress'])


@claf.command(name='eval')
@_config_options
@click.option('--checkpoint', 'checkpoint_path', required=True,
              type=click.Path(dir_okay=False))
@click.option('--eps', help='Attack budgets in 255ths, e.g. 8 or 8,16')
@click.option('--steps', help='PGD step counts to sweep, e.g. 20,40,100')
@click.pass_obj
def evaluate(obj, config_path, seed, data_root, checkpoint_path, eps, steps):
    utils.evaluate(
        checkpoint_path, config_path, seed, data_root,
        eps=utils.parse_int_list(eps, '--eps') if eps else None,
        steps=utils.parse_int_list(steps, '--steps') if steps else None,
        progress=obj['progress'])


@claf.command()
@_config_options
@click.option('--checkpoint', 'checkpoint_path', required=True,
              type=click.Path(dir_okay=False))
@click.option('--out-dir', required=True, help='Where the .bin files go')
@click.option('--eps', type=int, default=8, show_default=True,
              help='Attack budget in 255ths')
@click.option('--limit', type=int, help='Attack only the first N test images')
@click.pass_obj
def attack(obj, config_path, seed, data_root, checkpoint_path, out_dir, eps,
           limit):
    utils.attack(checkpoint_path, out_dir, config_path, seed, data_root,
                 eps=eps, limit=limit, progress=obj['progress'])


@claf.command()
@click.argument('name', type=click.Choice(list(ABLATIONS)))
@_config_options
@click.option('--out-dir', help='Root directory for the arms')
@click.pass_obj
def ablate(obj, name, config_path, seed, data_root, out_dir):
    config = utils.load_run_config(config_path, seed, data_root, out_dir)
    utils.ablate(name, config, progress=obj['progress'])


@claf.command()
@click.option('--seed', type=click.IntRange(min=0), default=0,
              show_default=True)
@click.option('--samples', type=int, default=20, show_default=True,
              help='Coordinates checked per input')
def gradcheck(seed, samples):
    utils.gradcheck(seed=seed, samples=samples)


def main(argv=None):
    '''Runs the command line and returns the exit code.'''
    try:
        rv = claf.main(args=argv, prog_name='claf', standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        click.echo('Aborted!', err=True)
        return 1
    except ClafError as e:
        if os.environ.get('DEBUG'):
            raise
        click.echo('Error: %s' % e, err=True)
        return 1
    return rv if isinstance(rv, int) else 0


if __name__ == '__main__':
    sys.exit(main())
