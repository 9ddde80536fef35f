import logging
import os

import click
import numpy as np

from claf import config as configuration
from claf import data as dataio
from claf import evaluate as evaluation
from claf import gradcheck as gradchecks
from claf import tasks
from claf.ablations import run_ablation
from claf.checkpoint import load_checkpoint
from claf.errors import CheckpointError, ConfigError, GradientError

log = logging.getLogger(__name__)


def load_run_config(config_path=None, seed=None, data_root=None, out_dir=None,
                    base=None):
    '''The file at ``config_path`` (or ``base``, else the desk preset) with
    command-line overrides applied.'''
    overrides = dict(seed=seed, data_root=data_root, out_dir=out_dir)
    if config_path:
        return configuration.load_config(config_path, **overrides)
    config = base or configuration.PRESETS['desk']
    overrides = dict((k, v) for k, v in overrides.items() if v is not None)
    return config.replace(**overrides) if overrides else config


def config_from_checkpoint(checkpoint):
    '''The RunConfig echoed into a checkpoint's metadata.'''
    echo = checkpoint.metadata.get('config')
    if echo is None:
        raise CheckpointError('checkpoint carries no config echo')
    values = dict((k, tuple(v) if isinstance(v, list) else v)
                  for k, v in echo.items())
    try:
        return configuration.RunConfig().replace(**values)
    except (ConfigError, TypeError) as e:
        raise CheckpointError('checkpoint config echo is unusable: %s' % e)


def parse_int_list(text, what):
    try:
        values = tuple(int(v) for v in text.split(',') if v.strip())
    except ValueError:
        raise ConfigError('%s must be a comma separated list of integers, '
                          'got %r' % (what, text))
    if not values:
        raise ConfigError('%s needs at least one value' % what)
    return values


def _load_for_eval(checkpoint_path, config_path, seed, data_root):
    checkpoint = load_checkpoint(checkpoint_path)
    base = None if config_path else config_from_checkpoint(checkpoint)
    config = load_run_config(config_path, seed=seed, data_root=data_root,
                             base=base)
    f = checkpoint.network('f')
    head = checkpoint.network('h') or checkpoint.network('c')
    if f is None or head is None:
        raise CheckpointError('%s holds no encoder and classifier'
                              % checkpoint_path)
    classes = config.classes or None
    test_set = dataio.load_cifar10(config.data_root, 'test', classes,
                                   config.test_limit or None)
    return config, f, head, test_set


def train(config, resume_from=None, progress=True):
    metrics = tasks.run(config, resume_from=resume_from, progress=progress)
    print(metrics.summary.to_text(), end='')
    print('Wrote %s' % os.path.join(config.out_dir, 'metrics.csv'))


def evaluate(checkpoint_path, config_path=None, seed=None, data_root=None,
             eps=None, steps=None, progress=True):
    '''Prints the EvalReport of a checkpoint, or one per PGD step count.'''
    config, f, head, test_set = _load_for_eval(checkpoint_path, config_path,
                                               seed, data_root)
    if eps:
        config = config.replace(eval_attack_eps=tuple(e / 255.0 for e in eps))
    if steps:
        reports = evaluation.pgd_step_sweep(
            f, head, test_set, config.eval_attacks[0], steps=steps,
            seed=config.seed, batch_size=config.eval_batch_size,
            progress=progress)
        for report in reports.values():
            print(report.to_text())
        return reports
    report = evaluation.evaluate_model(
        f, head, test_set, config.eval_attacks, seed=config.seed,
        batch_size=config.eval_batch_size, label=checkpoint_path,
        progress=progress)
    print(report.to_text(), end='')
    return report


def attack(checkpoint_path, out_dir, config_path=None, seed=None,
           data_root=None, eps=8, limit=None, progress=True):
    '''
    Writes PGD test images as ``adversarial.bin`` next to ``clean.bin``,
    both in CIFAR-10 binary format with the original CIFAR-10 labels.
    '''
    config, f, head, test_set = _load_for_eval(checkpoint_path, config_path,
                                               seed, data_root)
    if limit:
        test_set = test_set.subset(np.arange(min(limit, len(test_set))))
    cfg = config.replace(eval_attack_eps=(eps / 255.0,)).eval_attacks[0]
    adv = evaluation.adversarial_images(f, head, test_set, cfg, config.seed,
                                        config.eval_batch_size,
                                        progress=progress)
    labels = np.asarray(test_set.classes)[test_set.labels]
    if not os.path.exists(out_dir):
        os.makedirs(out_dir)
    paths = []
    for name, pixels in (('clean.bin', test_set.images), ('adversarial.bin', adv)):
        path = os.path.join(out_dir, name)
        with open(path, 'wb') as fh:
            fh.write(dataio.serialize_cifar10(pixels, labels))
        paths.append(path)
    fooled = np.mean(evaluation.predict(f, head, adv, config.eval_batch_size)
                     != test_set.labels)
    log.info('Wrote %d adversarial images (%s), fooled %.2f%%',
             len(labels), cfg.describe(), 100.0 * fooled)
    print('Wrote %s' % ', '.join(paths))
    return paths


def ablate(name, config, progress=True):
    result = run_ablation(name, config, progress=progress)
    print(result.table(), end='')
    return result


def gradcheck(seed=0, samples=20, tolerance=gradchecks.DEFAULT_TOLERANCE):
    reports = gradchecks.gradient_suite(seed=seed, samples=samples)
    failed = []
    print('{:<34}{:>14}{:>14}'.format('check', 'max rel err', 'max abs err'))
    for name, report in reports.items():
        ok = report.passed(tolerance)
        print('{:<34}{:>14.3e}{:>14.3e}  {}'.format(
            name, report.worst_rel_error, report.worst_abs_error,
            'ok' if ok else 'FAIL'))
        if not ok:
            failed.append(name)
    print('relative errors are divided by max(|analytic|, |numeric|, %g), so '
          'gradients below %g are held to %g absolute'
          % (gradchecks.REL_FLOOR, gradchecks.REL_FLOOR,
             tolerance * gradchecks.REL_FLOOR))
    if failed:
        raise GradientError('gradient check failed (tolerance %g): %s'
                            % (tolerance, ', '.join(failed)))
    click.secho('All %d gradient checks passed' % len(reports), fg='green')
    return reports
