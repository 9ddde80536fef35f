'''
Paired runs that differ in one switch, reported side by side with the
full-scale reference numbers.

Arms are derived from the base config by replacing a single key, so
``config_diff`` between the arms is exactly that key. When the switch only
affects linear evaluation the encoder is trained once and both arms branch
from it, which gives the same result as two full runs with the same seed.
'''
import logging
import os
from collections import OrderedDict
from dataclasses import dataclass, field

from claf import default_settings as settings
from claf import evaluate as evaluation
from claf import tasks
from claf.config import config_diff
from claf.errors import AblationError

log = logging.getLogger(__name__)

PGD_SWEEP_STEPS = (20, 40, 100)


@dataclass(frozen=True)
class Ablation:
    name: str
    key: str
    arms: tuple             # ((arm label, value for key), ...)
    shared_encoder: bool
    description: str = ''


ABLATIONS = OrderedDict((a.name, a) for a in (
    Ablation('classifier_nat_vs_adv', 'classifier_training',
             (('natural', 'natural'), ('adversarial', 'adversarial')),
             shared_encoder=False,
             description='classifier retrained on clean vs PGD examples'),
    Ablation('eval_nat_vs_adv', 'linear_eval',
             (('natural', 'natural'), ('adversarial', 'adversarial')),
             shared_encoder=True,
             description='linear evaluation on clean vs PGD examples'),
    Ablation('reinit_vs_continuous', 'classifier_reset',
             (('reinitialized', 'reinitialized'), ('continuous', 'continuous')),
             shared_encoder=False,
             description='classifier reset before every retraining or not'),
    Ablation('reuse_c', 'reuse_c_for_eval',
             (('fresh', False), ('continued', True)),
             shared_encoder=True,
             description='fresh evaluation head vs continuing classifier c'),
    Ablation('pgd_steps', 'eval_attack_steps',
             tuple(('pgd%d' % k, k) for k in PGD_SWEEP_STEPS),
             shared_encoder=True,
             description='robust accuracy under more PGD steps'),
))


@dataclass
class AblationResult:
    name: str
    reports: OrderedDict = field(default_factory=OrderedDict)
    configs: OrderedDict = field(default_factory=OrderedDict)

    def diff(self):
        '''Config keys (besides out_dir) in which the arms differ.'''
        arms = list(self.configs.values())
        keys = set()
        for other in arms[1:]:
            keys.update(config_diff(arms[0], other))
        keys.discard('out_dir')
        return sorted(keys)

    def table(self):
        reference = settings.REFERENCE_RESULTS.get(self.name, {})
        lines = ['%-14s %10s %10s %10s   %s'
                 % ('arm', 'clean', 'eps8', 'eps16', 'reference (full scale)')]
        for arm, report in self.reports.items():
            robust = [acc for _, acc in report.robust] + [None, None]
            ref = reference.get(arm)
            if ref is None:
                ref = reference.get(_steps(arm))
            lines.append('%-14s %10s %10s %10s   %s' % (
                arm, _pct(report.clean_accuracy), _pct(robust[0]),
                _pct(robust[1]), _ref(ref)))
        lines.append('switch: %s' % ', '.join(self.diff()))
        return '\n'.join(lines) + '\n'


def _steps(arm):
    return int(arm[3:]) if arm.startswith('pgd') else None


def _pct(value):
    return '-' if value is None else '%.2f' % (100.0 * value)


def _ref(ref):
    if ref is None:
        return '-'
    if isinstance(ref, tuple):
        return ' / '.join('%.1f' % v for v in ref)
    return '%.2f' % ref


def arm_configs(name, config):
    try:
        ablation = ABLATIONS[name]
    except KeyError:
        raise AblationError('unknown ablation %r (choose from %s)'
                            % (name, ', '.join(ABLATIONS)))
    return ablation, OrderedDict(
        (label, config.replace(**{
            ablation.key: value,
            'out_dir': os.path.join(config.out_dir, name, label)}))
        for label, value in ablation.arms)


def run_ablation(name, config, datasets=None, progress=False):
    '''Runs every arm of ablation ``name`` with the seed of ``config``.'''
    ablation, configs = arm_configs(name, config)
    log.info('Ablation %s: %s (%s)', name, ablation.description,
             ', '.join(configs))
    result = AblationResult(name, configs=configs)
    if not ablation.shared_encoder:
        for label, arm_config in configs.items():
            log.info('Ablation %s arm %s: full run', name, label)
            metrics = tasks.run(arm_config, datasets=datasets, progress=progress)
            result.reports[label] = metrics.summary
        return _finish(result, config)

    train_set, test_set = datasets or tasks.load_datasets(config)
    state = tasks.train_encoder(config, train_set, progress=progress)
    if name == 'pgd_steps':
        head = tasks.stage3_linear_eval(state.f, train_set, config, c=state.c,
                                        progress=progress).head
        sweep = evaluation.pgd_step_sweep(
            state.f, head, test_set, config.eval_attacks[0],
            steps=PGD_SWEEP_STEPS, seed=config.seed,
            batch_size=config.eval_batch_size, progress=progress)
        for label, k in ablation.arms:
            result.reports[label] = sweep[k]
        return _finish(result, config)

    for label, arm_config in configs.items():
        log.info('Ablation %s arm %s: linear evaluation on the shared encoder',
                 name, label)
        evaluated = tasks.stage3_linear_eval(state.f, train_set, arm_config,
                                             c=state.c, test_set=test_set,
                                             progress=progress)
        result.reports[label] = evaluated.report
    return _finish(result, config)


def _finish(result, config):
    directory = os.path.join(config.out_dir, result.name)
    if not os.path.exists(directory):
        os.makedirs(directory)
    for label, report in result.reports.items():
        with open(os.path.join(directory, '%s.report.txt' % label), 'w',
                  encoding='utf-8') as f:
            f.write(report.to_text())
    table = result.table()
    with open(os.path.join(directory, 'comparison.txt'), 'w',
              encoding='utf-8') as f:
        f.write(table)
    log.info('Ablation %s:\n%s', result.name, table)
    return result
