import os

import mock
import pytest

from claf import ablations
from claf import tasks
from claf.attack import AttackConfig
from claf.errors import AblationError
from claf.evaluate import EvalReport


def _report(clean=0.5):
    return EvalReport(clean, ((AttackConfig(epsilon=8 / 255), 0.25),
                              (AttackConfig(epsilon=16 / 255), 0.125)),
                      samples=8)


class TestArmConfigs(object):

    def test_unknown_ablation(self, tiny_config):
        with pytest.raises(AblationError):
            ablations.arm_configs('dropout', tiny_config)

    @pytest.mark.parametrize('name', list(ablations.ABLATIONS))
    def test_arms_differ_in_one_key(self, name, tiny_config):
        ablation, configs = ablations.arm_configs(name, tiny_config)
        result = ablations.AblationResult(name, configs=configs)
        assert result.diff() == [ablation.key]
        for label, config in configs.items():
            assert config.out_dir == os.path.join(tiny_config.out_dir, name,
                                                  label)
            assert config.seed == tiny_config.seed


class TestRunAblation(object):

    def test_full_runs(self, tiny_config):
        metrics = tasks.RunMetrics([], _report())
        with mock.patch.object(tasks, 'run', return_value=metrics) as run:
            result = ablations.run_ablation('classifier_nat_vs_adv',
                                            tiny_config)
        assert run.call_count == 2
        trained = [call[0][0].classifier_training for call in run.call_args_list]
        assert trained == ['natural', 'adversarial']
        assert list(result.reports) == ['natural', 'adversarial']
        directory = os.path.join(tiny_config.out_dir, 'classifier_nat_vs_adv')
        assert sorted(os.listdir(directory)) == [
            'adversarial.report.txt', 'comparison.txt', 'natural.report.txt']

    def test_shared_encoder_matches_full_run(self, tiny_config, tiny_datasets):
        result = ablations.run_ablation('eval_nat_vs_adv', tiny_config,
                                        datasets=tiny_datasets)
        _, configs = ablations.arm_configs('eval_nat_vs_adv', tiny_config)
        full = tasks.run(configs['adversarial'], datasets=tiny_datasets)
        shared = result.reports['adversarial']
        assert shared.clean_accuracy == full.summary.clean_accuracy
        assert [acc for _, acc in shared.robust] == \
            [acc for _, acc in full.summary.robust]

    def test_pgd_steps(self, tiny_config, tiny_datasets):
        result = ablations.run_ablation('pgd_steps', tiny_config,
                                        datasets=tiny_datasets)
        assert list(result.reports) == ['pgd20', 'pgd40', 'pgd100']
        [(cfg, _)] = result.reports['pgd100'].robust
        assert cfg.k == 100
        assert '60.03' in result.table()


class TestTable(object):

    def test_shows_reference_numbers(self, tiny_config):
        _, configs = ablations.arm_configs('reuse_c', tiny_config)
        result = ablations.AblationResult(
            'reuse_c', reports={'fresh': _report(0.5),
                                'continued': _report(0.75)},
            configs=configs)
        table = result.table()
        assert 'fresh' in table and '50.00' in table and '75.00' in table
        assert '92.4 / 60.9 / 48.3' in table
        assert table.rstrip().endswith('switch: reuse_c_for_eval')
