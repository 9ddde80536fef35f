import os

import pytest

from claf import model as models
from claf import tasks
from claf.config import RunConfig
from claf.tests.fake_cifar import write_fake_cifar


def tiny_run_config(**changes):
    '''A run small enough for unit tests: tiny encoder, a few dozen images.'''
    config = RunConfig(
        encoder='tiny', projection_hidden=8, projection_dim=4,
        classes=(0, 1), train_limit=16, test_limit=8,
        stage1_epochs=1, stage2_epochs=2, eval_epochs=2,
        batch_size=8, eval_batch_size=8,
        classifier_epochs=1, classifier_lr=0.01, eval_lr=0.01,
        classifier_attack_steps=2, encoder_attack_steps=2,
        eval_attack_steps=2, eval_train_attack_steps=2,
        checkpoint_every=1, seed=0)
    return config.replace(**changes) if changes else config


@pytest.fixture(scope='session')
def cifar_root(tmp_path_factory):
    return write_fake_cifar(str(tmp_path_factory.mktemp('cifar')))


@pytest.fixture
def tiny_config(cifar_root, tmp_path):
    return tiny_run_config(data_root=cifar_root,
                           out_dir=os.path.join(str(tmp_path), 'run'))


@pytest.fixture(scope='session')
def tiny_datasets(cifar_root):
    return tasks.load_datasets(tiny_run_config(data_root=cifar_root))


@pytest.fixture
def tiny_networks():
    '''(f, g, c) for the tiny encoder and two classes.'''
    arch = models.EncoderArch.named('tiny')
    f = models.init_params(arch, seed=0)
    g = models.init_projection(arch.dim, 8, 4, seed=0)
    c = models.init_classifier(arch.dim, 2, seed=0, scope='c')
    return f, g, c
