'''
Run configuration.

Every RunConfig field is a key of the flat configuration file format:
UTF-8 ``key = value`` lines, ``#`` starting a comment, blank lines ignored.
Numbers may be written as fractions (``8/255``); lists are comma separated.
Unknown or repeated keys are errors.
'''
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction

from claf import default_settings as settings
from claf.attack import AttackConfig
from claf.data import AugPolicy
from claf.errors import ConfigError

log = logging.getLogger(__name__)

CHOICES = {
    'encoder': tuple(sorted(settings.ENCODERS)),
    'classifier_training': ('natural', 'adversarial'),
    'classifier_reset': ('continuous', 'reinitialized'),
    'linear_eval': ('natural', 'adversarial'),
    'loss_reduction': ('sum',),
}

_TRUE = ('true', 'yes', 'on', '1')
_FALSE = ('false', 'no', 'off', '0')


def _ints(default=()):
    return field(default=default, metadata={'item': int})


def _floats(default=()):
    return field(default=default, metadata={'item': float})


@dataclass(frozen=True)
class RunConfig:
    # data
    data_root: str = 'data/cifar-10-batches-bin'
    out_dir: str = 'run'
    classes: tuple = _ints((0, 1))
    train_limit: int = 2000
    test_limit: int = 500
    # networks
    encoder: str = 'desk'
    projection_hidden: int = settings.PROJECTION_DIMS['desk'][0]
    projection_dim: int = settings.PROJECTION_DIMS['desk'][1]
    # schedule
    stage1_epochs: int = 20
    stage2_epochs: int = 10
    eval_epochs: int = 30
    batch_size: int = 128
    eval_batch_size: int = 250
    tau: float = 0.1
    loss_reduction: str = 'sum'
    # encoder + projection optimizer (SGD, cosine over stage 1 + stage 2)
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    # classifier optimizer (Adam), shared by retraining and linear evaluation
    classifier_lr: float = 0.001
    classifier_beta1: float = 0.9
    classifier_beta2: float = 0.999
    classifier_eps: float = 1e-8
    classifier_epochs: int = 5
    classifier_fraction: float = 1.0
    eval_lr: float = 0.001
    # attacks
    classifier_attack_eps: float = 8 / 255
    classifier_attack_eta: float = 2 / 255
    classifier_attack_steps: int = 5
    classifier_attack_random_start: bool = True
    classifier_attack_restarts: int = 1
    encoder_attack_eps: float = 8 / 255
    encoder_attack_eta: float = 2 / 255
    encoder_attack_steps: int = 5
    encoder_attack_random_start: bool = True
    encoder_attack_restarts: int = 1
    eval_attack_eps: tuple = _floats((8 / 255, 16 / 255))
    eval_attack_eta: float = 2 / 255
    eval_attack_steps: int = 10
    eval_attack_random_start: bool = True
    eval_attack_restarts: int = 1
    eval_train_attack_eps: float = 8 / 255
    eval_train_attack_eta: float = 2 / 255
    eval_train_attack_steps: int = 10
    # augmentation
    aug_crop: bool = True
    aug_crop_padding: int = 4
    aug_flip: bool = True
    aug_flip_prob: float = 0.5
    aug_jitter: bool = True
    aug_jitter_prob: float = 0.8
    aug_brightness: float = 0.4
    aug_contrast: float = 0.4
    aug_saturation: float = 0.4
    aug_grayscale: bool = True
    aug_grayscale_prob: float = 0.2
    # ablation switches
    classifier_training: str = 'adversarial'
    classifier_reset: str = 'continuous'
    linear_eval: str = 'natural'
    reuse_c_for_eval: bool = False
    baseline: bool = False
    # bookkeeping
    seed: int = 0
    checkpoint_every: int = 1
    accuracy_every: int = 0

    def __post_init__(self):
        for name, allowed in CHOICES.items():
            if getattr(self, name) not in allowed:
                raise ConfigError('%s must be one of %s, got %r'
                                  % (name, ', '.join(allowed), getattr(self, name)))
        for name in ('stage1_epochs', 'stage2_epochs', 'eval_epochs',
                     'classifier_epochs', 'train_limit', 'test_limit',
                     'checkpoint_every', 'accuracy_every'):
            if getattr(self, name) < 0:
                raise ConfigError('%s must be >= 0' % name)
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError('batch sizes must be >= 1')
        if self.seed < 0:
            raise ConfigError('seed must be >= 0, got %d' % self.seed)
        if self.tau <= 0:
            raise ConfigError('tau must be positive')
        if not 0.0 < self.classifier_fraction <= 1.0:
            raise ConfigError('classifier_fraction must lie in (0, 1]')
        if len(self.eval_attack_eps) < 1:
            raise ConfigError('eval_attack_eps needs at least one value')
        # building these validates the attack and augmentation settings
        self.classifier_attack, self.encoder_attack, self.eval_attacks
        self.eval_train_attack, self.aug_policy

    @property
    def classifier_attack(self):
        return self._attack('classifier_attack')

    @property
    def encoder_attack(self):
        return self._attack('encoder_attack')

    @property
    def eval_attacks(self):
        return tuple(AttackConfig(epsilon=eps, eta=self.eval_attack_eta,
                                  k=self.eval_attack_steps,
                                  random_start=self.eval_attack_random_start,
                                  restarts=self.eval_attack_restarts)
                     for eps in self.eval_attack_eps)

    @property
    def eval_train_attack(self):
        return AttackConfig(epsilon=self.eval_train_attack_eps,
                            eta=self.eval_train_attack_eta,
                            k=self.eval_train_attack_steps,
                            random_start=self.eval_attack_random_start)

    def _attack(self, prefix):
        return AttackConfig(epsilon=getattr(self, prefix + '_eps'),
                            eta=getattr(self, prefix + '_eta'),
                            k=getattr(self, prefix + '_steps'),
                            random_start=getattr(self, prefix + '_random_start'),
                            restarts=getattr(self, prefix + '_restarts'))

    @property
    def aug_policy(self):
        return AugPolicy(crop_padding=self.aug_crop_padding,
                         flip_prob=self.aug_flip_prob,
                         jitter_prob=self.aug_jitter_prob,
                         brightness=self.aug_brightness,
                         contrast=self.aug_contrast,
                         saturation=self.aug_saturation,
                         grayscale_prob=self.aug_grayscale_prob,
                         crop=self.aug_crop, flip=self.aug_flip,
                         jitter=self.aug_jitter, grayscale=self.aug_grayscale)

    @property
    def encoder_epochs(self):
        return self.stage1_epochs + self.stage2_epochs

    def replace(self, **changes):
        unknown = set(changes) - set(f.name for f in fields(self))
        if unknown:
            raise ConfigError('unknown config keys: %s' % ', '.join(sorted(unknown)))
        return replace(self, **changes)

    def as_dict(self):
        return asdict(self)

    def to_text(self):
        return ''.join('%s = %s\n' % (f.name, format_value(getattr(self, f.name)))
                       for f in fields(self))


def format_value(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return '%.17g' % value
    if isinstance(value, tuple):
        return ', '.join(format_value(v) for v in value)
    return str(value)


def _number(text, kind):
    try:
        value = Fraction(text.strip())
    except (ValueError, ZeroDivisionError):
        raise ValueError('not a number: %r' % text)
    if kind is int:
        if value.denominator != 1:
            raise ValueError('not an integer: %r' % text)
        return int(value)
    return float(value)


def _convert(spec, raw):
    default = spec.default
    if isinstance(default, bool):
        lowered = raw.strip().lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ValueError('not a boolean: %r' % raw)
    if isinstance(default, int):
        return _number(raw, int)
    if isinstance(default, float):
        return _number(raw, float)
    if isinstance(default, tuple):
        item = spec.metadata.get('item', str)
        parts = [p for p in (s.strip() for s in raw.split(',')) if p]
        return tuple(_number(p, item) for p in parts)
    return raw.strip()


def parse_config_text(text, source='<config>'):
    '''Returns the {key: raw string} mapping of a flat config text.'''
    known = dict((f.name, f) for f in fields(RunConfig))
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError('%s:%d: expected "key = value", got %r'
                              % (source, lineno, line))
        key, raw = (part.strip() for part in line.split('=', 1))
        if key not in known:
            raise ConfigError('%s:%d: unknown key %r' % (source, lineno, key))
        if key in values:
            raise ConfigError('%s:%d: key %r given twice' % (source, lineno, key))
        try:
            values[key] = _convert(known[key], raw)
        except ValueError as e:
            raise ConfigError('%s:%d: bad value for %s: %s'
                              % (source, lineno, key, e))
    return values


def config_from_text(text, source='<config>', base=None):
    base = base or RunConfig()
    return base.replace(**parse_config_text(text, source))


def load_config(path, **overrides):
    if not os.path.exists(path):
        raise ConfigError('config file not found: %s' % path)
    with open(path, encoding='utf-8') as f:
        config = config_from_text(f.read(), source=path)
    overrides = dict((k, v) for k, v in overrides.items() if v is not None)
    if overrides:
        config = config.replace(**overrides)
    log.info('Loaded config %s (seed=%d)', path, config.seed)
    return config


def config_diff(a, b):
    '''Keys whose values differ, as {key: (value in a, value in b)}.'''
    return dict((f.name, (getattr(a, f.name), getattr(b, f.name)))
                for f in fields(RunConfig)
                if getattr(a, f.name) != getattr(b, f.name))


PRESETS = {
    # classifier retraining sees 2 of the 16 batches, twice per stage-2 epoch
    'desk': RunConfig(classifier_epochs=2, classifier_fraction=0.125),
    'full': RunConfig(classes=tuple(range(10)), train_limit=0, test_limit=0,
                      encoder='resnet18',
                      projection_hidden=settings.PROJECTION_DIMS['resnet18'][0],
                      projection_dim=settings.PROJECTION_DIMS['resnet18'][1],
                      stage1_epochs=60,
                      stage2_epochs=140, eval_epochs=100, batch_size=256),
}
