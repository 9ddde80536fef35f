'''
The three-stage training pipeline.

Stage 1 trains encoder f and projection head g with the supervised
contrastive loss on two augmented views per sample. Stage 2 starts every
epoch by retraining the linear classifier c on adversarial examples of the
frozen encoder, then updates f and g on three views per sample: the two
augmentations plus a PGD example crafted against c(f(.)) from the clean
image. Stage 3 trains a linear head on the frozen encoder and measures clean
and robust accuracy.

Every random draw comes from a stream keyed by (seed, purpose, epoch, index),
so an epoch replays identically whether or not the run was resumed.
'''
import logging
import os
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace

from claf import attack as attacks
from claf import data as dataio
from claf import evaluate as evaluation
from claf import loss as losses
from claf import model as models
from claf import tensor as T
from claf.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from claf.errors import CheckpointError, ConfigError
from claf.lib import (add_progress_bar, file_hash, metrics_csv,
                      sample_streams, stream)
from claf.optim import SGD, Adam, cosine_lr
from claf.running_stats import RunningMean, StatsCount

log = logging.getLogger(__name__)

STAGE_SCL, STAGE_CLAF, STAGE_EVAL = 1, 2, 3


@dataclass(frozen=True)
class MetricRecord:
    stage: int
    epoch: int
    loss: float
    lr: float
    clean_acc: float = None
    robust_acc_eps8: float = None
    robust_acc_eps16: float = None


@dataclass
class RunMetrics:
    records: list = field(default_factory=list)
    summary: object = None

    def to_csv(self):
        return metrics_csv(self.records)


@dataclass
class TrainingState:
    '''Everything needed to continue a run after the last finished epoch.'''
    config: object
    f: object
    g: object
    c: object
    sgd: SGD
    adam: Adam = None
    stage: int = STAGE_SCL
    epoch: int = 0          # finished epochs within ``stage``
    records: list = field(default_factory=list)

    def checkpoint(self, head=None):
        optimizer_state = OrderedDict(('sgd/' + k, v)
                                      for k, v in self.sgd.state().items())
        if self.adam is not None:
            optimizer_state.update(('adam/' + k, v)
                                   for k, v in self.adam.state().items())
        metadata = {
            'stage': self.stage,
            'epoch': self.epoch,
            'seed': self.config.seed,
            'config': self.config.as_dict(),
            'records': [asdict(r) for r in self.records],
            'adam_t': None if self.adam is None else self.adam.t,
        }
        return Checkpoint.from_networks(
            OrderedDict([('f', self.f), ('g', self.g), ('c', self.c),
                         ('h', head)]),
            optimizer_state, metadata)

    @classmethod
    def from_checkpoint(cls, checkpoint, config):
        meta = checkpoint.metadata
        if meta.get('stage') not in (STAGE_SCL, STAGE_CLAF):
            raise CheckpointError('can only resume from a stage 1 or stage 2 '
                                  'checkpoint, got stage %r' % meta.get('stage'))
        if meta.get('seed') != config.seed:
            raise ConfigError('checkpoint seed %r differs from config seed %r'
                              % (meta.get('seed'), config.seed))
        optimizer = checkpoint.group('opt')
        sgd = SGD(config.momentum, config.weight_decay, state=OrderedDict(
            (k[4:], v) for k, v in optimizer.items() if k.startswith('sgd/')))
        adam = None
        if meta.get('adam_t') is not None:
            adam = _new_adam(config, state=dict(
                (k[5:], v) for k, v in optimizer.items() if k.startswith('adam/')),
                t=meta['adam_t'])
        return cls(config=config, f=checkpoint.network('f'),
                   g=checkpoint.network('g'), c=checkpoint.network('c'),
                   sgd=sgd, adam=adam, stage=meta['stage'], epoch=meta['epoch'],
                   records=[MetricRecord(**r) for r in meta.get('records', [])])


def _new_adam(config, state=None, t=0):
    return Adam(betas=(config.classifier_beta1, config.classifier_beta2),
                eps=config.classifier_eps, state=state, t=t)


def init_state(config, num_classes):
    arch = models.EncoderArch.named(config.encoder)
    f = models.init_params(arch, config.seed)
    g = models.init_projection(arch.dim, config.projection_hidden,
                               config.projection_dim, config.seed)
    c = models.init_classifier(arch.dim, num_classes, config.seed, scope='c')
    return TrainingState(config, f, g, c,
                         sgd=SGD(config.momentum, config.weight_decay))


def _samples(images, labels):
    return [dataio.LabeledImage(images[i], int(labels[i]))
            for i in range(len(labels))]


def _encoder_step(f, g, views, labels, config, sgd, lr):
    '''One SGD step of f and g on the contrastive loss of ``views``.'''
    f_vars, g_vars = f.variables(), g.variables()
    with T.Tape() as tape:
        z = models.project(g, models.encode(f, views, f_vars), g_vars)
        loss = losses.scl_loss(z, labels, config.tau)
    grads = tape.backward(loss)
    params = OrderedDict(('f.' + k, v) for k, v in f.params.items())
    params.update(('g.' + k, v) for k, v in g.params.items())
    named = OrderedDict(('f.' + k, grads.of(v)) for k, v in f_vars.items())
    named.update(('g.' + k, grads.of(v)) for k, v in g_vars.items())
    updated = sgd.step(params, named, lr)
    f = f.replace(OrderedDict((k, updated['f.' + k]) for k in f.params))
    g = g.replace(OrderedDict((k, updated['g.' + k]) for k in g.params))
    return f, g, loss.item()


def _head_step(head, feats, labels, adam, lr):
    '''One Adam step of a linear head on fixed representations.'''
    variables = head.variables()
    with T.Tape() as tape:
        loss = losses.cross_entropy(models.classify(head, feats, variables),
                                    labels, head.num_classes)
    grads = tape.backward(loss)
    updated = adam.step(head.params, grads.named(variables), lr)
    return head.replace(updated), loss.item()


def encoder_lr(config, epoch):
    '''Cosine schedule over the whole encoder horizon (stage 1 + stage 2).'''
    return cosine_lr(epoch, config.encoder_epochs, config.lr)


def stage1_epoch(f, g, loader, config, sgd, epoch, progress=False):
    '''
    One epoch of plain supervised contrastive learning. ``epoch`` counts
    from the start of encoder training and selects the learning rate.
    '''
    lr = encoder_lr(config, epoch)
    policy = config.aug_policy
    epoch_loss = RunningMean()
    batches = loader.batches(epoch, purpose='shuffle')
    if progress:
        batches = add_progress_bar(batches, 'SCL epoch %d' % epoch,
                                   max_value=len(loader))
    for index, images, labels, _ in batches:
        rng = stream(config.seed, 'views', epoch, index)
        batch = dataio.make_multiview_batch(_samples(images, labels), policy, rng)
        f, g, loss = _encoder_step(f, g, batch.views, batch.labels, config,
                                   sgd, lr)
        epoch_loss.add(loss)
        log.debug('Stage 1 epoch %d batch %d: loss=%.6f', epoch, index, loss)
    return f, g, MetricRecord(STAGE_SCL, epoch, epoch_loss.mean, lr)


def stage1_scl(f, g, loader, config, sgd=None, epochs=None):
    '''Runs stage 1 for ``epochs`` (default: the configured count).'''
    sgd = sgd or SGD(config.momentum, config.weight_decay)
    epochs = config.stage1_epochs if epochs is None else epochs
    records = []
    for epoch in range(epochs):
        f, g, record = stage1_epoch(f, g, loader, config, sgd, epoch)
        records.append(record)
        log.info('Stage 1 epoch %d: loss=%.6f lr=%.6g', epoch, record.loss,
                 record.lr)
    return f, g, records


def retrain_classifier(f, c, loader, config, adam=None, epoch=0):
    '''
    Trains the linear classifier on top of the frozen encoder for
    ``classifier_epochs`` epochs, adversarially unless
    ``classifier_training`` is natural. Returns (c, adam, mean loss).
    '''
    if config.classifier_reset == 'reinitialized' or adam is None:
        adam = _new_adam(config)
    if config.classifier_reset == 'reinitialized':
        c = models.init_classifier(c.arch.in_dim, c.num_classes, config.seed,
                                   scope='c.epoch%d' % epoch)
    attack_cfg = config.classifier_attack
    adversarial = config.classifier_training == 'adversarial'
    f_hash = f.hash()
    mean_loss = RunningMean()
    for inner in range(config.classifier_epochs):
        purpose = 'classifier:%d' % inner
        for index, images, labels, chosen in loader.batches(
                epoch, config.classifier_fraction, purpose=purpose):
            if adversarial:
                rng = sample_streams(config.seed, 'classifier_attack:%d' % inner,
                                     epoch, chosen) \
                    if attack_cfg.random_start else None
                images = attacks.pgd(f, c, images, labels, attack_cfg, rng=rng)
            feats = models.encode(f, images)
            c, loss = _head_step(c, feats, labels, adam, config.classifier_lr)
            mean_loss.add(loss)
    models.check_frozen('classifier retraining', f=(f_hash, f))
    log.debug('Classifier retrained at epoch %d: loss=%s', epoch, mean_loss.mean)
    return c, adam, mean_loss.mean


def stage2_epoch(f, g, c, loader, config, sgd, adam, epoch, progress=False):
    '''
    One epoch of contrastive learning with adversarial positives. The
    classifier is retrained first; it stays frozen while f and g update on
    the 3N-view batches. Returns (f, g, c, adam, record).
    '''
    f_before, g_before = f, g
    c, adam, _ = retrain_classifier(f, c, loader, config, adam, epoch)
    models.check_frozen('classifier retraining', f=(f_before, f),
                        g=(g_before, g))
    c_before = c
    lr = encoder_lr(config, epoch)
    policy = config.aug_policy
    attack_cfg = config.encoder_attack
    epoch_loss = RunningMean()
    batches = loader.batches(epoch, purpose='shuffle')
    if progress:
        batches = add_progress_bar(batches, 'CLAF epoch %d' % epoch,
                                   max_value=len(loader))
    for index, images, labels, chosen in batches:
        rng = stream(config.seed, 'views', epoch, index)
        batch = dataio.make_multiview_batch(_samples(images, labels), policy, rng)
        attack_rng = sample_streams(config.seed, 'encoder_attack', epoch, chosen) \
            if attack_cfg.random_start else None
        adv = attacks.pgd(f, c, images, labels, attack_cfg, rng=attack_rng)
        batch = dataio.append_adversarial(batch, adv)
        f, g, loss = _encoder_step(f, g, batch.views, batch.labels, config,
                                   sgd, lr)
        epoch_loss.add(loss)
        log.debug('Stage 2 epoch %d batch %d: %d views loss=%.6f',
                  epoch, index, len(batch), loss)
    models.check_frozen('encoder update', c=(c_before, c))
    return f, g, c, adam, MetricRecord(STAGE_CLAF, epoch, epoch_loss.mean, lr)


@dataclass
class LinearEvalResult:
    head: object
    report: object
    records: list


def stage3_linear_eval(f, train_set, config, c=None, test_set=None,
                       progress=False):
    '''
    Trains a linear head on the frozen encoder with cosine-decayed Adam.
    The head is fresh unless ``reuse_c_for_eval`` is set and ``c`` given;
    with ``linear_eval`` adversarial it trains on PGD examples. When a test
    set is given the head is evaluated clean and under every eval attack.
    '''
    num_classes = train_set.num_classes
    if config.reuse_c_for_eval and c is not None:
        head = c
    else:
        head = models.init_classifier(f.arch.dim, num_classes, config.seed,
                                      scope='head')
    adam = _new_adam(config)
    loader = dataio.BatchLoader(train_set, config.batch_size, config.seed)
    adversarial = config.linear_eval == 'adversarial'
    attack_cfg = config.eval_train_attack
    cached = None if adversarial else evaluation.features(
        f, train_set.images, config.eval_batch_size)
    f_hash = f.hash()
    records = []
    epochs = range(config.eval_epochs)
    if progress:
        epochs = add_progress_bar(epochs, 'Linear eval',
                                  max_value=config.eval_epochs)
    for epoch in epochs:
        lr = cosine_lr(epoch, config.eval_epochs, config.eval_lr)
        epoch_loss = RunningMean()
        for index, images, labels, chosen in loader.batches(epoch, purpose='eval'):
            if adversarial:
                rng = sample_streams(config.seed, 'eval_train_attack', epoch,
                                     chosen) if attack_cfg.random_start else None
                images = attacks.pgd(f, head, images, labels, attack_cfg, rng=rng)
                feats = models.encode(f, images)
            else:
                feats = T.as_tensor(cached[chosen])
            head, loss = _head_step(head, feats, labels, adam, lr)
            epoch_loss.add(loss)
        records.append(MetricRecord(STAGE_EVAL, epoch, epoch_loss.mean, lr))
        log.debug('Linear eval epoch %d: loss=%.6f lr=%.6g', epoch,
                  epoch_loss.mean, lr)
    models.check_frozen('linear evaluation', f=(f_hash, f))
    report = None
    if test_set is not None:
        report = evaluation.evaluate_model(
            f, head, test_set, config.eval_attacks, seed=config.seed,
            batch_size=config.eval_batch_size, label='linear eval',
            progress=progress)
        if records:
            records[-1] = with_accuracies(records[-1], report)
    return LinearEvalResult(head, report, records)


def with_accuracies(record, report):
    robust = [acc for _, acc in report.robust] + [None, None]
    return replace(record, clean_acc=report.clean_accuracy,
                   robust_acc_eps8=robust[0], robust_acc_eps16=robust[1])


def load_datasets(config):
    classes = config.classes or None
    train_set = dataio.load_cifar10(config.data_root, 'train', classes,
                                    config.train_limit or None)
    test_set = dataio.load_cifar10(config.data_root, 'test', classes,
                                   config.test_limit or None)
    log.info('Loaded %d train / %d test images over %d classes from %s',
             len(train_set), len(test_set), train_set.num_classes,
             config.data_root)
    return train_set, test_set


def _write(path, text):
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(text)


def run(config, resume_from=None, datasets=None, progress=False):
    '''
    Trains and evaluates one configuration, writing checkpoints,
    metrics.csv and report.txt under ``config.out_dir``.
    '''
    log.info('Starting run: out_dir=%s seed=%d baseline=%s', config.out_dir,
             config.seed, config.baseline)
    # Do all work in a sub-routine so failures are logged with the run context
    try:
        return _run(config, resume_from, datasets, progress)
    except Exception as e:
        if os.environ.get('DEBUG'):
            raise
        log.error('Error occurred during run: %s\nout_dir: %s seed: %s',
                  e, config.out_dir, config.seed)
        raise


def train_encoder(config, train_set, test_set=None, state=None, progress=False,
                  on_epoch=None):
    '''
    Stages 1 and 2 (or the stage-1-only baseline), from ``state`` if given.
    ``on_epoch(state)`` is called after every finished epoch.
    '''
    state = state or init_state(config, train_set.num_classes)
    loader = dataio.BatchLoader(train_set, config.batch_size, config.seed)
    stage1_total = config.encoder_epochs if config.baseline \
        else config.stage1_epochs
    stats = StatsCount()
    if state.stage == STAGE_SCL:
        for epoch in range(state.epoch, stage1_total):
            state.f, state.g, record = stage1_epoch(
                state.f, state.g, loader, config, state.sgd, epoch, progress)
            state.epoch = epoch + 1
            _finish_epoch(state, record, test_set, stats, on_epoch)
        if not config.baseline:
            state.stage, state.epoch = STAGE_CLAF, 0
    if state.stage == STAGE_CLAF:
        for local in range(state.epoch, config.stage2_epochs):
            epoch = config.stage1_epochs + local
            state.f, state.g, state.c, state.adam, record = stage2_epoch(
                state.f, state.g, state.c, loader, config, state.sgd,
                state.adam, epoch, progress)
            state.epoch = local + 1
            stats.increment('classifier retrains')
            _finish_epoch(state, record, test_set, stats, on_epoch)
    log.info('Encoder training finished:\n%s', stats.report())
    return state


def _finish_epoch(state, record, test_set, stats, on_epoch):
    config = state.config
    if (config.accuracy_every and test_set is not None
            and state.stage == STAGE_CLAF
            and state.epoch % config.accuracy_every == 0):
        report = evaluation.evaluate_model(
            state.f, state.c, test_set, config.eval_attacks[:2],
            seed=config.seed, batch_size=config.eval_batch_size,
            label='stage %d epoch %d' % (state.stage, record.epoch))
        record = with_accuracies(record, report)
    state.records.append(record)
    stats.increment('stage %d epochs' % record.stage)
    log.info('Stage %d epoch %d: loss=%.6f lr=%.6g', record.stage,
             record.epoch, record.loss, record.lr)
    if on_epoch is not None:
        on_epoch(state)


def _run(config, resume_from, datasets, progress):
    train_set, test_set = datasets or load_datasets(config)
    if not os.path.exists(config.out_dir):
        log.info('Creating output directory: %s', config.out_dir)
        os.makedirs(config.out_dir)
    state = None
    if resume_from is not None:
        state = TrainingState.from_checkpoint(load_checkpoint(resume_from),
                                              config)
        log.info('Resuming from %s at stage %d after epoch %d',
                 resume_from, state.stage, state.epoch)

    def save_periodic(state):
        if config.checkpoint_every and state.epoch % config.checkpoint_every == 0:
            path = os.path.join(config.out_dir, 'stage%d_epoch%d.ckpt'
                                % (state.stage, state.epoch))
            save_checkpoint(path, state.checkpoint())
            log.info('Wrote checkpoint %s', path)

    state = train_encoder(config, train_set, test_set, state, progress,
                          on_epoch=save_periodic)
    result = stage3_linear_eval(state.f, train_set, config, c=state.c,
                                test_set=test_set, progress=progress)
    state.records.extend(result.records)
    state.stage, state.epoch = STAGE_EVAL, config.eval_epochs

    final = state.checkpoint(head=result.head)
    final_path = os.path.join(config.out_dir, 'final.ckpt')
    save_checkpoint(final_path, final)

    metrics = RunMetrics(state.records, result.report)
    _write(os.path.join(config.out_dir, 'metrics.csv'), metrics.to_csv())
    _write(os.path.join(config.out_dir, 'report.txt'), result.report.to_text())
    log.info('Run finished: clean=%.4f, final checkpoint %s (%s)',
             result.report.clean_accuracy, final_path, file_hash(final_path))
    return metrics
