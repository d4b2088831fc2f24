__author__ = 'frank'

import copy
import csv
import logging
import os

import numpy as np
import torch
from attrdict import AttrDict

from .BaseObject import BaseObject
from .Errors import CheckpointError, ConfigError, NonFiniteLossError
from .EvalKit import evaluate
from .FeatureIO import FbankSlice, FeatureSet, save_features
from .Losses import (check_finite, gan_losses, generator_loss, gradient_penalty, minimax_gan_losses, softmax_loss,
                     total_loss, triplet_loss)
from .Nets import encode, generate, init_params
from .Sampler import sample_epoch
from .TrainConfig import TrainConfig

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LOSS_COLUMNS = ['step', 'epoch', 'L_T', 'L_S', 'L_G', 'L_D', 'total']
METRIC_COLUMNS = ['epoch', 'step', 'eer', 'acc']
# Keys that may differ between a checkpoint and the config used to resume it
RESUMABLE_KEYS = ['epochs', 'checkpoint_every', 'fake_dump_every', 'eval_every']
DUMP_SAMPLES = 8


class TrainState(BaseObject):
    """
    Everything that changes during training: networks, optimizers, the noise RNG, counters and the append-only loss
    and metric histories.

    :param features: Training FeatureSet.
    :param nets: NetworkSet
    :param optimizers: Dict group name -> torch optimizer.
    :param seed: Seed of the noise / interpolation RNG.
    """

    def __init__(self, features, nets, optimizers, seed):
        super(TrainState, self).__init__()

        self.features = features
        self.nets = nets
        self.optimizers = optimizers
        self.rng = torch.Generator().manual_seed(seed)
        self.step = 0
        self.epoch = 0
        self.history = []
        self.epoch_metrics = []
        self.checkpoints = []
        self.holdout = []
        self.matrices = features.matrices()
        self.labels = features.labels()

    @property
    def dtype(self):
        return next(self.nets.encoder.parameters()).dtype

    @property
    def last_checkpoint(self):
        return self.checkpoints[-1] if self.checkpoints else None

    def set_dtype(self, dtype):
        """ Move every network (and optimizer state it owns) to dtype, e.g. torch.float64 for gradient checks. """
        self.nets.to(dtype)
        return self


def build_optimizers(nets, config):

    return {
        'encoder': torch.optim.Adam(nets.encoder.parameters(), lr=config.lr_encoder),
        'classifier': torch.optim.Adam(nets.classifier.parameters(), lr=config.lr_classifier),
        'generator': torch.optim.Adam(nets.generator.parameters(), lr=config.lr_generator,
                                      betas=(config.adv_beta1, config.adv_beta2)),
        'critic': torch.optim.Adam(nets.critic.parameters(), lr=config.lr_critic,
                                   betas=(config.adv_beta1, config.adv_beta2)),
    }


def new_state(features, config):
    """
    Fresh TrainState with networks initialized from config.seed.

    :param features: Training FeatureSet; its class count sizes the classifier.
    :param config: TrainConfig
    :return: TrainState
    """

    if features.shape != (config.input_size, config.input_size):
        raise ConfigError('Features Are %s But input_size Is %d' % (features.shape, config.input_size))

    nets = init_params(config, features.n_classes)
    state = TrainState(features, nets, build_optimizers(nets, config), config.seed)
    state.set_config(config)
    return state


def _apply_gradients(state, names, objective):
    """ Differentiate one objective with respect to the named groups only, then step their optimizers. """

    nets = dict(state.nets.groups())
    params = [(name, p) for name in names for p in nets[name].parameters()]

    grads = torch.autograd.grad(objective, [p for _, p in params], allow_unused=True)
    for (_, p), g in zip(params, grads):
        p.grad = g if g is not None else torch.zeros_like(p)

    for name in names:
        state.optimizers[name].step()
        state.optimizers[name].zero_grad(set_to_none=True)


def _noise(state, config, size):
    return torch.randn(size, config.noise_dim, generator=state.rng, dtype=state.dtype)


def _adversarial_losses(state, config, real, fake):

    critic = state.nets.critic
    real_scores = critic(real)
    fake_scores = critic(fake)

    if config.adversarial == 'minimax':
        return minimax_gan_losses(real_scores, fake_scores)

    gp = gradient_penalty(critic, real, fake, state.rng)
    return gan_losses(real_scores, fake_scores, gp, config.gp_lambda)


def _generator_terms(state, config, fake, labels):
    """ w2 * L_S on generated samples plus w3 * L_G, the objective shared by the generator and the encoder. """

    weights = config.weights
    zero = fake.new_zeros(())
    l_s_fake, l_g = zero, zero

    if config.use_softmax:
        l_s_fake = softmax_loss(state.nets.classifier(fake), labels)

    if config.use_gan:
        l_g = generator_loss(state.nets.critic(fake), config.adversarial)

    return weights.softmax * l_s_fake + weights.generator * l_g, l_g


def _snapshot(state):

    return {
        'nets': copy.deepcopy(state.nets.state_dict()),
        'optimizers': dict((name, copy.deepcopy(opt.state_dict())) for name, opt in state.optimizers.items()),
        'rng': state.rng.get_state(),
    }


def _restore(state, snapshot):

    state.nets.load_state_dict(snapshot['nets'])
    for name, opt in state.optimizers.items():
        opt.load_state_dict(snapshot['optimizers'][name])
    state.rng.set_state(snapshot['rng'])


def train_step(state, batch, config):
    """
    One optimization round on one TripletBatch:

    1. critic, once, on w4 * L_D (skipped without the GAN);
    2. classifier on w2 * L_S over real and generated samples, generated samples labelled with the speaker whose
       embedding conditioned them (skipped without softmax);
    3. encoder on w1 * L_T + w2 * L_S(generated) + w3 * L_G, the last two reaching it through the generator, and
       in the same round the generator's first update on w2 * L_S(generated) + w3 * L_G;
    4. g_steps_per_d_step - 1 further generator updates.

    Without the GAN the generator stays frozen in inference mode but still carries the softmax signal back to the
    encoder. A NaN or Inf loss raises NonFiniteLossError and rolls back every update the step already made,
    optimizer moments and noise RNG included.

    :param state: TrainState, updated in place.
    :param batch: TripletBatch of positions into state.features.
    :param config: TrainConfig
    :return: AttrDict loss record with step, epoch, L_T, L_S, L_G, L_D and total.
    """

    if not len(batch):
        raise ValueError('Empty TripletBatch')

    snapshot = _snapshot(state)
    try:
        return _run_step(state, batch, config)
    except NonFiniteLossError:
        _restore(state, snapshot)
        raise


def _run_step(state, batch, config):

    nets = state.nets
    weights = config.weights
    step = state.step + 1
    checkpoint = state.last_checkpoint

    positions, local = batch.local_triples()
    x = torch.as_tensor(state.matrices[positions], dtype=state.dtype)
    y = torch.as_tensor(state.labels[positions])
    local = torch.as_tensor(local)

    nets.train()
    if not config.use_gan:
        nets.generator.eval()

    embeddings = nets.encoder(x)
    l_t = triplet_loss(embeddings[local[:, 0]], embeddings[local[:, 1]], embeddings[local[:, 2]],
                       config.margin, config.triplet_reduction)
    if config.use_triplet:
        check_finite('L_T', l_t, step, checkpoint)

    l_s = l_g = l_d = 0.0
    fixed = embeddings.detach()

    if config.use_gan:
        with torch.no_grad():
            fake = nets.generator(fixed, _noise(state, config, len(positions)))
        _, loss = _adversarial_losses(state, config, x, fake)
        l_d = check_finite('L_D', loss, step, checkpoint)
        _apply_gradients(state, ['critic'], weights.critic * loss)

    if config.use_softmax:
        with torch.no_grad():
            fake = nets.generator(fixed, _noise(state, config, len(positions)))
        logits = nets.classifier(torch.cat([x, fake]))
        loss = softmax_loss(logits, torch.cat([y, y]))
        l_s = check_finite('L_S', loss, step, checkpoint)
        _apply_gradients(state, ['classifier'], weights.softmax * loss)

    objective = weights.triplet * l_t if config.use_triplet else embeddings.new_zeros(())
    if config.use_gan or config.use_softmax:
        fake = nets.generator(embeddings, _noise(state, config, len(positions)))
        shared, loss = _generator_terms(state, config, fake, y)
        objective = objective + shared
        if config.use_gan:
            l_g = check_finite('L_G', loss, step, checkpoint)

    check_finite('encoder objective', objective, step, checkpoint)
    _apply_gradients(state, ['encoder', 'generator'] if config.use_gan else ['encoder'], objective)

    if config.use_gan:
        for _ in range(config.g_steps_per_d_step - 1):
            fake = nets.generator(fixed, _noise(state, config, len(positions)))
            shared, loss = _generator_terms(state, config, fake, y)
            check_finite('L_G', loss, step, checkpoint)
            _apply_gradients(state, ['generator'], shared)

    l_t = float(l_t) if config.use_triplet else 0.0
    record = AttrDict({
        'step': step,
        'epoch': state.epoch,
        'L_T': l_t,
        'L_S': l_s,
        'L_G': l_g,
        'L_D': l_d,
        'total': total_loss((l_t, l_s, l_g, l_d), weights),
    })

    state.step = step
    state.history.append(record)
    log.debug('step %d: L_T=%.4f L_S=%.4f L_G=%.4f L_D=%.4f', step, l_t, l_s, l_g, l_d)
    return record


def save_checkpoint(state, path):
    """
    Write networks, optimizers, RNG state, counters, histories and the TrainConfig atomically (temp file + rename).
    """

    payload = {
        'version': CHECKPOINT_VERSION,
        'config': state.config.to_dict(),
        'nets': state.nets.state_dict(),
        'optimizers': dict((name, opt.state_dict()) for name, opt in state.optimizers.items()),
        'rng': state.rng.get_state(),
        'step': state.step,
        'epoch': state.epoch,
        'history': [dict(r) for r in state.history],
        'epoch_metrics': [dict(r) for r in state.epoch_metrics],
        'speaker_index': state.features.speaker_index,
        'holdout': list(state.holdout),
        'dtype': str(state.dtype),
    }

    tmp_path = path + '.tmp'
    torch.save(payload, tmp_path)
    os.replace(tmp_path, path)

    state.checkpoints.append(path)
    log.info('saved checkpoint %s (epoch %d, step %d)', path, state.epoch, state.step)


def read_checkpoint(path):
    """ Raw checkpoint payload. CheckpointError for unreadable files or an unknown version. """

    try:
        payload = torch.load(path, map_location='cpu', weights_only=False)
    except Exception as e:
        raise CheckpointError('Unreadable Checkpoint %s: %s' % (path, e))

    if not isinstance(payload, dict) or payload.get('version') != CHECKPOINT_VERSION:
        raise CheckpointError('Unsupported Checkpoint Version In %s' % path)

    return payload


def load_checkpoint(path, features, config):
    """
    Restore a TrainState. The checkpoint's TrainConfig must match `config` except for RESUMABLE_KEYS, and the
    features must have the speaker index the checkpoint was trained with.

    :return: TrainState
    """

    payload = read_checkpoint(path)

    saved = payload['config']
    current = config.to_dict()
    mismatched = sorted(k for k in current if k not in RESUMABLE_KEYS and saved.get(k) != current[k])
    if mismatched:
        raise CheckpointError('Checkpoint Config Mismatch: %s' % ', '.join(mismatched))

    if payload['speaker_index'] != features.speaker_index:
        raise CheckpointError('Checkpoint Speaker Index Does Not Match Features')

    state = new_state(features, config)
    if payload['dtype'] == str(torch.float64):
        state.set_dtype(torch.float64)

    state.nets.load_state_dict(payload['nets'])
    state.optimizers = build_optimizers(state.nets, config)
    for name, opt in state.optimizers.items():
        opt.load_state_dict(payload['optimizers'][name])

    state.rng.set_state(payload['rng'])
    state.step = payload['step']
    state.epoch = payload['epoch']
    state.history = [AttrDict(r) for r in payload['history']]
    state.epoch_metrics = [AttrDict(r) for r in payload['epoch_metrics']]
    state.holdout = list(payload['holdout'])
    state.checkpoints = [path]

    return state


def _write_rows(path, columns, rows, mode):

    with open(path, mode, newline='') as f:
        writer = csv.writer(f)
        if mode == 'w':
            writer.writerow(columns)
        for row in rows:
            writer.writerow([row[c] for c in columns])


def dump_fakes(state, config, path, sample_positions, noise):
    """
    Store real inputs and their generated counterparts, produced from fixed noise in inference mode, as a
    ``fake``-tagged container.
    """

    real = state.matrices[sample_positions]
    embeddings = encode(state.nets.encoder, real)
    fakes = generate(state.nets.generator, embeddings, noise.to(state.dtype)).float().numpy()

    slices = []
    for i, pos in enumerate(sample_positions):
        source = state.features.slices[pos]
        slices.append(FbankSlice(real[i], source.speaker_id, 'real:%s' % source.utterance_id, source.slice_index))
        slices.append(FbankSlice(fakes[i], source.speaker_id, 'fake:%s' % source.utterance_id, source.slice_index))

    save_features(FeatureSet(slices, state.features.speaker_index), path, tag='fake',
                  extra={'epoch': state.epoch, 'step': state.step})
    log.info('dumped %d generated samples to %s', len(sample_positions), path)


def train(features, config, out_dir=None, eval_features=None, eval_speakers=None, state=None):
    """
    Run sampling and train_step() over all epochs. With out_dir set, writes ``losses.csv`` (one row per step),
    ``epoch_metrics.csv`` (when eval_every > 0), ``fakes/epoch_NNNN.mtgf`` dumps (when fake_dump_every > 0),
    periodic ``checkpoint_epoch_NNNN.pt`` and the final ``checkpoint.pt``.

    :param features: Training FeatureSet.
    :param config: TrainConfig
    :param out_dir: Output directory, or None to keep everything in memory.
    :param eval_features: FeatureSet of held-out speakers for per-epoch evaluation.
    :param eval_speakers: Held-out speaker ids in eval_features.
    :param state: TrainState to continue from (see resume()).
    :return: AttrDict with state, checkpoint (path or None) and losses (path or None).
    """

    state = state or new_state(features, config)
    state.set_config(config)
    if eval_speakers:
        state.holdout = list(eval_speakers)

    plan = config.sampling_plan(sum(1 for v in features.indices_by_speaker().values() if len(v) >= 2))

    sample_positions = list(range(min(DUMP_SAMPLES, len(features))))
    dump_noise = torch.randn(len(sample_positions), config.noise_dim,
                             generator=torch.Generator().manual_seed(config.seed), dtype=torch.float64)

    loss_path = metric_path = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        config.dump(os.path.join(out_dir, 'config.txt'))
        loss_path = os.path.join(out_dir, 'losses.csv')
        _write_rows(loss_path, LOSS_COLUMNS, state.history, 'w')
        if config.eval_every and eval_speakers:
            metric_path = os.path.join(out_dir, 'epoch_metrics.csv')
            _write_rows(metric_path, METRIC_COLUMNS, state.epoch_metrics, 'w')

    def embed(matrices):
        return encode(state.nets.encoder, matrices)

    for epoch in range(state.epoch, config.epochs):
        records = []
        for batch in sample_epoch(plan, features, embed, config.margin, epoch):
            records.append(train_step(state, batch, config))

        if loss_path:
            _write_rows(loss_path, LOSS_COLUMNS, records, 'a')

        state.epoch = epoch + 1
        means = dict((k, np.mean([r[k] for r in records])) for k in LOSS_COLUMNS[2:])
        log.info('epoch %d/%d (%d steps): L_T=%.4f L_S=%.4f L_G=%.4f L_D=%.4f total=%.4f', state.epoch,
                 config.epochs, len(records), means['L_T'], means['L_S'], means['L_G'], means['L_D'], means['total'])

        if config.eval_every and eval_speakers and state.epoch % config.eval_every == 0:
            result = evaluate(state.nets.encoder, eval_features, eval_speakers, config.n_enroll, config.n_test,
                              config.seed)
            row = AttrDict({'epoch': state.epoch, 'step': state.step, 'eer': result.eer, 'acc': result.acc})
            state.epoch_metrics.append(row)
            log.info('epoch %d held-out EER %.2f%% ACC %.2f%%', state.epoch, 100 * result.eer, 100 * result.acc)
            if metric_path:
                _write_rows(metric_path, METRIC_COLUMNS, [row], 'a')

        if out_dir and config.fake_dump_every and state.epoch % config.fake_dump_every == 0:
            os.makedirs(os.path.join(out_dir, 'fakes'), exist_ok=True)
            dump_fakes(state, config, os.path.join(out_dir, 'fakes', 'epoch_%04d.mtgf' % state.epoch),
                       sample_positions, dump_noise)

        if out_dir and config.checkpoint_every and state.epoch % config.checkpoint_every == 0:
            save_checkpoint(state, os.path.join(out_dir, 'checkpoint_epoch_%04d.pt' % state.epoch))

    checkpoint = None
    if out_dir:
        checkpoint = os.path.join(out_dir, 'checkpoint.pt')
        save_checkpoint(state, checkpoint)

    return AttrDict({'state': state, 'checkpoint': checkpoint, 'losses': loss_path})


def resume(checkpoint, features, config, out_dir=None, eval_features=None, eval_speakers=None):
    """
    Continue training from a checkpoint. The restored RNG state, optimizer moments and per-epoch sampling seeds make
    the continued run match an uninterrupted one step for step.

    :return: Same as train().
    """

    state = load_checkpoint(checkpoint, features, config)
    log.info('resuming from %s at epoch %d, step %d', checkpoint, state.epoch, state.step)
    return train(features, config, out_dir, eval_features, eval_speakers or state.holdout or None, state)


def split_speakers(features, holdout, seed):
    """
    Split speakers into training and held-out sets with a seeded permutation of the sorted speaker ids.

    :return: (train speaker ids, held-out speaker ids), each sorted.
    """

    speakers = sorted(features.speaker_index)
    if holdout < 0 or len(speakers) - holdout < 2:
        raise ConfigError('Cannot Hold Out %d Of %d Speakers' % (holdout, len(speakers)))

    order = np.random.default_rng(seed).permutation(len(speakers))
    heldout = sorted(speakers[i] for i in order[:holdout])
    return sorted(set(speakers) - set(heldout)), heldout


def best_epoch(metrics):
    """ Epoch with the lowest held-out EER in a metric history, None when empty. """

    if not metrics:
        return None

    return min(metrics, key=lambda r: (r['eer'], r['epoch']))['epoch']


def train_and_evaluate(features, config, out_dir=None, max_train_speakers=None):
    """
    Hold out config.holdout speakers, train on the rest and run the enroll/test protocol on the held-out ones.
    max_train_speakers limits training to a seeded subset of the remaining speakers.

    :return: AttrDict with eer, acc, state, checkpoint, trials and best_epoch.
    """

    train_ids, heldout = split_speakers(features, config.holdout, config.seed)
    if max_train_speakers and max_train_speakers < len(train_ids):
        order = np.random.default_rng(config.seed).permutation(len(train_ids))
        train_ids = sorted(train_ids[i] for i in order[:max_train_speakers])

    train_features = features.subset(train_ids)
    eval_features = features.subset(heldout) if heldout else None

    result = train(train_features, config, out_dir, eval_features, heldout)
    if not heldout:
        return AttrDict({'eer': None, 'acc': None, 'state': result.state, 'checkpoint': result.checkpoint,
                         'trials': None, 'best_epoch': None})

    metrics = evaluate(result.state.nets.encoder, eval_features, heldout, config.n_enroll, config.n_test, config.seed)

    return AttrDict({
        'eer': metrics.eer,
        'acc': metrics.acc,
        'state': result.state,
        'checkpoint': result.checkpoint,
        'trials': metrics.trials,
        'best_epoch': best_epoch(result.state.epoch_metrics),
    })


def load_networks(path):
    """
    Rebuild the networks stored in a checkpoint, for enrollment and scoring.

    :return: (NetworkSet, TrainConfig, raw checkpoint payload)
    """

    payload = read_checkpoint(path)
    config = TrainConfig.from_dict(payload['config'])

    nets = init_params(config, len(payload['speaker_index']))
    if payload['dtype'] == str(torch.float64):
        nets.to(torch.float64)
    nets.load_state_dict(payload['nets'])

    return nets, config, payload
