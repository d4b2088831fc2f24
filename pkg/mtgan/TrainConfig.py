__author__ = 'frank'

import logging

from .Errors import ConfigError
from .Losses import LossWeights
from .Sampler import SamplingPlan

log = logging.getLogger(__name__)


def _bool(value):

    if isinstance(value, bool):
        return value

    text = str(value).strip().lower()
    if text in ('1', 'true', 'yes', 'on'):
        return True
    if text in ('0', 'false', 'no', 'off'):
        return False

    raise ValueError(value)


def _channels(value):

    if isinstance(value, str):
        value = [v for v in value.replace(' ', '').split(',') if v]

    channels = tuple(int(v) for v in value)
    if not channels or min(channels) < 1:
        raise ValueError(value)

    return channels


def _choice(*choices):

    def parse(value):
        if value not in choices:
            raise ValueError(value)
        return value

    return parse


# key, parser, default, description
KEYS = [
    ('w_triplet', float, 0.1, 'weight w1 of the triplet loss'),
    ('w_softmax', float, 0.2, 'weight w2 of the softmax loss'),
    ('w_generator', float, 0.2, 'weight w3 of the generator loss'),
    ('w_critic', float, 0.5, 'weight w4 of the critic loss'),
    ('margin', float, 0.2, 'triplet margin, cosine-distance units'),
    ('gp_lambda', float, 10.0, 'gradient penalty coefficient'),
    ('adversarial', _choice('wgan_gp', 'minimax'), 'wgan_gp', 'adversarial objective'),
    ('triplet_reduction', _choice('sum', 'mean'), 'sum', 'reduction of the triplet hinge over a batch'),
    ('plan_speakers', int, 0, 'speakers per epoch n (0 = all eligible)'),
    ('anchors', int, 2, 'anchors per speaker A'),
    ('positives', int, 1, 'positives per anchor P'),
    ('other_classes', int, 2, 'other classes per anchor K'),
    ('negatives', int, 1, 'negatives per other class J'),
    ('sampling', _choice('random', 'semi_hard'), 'random', 'triplet sampling mode'),
    ('batch_size', int, 64, 'maximum distinct slices per mini-batch'),
    ('embed_dim', int, 512, 'embedding dimension'),
    ('noise_dim', int, 128, 'generator noise dimension'),
    ('input_size', int, 128, 'side of the square input matrix'),
    ('encoder_channels', _channels, (16, 32, 64, 128, 256), 'encoder conv widths'),
    ('generator_channels', _channels, (256, 128, 64, 32, 16), 'generator transposed-conv widths'),
    ('critic_channels', _channels, (16, 32, 64, 128, 256), 'critic conv widths'),
    ('classifier_channels', _channels, (16, 32, 64), 'classifier conv widths'),
    ('lr_encoder', float, 1e-3, 'encoder learning rate'),
    ('lr_generator', float, 1e-4, 'generator learning rate'),
    ('lr_critic', float, 1e-4, 'critic learning rate'),
    ('lr_classifier', float, 1e-3, 'classifier learning rate'),
    ('adv_beta1', float, 0.0, 'Adam beta1 for generator and critic'),
    ('adv_beta2', float, 0.9, 'Adam beta2 for generator and critic'),
    ('g_steps_per_d_step', int, 2, 'generator updates per critic update'),
    ('epochs', int, 20, 'training epochs'),
    ('seed', int, 0, 'random seed'),
    ('use_gan', _bool, True, 'train generator and critic'),
    ('use_softmax', _bool, True, 'train the classifier and apply the softmax loss'),
    ('use_triplet', _bool, True, 'apply the triplet loss to the encoder'),
    ('holdout', int, 5, 'held-out speakers for enrollment/test'),
    ('n_enroll', int, 3, 'enrollment utterances per held-out speaker'),
    ('n_test', int, 7, 'test utterances per held-out speaker'),
    ('checkpoint_every', int, 0, 'epochs between checkpoints (0 = final only)'),
    ('fake_dump_every', int, 0, 'epochs between generated-sample dumps (0 = never)'),
    ('eval_every', int, 0, 'epochs between held-out EER/ACC evaluations (0 = never)'),
]

_PARSERS = dict((key, parser) for key, parser, _, _ in KEYS)


class TrainConfig(object):
    """
    All training hyperparameters. Construct with keyword overrides of the defaults in KEYS, or from a flat
    ``key = value`` file with TrainConfig.from_file().
    """

    def __init__(self, **overrides):

        unknown = sorted(set(overrides) - set(_PARSERS))
        if unknown:
            raise ConfigError('Unknown Config Key: %s' % ', '.join(unknown))

        for key, parser, default, _ in KEYS:
            value = overrides.get(key, default)
            try:
                value = parser(value)
            except (TypeError, ValueError):
                raise ConfigError('Invalid Value For %s: %r' % (key, value))
            setattr(self, key, value)

        self.validate()

    @classmethod
    def from_dict(cls, values):
        return cls(**dict(values))

    @classmethod
    def from_file(cls, path):
        """
        Parse a flat ``key = value`` config file. ``#`` starts a comment; blank lines are ignored.

        :param path: Config file path.
        :return: TrainConfig. ConfigError naming the key (and line) for unknown keys or bad values.
        """

        values = {}
        with open(path) as f:
            for number, line in enumerate(f, 1):
                line = line.split('#', 1)[0].strip()
                if not line:
                    continue

                if '=' not in line:
                    raise ConfigError('Malformed Config Line %d: %s' % (number, line))

                key, value = [part.strip() for part in line.split('=', 1)]
                if key not in _PARSERS:
                    raise ConfigError('Unknown Config Key: %s (line %d)' % (key, number))

                values[key] = value

        log.debug('loaded config %s (%d keys)', path, len(values))
        return cls(**values)

    def validate(self):

        failures = []

        for key in ['lr_encoder', 'lr_generator', 'lr_critic', 'lr_classifier']:
            if not getattr(self, key) > 0:
                failures.append('%s must be positive' % key)

        for key in ['w_triplet', 'w_softmax', 'w_generator', 'w_critic', 'margin', 'gp_lambda']:
            if not getattr(self, key) >= 0:
                failures.append('%s must be non-negative' % key)

        for key in ['anchors', 'positives', 'other_classes', 'negatives', 'g_steps_per_d_step', 'epochs',
                    'embed_dim', 'noise_dim', 'n_enroll', 'n_test']:
            if getattr(self, key) < 1:
                failures.append('%s must be at least 1' % key)

        for key in ['plan_speakers', 'holdout', 'checkpoint_every', 'fake_dump_every', 'eval_every']:
            if getattr(self, key) < 0:
                failures.append('%s must be non-negative' % key)

        if self.batch_size < 3:
            failures.append('batch_size must be at least 3')

        if not (self.use_gan or self.use_softmax or self.use_triplet):
            failures.append('at least one of use_gan, use_softmax, use_triplet must be enabled')

        if self.input_size % (2 ** len(self.generator_channels)):
            failures.append('input_size must be divisible by 2**len(generator_channels)')

        if failures:
            raise ConfigError('Invalid TrainConfig [FAILURES: ' + ', '.join(failures) + ']')

    @property
    def weights(self):
        return LossWeights(self.w_triplet, self.w_softmax, self.w_generator, self.w_critic)

    def sampling_plan(self, n_available):
        """
        SamplingPlan for a training set with n_available eligible speakers.

        :return: SamplingPlan
        """

        n = self.plan_speakers or n_available
        return SamplingPlan(
            n=min(n, n_available),
            anchors=self.anchors,
            positives=self.positives,
            other_classes=self.other_classes,
            negatives=self.negatives,
            mode=self.sampling,
            seed=self.seed,
            batch_size=self.batch_size,
        )

    def to_dict(self):
        values = {}
        for key, _, _, _ in KEYS:
            value = getattr(self, key)
            values[key] = list(value) if isinstance(value, tuple) else value
        return values

    def replace(self, **overrides):
        values = self.to_dict()
        values.update(overrides)
        return TrainConfig(**values)

    def dump(self, path):
        """ Write the config as a ``key = value`` file readable by from_file(). """

        with open(path, 'w') as f:
            for key, _, _, description in KEYS:
                value = getattr(self, key)
                if isinstance(value, tuple):
                    value = ','.join(str(v) for v in value)
                elif isinstance(value, bool):
                    value = 'true' if value else 'false'
                f.write('# %s\n%s = %s\n' % (description, key, value))

    def __eq__(self, other):
        return isinstance(other, TrainConfig) and self.to_dict() == other.to_dict()

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return 'TrainConfig(%s)' % ', '.join('%s=%r' % (k, v) for k, v in sorted(self.to_dict().items()))
