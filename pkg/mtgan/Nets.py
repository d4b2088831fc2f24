__author__ = 'frank'

import logging
from contextlib import contextmanager

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .Errors import ShapeError

log = logging.getLogger(__name__)

KERNEL = 5
PADDING = 2


def _as_batch(x, input_size):
    """ Accept (H, W), (B, H, W) or (B, 1, H, W) and return (B, 1, H, W). """

    if x.dim() == 2:
        x = x.unsqueeze(0)
    if x.dim() == 3:
        x = x.unsqueeze(1)

    if x.dim() != 4 or x.shape[1] != 1 or tuple(x.shape[2:]) != (input_size, input_size):
        raise ShapeError('Expected %dx%d Input, Got %s' % (input_size, input_size, tuple(x.shape)))

    return x


def _downsampled(size, n_blocks):
    for _ in range(n_blocks):
        size = (size + 1) // 2
    return size


def _conv_stack(channels, batch_norm, activation):

    layers = []
    in_ch = 1
    for out_ch in channels:
        layers.append(nn.Conv2d(in_ch, out_ch, KERNEL, stride=2, padding=PADDING))
        if batch_norm:
            layers.append(nn.BatchNorm2d(out_ch))
        layers.append(activation())
        in_ch = out_ch

    return nn.Sequential(*layers)


class EncoderNet(nn.Module):
    """
    Convolutional encoder f(x): stride-2 5x5 conv blocks with batch norm and ReLU, one fully-connected layer to
    embed_dim, then L2 normalization.

    :param input_size: Side of the square input matrix.
    :param channels: Output channels of each conv block.
    :param embed_dim: Embedding dimension.
    """

    def __init__(self, input_size=128, channels=(16, 32, 64, 128, 256), embed_dim=512):
        super(EncoderNet, self).__init__()

        self.input_size = input_size
        self.embed_dim = embed_dim
        self.features = _conv_stack(channels, True, nn.ReLU)
        self.fc = nn.Linear(channels[-1] * _downsampled(input_size, len(channels)) ** 2, embed_dim)

    def forward(self, x):
        h = self.features(_as_batch(x, self.input_size))
        return F.normalize(self.fc(h.flatten(1)), p=2, dim=1)


class GeneratorNet(nn.Module):
    """
    Conditional generator G(e, z): a fully-connected projection of [embedding, noise] to a seed feature map, then
    stride-2 5x5 transposed convolutions up to one input-sized channel. The output layer is linear because real
    inputs are mean/variance normalized rather than bounded.
    """

    def __init__(self, input_size=128, channels=(256, 128, 64, 32, 16), embed_dim=512, noise_dim=128):
        super(GeneratorNet, self).__init__()

        scale = 2 ** len(channels)
        if input_size % scale:
            raise ShapeError('input_size %d Not Divisible By %d' % (input_size, scale))

        self.input_size = input_size
        self.embed_dim = embed_dim
        self.noise_dim = noise_dim
        self.seed_channels = channels[0]
        self.seed_size = input_size // scale

        self.project = nn.Linear(embed_dim + noise_dim, channels[0] * self.seed_size ** 2)
        self.project_bn = nn.BatchNorm2d(channels[0])

        layers = []
        for in_ch, out_ch in zip(channels[:-1], channels[1:]):
            layers.extend([
                nn.ConvTranspose2d(in_ch, out_ch, KERNEL, stride=2, padding=PADDING, output_padding=1),
                nn.BatchNorm2d(out_ch),
                nn.ReLU(),
            ])
        layers.append(nn.ConvTranspose2d(channels[-1], 1, KERNEL, stride=2, padding=PADDING, output_padding=1))
        self.upsample = nn.Sequential(*layers)

    def forward(self, e, z):

        if e.dim() != 2 or e.shape[1] != self.embed_dim:
            raise ShapeError('Expected Embedding Of Dimension %d, Got %s' % (self.embed_dim, tuple(e.shape)))

        if z.dim() != 2 or z.shape[1] != self.noise_dim or z.shape[0] != e.shape[0]:
            raise ShapeError('Expected Noise Of Shape (%d, %d), Got %s' % (e.shape[0], self.noise_dim, tuple(z.shape)))

        h = self.project(torch.cat([e, z], dim=1))
        h = h.view(-1, self.seed_channels, self.seed_size, self.seed_size)
        h = F.relu(self.project_bn(h))
        return self.upsample(h).squeeze(1)


class DiscriminatorNet(nn.Module):
    """
    WGAN critic D(x): stride-2 5x5 convs with LeakyReLU and no normalization, linear scalar output.
    """

    def __init__(self, input_size=128, channels=(16, 32, 64, 128, 256)):
        super(DiscriminatorNet, self).__init__()

        self.input_size = input_size
        self.features = _conv_stack(channels, False, lambda: nn.LeakyReLU(0.2))
        self.fc = nn.Linear(channels[-1] * _downsampled(input_size, len(channels)) ** 2, 1)

    def forward(self, x):
        h = self.features(_as_batch(x, self.input_size))
        return self.fc(h.flatten(1)).squeeze(1)


class ClassifierNet(nn.Module):
    """
    Speaker-ID classifier on real or generated matrices: 5x5 conv blocks plus a fully-connected layer to C logits.
    """

    def __init__(self, n_classes, input_size=128, channels=(16, 32, 64)):
        super(ClassifierNet, self).__init__()

        if n_classes < 2:
            raise ShapeError('Classifier Needs At Least 2 Classes')

        self.input_size = input_size
        self.n_classes = n_classes
        self.features = _conv_stack(channels, True, nn.ReLU)
        self.fc = nn.Linear(channels[-1] * _downsampled(input_size, len(channels)) ** 2, n_classes)

    def forward(self, x):
        h = self.features(_as_batch(x, self.input_size))
        return self.fc(h.flatten(1))


class NetworkSet(object):
    """
    The four networks trained together. The encoder is a single instance; the anchor, positive and negative branches
    all run through it.
    """

    def __init__(self, encoder, generator, critic, classifier):

        self.encoder = encoder
        self.generator = generator
        self.critic = critic
        self.classifier = classifier

    def groups(self):
        return [
            ('encoder', self.encoder),
            ('generator', self.generator),
            ('critic', self.critic),
            ('classifier', self.classifier),
        ]

    def state_dict(self):
        return dict((name, net.state_dict()) for name, net in self.groups())

    def load_state_dict(self, state):
        for name, net in self.groups():
            net.load_state_dict(state[name])

    def to(self, dtype):
        for _, net in self.groups():
            net.to(dtype)
        return self

    def train(self):
        for _, net in self.groups():
            net.train()


def _weights_init(module):

    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
        nn.init.normal_(module.weight, 0.0, 0.02)
        nn.init.zeros_(module.bias)


def init_params(config, n_classes, seed=None):
    """
    Build and initialize all four networks. Conv and linear weights are drawn N(0, 0.02) with zero bias; batch norm
    starts as the identity transform (unit scale, zero shift, running mean 0 and variance 1).

    :param config: TrainConfig supplying sizes and channel widths.
    :param n_classes: Number of training speakers.
    :param seed: Initialization seed, config.seed when omitted. Equal seeds give identical parameters.
    :return: NetworkSet
    """

    seed = config.seed if seed is None else seed

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)

        nets = NetworkSet(
            EncoderNet(config.input_size, config.encoder_channels, config.embed_dim),
            GeneratorNet(config.input_size, config.generator_channels, config.embed_dim, config.noise_dim),
            DiscriminatorNet(config.input_size, config.critic_channels),
            ClassifierNet(n_classes, config.input_size, config.classifier_channels),
        )

        for _, net in nets.groups():
            net.apply(_weights_init)

    log.debug('initialized networks for %d classes (seed %d)', n_classes, seed)
    return nets


@contextmanager
def inference_mode(*nets):
    """ Switch modules to eval mode with autograd off, restoring their previous mode afterwards. """

    previous = [net.training for net in nets]
    for net in nets:
        net.eval()

    try:
        with torch.no_grad():
            yield
    finally:
        for net, mode in zip(nets, previous):
            net.train(mode)


def _tensor(x, net):
    dtype = next(net.parameters()).dtype
    return torch.as_tensor(x, dtype=dtype)


def encode(net, x):
    """
    Embed one matrix or a batch in inference mode.

    :param net: EncoderNet
    :param x: (H, W) or (B, H, W) array-like.
    :return: Unit-norm embeddings, (embed_dim,) for a single matrix or (B, embed_dim) for a batch.
    """

    x = _tensor(x, net)
    with inference_mode(net):
        out = net(x)

    return out[0] if x.dim() == 2 else out


def generate(net, e, z):
    """
    Generate fake matrices in inference mode.

    :param net: GeneratorNet
    :param e: Embedding (embed_dim,) or batch (B, embed_dim).
    :param z: Noise (noise_dim,) or batch (B, noise_dim).
    :return: (H, W) or (B, H, W) tensor.
    """

    e = _tensor(e, net)
    z = _tensor(z, net)
    single = e.dim() == 1

    with inference_mode(net):
        out = net(e.unsqueeze(0) if single else e, z.unsqueeze(0) if z.dim() == 1 else z)

    return out[0] if single else out


def discriminate(net, x):
    """ Critic scores in inference mode: a scalar for one matrix, a (B,) tensor for a batch. """

    x = _tensor(x, net)
    with inference_mode(net):
        out = net(x)

    return out[0] if x.dim() == 2 else out


def classify(net, x):
    """ Speaker logits in inference mode: (C,) for one matrix, (B, C) for a batch. """

    x = _tensor(x, net)
    with inference_mode(net):
        out = net(x)

    return out[0] if x.dim() == 2 else out


def embed_features(net, features, batch_size=64):
    """
    Embed every slice of a FeatureSet in inference mode.

    :return: (N, embed_dim) float64 numpy array.
    """

    matrices = features.matrices()
    chunks = [
        encode(net, matrices[i:i + batch_size]).double().numpy()
        for i in range(0, len(matrices), batch_size)
    ]

    if not chunks:
        return np.zeros((0, net.embed_dim))

    return np.concatenate(chunks)
