__author__ = 'frank'

import math

import torch
import torch.nn.functional as F

from .Errors import NonFiniteLossError, ShapeError

DEFAULT_MARGIN = 0.2
DEFAULT_GP_LAMBDA = 10.0
COMPONENTS = ['L_T', 'L_S', 'L_G', 'L_D']


class LossWeights(object):
    """
    Weights of the four loss terms.

    :param triplet: Weight of the triplet loss.
    :param softmax: Weight of the speaker-ID softmax loss.
    :param generator: Weight of the generator loss.
    :param critic: Weight of the critic (discriminator) loss.
    """

    def __init__(self, triplet=0.1, softmax=0.2, generator=0.2, critic=0.5):

        for name, value in [('triplet', triplet), ('softmax', softmax), ('generator', generator), ('critic', critic)]:
            if not value >= 0:
                raise ValueError('Loss Weight %s Must Be Non-Negative' % name)

        self.triplet = float(triplet)
        self.softmax = float(softmax)
        self.generator = float(generator)
        self.critic = float(critic)

    def as_tuple(self):
        return self.triplet, self.softmax, self.generator, self.critic


def cosine_distance(a, b):
    """
    1 - a.b for unit-norm embeddings, along the last dimension. For unit vectors ||a - b||^2 = 2 * cosine_distance,
    so a squared-L2 margin corresponds to twice the margin used here.

    :return: Tensor in [0, 2] with the leading (batch) shape of the inputs.
    """
    return 1.0 - (a * b).sum(dim=-1)


def triplet_loss(anchors, positives, negatives, margin=DEFAULT_MARGIN, reduction='sum'):
    """
    Hinge triplet loss over cosine distances: sum_i max(0, d(a_i, p_i) - d(a_i, n_i) + margin).

    :param anchors: (N, D) unit-norm embeddings.
    :param positives: (N, D) unit-norm embeddings.
    :param negatives: (N, D) unit-norm embeddings.
    :param margin: Non-negative margin in cosine-distance units.
    :param reduction: ``sum`` or ``mean`` over the triplets.
    :return: Scalar tensor.
    """

    if not anchors.shape == positives.shape == negatives.shape:
        raise ShapeError('Triplet Batch Size Mismatch: %s, %s, %s' % (
            tuple(anchors.shape), tuple(positives.shape), tuple(negatives.shape)))

    if margin < 0:
        raise ValueError('Margin Must Be Non-Negative')

    hinge = F.relu(cosine_distance(anchors, positives) - cosine_distance(anchors, negatives) + margin)

    if reduction == 'sum':
        return hinge.sum()
    elif reduction == 'mean':
        return hinge.mean()

    raise ValueError('Unsupported Triplet Reduction: %s' % reduction)


def softmax_loss(logits, labels):
    """ Mean cross-entropy of (N, C) logits against (N,) class indices, via log-sum-exp. """

    if logits.dim() != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError('Logits %s Do Not Match Labels %s' % (tuple(logits.shape), tuple(labels.shape)))

    return F.cross_entropy(logits, labels)


def gan_losses(real_scores, fake_scores, gp=0.0, gp_lambda=DEFAULT_GP_LAMBDA):
    """
    WGAN-GP objectives.

    :param real_scores: Critic scores of real matrices, (B,).
    :param fake_scores: Critic scores of generated matrices, (B,).
    :param gp: Gradient penalty value (scalar or tensor).
    :param gp_lambda: Penalty coefficient.
    :return: (L_G, L_D) with L_G = -mean(fake) and L_D = mean(fake) - mean(real) + gp_lambda * gp.
    """

    fake_mean = fake_scores.mean()
    return -fake_mean, fake_mean - real_scores.mean() + gp_lambda * gp


def minimax_gan_losses(real_logits, fake_logits):
    """
    Log-loss adversarial game with a sigmoid discriminator. The critic minimizes
    -[log D(x) + log(1 - D(G(z)))]; the generator uses the non-saturating form -log D(G(z)).

    :return: (L_G, L_D)
    """

    l_d = F.binary_cross_entropy_with_logits(real_logits, torch.ones_like(real_logits)) + \
        F.binary_cross_entropy_with_logits(fake_logits, torch.zeros_like(fake_logits))
    l_g = F.binary_cross_entropy_with_logits(fake_logits, torch.ones_like(fake_logits))

    return l_g, l_d


def generator_loss(fake_scores, adversarial='wgan_gp'):
    """ Generator objective alone: -mean(fake) for WGAN-GP, -log D(G(z)) for the log-loss game. """

    if adversarial == 'minimax':
        return F.binary_cross_entropy_with_logits(fake_scores, torch.ones_like(fake_scores))

    return -fake_scores.mean()


def gradient_penalty(critic, real_batch, fake_batch, generator=None):
    """
    mean_i (||grad_x D(x_i)||_2 - 1)^2 at x_i = e_i * real_i + (1 - e_i) * fake_i, e_i ~ U[0, 1] per sample.
    The graph is kept so the penalty can be differentiated with respect to the critic parameters.

    :param critic: Callable mapping (B, H, W) to (B,) scores.
    :param real_batch: (B, H, W) real matrices.
    :param fake_batch: (B, H, W) generated matrices.
    :param generator: Optional torch.Generator for the interpolation weights.
    :return: Scalar tensor.
    """

    if real_batch.shape != fake_batch.shape:
        raise ShapeError('Real %s And Fake %s Batches Differ' % (tuple(real_batch.shape), tuple(fake_batch.shape)))

    eps_shape = (real_batch.shape[0],) + (1,) * (real_batch.dim() - 1)
    eps = torch.rand(eps_shape, generator=generator, dtype=real_batch.dtype)

    interpolates = (eps * real_batch + (1.0 - eps) * fake_batch).detach().requires_grad_(True)
    scores = critic(interpolates)

    grads, = torch.autograd.grad(scores.sum(), interpolates, create_graph=True)
    norms = grads.flatten(1).norm(2, dim=1)

    return ((norms - 1.0) ** 2).mean()


def check_finite(name, value, step=None, checkpoint=None):
    """ Raise NonFiniteLossError for a NaN or Inf loss value; return it as a float otherwise. """

    value = float(value)
    if not math.isfinite(value):
        raise NonFiniteLossError(name, step, checkpoint)

    return value


def total_loss(components, weights):
    """
    Weighted aggregate w1 * L_T + w2 * L_S + w3 * L_G + w4 * L_D. Only used for reporting; each network is
    optimized on its own objective.

    :param components: (L_T, L_S, L_G, L_D) numbers, or a mapping with those keys.
    :param weights: LossWeights
    :return: float. NonFiniteLossError if any component is NaN or Inf.
    """

    if hasattr(components, 'keys'):
        components = [components[k] for k in COMPONENTS]

    values = [check_finite(name, value) for name, value in zip(COMPONENTS, components)]
    return sum(w * v for w, v in zip(weights.as_tuple(), values) if w != 0)
