__author__ = 'frank'

import math
from unittest import TestCase

import torch
import torch.nn.functional as F
from torch.func import functional_call

from mtgan.Errors import NonFiniteLossError, ShapeError
from mtgan.Losses import (LossWeights, check_finite, cosine_distance, gan_losses, generator_loss, gradient_penalty,
                          minimax_gan_losses, softmax_loss, total_loss, triplet_loss)
from mtgan.Nets import ClassifierNet, DiscriminatorNet, GeneratorNet


def _unit(*rows):
    return F.normalize(torch.tensor(rows, dtype=torch.float64), dim=1)


class TestLossWeights(TestCase):

    def test_defaults(self):
        self.assertEqual((0.1, 0.2, 0.2, 0.5), LossWeights().as_tuple())

    def test_negative(self):
        self.assertRaisesRegex(ValueError, 'Loss Weight critic Must Be Non-Negative', LossWeights, critic=-1)


class TestTripletLoss(TestCase):

    def test_cosine_distance(self):

        a = _unit([1, 0], [1, 0])
        b = _unit([0, 1], [-1, 0])

        self.assertListEqual([1.0, 2.0], cosine_distance(a, b).tolist())

    def test_hinge_values(self):

        anchors = _unit([1, 0], [1, 0])
        positives = _unit([1, 0], [0, 1])
        negatives = _unit([0, 1], [1, 0])

        # first triple: 0 - 1 + 0.2 -> 0, second: 1 - 0 + 0.2 -> 1.2
        self.assertAlmostEqual(1.2, float(triplet_loss(anchors, positives, negatives)), places=12)
        self.assertAlmostEqual(0.6, float(triplet_loss(anchors, positives, negatives, reduction='mean')), places=12)

    def test_single_triple(self):

        anchors = _unit([1, 0])
        positives = _unit([0.5, 0.75 ** 0.5])
        negatives = _unit([0.6, 0.8])

        self.assertAlmostEqual(0.3, float(triplet_loss(anchors, positives, negatives)), places=12)

    def test_identical_positive_zero_loss(self):

        anchors = _unit([1, 2, 3])
        negatives = _unit([-3, 1, 0])

        self.assertEqual(0.0, float(triplet_loss(anchors, anchors, negatives)))

    def test_degenerate_triple_costs_margin(self):

        same = _unit([1, 2], [3, -1], [0, 1])

        self.assertAlmostEqual(3 * 0.2, float(triplet_loss(same, same, same)), places=9)

    def test_margin_zero_matches_hand_computation(self):

        torch.manual_seed(0)
        a, p, n = [F.normalize(torch.randn(6, 5, dtype=torch.float64), dim=1) for _ in range(3)]

        expected = sum(max(0.0, float((a[i] * n[i]).sum() - (a[i] * p[i]).sum())) for i in range(6))
        self.assertAlmostEqual(expected, float(triplet_loss(a, p, n, margin=0.0)), places=12)

    def test_size_mismatch(self):

        self.assertRaisesRegex(ShapeError, 'Triplet Batch Size Mismatch', triplet_loss, _unit([1, 0]),
                               _unit([1, 0], [0, 1]), _unit([1, 0]))

    def test_bad_reduction(self):

        self.assertRaises(ValueError, triplet_loss, _unit([1, 0]), _unit([1, 0]), _unit([0, 1]), 0.2, 'max')

    def test_gradient_matches_finite_differences(self):

        torch.manual_seed(1)
        raw = [torch.randn(4, 6, dtype=torch.float64, requires_grad=True) for _ in range(3)]

        def loss(a, p, n):
            return triplet_loss(F.normalize(a, dim=1), F.normalize(p, dim=1), F.normalize(n, dim=1), margin=0.5)

        self.assertTrue(torch.autograd.gradcheck(loss, raw, eps=1e-6, atol=1e-6, rtol=1e-4))

    def test_invariant_under_rotation(self):

        generator = torch.Generator().manual_seed(3)
        a, p, n = [F.normalize(torch.randn(10, 8, dtype=torch.float64, generator=generator), dim=1) for _ in range(3)]
        rotation, _ = torch.linalg.qr(torch.randn(8, 8, dtype=torch.float64, generator=generator))

        expected = triplet_loss(a, p, n, margin=0.3)
        rotated = triplet_loss(a.mm(rotation), p.mm(rotation), n.mm(rotation), margin=0.3)

        self.assertGreater(float(expected), 0.0)
        self.assertAlmostEqual(float(expected), float(rotated), delta=1e-12)


class TestSoftmaxLoss(TestCase):

    def test_uniform_logits(self):

        logits = torch.zeros(3, 4)
        labels = torch.tensor([0, 1, 3])

        self.assertAlmostEqual(math.log(4), float(softmax_loss(logits, labels)), places=6)

    def test_hand_computed(self):

        logits = torch.tensor([[1.0, 2.0, 3.0]], dtype=torch.float64)

        self.assertAlmostEqual(0.40761, float(softmax_loss(logits, torch.tensor([2]))), places=5)

    def test_uniform_logits_float64(self):

        for classes in (2, 7, 600):
            logits = torch.full((5, classes), 0.25, dtype=torch.float64)
            labels = torch.arange(5) % classes

            self.assertAlmostEqual(math.log(classes), float(softmax_loss(logits, labels)), delta=1e-9)

    def test_shift_invariant(self):

        generator = torch.Generator().manual_seed(5)
        logits = torch.randn(6, 9, dtype=torch.float64, generator=generator)
        labels = torch.tensor([0, 3, 8, 1, 1, 5])
        shifts = torch.tensor([[-50.0], [-1.0], [0.0], [2.5], [40.0], [100.0]], dtype=torch.float64)

        self.assertAlmostEqual(float(softmax_loss(logits, labels)), float(softmax_loss(logits + shifts, labels)),
                               delta=1e-9)

    def test_large_logits_stable(self):

        logits = torch.tensor([[1000.0, 0.0], [0.0, 1000.0]])

        self.assertAlmostEqual(0.0, float(softmax_loss(logits, torch.tensor([0, 1]))), places=6)
        self.assertAlmostEqual(500.0, float(softmax_loss(logits, torch.tensor([1, 1]))), places=3)

    def test_label_mismatch(self):

        self.assertRaises(ShapeError, softmax_loss, torch.zeros(3, 4), torch.tensor([0, 1]))


class TestGanLosses(TestCase):

    def test_wgan_values(self):

        real = torch.tensor([1.0, 3.0])
        fake = torch.tensor([-1.0, 0.0])

        l_g, l_d = gan_losses(real, fake, gp=0.25)

        self.assertAlmostEqual(0.5, float(l_g))
        self.assertAlmostEqual(-0.5 - 2.0 + 2.5, float(l_d))

    def test_generator_loss_matches(self):

        fake = torch.tensor([0.3, -0.7])

        self.assertAlmostEqual(float(gan_losses(fake, fake)[0]), float(generator_loss(fake)))
        self.assertAlmostEqual(float(minimax_gan_losses(fake, fake)[0]), float(generator_loss(fake, 'minimax')))

    def test_minimax_at_equilibrium(self):

        zero = torch.zeros(4)

        l_g, l_d = minimax_gan_losses(zero, zero)

        self.assertAlmostEqual(math.log(2), float(l_g), places=6)
        self.assertAlmostEqual(2 * math.log(2), float(l_d), places=6)


class TestGradientPenalty(TestCase):

    def setUp(self):
        torch.manual_seed(0)
        self.critic = DiscriminatorNet(8, (2,)).double()
        self.real = torch.randn(3, 8, 8, dtype=torch.float64)
        self.fake = torch.randn(3, 8, 8, dtype=torch.float64)

    def test_linear_critic_has_known_penalty(self):

        weight = torch.randn(8, 8, dtype=torch.float64)

        def critic(x):
            return (x * weight).sum(dim=(1, 2))

        expected = (weight.norm() - 1.0) ** 2
        self.assertAlmostEqual(float(expected), float(gradient_penalty(critic, self.real, self.fake)), places=10)

    def test_unit_norm_linear_critic_has_no_penalty(self):

        weight = torch.randn(8, 8, dtype=torch.float64)
        weight = weight / weight.norm()

        def critic(x):
            return (x * weight).sum(dim=(1, 2))

        self.assertLess(float(gradient_penalty(critic, self.real, self.fake)), 1e-8)

    def test_seeded_interpolation(self):

        first = gradient_penalty(self.critic, self.real, self.fake, torch.Generator().manual_seed(3))
        second = gradient_penalty(self.critic, self.real, self.fake, torch.Generator().manual_seed(3))

        self.assertEqual(float(first), float(second))

    def test_gradient_wrt_critic_matches_finite_differences(self):

        names = ['features.0.weight', 'fc.weight']
        params = tuple(dict(self.critic.named_parameters())[n].detach().clone().requires_grad_(True) for n in names)

        def penalty(*values):
            def critic(x):
                return functional_call(self.critic, dict(zip(names, values)), (x,))
            return gradient_penalty(critic, self.real, self.fake, torch.Generator().manual_seed(0))

        self.assertTrue(torch.autograd.gradcheck(penalty, params, eps=1e-6, atol=1e-6, rtol=1e-4))

    def test_shape_mismatch(self):

        self.assertRaises(ShapeError, gradient_penalty, self.critic, self.real, self.fake[:2])


class TestTotalLoss(TestCase):

    def test_weighted_sum(self):

        self.assertAlmostEqual(0.1 + 0.4 + 0.6 + 2.0, total_loss((1.0, 2.0, 3.0, 4.0), LossWeights()))

    def test_mapping(self):

        components = {'L_T': 1.0, 'L_S': 0.0, 'L_G': 0.0, 'L_D': 0.0}

        self.assertAlmostEqual(0.1, total_loss(components, LossWeights()))

    def test_zero_weight_equals_dropped_term(self):

        weights = LossWeights(triplet=0.0)

        self.assertEqual(total_loss((123.0, 1.0, 1.0, 1.0), weights), total_loss((0.0, 1.0, 1.0, 1.0), weights))

    def test_non_finite(self):

        try:
            total_loss((1.0, float('nan'), 0.0, 0.0), LossWeights())
            self.fail('Expected NonFiniteLossError')
        except NonFiniteLossError as e:
            self.assertEqual('L_S', e.component)

    def test_check_finite_message(self):

        try:
            check_finite('L_D', float('inf'), 12, 'run/checkpoint.pt')
            self.fail('Expected NonFiniteLossError')
        except NonFiniteLossError as e:
            self.assertEqual('Non-Finite Loss: L_D at step 12 (last good checkpoint: run/checkpoint.pt)', str(e))


class TestNetworkLossGradients(TestCase):

    def setUp(self):
        torch.manual_seed(2)
        self.generator = GeneratorNet(8, (4, 2), 4, 3).double()
        self.critic = DiscriminatorNet(8, (2,)).double()
        self.classifier = ClassifierNet(3, 8, (2,)).double()
        self.e = F.normalize(torch.randn(5, 4, dtype=torch.float64), dim=1)
        self.z = torch.randn(5, 3, dtype=torch.float64)
        self.real = torch.randn(5, 8, 8, dtype=torch.float64)
        self.labels = torch.tensor([0, 1, 2, 0, 1])

    def _check(self, net, names, fn):
        params = tuple(dict(net.named_parameters())[n].detach().clone().requires_grad_(True) for n in names)

        def objective(*values):
            return fn(lambda *args: functional_call(net, dict(zip(names, values)), args))

        self.assertTrue(torch.autograd.gradcheck(objective, params, eps=1e-6, atol=1e-6, rtol=1e-4))

    def test_generator_loss(self):

        self._check(self.generator, ['project.weight', 'upsample.3.weight'],
                    lambda g: generator_loss(self.critic(g(self.e, self.z))))

    def test_critic_loss(self):

        fake = self.generator(self.e, self.z).detach()

        def loss(d):
            gp = gradient_penalty(d, self.real, fake, torch.Generator().manual_seed(1))
            return gan_losses(d(self.real), d(fake), gp)[1]

        self._check(self.critic, ['features.0.weight', 'fc.weight'], loss)

    def test_softmax_loss(self):

        self._check(self.classifier, ['features.0.weight', 'fc.weight'],
                    lambda c: softmax_loss(c(self.real), self.labels))
