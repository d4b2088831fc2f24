__author__ = 'frank'

import os
import shutil
import tempfile
from unittest import TestCase

from mtgan.Errors import ConfigError
from mtgan.TrainConfig import KEYS, TrainConfig


class TestTrainConfigInit(TestCase):

    def test_defaults(self):

        config = TrainConfig()

        self.assertEqual((0.1, 0.2, 0.2, 0.5), config.weights.as_tuple())
        self.assertEqual(0.2, config.margin)
        self.assertEqual(10.0, config.gp_lambda)
        self.assertEqual(2, config.g_steps_per_d_step)
        self.assertEqual('wgan_gp', config.adversarial)
        self.assertEqual('sum', config.triplet_reduction)
        self.assertEqual((16, 32, 64, 128, 256), config.encoder_channels)
        self.assertTrue(config.use_gan and config.use_softmax and config.use_triplet)

    def test_string_values_parsed(self):

        config = TrainConfig(margin='0.3', use_gan='false', encoder_channels='8, 16', epochs='3')

        self.assertEqual(0.3, config.margin)
        self.assertFalse(config.use_gan)
        self.assertEqual((8, 16), config.encoder_channels)
        self.assertEqual(3, config.epochs)

    def test_unknown_key(self):

        self.assertRaisesRegex(ConfigError, 'Unknown Config Key: learning_rate', TrainConfig, learning_rate=1)

    def test_invalid_value(self):

        self.assertRaisesRegex(ConfigError, "Invalid Value For sampling: 'hardest'", TrainConfig, sampling='hardest')

    def test_validate_aggregates_failures(self):

        try:
            TrainConfig(lr_encoder=0, margin=-1, use_gan=False, use_softmax=False, use_triplet=False)
            self.fail('Expected ConfigError')
        except ConfigError as e:
            self.assertIn('lr_encoder must be positive', str(e))
            self.assertIn('margin must be non-negative', str(e))
            self.assertIn('at least one of use_gan, use_softmax, use_triplet must be enabled', str(e))

    def test_input_size_divisibility(self):

        self.assertRaisesRegex(ConfigError, 'input_size must be divisible', TrainConfig, input_size=20)


class TestTrainConfigPlan(TestCase):

    def test_all_speakers_by_default(self):

        plan = TrainConfig(anchors=3, other_classes=2, negatives=2).sampling_plan(10)

        self.assertEqual(10, plan.n)
        self.assertEqual(10 * 3 * 1 * 2 * 2, plan.pair_count())

    def test_capped(self):

        config = TrainConfig(plan_speakers=50, sampling='semi_hard', seed=7, batch_size=32)
        plan = config.sampling_plan(20)

        self.assertEqual(20, plan.n)
        self.assertEqual('semi_hard', plan.mode)
        self.assertEqual(7, plan.seed)
        self.assertEqual(32, plan.batch_size)


class TestTrainConfigFiles(TestCase):

    def setUp(self):
        self.tmp_dir = tempfile.mkdtemp()
        self.path = os.path.join(self.tmp_dir, 'config.txt')

    def tearDown(self):
        shutil.rmtree(self.tmp_dir)

    def _write(self, text):
        with open(self.path, 'w') as f:
            f.write(text)

    def test_from_file(self):

        self._write('# toy run\nepochs = 3\n\nsampling = semi_hard  # mined\nuse_softmax = no\n')

        config = TrainConfig.from_file(self.path)

        self.assertEqual(3, config.epochs)
        self.assertEqual('semi_hard', config.sampling)
        self.assertFalse(config.use_softmax)
        self.assertEqual(0.1, config.w_triplet)

    def test_unknown_key_names_line(self):

        self._write('epochs = 3\nbogus = 1\n')

        self.assertRaisesRegex(ConfigError, 'Unknown Config Key: bogus \\(line 2\\)', TrainConfig.from_file,
                               self.path)

    def test_malformed_line(self):

        self._write('epochs 3\n')

        self.assertRaisesRegex(ConfigError, 'Malformed Config Line 1', TrainConfig.from_file, self.path)

    def test_dump_round_trip(self):

        config = TrainConfig(epochs=4, use_gan=False, critic_channels=(3, 5), adversarial='minimax')

        config.dump(self.path)

        self.assertEqual(config, TrainConfig.from_file(self.path))

    def test_dump_documents_every_key(self):

        TrainConfig().dump(self.path)

        with open(self.path) as f:
            text = f.read()

        for key, _, _, _ in KEYS:
            self.assertIn('\n%s = ' % key, '\n' + text)


class TestTrainConfigCompare(TestCase):

    def test_replace(self):

        config = TrainConfig(seed=3)
        other = config.replace(embed_dim=64)

        self.assertEqual(512, config.embed_dim)
        self.assertEqual(64, other.embed_dim)
        self.assertEqual(3, other.seed)
        self.assertNotEqual(config, other)

    def test_to_dict_round_trip(self):

        config = TrainConfig(generator_channels=(64, 32, 16, 8, 4))

        self.assertEqual(config, TrainConfig.from_dict(config.to_dict()))
        self.assertListEqual([64, 32, 16, 8, 4], config.to_dict()['generator_channels'])
