__author__ = 'frank'

import os
import shutil
import struct
import tempfile
from unittest import TestCase

import numpy as np

from mtgan.Container import MAGIC, read_container, write_container
from mtgan.Errors import ContainerError


class ContainerTestCase(TestCase):

    def setUp(self):
        self.tmp_dir = tempfile.mkdtemp()
        self.path = os.path.join(self.tmp_dir, 'data.mtgf')
        self.matrices = np.arange(2 * 3 * 4, dtype=np.float32).reshape(2, 3, 4) / 7.0
        self.index = {'slices': [['a', 'a_1', 0], ['b', 'b_1', 0]], 'meta': {}}

    def tearDown(self):
        shutil.rmtree(self.tmp_dir)

    def _bytes(self):
        with open(self.path, 'rb') as f:
            return f.read()

    def _rewrite(self, data):
        with open(self.path, 'wb') as f:
            f.write(data)


class TestWriteContainer(ContainerTestCase):

    def test_go_right(self):

        write_container(self.path, 'features', self.matrices, self.index)

        container = read_container(self.path)
        self.assertEqual('features', container.tag)
        self.assertEqual(1, container.version)
        self.assertTrue(np.array_equal(self.matrices, container.matrices))
        self.assertDictEqual(self.index, container['index'])

        # No temporary file left behind
        self.assertListEqual(['data.mtgf'], os.listdir(self.tmp_dir))

    def test_header_layout(self):

        write_container(self.path, 'fake', self.matrices, self.index)

        data = self._bytes()
        self.assertEqual(MAGIC, data[:4])
        self.assertEqual(1, struct.unpack('<H', data[4:6])[0])
        self.assertEqual(4, data[6])
        self.assertEqual(b'fake', data[7:11])
        self.assertEqual((2, 3, 4), struct.unpack('<IHH', data[11:19]))

    def test_unsupported_tag(self):

        self.assertRaisesRegex(ValueError, 'Unsupported Container Tag: other', write_container, self.path, 'other',
                               self.matrices, self.index)

    def test_wrong_rank(self):

        self.assertRaises(ValueError, write_container, self.path, 'features', self.matrices[0], self.index)


class TestReadContainer(ContainerTestCase):

    def setUp(self):
        super(TestReadContainer, self).setUp()
        write_container(self.path, 'features', self.matrices, self.index)

    def test_bad_magic(self):

        self._rewrite(b'XXXX' + self._bytes()[4:])

        try:
            read_container(self.path)
            self.fail('Expected ContainerError')
        except ContainerError as e:
            self.assertEqual(0, e.offset)
            self.assertIn('Bad Magic', str(e))
            self.assertIn('at offset 0', str(e))

    def test_unsupported_version(self):

        data = self._bytes()
        self._rewrite(data[:4] + struct.pack('<H', 9) + data[6:])

        try:
            read_container(self.path)
            self.fail('Expected ContainerError')
        except ContainerError as e:
            self.assertEqual(4, e.offset)
            self.assertIn('Unsupported Container Version 9', str(e))

    def test_truncated_data(self):

        data = self._bytes()
        self._rewrite(data[:30])

        try:
            read_container(self.path)
            self.fail('Expected ContainerError')
        except ContainerError as e:
            self.assertIn('Truncated Container', str(e))
            self.assertIn('matrix data', str(e))
            self.assertEqual(23, e.offset)

    def test_truncated_index(self):

        self._rewrite(self._bytes()[:-3])

        self.assertRaisesRegex(ContainerError, 'expected \\d+ bytes for index', read_container, self.path)

    def test_unparseable_index(self):

        data = self._bytes()
        index_length = struct.unpack('<I', data[119:123])[0]
        self._rewrite(data[:-2] + b'}}')

        try:
            read_container(self.path)
            self.fail('Expected ContainerError')
        except ContainerError as e:
            self.assertIn('Unparseable Index', str(e))
            self.assertEqual(123, e.offset)
            self.assertEqual(len(data) - index_length, e.offset)

    def test_trailing_bytes(self):

        self._rewrite(self._bytes() + b'\x00')

        self.assertRaisesRegex(ContainerError, 'Trailing Bytes After Index', read_container, self.path)
