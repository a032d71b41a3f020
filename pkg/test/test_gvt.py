# -*- encoding: utf-8 -*-

from __future__ import unicode_literals

import collections
import io
import struct

import numpy as np

from axialvig import gvt
from axialvig.common import FormatError
from axialvig.tensor import FeatureTensor, DeterministicRng

from .common import ExtendedTest, BaseTmpDirTest


class TensorRecordTest(ExtendedTest):

    def test_layout(self):
        t = FeatureTensor(np.arange(6.0).reshape(2, 3), dtype="f64")
        blob = gvt.encode_tensor(t)
        self.assertEqual(blob[:4], b"GVTF")
        self.assertEqual(struct.unpack("<IBB", blob[4:10]), (1, 1, 2))
        self.assertEqual(struct.unpack("<QQ", blob[10:26]), (2, 3))
        self.assertEqual(blob[26:], np.arange(6.0).astype("<f8").tobytes())

    def test_f32_code(self):
        blob = gvt.encode_tensor(FeatureTensor([1.0], dtype="f32"))
        self.assertEqual(blob[8:9], b"\x00")
        self.assertEqual(len(blob), 4 + 4 + 1 + 1 + 8 + 4)

    def test_decode_is_bit_exact(self):
        t = DeterministicRng(3).uniform((2, 3, 4, 5), -1, 1, "f32")
        back = gvt.decode_tensor(gvt.encode_tensor(t))
        self.assertBitEqual(back, t)

    def test_bad_magic(self):
        blob = b"XXXX" + gvt.encode_tensor(FeatureTensor([1.0]))[4:]
        with self.assertRaises(FormatError):
            gvt.decode_tensor(blob)

    def test_bad_version(self):
        blob = bytearray(gvt.encode_tensor(FeatureTensor([1.0])))
        blob[4] = 2
        with self.assertRaises(FormatError):
            gvt.decode_tensor(bytes(blob))

    def test_bad_dtype_code(self):
        blob = bytearray(gvt.encode_tensor(FeatureTensor([1.0])))
        blob[8] = 7
        with self.assertRaises(FormatError):
            gvt.decode_tensor(bytes(blob))

    def test_truncated_payload(self):
        blob = gvt.encode_tensor(FeatureTensor([1.0, 2.0], dtype="f64"))
        with self.assertRaises(FormatError):
            gvt.decode_tensor(blob[:-3])

    def test_trailing_bytes(self):
        blob = gvt.encode_tensor(FeatureTensor([1.0]))
        with self.assertRaises(FormatError):
            gvt.decode_tensor(blob + b"\x00")

    def test_zero_extent(self):
        blob = b"GVTF" + struct.pack("<IBBQQ", 1, 1, 2, 0, 3)
        with self.assertRaises(FormatError):
            gvt.decode_tensor(blob)


class ContainerTest(BaseTmpDirTest):

    def tensors(self):
        rng = DeterministicRng(11)
        return collections.OrderedDict([
            ("stem.conv1.conv.weight", rng.uniform((4, 3, 3, 3), dtype="f32")),
            ("stem.conv1.bn.running_var", rng.uniform((4, ), 0.5, 1.0, "f32")),
            ("head.fc2.bias", rng.uniform((10, ), dtype="f32")),
        ])

    def test_save_load(self):
        tensors = self.tensors()
        gvt.save_container("w.gvt", tensors)
        back = gvt.load_container("w.gvt")
        self.assertEqual(list(back), list(tensors))
        for name in tensors:
            self.assertBitEqual(back[name], tensors[name])

    def test_manifest(self):
        self.assertEqual(gvt.manifest(self.tensors())[1],
                         ("stem.conv1.bn.running_var", (4, ), "f32"))

    def test_truncated_names_entry(self):
        stream = io.BytesIO()
        gvt.write_container(stream, self.tensors())
        blob = stream.getvalue()
        with self.assertRaises(FormatError) as ctx:
            gvt.read_container(io.BytesIO(blob[:-10]))
        self.assertEqual(ctx.exception.name, "head.fc2.bias")

    def test_duplicate_name(self):
        t = FeatureTensor([1.0])
        stream = io.BytesIO()
        gvt.write_container(stream, [("a", t), ("a", t)])
        with self.assertRaises(FormatError):
            gvt.read_container(io.BytesIO(stream.getvalue()))

    def test_missing_file(self):
        with self.assertRaises(FormatError):
            gvt.load_container("nowhere.gvt")
        with self.assertRaises(FormatError):
            gvt.load_tensor("nowhere.gvt")

    def test_single_tensor_file(self):
        t = DeterministicRng(1).uniform((1, 2, 3, 3), dtype="f64")
        gvt.save_tensor("t.gvt", t)
        self.assertBitEqual(gvt.load_tensor("t.gvt"), t)
