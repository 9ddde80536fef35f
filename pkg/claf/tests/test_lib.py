import os

import mock
import numpy as np

from claf import lib
from claf.tasks import MetricRecord


class TestStream(object):

    def test_same_keys_same_stream(self):
        a = lib.stream(3, 'views', 2, 7).random(5)
        b = lib.stream(3, 'views', 2, 7).random(5)
        np.testing.assert_array_equal(a, b)

    def test_keys_separate_streams(self):
        a = lib.stream(3, 'views', 2, 7).random(5)
        assert not np.array_equal(a, lib.stream(3, 'views', 2, 8).random(5))
        assert not np.array_equal(a, lib.stream(3, 'order', 2, 7).random(5))
        assert not np.array_equal(a, lib.stream(4, 'views', 2, 7).random(5))

    def test_sample_streams_follow_the_index(self):
        together = lib.sample_streams(0, 'attack', 1, [4, 9])
        alone = lib.sample_streams(0, 'attack', 1, [9])
        assert together[1].random() == alone[0].random()


class TestHashes(object):

    def test_array_hash_ignores_key_order(self):
        a = {'w': np.ones((2, 2)), 'b': np.zeros(2)}
        b = {'b': np.zeros(2), 'w': np.ones((2, 2))}
        assert lib.array_hash(a) == lib.array_hash(b)

    def test_array_hash_sees_shape(self):
        assert lib.array_hash({'w': np.ones(4)}) != \
            lib.array_hash({'w': np.ones((2, 2))})

    def test_file_hash(self, tmp_path):
        path = os.path.join(str(tmp_path), 'blob')
        with open(path, 'wb') as f:
            f.write(b'abc')
        assert lib.file_hash(path) == \
            'a9993e364706816aba3e25717850c26c9cd0d89d'


class TestMetricsCsv(object):

    def test_header_and_blanks(self):
        text = lib.metrics_csv([MetricRecord(1, 0, 2.5, 0.05),
                                MetricRecord(3, 1, 0.25, 0.001, 0.75, 0.5)])
        lines = text.splitlines()
        assert lines[0] == ('stage,epoch,loss,lr,clean_acc,robust_acc_eps8,'
                            'robust_acc_eps16')
        assert lines[1] == '1,0,2.5,0.050000000000000003,,,'
        assert lines[2] == '3,1,0.25,0.001,0.75,0.5,'

    def test_floats_round_trip(self):
        assert float(lib.format_float(0.1 + 0.2)) == 0.1 + 0.2


class TestProgressBar(object):

    def test_passes_items_through(self):
        assert list(lib.add_progress_bar(range(3), caption='x',
                                         max_value=3)) == [0, 1, 2]

    def test_without_progressbar(self):
        items = [1, 2]
        with mock.patch.dict('sys.modules', {'progressbar': None}):
            assert lib.add_progress_bar(items) is items
