import json
import os
import shutil
import tempfile
import unittest

from hypothesis import given, strategies as st

import chorus.exceptions
from chorus.data.records import VgsDataset, VgsRecord
from chorus.data import split as splits
from chorus.data.split import DatasetSplit, split_dataset, split_keys, write_split


class SplitTest(unittest.TestCase):

    def test_sizes(self):
        assert splits.test_size(10) == 1
        assert splits.test_size(14) == 1
        assert splits.test_size(15) == 2
        assert splits.test_size(35231) == 3523
        split = split_keys(range(35231), seed=0)
        assert (len(split.train), len(split.test)) == (31708, 3523)

    def test_ten_frames(self):
        split = split_keys(range(10), seed=7)
        assert len(split.train) == 9 and len(split.test) == 1

    def test_deterministic(self):
        keys = [("v", i) for i in range(100)]
        assert split_keys(keys, 3).to_dict() == split_keys(keys, 3).to_dict()
        assert split_keys(keys, 3).test != split_keys(keys, 4).test

    def test_too_few(self):
        with self.assertRaises(chorus.exceptions.ArgumentError):
            split_keys(range(9), seed=0)

    def test_duplicates(self):
        with self.assertRaises(chorus.exceptions.ArgumentError):
            split_keys([1] * 12, seed=0)

    @given(st.integers(10, 500), st.integers(0, 2 ** 31))
    def test_partition(self, n, seed):
        split = split_keys(range(n), seed)
        assert sorted(split.train + split.test) == list(range(n))
        assert split.train == sorted(split.train)
        assert split.test == sorted(split.test)
        assert len(split.test) == (n + 5) // 10

    def test_dataset(self):
        records = [VgsRecord(video="v", frame=f, person_id=p, head_box=[0, 0, 5, 5], target_box=[5, 5, 5, 5])
                   for f in range(20) for p in (1, 2)]
        split = split_dataset(VgsDataset(records), seed=1)
        assert len(split) == 20
        assert all(key[0] == "v" for key in split.train + split.test)

    def test_file(self):
        split = split_keys([("v", i) for i in range(12)], seed=2)
        directory = tempfile.mkdtemp()
        try:
            path = os.path.join(directory, "split.json")
            write_split(path, split)
            with open(path) as f:
                text = f.read()
            assert text == split.dumps()
            loaded = DatasetSplit.from_dict(json.loads(text))
            assert loaded.train == split.train and loaded.test == split.test and loaded.seed == 2
        finally:
            shutil.rmtree(directory)
