"""
Frame-level 9:1 train/test split.

The round rule gives 31,708 / 3,523 for the 35,231 frames of the full corpus; the published
partition of that corpus is 31,701 / 3,524 (35,225 frames in total), six frames short of the
stated corpus size.
"""
import collections
import json

import numpy as np

import chorus.atomic
import chorus.exceptions
from chorus import get_logger

logger = get_logger(__name__)

MIN_FRAMES = 10
RATIO = 10  # train:test = 9:1


def test_size(total, ratio=RATIO):
    """
    round(total / ratio), halves rounded up.
    """
    return (total + ratio // 2) // ratio


class DatasetSplit(object):

    def __init__(self, train, test, seed):
        self.train = list(train)
        self.test = list(test)
        self.seed = seed

    def __len__(self):
        return len(self.train) + len(self.test)

    def to_dict(self):
        return collections.OrderedDict([
            ("seed", self.seed),
            ("train", [list(k) for k in self.train]),
            ("test", [list(k) for k in self.test]),
        ])

    @classmethod
    def from_dict(cls, d):
        return cls([tuple(k) for k in d["train"]], [tuple(k) for k in d["test"]], d["seed"])

    def dumps(self):
        return json.dumps(self.to_dict()) + "\n"


def split_keys(keys, seed, ratio=RATIO):
    """
    Shuffles `keys` with a PRNG seeded by `seed`; the first round(n / 10) go to test. Both sides
    are returned in their original relative order.

    :rtype: DatasetSplit
    """
    keys = list(keys)
    if len(keys) < MIN_FRAMES:
        raise chorus.exceptions.ArgumentError(
            "a split needs at least {} frames, got {}".format(MIN_FRAMES, len(keys)))
    if len(set(keys)) != len(keys):
        raise chorus.exceptions.ArgumentError("frame keys are not unique")
    n_test = test_size(len(keys), ratio)
    permutation = np.random.default_rng(seed).permutation(len(keys))
    is_test = np.zeros(len(keys), dtype=bool)
    is_test[permutation[:n_test]] = True
    split = DatasetSplit([k for k, t in zip(keys, is_test) if not t], [k for k, t in zip(keys, is_test) if t], seed)
    logger.info("split {} frames into {} train / {} test (seed {})".format(len(keys), len(split.train),
                                                                         len(split.test), seed))
    return split


def split_dataset(dataset, seed, ratio=RATIO):
    """
    :param chorus.data.records.VgsDataset dataset:
    :rtype: DatasetSplit over its (video, frame) keys.
    """
    return split_keys(dataset.frame_keys(), seed, ratio)


def write_split(path, split):
    chorus.atomic.write_text(path, split.dumps())
