# -------------------------------------------------------------
# split.py - labeled/unlabeled/val/test partitions of scenes
# -------------------------------------------------------------

"""
Partitions scene ids into the four splits used by the pipeline.

Scenes are first divided 6:2:2 into train, val and test; the training
portion is then divided into labeled and unlabeled scenes at the requested
ratio. Splitting is done per scene so that overlapping patches of a scene
never end up on both sides of a split.

"""

__all__ = (
    'DatasetSplit',
    'make_split',
    'write_split',
    'read_split',
    'SPLIT_MANIFEST',
)

import fractions
import logging
import os
from typing import List, NamedTuple

import numpy as np

from boundseg.common import config, consts, data_io, exceptions, util

logger = logging.getLogger(__name__)
logger.debug('Entered module: %s', __name__)

SPLIT_MANIFEST = "split.json"


class DatasetSplit(NamedTuple):
    """
    Scene ids of every partition, with the ratio and seed that made them.

    .. attribute:: ratio:
        The labeled fraction as a string, e.g. "1/4".

    """
    labeled: List[str]
    unlabeled: List[str]
    val: List[str]
    test: List[str]
    ratio: str
    seed: int

    def scenes(self, split):
        """ Scene ids of a :class:`consts.Split` (or its name) """
        return list(getattr(self, consts.Split(split).value))

    def to_dict(self):
        return self._asdict()


def _round_half_up(value):
    return int(value + fractions.Fraction(1, 2))


@util.log(logger)
def make_split(scene_ids, ratio, seed):
    """
    Split scene ids into labeled, unlabeled, val and test partitions.

    :param scene_ids:
        At least 8 distinct scene ids.
    :param ratio:
        The labeled fraction, one of 1/8, 1/4 and 1/2 (string or Fraction).
    :param seed:
        Seed of the shuffle.
    :return:
        A :class:`DatasetSplit`.

    """
    ratio = config.parse_fraction(ratio)
    if ratio not in {fractions.Fraction(r) for r in consts.LABEL_RATIOS}:
        raise ValueError("Labeled ratio must be one of {}, got {}"
                         .format(", ".join(consts.LABEL_RATIOS), ratio))
    scene_ids = list(scene_ids)
    if len(scene_ids) < 8:
        raise ValueError("At least 8 scenes are needed, got {}"
                         .format(len(scene_ids)))
    if len(set(scene_ids)) != len(scene_ids):
        raise ValueError("Scene ids must be unique")

    order = np.random.default_rng(seed).permutation(len(scene_ids))
    shuffled = [scene_ids[i] for i in order]

    total = sum(consts.SPLIT_PROPORTIONS)
    n = len(shuffled)
    n_train = _round_half_up(fractions.Fraction(
        n * consts.SPLIT_PROPORTIONS[0], total))
    n_val = _round_half_up(fractions.Fraction(
        n * consts.SPLIT_PROPORTIONS[1], total))
    n_val = min(n_val, n - n_train - 1)
    train = shuffled[:n_train]
    val = shuffled[n_train:n_train + n_val]
    test = shuffled[n_train + n_val:]

    n_labeled = min(max(_round_half_up(n_train * ratio), 1), n_train - 1)
    split = DatasetSplit(train[:n_labeled], train[n_labeled:], val, test,
                         str(ratio), int(seed))
    logger.info("Split %d scenes: %d labeled, %d unlabeled, %d val, %d test",
                n, len(split.labeled), len(split.unlabeled), len(split.val),
                len(split.test))
    return split


def write_split(directory, split):
    """ Write the split manifest of a dataset directory """
    data_io.write_json(os.path.join(directory, SPLIT_MANIFEST),
                       split.to_dict())


def read_split(directory):
    """
    Read the split manifest of a dataset directory.

    :raises exceptions.MissingArtifactError:
        If the dataset has no manifest.

    """
    path = os.path.join(directory, SPLIT_MANIFEST)
    if not os.path.isfile(path):
        raise exceptions.MissingArtifactError("No split manifest found", path)
    entry = data_io.read_json(path)
    return DatasetSplit(**{field: entry[field]
                           for field in DatasetSplit._fields})
