# -------------------------------------------------------------
# records.py - the JSON record of a training run
# -------------------------------------------------------------

"""
Run records.

A :class:`RunRecord` collects what a run did: the configuration it ran
with, the mean loss components of every epoch, the validation Dice after
every student epoch, the final metrics and the wall-clock time. It is
written as a flat JSON file in the run directory.

"""

__all__ = (
    'EpochLosses',
    'RunRecord',
)

import logging
import math
from typing import Dict, List, NamedTuple, Optional

from boundseg.common import data_io, util
from boundseg.segment import losses

logger = logging.getLogger(__name__)
logger.debug('Entered module: %s', __name__)


class EpochLosses(NamedTuple):
    """
    Mean loss components of one epoch.

    Teacher epochs leave lrd and cl at 0.

    """
    stage: str
    epoch: int
    det: float
    nmh: float
    lrd: float
    cl: float
    total: float
    steps: int
    skipped_pairs: int = 0

    @staticmethod
    def from_steps(stage, epoch, steps):
        """
        Average a list of per-step component dicts.

        :param steps:
            Dicts with keys det, nmh, lrd, cl, total and skipped_pairs.

        """
        count = max(1, len(steps))
        mean = {key: math.fsum(step[key] for step in steps) / count
                for key in ("det", "nmh", "lrd", "cl", "total")}
        return EpochLosses(stage, epoch, steps=len(steps),
                           skipped_pairs=sum(s.get("skipped_pairs", 0)
                                             for s in steps),
                           **mean)


class RunRecord(NamedTuple):
    """ Everything a run records about itself """
    config: Dict
    digest: str
    seed: int
    epochs: List[EpochLosses]
    val_dice: List[float]
    metrics: Dict[str, Dict]
    wall_clock: float

    @staticmethod
    def empty(train_config):
        return RunRecord(train_config.to_dict(), train_config.digest(),
                         train_config.seed, [], [], {}, 0.0)

    def check_bookkeeping(self, weights, tolerance=1e-6):
        """
        Does every student epoch total match the weighted sum of its parts?

        :param weights:
            The :class:`losses.LossWeights` of the run.

        """
        for epoch in self.epochs:
            if epoch.stage != "student":
                continue
            expected = losses.student_loss(epoch.det, epoch.nmh, epoch.lrd,
                                           epoch.cl, weights)
            if abs(expected - epoch.total) > tolerance * max(1.0,
                                                             abs(expected)):
                return False
        return True

    def to_dict(self):
        entry = self._asdict()
        entry["epochs"] = [epoch._asdict() for epoch in self.epochs]
        return entry

    @staticmethod
    def from_dict(entry):
        fields = dict(entry)
        fields["epochs"] = [EpochLosses(**epoch) for epoch in entry["epochs"]]
        return RunRecord(**{key: fields[key] for key in RunRecord._fields})

    @util.log(logger)
    def save(self, path):
        data_io.write_json(path, self.to_dict())

    @staticmethod
    @util.log(logger)
    def load(path):
        return RunRecord.from_dict(data_io.read_json(path))

    def final_metrics(self, split) -> Optional[Dict]:
        return self.metrics.get(split)
