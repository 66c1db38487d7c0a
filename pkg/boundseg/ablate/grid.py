# --------------------------------------------------------------------
# grid.py - runs ablation grids of training configurations
# --------------------------------------------------------------------

"""
Runs a grid of training configurations and collects their test metrics.

A grid varies one axis of the base configuration (the student heads, the
contrastive sampling ratio, the band distance or the labeled ratio) over a
list of values, and trains every value once per seed. A failing cell is
recorded with its error and never stops the other cells.

"""

__all__ = (
    "AblationSpec",
    "cell_config",
    "run_cell",
    "run_grid",
)

import concurrent.futures
import logging
import multiprocessing
import os
import traceback
from concurrent.futures.process import BrokenProcessPool
from typing import List, NamedTuple

from boundseg.common import (
    config,
    consts,
    data_io,
    output,
    util,
)
from boundseg.train import pipeline

logger = logging.getLogger(__name__)
logger.debug('Entered module: %s', __name__)


def _normalise(axis, value):
    """ The canonical spelling of a grid value, used as its row label """
    value = str(value).strip()
    if axis is consts.AblationAxis.HEADS:
        return pipeline.HeadFlags.parse(value).label()
    if axis is consts.AblationAxis.RATIO:
        fraction = config.parse_fraction(value)
        return "{}/{}".format(fraction.numerator, fraction.denominator)
    return "{:g}".format(float(value))


@util.log(logger)
def cell_config(base, axis, value):
    """
    The configuration of one grid value.

    :param base:
        The :class:`pipeline.TrainConfig` every cell starts from.
    :param axis:
        The :class:`consts.AblationAxis`.
    :param value:
        The grid value, as written on the command line.
    :raises ValueError:
        If the value is not valid for the axis.

    """
    if axis is consts.AblationAxis.HEADS:
        cfg = base._replace(head_flags=pipeline.HeadFlags.parse(value))
    elif axis is consts.AblationAxis.ALPHA:
        cfg = base._replace(alpha=float(value))
    elif axis is consts.AblationAxis.DISTANCE:
        cfg = base._replace(d=float(value))
    elif axis is consts.AblationAxis.RATIO:
        cfg = base._replace(ratio=_normalise(axis, value))
    else:
        raise ValueError("Unknown ablation axis: {}".format(axis))
    return cfg.validate()


class AblationSpec(NamedTuple):
    """
    A grid: one axis, its values, the seeds and the base configuration.

    """
    axis: consts.AblationAxis
    values: List[str]
    seeds: List[int]
    base: pipeline.TrainConfig

    @staticmethod
    def from_config(axis, values=None, seeds=None, base=None):
        """
        A grid with the [Ablation] defaults for anything not given.

        :param axis:
            A :class:`consts.AblationAxis` or its name.
        :raises ValueError:
            If the axis, a value or a seed is invalid.

        """
        axis = consts.AblationAxis(axis)
        if values is None:
            values = config.get_option_from_section("Ablation", axis.value,
                                                    "list")
        if seeds is None:
            seeds = config.get_option_from_section("Ablation", "seeds",
                                                   "list")
        base = base if base is not None \
            else pipeline.TrainConfig.from_config()
        spec = AblationSpec(axis, [_normalise(axis, v) for v in values],
                            [int(seed) for seed in seeds], base)
        return spec.validate()

    def validate(self):
        if not self.values:
            raise ValueError("An ablation grid needs at least one value")
        if not self.seeds:
            raise ValueError("An ablation grid needs at least one seed")
        if len(set(self.values)) != len(self.values):
            raise ValueError("Repeated grid values: {}".format(
                ", ".join(self.values)))
        for value in self.values:
            cell_config(self.base, self.axis, value)
        return self

    def digest(self, data_dir):
        """ Stable digest of the grid run on a dataset """
        return util.stable_digest({
            "axis": self.axis.value, "values": self.values,
            "seeds": self.seeds,
            "base": self.base._replace(
                data_dir=os.path.abspath(data_dir)).to_dict()})

    def cells(self):
        """ (value, seed, config) of every run, values first """
        return [(value, seed, cell_config(self.base, self.axis, value)
                 ._replace(seed=seed))
                for value in self.values for seed in self.seeds]


def run_cell(value, cfg, data_dir, root):
    """
    Train one cell of a grid.

    Any exception is caught and recorded in the result.

    :return:
        A :class:`data_io.CellResult` holding the test metrics or the error.

    """
    data_dir = os.path.abspath(data_dir)
    digest = cfg._replace(data_dir=data_dir).digest()
    try:
        record = pipeline.run_stages(cfg, data_dir, root=root)
        return data_io.CellResult(value, cfg.seed, digest,
                                  metrics=record.final_metrics("test"))
    except Exception as err:  # pylint: disable=broad-except
        logger.error("Cell %s (seed %d) failed:\n%s", value, cfg.seed,
                     traceback.format_exc())
        return data_io.CellResult(value, cfg.seed, digest,
                                  error="{}: {}".format(type(err).__name__,
                                                        err))


def _executor(workers):
    # Fork does not mix with the threads torch starts
    return concurrent.futures.ProcessPoolExecutor(
        max_workers=workers, mp_context=multiprocessing.get_context("spawn"))


@util.log(logger)
def run_grid(spec, data_dir, root=None, workers=1):
    """
    Train every cell of a grid.

    Cells sharing a teacher (same seed and teacher settings) reuse its
    checkpoint and pseudo-labels. With several workers the first cell of
    every teacher runs alone, so that the teacher is trained once, and the
    remaining cells run in worker processes.

    :param spec:
        The :class:`AblationSpec`.
    :param data_dir:
        The dataset directory.
    :param root:
        Parent of the run directories.
    :param workers:
        The number of worker processes.
    :return:
        A :class:`data_io.AblationResult`, cells in grid order.

    """
    data_dir = os.path.abspath(data_dir)
    root = root or pipeline.runs_root()
    cells = spec.cells()
    results = [None] * len(cells)

    pending = []
    teachers = set()
    for index, (value, _, cfg) in enumerate(cells):
        teacher = cfg._replace(data_dir=data_dir).teacher_digest()
        if workers > 1 and teacher in teachers:
            pending.append(index)
            continue
        teachers.add(teacher)
        logger.info("Running cell %s, seed %d", value, cfg.seed)
        results[index] = run_cell(value, cfg, data_dir, root)

    if pending:
        with _executor(workers) as executor:
            futures = {executor.submit(run_cell, cells[index][0],
                                       cells[index][2], data_dir, root):
                       index for index in pending}
            for future in output.progress(
                    concurrent.futures.as_completed(futures),
                    "Ablation cells", total=len(futures)):
                index = futures[future]
                try:
                    results[index] = future.result()
                except BrokenProcessPool as err:
                    value, seed, cfg = cells[index]
                    results[index] = data_io.CellResult(
                        value, seed, cfg._replace(data_dir=data_dir).digest(),
                        error="BrokenProcessPool: {}".format(err))

    failed = sum(1 for result in results if not result.ok)
    if failed:
        logger.warning("%d of %d ablation cells failed", failed,
                       len(results))
    return data_io.AblationResult(spec.axis.value, list(spec.values),
                                  list(spec.seeds), results)
