# -----------------------------------------------------------------
# plotter.py - draws ablation results as bar charts or line plots
# -----------------------------------------------------------------

"""
Visualisers that draw the per-value medians of an ablation result.

Both plots show Dice, AJI and PQ against the grid values and are written as
static PNG files, without any interactive backend. With the spread
option, the range over seeds is drawn around every median: error bars on
bar charts, a shaded band on line plots.

"""

__all__ = ("BarChart", "LinePlot")

import logging
from typing import NamedTuple

import numpy as np
from matplotlib.figure import Figure

from boundseg.common import (
    config,
    consts,
    util,
)
from boundseg.display.interface.generic_display import GenericDisplay
from boundseg.display.interface.table import (
    AXIS_LABELS,
    row_label,
)

logger = logging.getLogger(__name__)
logger.debug('Entered module: %s', __name__)

_SERIES = (("dice", "Dice"), ("aji", "AJI"), ("pq", "PQ"))


class _MetricPlot(GenericDisplay):
    """
    Base class of the ablation plots.

    """

    class DisplayOptions(NamedTuple):
        """
        - dpi: resolution of the written image
        - spread: whether the min-max range over seeds is drawn
        """
        dpi: int
        spread: bool

    @util.log(logger)
    def __init__(self, result):
        super().__init__(result)
        self.display_options = self.DisplayOptions(
            config.get_option_from_section("Plot", "dpi", typ="int"),
            config.get_option_from_section("Plot", "spread", typ="bool"))
        self.axis = consts.AblationAxis(result.axis)
        self.labels = [row_label(self.axis, value)
                       for value in self.summary.index]

    def _errors(self, key):
        """ Distances from the median to the seed minimum and maximum """
        median = self.summary[key].to_numpy()
        return np.vstack((median - self.summary[key + "_min"].to_numpy(),
                          self.summary[key + "_max"].to_numpy() - median))

    def _draw(self, ax):
        raise NotImplementedError

    @util.Override(GenericDisplay)
    def save(self, path):
        fig = Figure(figsize=(6, 4))
        ax = fig.subplots()
        self._draw(ax)
        ax.set_xlabel(AXIS_LABELS[self.axis])
        ax.set_ylabel("Score (%)")
        ax.set_title("Ablation over {}".format(self.axis.value))
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, dpi=self.display_options.dpi)
        logger.info("Wrote the %s plot to %s", self.axis.value, path)


class BarChart(_MetricPlot):
    """
    Grouped bars, one group per grid value.

    """
    width = 0.25

    @util.Override(_MetricPlot)
    def _draw(self, ax):
        positions = np.arange(len(self.labels))
        for offset, (key, name) in enumerate(_SERIES):
            errors = self._errors(key) if self.display_options.spread \
                else None
            ax.bar(positions + (offset - 1) * self.width,
                   self.summary[key].to_numpy(), self.width, yerr=errors,
                   capsize=3, label=name)
        ax.set_xticks(positions)
        ax.set_xticklabels(self.labels)


class LinePlot(_MetricPlot):
    """
    One line per metric over numeric grid values.

    """

    @util.Override(_MetricPlot)
    def _draw(self, ax):
        try:
            positions = np.array([float(config.parse_fraction(value))
                                  for value in self.labels])
        except ValueError as ve:
            raise ValueError("A line plot needs numeric grid values, got {}"
                             .format(", ".join(self.labels))) from ve
        for key, name in _SERIES:
            median = self.summary[key].to_numpy()
            ax.plot(positions, median, marker="o", label=name)
            if self.display_options.spread:
                ax.fill_between(positions,
                                self.summary[key + "_min"].to_numpy(),
                                self.summary[key + "_max"].to_numpy(),
                                alpha=0.2)
        ax.set_xticks(positions)
        ax.set_xticklabels(self.labels)
