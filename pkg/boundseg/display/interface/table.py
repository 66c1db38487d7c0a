# -------------------------------------------------------------
# table.py - formats ablation results as text and CSV tables
# -------------------------------------------------------------

"""
Formats the per-value medians of an ablation result as a table.

The text table has one row per grid value with the Dice, AJI and PQ medians
and the number of successful and failed runs; a value whose runs all failed
shows "failed" instead of metrics.

"""

__all__ = ("Table", "AXIS_LABELS")

import logging
from typing import NamedTuple

from boundseg.common import consts, util
from boundseg.display.interface.generic_display import GenericDisplay

logger = logging.getLogger(__name__)
logger.debug('Entered module: %s', __name__)

# Header of the first column for every ablation axis
AXIS_LABELS = {
    consts.AblationAxis.HEADS: "Heads",
    consts.AblationAxis.ALPHA: "Alpha",
    consts.AblationAxis.DISTANCE: "Distance",
    consts.AblationAxis.RATIO: "Amount of labels",
}


def row_label(axis, value):
    """ Head combinations are written upper case, NMH+LRD+CRC """
    if axis is consts.AblationAxis.HEADS:
        return value.upper()
    return value


class Table(GenericDisplay):
    """
    A Dice / AJI / PQ table of an ablation result.

    """

    class DisplayOptions(NamedTuple):
        """
        - precision: decimals printed for every metric
        """
        precision: int = 2

    @util.log(logger)
    def __init__(self, result, precision=2):
        super().__init__(result)
        self.display_options = self.DisplayOptions(precision)
        self.axis = consts.AblationAxis(result.axis)

    def frame(self):
        """
        The printed columns as a `pd.DataFrame`.

        """
        frame = self.summary[["dice", "aji", "pq", "runs", "failed"]].copy()
        frame.columns = ["Dice", "AJI", "PQ", "Runs", "Failed"]
        frame.index = [row_label(self.axis, value) for value in frame.index]
        frame.index.name = AXIS_LABELS[self.axis]
        return frame

    def lines(self):
        """
        The formatted table.

        :return:
            A list of lines.

        """
        precision = self.display_options.precision
        text = self.frame().reset_index().to_string(
            index=False, na_rep="failed",
            float_format=lambda x: "{:.{}f}".format(x, precision))
        return text.splitlines()

    @util.Override(GenericDisplay)
    def save(self, path):
        """ Write the medians and the seed ranges as CSV """
        frame = self.summary.copy()
        frame.index = [row_label(self.axis, value) for value in frame.index]
        frame.index.name = AXIS_LABELS[self.axis]
        frame.to_csv(path, float_format="%.4f")
        logger.info("Wrote the table of %d values to %s",
                    len(frame), path)
