# -------------------------------------------------------------
# metrics.py - Dice, aggregated Jaccard index and panoptic quality
# -------------------------------------------------------------

"""
Instance segmentation metrics over label maps.

Label maps are H x W integer arrays, 0 being background and every other
value one instance. All metrics are percentages; when both maps are empty
every metric is 100.

Each image is first reduced to an :class:`ImageScores` holding its metrics
and the raw sums behind them, so that a set of images can be aggregated
either as the mean of per-image values or by pooling the sums.

"""

__all__ = (
    'MetricsReport',
    'ImageScores',
    'dice',
    'aji',
    'pq',
    'score_image',
    'aggregate',
    'format_table',
)

import logging
from typing import NamedTuple

import numpy as np
import pandas as pd

from boundseg.common import exceptions

logger = logging.getLogger(__name__)
logger.debug('Entered module: %s', __name__)

# Instances match for PQ iff their IoU is strictly above this
PQ_MATCH_IOU = 0.5

AGGREGATIONS = ("mean", "pooled")


class MetricsReport(NamedTuple):
    """ Aggregated metrics, percentages except the match counts """
    dice: float
    aji: float
    pq: float
    sq: float
    rq: float
    tp: int
    fp: int
    fn: int

    def to_dict(self):
        return {key: (int(value) if key in ("tp", "fp", "fn")
                      else float(value))
                for key, value in self._asdict().items()}

    @staticmethod
    def from_dict(entry):
        return MetricsReport(**{key: entry[key]
                                for key in MetricsReport._fields})


class ImageScores(NamedTuple):
    """ Metrics of one image and the sums they are made of """
    dice: float
    aji: float
    pq: float
    sq: float
    rq: float
    tp: int
    fp: int
    fn: int
    iou_sum: float
    dice_overlap: int
    dice_total: int
    aji_intersection: int
    aji_union: int


def _check(pred, gt):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise exceptions.ShapeError("prediction {} vs ground truth {}".format(
            pred.shape, gt.shape))
    return pred, gt


def _overlaps(pred, gt):
    """
    Pixel counts of every (prediction, ground truth) pair.

    :return:
        (intersections P x G, prediction areas P, ground truth areas G), ids
        in increasing order with the background left out.

    """
    pred_ids = np.unique(pred[pred > 0])
    gt_ids = np.unique(gt[gt > 0])
    p_index = np.searchsorted(pred_ids, pred) + 1
    p_index[pred <= 0] = 0
    g_index = np.searchsorted(gt_ids, gt) + 1
    g_index[gt <= 0] = 0
    width = len(gt_ids) + 1
    joint = np.bincount((p_index * width + g_index).ravel(),
                        minlength=(len(pred_ids) + 1) * width)
    joint = joint.reshape(len(pred_ids) + 1, width)
    return joint[1:, 1:], joint[1:].sum(axis=1), joint[:, 1:].sum(axis=0)


def _dice_sums(pred, gt):
    fore_p, fore_g = pred > 0, gt > 0
    return 2 * int(np.count_nonzero(fore_p & fore_g)), \
        int(np.count_nonzero(fore_p) + np.count_nonzero(fore_g))


def _percent(numerator, denominator):
    return 100.0 if denominator == 0 else 100.0 * numerator / denominator


def dice(pred, gt):
    """
    Dice of the binarised foregrounds, in percent.

    :raises exceptions.ShapeError:
        If the maps differ in shape.

    """
    pred, gt = _check(pred, gt)
    return _percent(*_dice_sums(pred, gt))


def _aji_sums(inter, p_area, g_area):
    """ Greedy matching of every ground truth instance to its best IoU """
    intersection = union = 0
    used = np.zeros(len(p_area), dtype=bool)
    for g in range(len(g_area)):
        if len(p_area):
            unions = p_area + g_area[g] - inter[:, g]
            iou = inter[:, g] / unions
            best = int(np.argmax(iou))
        if len(p_area) and iou[best] > 0:
            intersection += int(inter[best, g])
            union += int(unions[best])
            used[best] = True
        else:
            union += int(g_area[g])
    union += int(p_area[~used].sum())
    return intersection, union


def aji(pred, gt):
    """
    Aggregated Jaccard index, in percent.

    Every ground truth instance is matched to the prediction of highest IoU
    with it (a prediction may be matched more than once); matched
    intersections are summed over matched unions plus the areas of
    unmatched instances on both sides.

    :raises exceptions.ShapeError:
        If the maps differ in shape.

    """
    pred, gt = _check(pred, gt)
    return _percent(*_aji_sums(*_overlaps(pred, gt)))


def _pq_counts(inter, p_area, g_area):
    unions = p_area[:, None] + g_area[None, :] - inter
    iou = inter / np.maximum(unions, 1)
    matched = iou > PQ_MATCH_IOU
    tp = int(matched.sum())
    return tp, len(p_area) - tp, len(g_area) - tp, float(iou[matched].sum())


def _pq_values(tp, fp, fn, iou_sum):
    if tp + fp + fn == 0:
        return 100.0, 100.0, 100.0
    sq = 100.0 * iou_sum / tp if tp else 0.0
    rq = 100.0 * tp / (tp + 0.5 * fp + 0.5 * fn)
    return sq * rq / 100.0, sq, rq


def pq(pred, gt):
    """
    Panoptic quality.

    Instances match iff their IoU exceeds 0.5, which makes matches unique.

    :raises exceptions.ShapeError:
        If the maps differ in shape.
    :return:
        (pq, sq, rq, tp, fp, fn).

    """
    pred, gt = _check(pred, gt)
    tp, fp, fn, iou_sum = _pq_counts(*_overlaps(pred, gt))
    return _pq_values(tp, fp, fn, iou_sum) + (tp, fp, fn)


def score_image(pred, gt):
    """ All metrics of one image, see :class:`ImageScores` """
    pred, gt = _check(pred, gt)
    inter, p_area, g_area = _overlaps(pred, gt)
    dice_overlap, dice_total = _dice_sums(pred, gt)
    aji_inter, aji_union = _aji_sums(inter, p_area, g_area)
    tp, fp, fn, iou_sum = _pq_counts(inter, p_area, g_area)
    pq_value, sq, rq = _pq_values(tp, fp, fn, iou_sum)
    return ImageScores(_percent(dice_overlap, dice_total),
                       _percent(aji_inter, aji_union), pq_value, sq, rq, tp,
                       fp, fn, iou_sum, dice_overlap, dice_total, aji_inter,
                       aji_union)


def aggregate(scores, mode="mean"):
    """
    Combine per-image scores into a report.

    PQ, SQ and RQ are always computed from the summed match counts and IoUs,
    so that pq = sq * rq / 100 holds for the report.

    :param scores:
        Iterable of :class:`ImageScores`.
    :param mode:
        "mean" averages per-image Dice and AJI; "pooled" divides their
        summed numerators by their summed denominators.
    :return:
        A :class:`MetricsReport`; all 100 for an empty set.

    """
    if mode not in AGGREGATIONS:
        raise ValueError("Unknown aggregation: {}".format(mode))
    scores = list(scores)
    tp = sum(s.tp for s in scores)
    fp = sum(s.fp for s in scores)
    fn = sum(s.fn for s in scores)
    pq_value, sq, rq = _pq_values(tp, fp, fn, sum(s.iou_sum for s in scores))

    if not scores:
        dice_value = aji_value = 100.0
    elif mode == "mean":
        dice_value = float(np.mean([s.dice for s in scores]))
        aji_value = float(np.mean([s.aji for s in scores]))
    else:
        dice_value = _percent(sum(s.dice_overlap for s in scores),
                              sum(s.dice_total for s in scores))
        aji_value = _percent(sum(s.aji_intersection for s in scores),
                             sum(s.aji_union for s in scores))
    return MetricsReport(dice_value, aji_value, pq_value, sq, rq, tp, fp, fn)


def format_table(rows, label="Amount of labels"):
    """
    Format reports as a Dice / AJI / PQ table.

    :param rows:
        Iterable of (row label, :class:`MetricsReport`).
    :param label:
        Header of the first column.
    :return:
        A list of lines.

    """
    frame = pd.DataFrame(
        [{label: name, "Dice": report.dice, "AJI": report.aji,
          "PQ": report.pq} for name, report in rows],
        columns=[label, "Dice", "AJI", "PQ"])
    text = frame.to_string(index=False, float_format="{:.2f}".format)
    return text.splitlines()
