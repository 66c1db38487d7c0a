# -------------------------------------------------------------
# losses.py - segmentation, detection and contrastive losses
# -------------------------------------------------------------

"""
Every loss of the teacher and student networks.

* :func:`seg_loss` - per-pixel binary cross-entropy, optionally weighted;
* :func:`det_loss` - anchor classification and box regression;
* :func:`cl_term` - InfoNCE over cosine similarities;
* :func:`crc_loss` - the four cross-RoI contrastive terms;
* :func:`teacher_loss` and :func:`student_loss` - the stage totals.

All losses take and return torch tensors and are differentiable in every
floating point input.

"""

__all__ = (
    'LossWeights',
    'seg_loss',
    'match_anchors',
    'det_loss',
    'cl_term',
    'crc_loss',
    'teacher_loss',
    'student_loss',
)

import logging
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torchvision import ops

from boundseg.common import config, exceptions
from boundseg.segment import model as net

logger = logging.getLogger(__name__)
logger.debug('Entered module: %s', __name__)

# Anchor matching thresholds on IoU
POSITIVE_IOU = 0.5
NEGATIVE_IOU = 0.3

# Anchor labels
_NEGATIVE, _IGNORED, _POSITIVE = 0, -1, 1


class LossWeights(NamedTuple):
    """
    Weights of the student loss and the contrastive temperature.

    .. attribute:: w1:
        Weight of the naive mask head loss.
    .. attribute:: w2:
        Weight of the low-resolution head loss.
    .. attribute:: w3:
        Weight of the contrastive loss.
    .. attribute:: tau:
        Temperature of the contrastive loss, > 0.

    """
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1.0
    tau: float = 0.1

    @staticmethod
    def from_config():
        loss = config.get_section("Loss")
        return LossWeights(loss.getfloat("w1"), loss.getfloat("w2"),
                           loss.getfloat("w3"), loss.getfloat("tau"))

    def validate(self):
        if min(self.w1, self.w2, self.w3) < 0:
            raise ValueError("Loss weights must be non-negative: {}"
                             .format(self))
        if self.tau <= 0:
            raise ValueError("Temperature must be positive, got {}"
                             .format(self.tau))
        return self


def seg_loss(logits, target, weights=None):
    """
    Mean per-pixel binary cross-entropy of sigmoid(logits).

    :param logits:
        Real tensor of any shape.
    :param target:
        Binary tensor (or array) of the same shape.
    :param weights:
        Per-pixel weights of the same shape; all ones if None.
    :raises exceptions.ShapeError:
        If the shapes disagree.

    """
    target = torch.as_tensor(target, device=logits.device).to(logits.dtype)
    if target.shape != logits.shape:
        raise exceptions.ShapeError("logits {} vs target {}".format(
            tuple(logits.shape), tuple(target.shape)))
    if weights is not None:
        weights = torch.as_tensor(weights, device=logits.device) \
            .to(logits.dtype)
        if weights.shape != logits.shape:
            raise exceptions.ShapeError("logits {} vs weights {}".format(
                tuple(logits.shape), tuple(weights.shape)))
    if logits.numel() == 0:
        return logits.sum()
    return F.binary_cross_entropy_with_logits(logits, target, weight=weights,
                                              reduction="mean")


def _target_boxes(targets, like):
    if isinstance(targets, torch.Tensor):
        boxes = targets
    else:
        boxes = torch.tensor(
            [t.box if isinstance(t, net.Detection) else t for t in targets],
            dtype=like.dtype)
    return boxes.to(device=like.device, dtype=like.dtype).reshape(-1, 4)


def match_anchors(anchors, targets):
    """
    Label anchors against target boxes.

    An anchor is positive when its best IoU is at least 0.5, negative below
    0.3 and ignored in between. A target whose best anchors all fall in the
    ignored band claims them, so small or elongated nuclei that no anchor
    covers at 0.5 still get a positive. Anchors below 0.3 stay negative.

    :param anchors:
        K x 4 tensor.
    :param targets:
        T x 4 tensor (or a list of boxes or :class:`model.Detection`).
    :return:
        (labels, matched target index), both K long tensors.

    """
    boxes = _target_boxes(targets, anchors)
    labels = torch.full((len(anchors),), _NEGATIVE, dtype=torch.long,
                        device=anchors.device)
    matched = torch.zeros(len(anchors), dtype=torch.long,
                          device=anchors.device)
    if len(boxes) == 0:
        return labels, matched

    iou = ops.box_iou(anchors, boxes)
    best_iou, matched = iou.max(dim=1)
    labels[best_iou >= NEGATIVE_IOU] = _IGNORED
    labels[best_iou >= POSITIVE_IOU] = _POSITIVE

    best_per_target = iou.max(dim=0).values
    low_quality = (iou == best_per_target[None, :]) \
        & (best_per_target[None, :] >= NEGATIVE_IOU)
    anchor_idx, target_idx = torch.nonzero(low_quality, as_tuple=True)
    labels[anchor_idx] = _POSITIVE
    matched[anchor_idx] = target_idx
    return labels, matched


def det_loss(logits, deltas, anchors, targets):
    """
    Detection loss of one image.

    Binary cross-entropy on the objectness of every non-ignored anchor,
    positives and negatives each weighted to half of the total when both
    are present, plus smooth-L1 (beta 1) on the box offsets of positive
    anchors, summed over coordinates and divided by the number of positives.

    :param logits:
        K objectness logits.
    :param deltas:
        K x 4 predicted offsets, see :func:`model.encode_boxes`.
    :param anchors:
        K x 4 anchor boxes.
    :param targets:
        Target boxes; none gives a pure negative classification loss.

    """
    if logits.shape[0] != anchors.shape[0] or deltas.shape != anchors.shape:
        raise exceptions.ShapeError(
            "{} logits, {} deltas, {} anchors".format(
                tuple(logits.shape), tuple(deltas.shape),
                tuple(anchors.shape)))
    boxes = _target_boxes(targets, anchors)
    labels, matched = match_anchors(anchors.detach(), boxes)

    positive = labels == _POSITIVE
    negative = labels == _NEGATIVE
    n_positive, n_negative = int(positive.sum()), int(negative.sum())
    weights = torch.zeros_like(logits)
    if n_positive and n_negative:
        weights[positive] = 0.5 / n_positive
        weights[negative] = 0.5 / n_negative
    elif n_positive or n_negative:
        weights[positive | negative] = 1.0 / (n_positive + n_negative)
    cls = F.binary_cross_entropy_with_logits(
        logits, positive.to(logits.dtype), weight=weights,
        reduction="sum")

    if n_positive == 0:
        return cls + deltas.sum() * 0.0
    target_deltas = net.encode_boxes(anchors[positive],
                                     boxes[matched[positive]])
    reg = F.smooth_l1_loss(deltas[positive], target_deltas, beta=1.0,
                           reduction="sum") / max(1, n_positive)
    return cls + reg


def _stack(vectors, like=None):
    if isinstance(vectors, torch.Tensor):
        return vectors.reshape(-1, vectors.shape[-1])
    vectors = list(vectors)
    if not vectors:
        dim = like.shape[-1] if like is not None else 0
        dtype = like.dtype if like is not None else torch.float32
        return torch.zeros((0, dim), dtype=dtype)
    return torch.stack([torch.as_tensor(v) for v in vectors])


def _check_norms(vectors, name):
    norms = torch.linalg.vector_norm(vectors.detach(), dim=-1)
    if bool((norms == 0).any()):
        raise exceptions.ContrastiveInputError(
            "zero-norm vector among the {}".format(name))
    return torch.linalg.vector_norm(vectors, dim=-1)


def cl_term(q, positives, negatives, tau):
    """
    InfoNCE of one query over cosine similarities.

    Returns the mean over positives k+ of -log(e(k+) / (e(k+) + sum e(k-))),
    where e(k) = exp(cos(q, k) / tau).

    :param q:
        D tensor.
    :param positives:
        P x D tensor (or list of D tensors), P >= 1.
    :param negatives:
        N x D tensor (or list), N may be 0.
    :param tau:
        Temperature.
    :raises exceptions.ContrastiveInputError:
        If there is no positive or any vector has zero norm.

    """
    positives = _stack(positives, q)
    negatives = _stack(negatives, q)
    if positives.shape[0] == 0:
        raise exceptions.ContrastiveInputError("no positive key")
    if positives.shape[-1] != q.shape[-1] or (
            negatives.shape[0] and negatives.shape[-1] != q.shape[-1]):
        raise exceptions.ShapeError("keys and query differ in dimension")

    q_norm = _check_norms(q.reshape(1, -1), "queries")
    pos_sim = positives @ q / (_check_norms(positives, "positives") * q_norm)
    if negatives.shape[0]:
        neg_sim = negatives @ q / (_check_norms(negatives, "negatives")
                                   * q_norm)
    else:
        neg_sim = q.new_zeros((0,))

    logits = torch.cat((pos_sim[:, None],
                        neg_sim[None, :].expand(len(pos_sim), -1)), dim=1)
    logits = logits / tau
    return (torch.logsumexp(logits, dim=1) - logits[:, 0]).mean()


def crc_loss(q_b, q_f, k_back, k_out, k_fore, k_inn, tau, allow_empty=False):
    """
    The four cross-RoI contrastive terms.

    CL(q_b, k_back, k_fore) + CL(q_b, k_out, k_inn) + CL(q_f, k_fore, k_back)
    + CL(q_f, k_inn, k_out), where each key set already concatenates the
    keys of both RoIs.

    :param allow_empty:
        Drop the terms whose positive set is empty instead of raising; used
        when the bands are empty (zero band distance).

    """
    terms = ((q_b, k_back, k_fore), (q_b, k_out, k_inn),
             (q_f, k_fore, k_back), (q_f, k_inn, k_out))
    total = None
    for query, positives, negatives in terms:
        positives = _stack(positives, query)
        if positives.shape[0] == 0 and allow_empty:
            continue
        term = cl_term(query, positives, negatives, tau)
        total = term if total is None else total + term
    if total is None:
        return q_b.sum() * 0.0 + q_f.sum() * 0.0
    return total


def teacher_loss(seg, det):
    """ Teacher total: segmentation plus detection loss """
    return seg + det


def student_loss(det, nmh, lrd, cl, weights):
    """
    Student total: det + w1 * nmh + w2 * lrd + w3 * cl.

    :param weights:
        A :class:`LossWeights`.

    """
    return det + weights.w1 * nmh + weights.w2 * lrd + weights.w3 * cl
