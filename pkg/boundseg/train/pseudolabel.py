# -------------------------------------------------------------
# pseudolabel.py - teacher inference, filtering and the student set
# -------------------------------------------------------------

"""
Pseudo-labels of the unlabeled images.

The frozen teacher is run once over every unlabeled image; its detections
are filtered by score (t_box) and their mask probabilities binarised at
t_pix. The surviving instances, pasted into an instance label map, supervise
the student together with the human-labeled images.

Pseudo-labels are stored per image in a directory:

* <id>.json - image id, image shape, thresholds, boxes and scores;
* <id>_instances.png - the pasted 16-bit instance map;
* <id>_mask28.png and <id>_mask14.png - the instance masks as strips.

"""

__all__ = (
    'PseudoInstance',
    'PseudoLabel',
    'TrainingRecord',
    'infer_teacher',
    'filter_pseudo',
    'paste_masks',
    'assemble_student_set',
    'save_pseudo',
    'load_pseudo',
    'stored_ids',
)

import glob
import logging
import os
from typing import List, NamedTuple, Tuple

import numpy as np
import torch
from skimage import segmentation

from boundseg.common import consts, data_io, exceptions, util
from boundseg.segment import geometry
from boundseg.segment import model as net

logger = logging.getLogger(__name__)
logger.debug('Entered module: %s', __name__)


class PseudoInstance(NamedTuple):
    """
    One retained teacher detection.

    .. attribute:: box:
        The :class:`model.Detection`.
    .. attribute:: mask28:
        28 x 28 booleans in box coordinates.
    .. attribute:: mask14:
        Majority downsampling of mask28 to 14 x 14.
    .. attribute:: score:
        The detection score, at least t_box.

    """
    box: net.Detection
    mask28: np.ndarray
    mask14: np.ndarray
    score: float


class PseudoLabel(NamedTuple):
    """ The filtered instances of one image and the thresholds used """
    image_id: str
    instances: List[PseudoInstance]
    thresholds: Tuple[float, float]

    def paste(self, shape):
        """ The instances pasted into an H x W instance label map """
        return paste_masks([(i.box.box, i.mask28, i.score)
                            for i in self.instances], shape)


class TrainingRecord(NamedTuple):
    """
    One image of a training set.

    .. attribute:: labels:
        Instance label map supervising the image: ground truth for human
        records, the pasted pseudo-label for pseudo records.
    .. attribute:: provenance:
        :class:`consts.Provenance` of the record.
    .. attribute:: mask_source:
        :class:`consts.Provenance` of the masks in `labels`.

    """
    image_id: str
    image: np.ndarray
    labels: np.ndarray
    provenance: consts.Provenance
    mask_source: consts.Provenance


@util.log(logger)
def infer_teacher(teacher, image):
    """
    Run the frozen teacher over one image.

    :param teacher:
        A :class:`model.NucleusNet` in eval mode.
    :param image:
        H x W x 3 array, or a 1 x 3 x H x W tensor.
    :return:
        A list of (Detection, 28 x 28 NMH probabilities) pairs.

    """
    if not isinstance(image, torch.Tensor):
        image = net.image_to_tensor(image)
    teacher.eval()
    return teacher.predict(image, use_nmh=True, use_lrd=False)[0]


def _check_threshold(name, value):
    if not 0.0 <= value <= 1.0:
        raise ValueError("{} must lie in [0, 1], got {}".format(name, value))


def filter_pseudo(raw, t_box, t_pix, image_id=""):
    """
    Keep confident detections and binarise their masks.

    Detections scoring below t_box are dropped, the remaining probability
    grids are binarised (probability >= t_pix) and instances left with an
    empty mask are dropped. Boolean masks count as already binarised, so
    filtering a :class:`PseudoLabel` again with the same thresholds returns
    it unchanged.

    :param raw:
        The output of :func:`infer_teacher`, or a :class:`PseudoLabel`.
    :param t_box, t_pix:
        Box score and pixel probability thresholds in [0, 1].
    :param image_id:
        Id of the image; taken from `raw` when it is a PseudoLabel.
    :return:
        A :class:`PseudoLabel`.

    """
    _check_threshold("t_box", t_box)
    _check_threshold("t_pix", t_pix)
    if isinstance(raw, PseudoLabel):
        image_id = raw.image_id
        raw = [(i.box, np.asarray(i.mask28, dtype=bool))
               for i in raw.instances]

    instances = []
    for detection, probs in raw:
        if detection.score < t_box:
            continue
        probs = np.asarray(probs)
        mask28 = probs if probs.dtype == bool else probs >= t_pix
        if not mask28.any():
            continue
        mask14 = geometry.downsample_majority(mask28, consts.ROI_SIZE,
                                              consts.ROI_SIZE)
        instances.append(PseudoInstance(detection, mask28, mask14,
                                        detection.score))
    return PseudoLabel(image_id, instances, (t_box, t_pix))


def _box_cells(lo, hi, limit):
    """ Pixel indices whose centre lies in [lo, hi), and their mask cells """
    first = max(0, int(np.floor(lo)))
    last = min(limit, int(np.ceil(hi)))
    centres = np.arange(first, last) + 0.5
    inside = (centres >= lo) & (centres < hi)
    pixels = np.arange(first, last)[inside]
    cells = np.floor((centres[inside] - lo) / (hi - lo)
                     * consts.MASK_SIZE).astype(int)
    return pixels, np.clip(cells, 0, consts.MASK_SIZE - 1)


def paste_masks(instances, shape):
    """
    Paste box-relative 28 x 28 masks into an instance label map.

    Every pixel whose centre falls in a box takes the value of the mask cell
    it lands in. Masks are pasted by increasing score, so the higher score
    wins on overlap; ids are then renumbered 1..K.

    :param instances:
        Iterable of ((x1, y1, x2, y2), 28 x 28 booleans, score).
    :param shape:
        (H, W) of the map.
    :return:
        H x W int32 label map.

    """
    labels = np.zeros(shape, dtype=np.int32)
    ranked = sorted(enumerate(instances), key=lambda item: item[1][2])
    for index, (box, mask, _) in ranked:
        x1, y1, x2, y2 = box
        rows, mask_rows = _box_cells(y1, y2, shape[0])
        cols, mask_cols = _box_cells(x1, x2, shape[1])
        if not len(rows) or not len(cols):
            continue
        covered = np.asarray(mask, dtype=bool)[np.ix_(mask_rows, mask_cols)]
        window = labels[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]
        window[covered] = index + 1
    labels, _, _ = segmentation.relabel_sequential(labels)
    return labels.astype(np.int32)


@util.log(logger)
def assemble_student_set(labeled, pseudo, labeled_ids=None):
    """
    Union of the labeled images and the pseudo-labeled images.

    The mask source of a record follows the argument it came through. Its
    provenance follows `labeled_ids` when given, so a labeled image that
    reaches the student through the pseudo-label store carries a human
    provenance and a pseudo mask, which the contrastive loss rejects.

    :param labeled:
        Iterable of (image id, image, ground truth label map).
    :param pseudo:
        Iterable of (image, :class:`PseudoLabel`).
    :param labeled_ids:
        Ids of the images of the labeled split; the ids of `labeled` if
        None.
    :raises exceptions.DuplicateRecordError:
        If an image id appears twice.
    :return:
        A list of :class:`TrainingRecord`, labeled records first.

    """
    records = []
    seen = set()

    def _add(record):
        if record.image_id in seen:
            raise exceptions.DuplicateRecordError(
                "Image {} appears twice in the student set"
                .format(record.image_id))
        seen.add(record.image_id)
        records.append(record)

    human, machine = consts.Provenance.HUMAN, consts.Provenance.PSEUDO

    def _provenance(image_id, default):
        if labeled_ids is None:
            return default
        return human if image_id in labeled_ids else machine

    for image_id, image, labels in labeled:
        _add(TrainingRecord(image_id, image, np.asarray(labels),
                            _provenance(image_id, human), human))
    for image, label in pseudo:
        _add(TrainingRecord(label.image_id, image,
                            label.paste(np.asarray(image).shape[:2]),
                            _provenance(label.image_id, machine), machine))
    logger.info("Student set: %d records (%d pseudo)", len(records),
                sum(r.provenance is machine for r in records))
    return records


def _sidecar(directory, image_id):
    return os.path.join(directory, image_id + ".json")


@util.log(logger)
def save_pseudo(directory, label, shape):
    """
    Write a pseudo-label to the store.

    :param directory:
        The store directory.
    :param label:
        The :class:`PseudoLabel`.
    :param shape:
        (H, W) of its image.

    """
    os.makedirs(directory, exist_ok=True)
    base = os.path.join(directory, label.image_id)
    data_io.write_json(_sidecar(directory, label.image_id), {
        "image_id": label.image_id,
        "shape": [int(v) for v in shape],
        "thresholds": [float(t) for t in label.thresholds],
        "instances": [{"box": [float(v) for v in i.box.box],
                       "score": float(i.score)} for i in label.instances],
    })
    data_io.write_labels(base + "_instances.png", label.paste(shape))
    if label.instances:
        data_io.write_mask_strip(base + "_mask28.png",
                                 [i.mask28 for i in label.instances])
        data_io.write_mask_strip(base + "_mask14.png",
                                 [i.mask14 for i in label.instances])


@util.log(logger)
def load_pseudo(directory, image_id):
    """
    Read a pseudo-label written by :func:`save_pseudo`.

    :raises exceptions.MissingArtifactError:
        If the store holds no record of the image.
    :raises exceptions.ArchiveFormatError:
        If the mask strips disagree with the sidecar.
    :return:
        (:class:`PseudoLabel`, pasted instance label map).

    """
    path = _sidecar(directory, image_id)
    if not os.path.isfile(path):
        raise exceptions.MissingArtifactError(
            "No pseudo-label for {}".format(image_id), path)
    sidecar = data_io.read_json(path)
    base = os.path.join(directory, image_id)
    entries = sidecar["instances"]

    instances = []
    if entries:
        masks28 = data_io.read_mask_strip(base + "_mask28.png",
                                          consts.MASK_SIZE)
        masks14 = data_io.read_mask_strip(base + "_mask14.png",
                                          consts.ROI_SIZE)
        if not len(masks28) == len(masks14) == len(entries):
            raise exceptions.ArchiveFormatError(
                "{} lists {} instances, its strips hold {} and {}".format(
                    path, len(entries), len(masks28), len(masks14)))
        for entry, mask28, mask14 in zip(entries, masks28, masks14):
            detection = net.Detection(tuple(entry["box"]), entry["score"])
            instances.append(PseudoInstance(detection, mask28, mask14,
                                            entry["score"]))
    label = PseudoLabel(sidecar["image_id"], instances,
                        tuple(sidecar["thresholds"]))
    return label, data_io.read_labels(base + "_instances.png")


def stored_ids(directory):
    """ Image ids held by a pseudo-label store, sorted """
    return sorted(os.path.basename(path)[:-len(".json")]
                  for path in glob.glob(os.path.join(directory, "*.json")))
