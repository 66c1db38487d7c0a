# -------------------------------------------------------------
# pipeline.py - teacher, pseudo-label and student training stages
# -------------------------------------------------------------

"""
The three training stages and evaluation.

1. The teacher is trained on the labeled images with the detection loss
   and the naive mask head loss.
2. The frozen teacher labels the unlabeled images; its filtered outputs are
   stored as pseudo-labels.
3. The student is trained on labeled and pseudo-labeled images with the
   detection loss and the losses of every enabled head: naive mask head,
   low-resolution head and cross-RoI contrastive learning.

Training RoIs are the ground truth (or pseudo-label) boxes, jittered; their
mask targets are the instance masks resampled into the box. Every stage
seeds all random generators from the configured seed, so a run is a pure
function of its configuration and data.

"""

__all__ = (
    'HeadFlags',
    'TrainConfig',
    'instance_boxes',
    'fit_boxes',
    'jitter_boxes',
    'mask_targets',
    'load_records',
    'resolve_split',
    'train_teacher',
    'generate_pseudo',
    'train_student',
    'predict_labels',
    'evaluate',
    'run_stages',
)

import logging
import os
import time
from typing import NamedTuple, Optional

import numpy as np
import torch
from scipy import ndimage
from torchvision import ops

from boundseg.common import (
    config,
    consts,
    data_io,
    exceptions,
    file,
    output,
    util,
)
from boundseg.datagen import scene as scenes
from boundseg.datagen import split as splits
from boundseg.evaluate import metrics
from boundseg.segment import crc, geometry, losses
from boundseg.segment import model as net_module
from boundseg.train import pseudolabel
from boundseg.train.records import EpochLosses, RunRecord

logger = logging.getLogger(__name__)
logger.debug('Entered module: %s', __name__)

_STAGE_INDEX = {consts.Stage.TEACHER: 0, consts.Stage.PSEUDO: 1,
                consts.Stage.STUDENT: 2}


class HeadFlags(NamedTuple):
    """ Which heads the student trains and predicts with """
    nmh: bool = True
    lrd: bool = True
    crc: bool = True

    @staticmethod
    def parse(text):
        """ Flags from "nmh+lrd" or "nmh,lrd,crc" style names """
        names = [name.strip() for name in text.replace("+", ",").split(",")
                 if name.strip()]
        unknown = set(names) - set(consts.head_argnames)
        if unknown:
            raise ValueError("Unknown heads: {}".format(
                ", ".join(sorted(unknown))))
        return HeadFlags(*(head.value in names for head in consts.Head))

    def label(self):
        return "+".join(head.value for head, on in
                        zip(consts.Head, self) if on)

    def validate(self):
        if not (self.nmh or self.lrd):
            raise ValueError("At least one mask head (nmh or lrd) must be "
                             "enabled, got {}".format(self.label() or "none"))
        return self


class TrainConfig(NamedTuple):
    """
    Every setting of a training run.

    Built from the config file with :meth:`from_config`; command line flags
    and ablation cells replace single fields with ``_replace``.

    """
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 0.001
    epochs_teacher: int = 30
    epochs_student: int = 30
    batch_size: int = 4
    loss_weights: losses.LossWeights = losses.LossWeights()
    alpha: float = 0.7
    d: float = 4
    t_box: float = 0.7
    t_pix: float = 0.5
    head_flags: HeadFlags = HeadFlags()
    seed: int = 0
    jitter: float = 0.1
    max_rois: int = 32
    grad_clip: float = 10.0
    lr_rescale: float = 0.1
    max_rescales: int = 1
    init_from_teacher: bool = False
    w_boundary: float = 0.2
    w_interior: float = 1.0
    band: float = 1
    band_scale: str = "roi"
    labeled_warmup: int = 0
    mask_fusion: str = "mean"
    aggregate: str = "mean"
    flip: bool = True
    model: net_module.ModelOptions = net_module.ModelOptions()
    ratio: Optional[str] = None
    data_dir: str = ""

    @staticmethod
    def from_config():
        """ Read the configuration from the config file """
        train = config.get_section("Train")
        loss = config.get_section("Loss")
        contrast = config.get_section("CRC")
        pseudo = config.get_section("Pseudo")
        heads = config.get_section("Heads")
        return TrainConfig(
            lr=train.getfloat("lr"),
            momentum=train.getfloat("momentum"),
            weight_decay=train.getfloat("weight_decay"),
            epochs_teacher=train.getint("epochs_teacher"),
            epochs_student=train.getint("epochs_student"),
            batch_size=train.getint("batch_size"),
            loss_weights=losses.LossWeights.from_config(),
            alpha=contrast.getfloat("alpha"),
            d=contrast.getfloat("distance"),
            t_box=pseudo.getfloat("t_box"),
            t_pix=pseudo.getfloat("t_pix"),
            head_flags=HeadFlags(heads.getboolean("nmh"),
                                 heads.getboolean("lrd"),
                                 heads.getboolean("crc")),
            seed=train.getint("seed"),
            jitter=train.getfloat("jitter"),
            max_rois=train.getint("max_rois_per_image"),
            grad_clip=train.getfloat("grad_clip"),
            lr_rescale=train.getfloat("lr_rescale"),
            max_rescales=train.getint("max_rescales"),
            init_from_teacher=train.getboolean("init_from_teacher"),
            w_boundary=loss.getfloat("w_boundary"),
            w_interior=loss.getfloat("w_interior"),
            band=loss.getfloat("band"),
            band_scale=contrast.get("band_scale"),
            labeled_warmup=contrast.getint("labeled_warmup"),
            mask_fusion=config.get_option_from_section("Model",
                                                       "mask_fusion"),
            aggregate=config.get_option_from_section("Eval", "aggregate"),
            flip=config.get_option_from_section("Data", "flip", "bool"),
            model=net_module.ModelOptions.from_config())

    def validate(self):
        """
        Check the ranges of the settings.

        :raises ValueError:
            On the first invalid setting.

        """
        self.loss_weights.validate()
        self.head_flags.validate()
        if self.lr <= 0 or self.batch_size < 1 or self.max_rois < 1:
            raise ValueError("lr, batch_size and max_rois must be positive")
        if self.epochs_teacher < 0 or self.epochs_student < 0:
            raise ValueError("Epoch counts must be non-negative")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1], got {}"
                             .format(self.alpha))
        if self.d < 0 or self.band < 0:
            raise ValueError("Band distances must be non-negative")
        for name in ("t_box", "t_pix"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError("{} must lie in [0, 1]".format(name))
        if self.band_scale not in crc.BAND_SCALES:
            raise ValueError("Unknown band scale: {}".format(self.band_scale))
        if self.aggregate not in metrics.AGGREGATIONS:
            raise ValueError("Unknown aggregation: {}".format(self.aggregate))
        if self.ratio is not None \
                and not 0 < config.parse_fraction(self.ratio) < 1:
            raise ValueError("The labeled ratio must lie in (0, 1), got {}"
                             .format(self.ratio))
        return self

    def to_dict(self):
        entry = self._asdict()
        for key in ("loss_weights", "head_flags", "model"):
            entry[key] = entry[key]._asdict()
        entry["model"]["anchor_scales"] = list(self.model.anchor_scales)
        return entry

    @staticmethod
    def from_dict(entry):
        fields = dict(entry)
        fields["loss_weights"] = losses.LossWeights(**entry["loss_weights"])
        fields["head_flags"] = HeadFlags(**entry["head_flags"])
        options = dict(entry["model"])
        options["anchor_scales"] = tuple(options["anchor_scales"])
        fields["model"] = net_module.ModelOptions(**options)
        return TrainConfig(**{key: fields[key]
                              for key in TrainConfig._fields})

    def digest(self):
        """ Stable digest of the whole configuration """
        return util.stable_digest(self.to_dict())

    def teacher_digest(self):
        """ Digest of the settings the teacher and pseudo-labels depend on """
        entry = self.to_dict()
        return util.stable_digest({key: entry[key] for key in (
            "lr", "momentum", "weight_decay", "epochs_teacher", "batch_size",
            "seed", "jitter", "max_rois", "grad_clip", "lr_rescale",
            "max_rescales", "flip", "model", "ratio", "data_dir")})


class _StepLosses(NamedTuple):
    det: torch.Tensor
    nmh: torch.Tensor
    lrd: torch.Tensor
    cl: torch.Tensor
    total: torch.Tensor
    skipped_pairs: int

    def as_floats(self):
        entry = {key: float(getattr(self, key))
                 for key in ("det", "nmh", "lrd", "cl", "total")}
        entry["skipped_pairs"] = self.skipped_pairs
        return entry


def instance_boxes(labels):
    """
    The instances of a label map and their tight boxes.

    :return:
        (ids, K x 4 float boxes (x1, y1, x2, y2) in pixels).

    """
    ids, boxes = [], []
    for index, found in enumerate(ndimage.find_objects(np.asarray(labels))):
        if found is None:
            continue
        rows, cols = found
        ids.append(index + 1)
        boxes.append((cols.start, rows.start, cols.stop, rows.stop))
    return np.array(ids, dtype=np.int64), \
        np.array(boxes, dtype=np.float64).reshape(-1, 4)


def fit_boxes(boxes, shape):
    """
    Order, enlarge and shift boxes so that each lies in the image and is at
    least :data:`model.MIN_BOX_SIZE` on a side.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    fitted = np.empty_like(boxes)
    for axis, limit in ((0, shape[1]), (1, shape[0])):
        lo = np.minimum(boxes[:, axis], boxes[:, axis + 2])
        hi = np.maximum(boxes[:, axis], boxes[:, axis + 2])
        size = np.clip(hi - lo, net_module.MIN_BOX_SIZE, limit)
        start = np.clip((lo + hi - size) / 2, 0, limit - size)
        fitted[:, axis], fitted[:, axis + 2] = start, start + size
    return fitted


def jitter_boxes(boxes, fraction, rng, shape):
    """ Move every box coordinate by up to `fraction` of the box size """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    sizes = np.tile(boxes[:, 2:] - boxes[:, :2], 2)
    noise = rng.uniform(-fraction, fraction, size=boxes.shape) * sizes
    return fit_boxes(boxes + noise, shape)


def mask_targets(labels, ids, boxes):
    """
    Instance masks resampled into their boxes.

    Each instance mask is bilinearly sampled at 28 x 28 points of its box
    and thresholded at 0.5; the 14 x 14 target is its majority downsampling.

    :return:
        (K x 28 x 28, K x 14 x 14) boolean arrays.

    """
    if not len(ids):
        return np.zeros((0, consts.MASK_SIZE, consts.MASK_SIZE), dtype=bool), \
            np.zeros((0, consts.ROI_SIZE, consts.ROI_SIZE), dtype=bool)
    labels = np.asarray(labels)
    masks = torch.from_numpy(np.stack([labels == i for i in ids])
                             .astype(np.float32)).unsqueeze(1)
    rois = torch.cat((torch.arange(len(ids), dtype=torch.float32)[:, None],
                      torch.as_tensor(boxes, dtype=torch.float32)), dim=1)
    soft = ops.roi_align(masks, rois, output_size=consts.MASK_SIZE,
                         spatial_scale=1.0, sampling_ratio=2, aligned=True)
    mask28 = (soft[:, 0] >= 0.5).numpy()
    mask14 = np.stack([geometry.downsample_majority(
        mask, consts.ROI_SIZE, consts.ROI_SIZE) for mask in mask28])
    return mask28, mask14


def resolve_split(data_dir, ratio=None):
    """
    The split of a dataset, re-drawn at another labeled ratio if asked.

    The val and test scenes only depend on the split seed, so changing the
    ratio only moves scenes between labeled and unlabeled.

    """
    split = splits.read_split(data_dir)
    if ratio is None or config.parse_fraction(ratio) == \
            config.parse_fraction(split.ratio):
        return split
    with data_io.DatasetReader(data_dir) as reader:
        scene_ids = reader.get_scene_ids()
    return splits.make_split(scene_ids, ratio, split.seed)


@util.log(logger)
def load_records(data_dir, scene_ids,
                 provenance=consts.Provenance.HUMAN):
    """
    Read the patches of some scenes as training records.

    :return:
        A list of :class:`pseudolabel.TrainingRecord`.

    """
    with data_io.DatasetReader(data_dir) as reader:
        return [pseudolabel.TrainingRecord(patch_id, image, labels,
                                           provenance, provenance)
                for patch_id, image, labels in reader.get_patches(*scene_ids)]


def _flip(record, rng):
    horizontal, vertical = rng.random(2) < 0.5
    flipped = scenes.flip_scene(scenes.SyntheticScene(record.image,
                                                      record.labels, []),
                                horizontal, vertical)
    return record._replace(image=flipped.image, labels=flipped.labels)


def _crc_loss(embeddings, masks14, masks28, sources, cfg, seed,
              human_only):
    """ Mean contrastive loss over the non-skipped RoI pairs of a batch """
    zero = embeddings.sum() * 0.0
    eligible = [k for k, (provenance, _) in enumerate(sources)
                if not human_only or provenance is consts.Provenance.HUMAN]
    if not eligible:
        return zero, 0

    masks = masks28 if cfg.band_scale == "mask" else masks14

    def _roi(k):
        provenance, mask_source = sources[k]
        return crc.CrcRoI(embeddings[k], masks[k], k, provenance, mask_source)

    total, used, skipped = zero, 0, 0
    for i, j in crc.pair_rois(len(eligible), seed):
        result = crc.crc_step(_roi(eligible[i]), _roi(eligible[j]), cfg.d,
                              cfg.alpha, cfg.loss_weights.tau, seed,
                              band_scale=cfg.band_scale)
        skipped += result.skipped
        if not result.skipped:
            total = total + result.loss
            used += 1
    return total / max(1, used), skipped


def _batch_losses(net, batch, cfg, stage, rng, seed, human_only=False):
    """
    Every loss of one mini-batch, sharing a single backbone pass.

    The teacher trains the naive mask head only; the student trains the
    heads of cfg.head_flags and disabled heads contribute exactly 0.

    """
    images = torch.cat([net_module.image_to_tensor(r.image) for r in batch])
    features = net.forward_backbone(images)
    logits, deltas = net.head_outputs(features)
    anchors = net.anchors(*features.shape[-2:], device=features.device)

    det = features.sum() * 0.0
    roi_boxes, roi_index, masks28, masks14, sources = [], [], [], [], []
    for b, record in enumerate(batch):
        ids, boxes = instance_boxes(record.labels)
        det = det + losses.det_loss(logits[b], deltas[b], anchors,
                                    torch.as_tensor(boxes,
                                                    dtype=logits.dtype))
        if len(ids) > cfg.max_rois:
            keep = np.sort(rng.choice(len(ids), cfg.max_rois, replace=False))
            ids, boxes = ids[keep], boxes[keep]
        boxes = jitter_boxes(boxes, cfg.jitter, rng, record.labels.shape)
        mask28, mask14 = mask_targets(record.labels, ids, boxes)
        roi_boxes.append(boxes)
        roi_index.extend([b] * len(ids))
        masks28.append(mask28)
        masks14.append(mask14)
        sources.extend([(record.provenance, record.mask_source)] * len(ids))
    det = det / len(batch)

    flags = cfg.head_flags if stage is consts.Stage.STUDENT \
        else HeadFlags(nmh=True, lrd=False, crc=False)
    zero = features.sum() * 0.0
    nmh = lrd = cl = zero
    skipped = 0
    if roi_index:
        masks28 = np.concatenate(masks28)
        masks14 = np.concatenate(masks14)
        rois = net.pool_rois(
            features, torch.as_tensor(np.concatenate(roi_boxes),
                                      dtype=features.dtype),
            torch.as_tensor(roi_index))
        if flags.nmh or flags.lrd:
            prediction = net.mask_heads(rois)
        if flags.nmh:
            nmh = losses.seg_loss(prediction.high_res, masks28)
        if flags.lrd:
            weights = np.stack([geometry.boundary_weight_map(
                mask, cfg.band, cfg.w_boundary, cfg.w_interior)
                for mask in masks14])
            lrd = losses.seg_loss(prediction.low_res, masks14, weights)
        if flags.crc:
            cl, skipped = _crc_loss(net.embed_head(rois), masks14, masks28,
                                    sources, cfg, seed, human_only)

    if stage is consts.Stage.STUDENT:
        total = losses.student_loss(det, nmh, lrd, cl, cfg.loss_weights)
    else:
        total = losses.teacher_loss(nmh, det)
    return _StepLosses(det, nmh, lrd, cl, total, skipped)


def _fill_missing_grads(net):
    """ Zero gradients for unused parameters, so weight decay still applies """
    for parameter in net.parameters():
        if parameter.grad is None:
            parameter.grad = torch.zeros_like(parameter)


def _fit(net, records, cfg, stage, epochs, after_epoch=None):
    """
    SGD over the records for a number of epochs.

    A step whose loss is not finite is skipped and the learning rate scaled
    by cfg.lr_rescale; after cfg.max_rescales such rescales the next one
    raises :class:`exceptions.DivergenceError`.

    :return:
        A list of :class:`records.EpochLosses`.

    """
    optimizer = torch.optim.SGD(net.parameters(), lr=cfg.lr,
                                momentum=cfg.momentum,
                                weight_decay=cfg.weight_decay)
    stage_index = _STAGE_INDEX[stage]
    history = []
    rescales = 0
    step = 0
    net.train()
    for epoch in output.progress(range(epochs),
                                 "Training {}".format(stage.value)):
        rng = np.random.default_rng(util.derive_seed(cfg.seed, stage_index,
                                                     epoch))
        order = rng.permutation(len(records))
        human_only = stage is consts.Stage.STUDENT \
            and epoch < cfg.labeled_warmup
        steps = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [records[i] for i in order[start:start + cfg.batch_size]]
            if cfg.flip:
                batch = [_flip(record, rng) for record in batch]
            step_losses = _batch_losses(
                net, batch, cfg, stage, rng,
                util.derive_seed(cfg.seed, stage_index, epoch, step),
                human_only)
            step += 1
            optimizer.zero_grad(set_to_none=True)

            if not torch.isfinite(step_losses.total):
                rescales += 1
                if rescales > cfg.max_rescales:
                    raise exceptions.DivergenceError(
                        "{} loss is not finite after {} learning rate "
                        "rescales".format(stage.value, cfg.max_rescales),
                        step)
                for group in optimizer.param_groups:
                    group["lr"] *= cfg.lr_rescale
                logger.warning("Non-finite %s loss at step %d, learning "
                               "rate now %g", stage.value, step,
                               optimizer.param_groups[0]["lr"])
                continue

            step_losses.total.backward()
            _fill_missing_grads(net)
            torch.nn.utils.clip_grad_norm_(net.parameters(), cfg.grad_clip)
            optimizer.step()
            steps.append(step_losses.as_floats())

        summary = EpochLosses.from_steps(stage.value, epoch, steps)
        logger.info("%s epoch %d: det %.4f nmh %.4f lrd %.4f cl %.4f "
                    "total %.4f (%d pairs skipped)", stage.value, epoch,
                    summary.det, summary.nmh, summary.lrd, summary.cl,
                    summary.total, summary.skipped_pairs)
        history.append(summary)
        if after_epoch is not None:
            after_epoch(net, epoch)
            net.train()
    net.eval()
    return history


@util.log(logger)
def train_teacher(cfg, records, checkpoint=None):
    """
    Train the teacher on labeled records.

    :param cfg:
        The :class:`TrainConfig`.
    :param records:
        Non-empty list of :class:`pseudolabel.TrainingRecord`.
    :param checkpoint:
        Where to save the trained teacher, if given.
    :return:
        (teacher network, list of :class:`records.EpochLosses`).

    """
    if not records:
        raise ValueError("The teacher needs at least one labeled record")
    util.seed_everything(util.derive_seed(cfg.seed, 0))
    teacher = net_module.NucleusNet(cfg.model)
    history = _fit(teacher, records, cfg, consts.Stage.TEACHER,
                   cfg.epochs_teacher)
    if checkpoint is not None:
        net_module.save_checkpoint(teacher, checkpoint)
    return teacher, history


@util.log(logger)
def generate_pseudo(cfg, teacher, images, store=None):
    """
    Label unlabeled images with the frozen teacher.

    :param images:
        Iterable of (image id, image).
    :param store:
        Pseudo-label store directory to write to, if given.
    :return:
        A list of (image, :class:`pseudolabel.PseudoLabel`).

    """
    teacher.eval()
    for parameter in teacher.parameters():
        parameter.requires_grad_(False)
    labelled = []
    for image_id, image in output.progress(list(images), "Pseudo-labels"):
        label = pseudolabel.filter_pseudo(
            pseudolabel.infer_teacher(teacher, image), cfg.t_box, cfg.t_pix,
            image_id)
        if store is not None:
            pseudolabel.save_pseudo(store, label, np.asarray(image).shape[:2])
        labelled.append((image, label))
    return labelled


@util.log(logger)
def train_student(cfg, records, teacher_checkpoint=None, checkpoint=None,
                  val_records=None):
    """
    Train the student on the union of labeled and pseudo-labeled records.

    :param records:
        The output of :func:`pseudolabel.assemble_student_set`.
    :param teacher_checkpoint:
        Teacher archive; read only, and only with cfg.init_from_teacher.
    :param checkpoint:
        Where to save the trained student, if given.
    :param val_records:
        Records whose Dice is measured after every epoch.
    :return:
        (student network, list of :class:`records.EpochLosses`, list of
        per-epoch validation Dice).

    """
    cfg.validate()
    if not records:
        raise ValueError("The student needs at least one record")
    util.seed_everything(util.derive_seed(cfg.seed, 2))
    student = net_module.NucleusNet(cfg.model)
    if cfg.init_from_teacher:
        if teacher_checkpoint is None:
            raise exceptions.MissingArtifactError(
                "Initialising from the teacher needs its checkpoint", None)
        teacher = net_module.load_checkpoint(teacher_checkpoint, cfg.model)
        student.load_state_dict(teacher.state_dict())

    val_dice = []

    def _validate(net, epoch):
        report, _ = evaluate(net, val_records, cfg)
        logger.info("Student epoch %d: validation Dice %.2f", epoch,
                    report.dice)
        val_dice.append(report.dice)

    history = _fit(student, records, cfg, consts.Stage.STUDENT,
                   cfg.epochs_student, _validate if val_records else None)
    if checkpoint is not None:
        net_module.save_checkpoint(student, checkpoint)
    return student, history, val_dice


def predict_labels(net, image, cfg, use_nmh=None, use_lrd=None):
    """
    Instance label map of one image.

    Detections are filtered at (t_box, t_pix) like pseudo-labels and pasted
    by increasing score.

    """
    use_nmh = cfg.head_flags.nmh if use_nmh is None else use_nmh
    use_lrd = cfg.head_flags.lrd if use_lrd is None else use_lrd
    raw = net.predict(net_module.image_to_tensor(image), use_nmh=use_nmh,
                      use_lrd=use_lrd, fusion=cfg.mask_fusion)[0]
    label = pseudolabel.filter_pseudo(raw, cfg.t_box, cfg.t_pix)
    return label.paste(np.asarray(image).shape[:2])


@util.log(logger)
def evaluate(net, records, cfg, use_nmh=None, use_lrd=None):
    """
    Metrics of a frozen network over labeled records.

    :param records:
        Iterable of records with image_id, image and labels.
    :param use_nmh, use_lrd:
        Heads to predict with; cfg.head_flags if None.
    :return:
        (:class:`metrics.MetricsReport`, dict of image id to
        :class:`metrics.ImageScores`).

    """
    net.eval()
    scores = {}
    for record in records:
        pred = predict_labels(net, record.image, cfg, use_nmh, use_lrd)
        scores[record.image_id] = metrics.score_image(pred, record.labels)
    ordered = [scores[key] for key in sorted(scores)]
    return metrics.aggregate(ordered, cfg.aggregate), scores


def _pseudo_ready(store, image_ids, cfg):
    """ Does the store hold every image, made with cfg's thresholds? """
    if not set(image_ids) <= set(pseudolabel.stored_ids(store)):
        return False
    for image_id in image_ids:
        label, _ = pseudolabel.load_pseudo(store, image_id)
        if tuple(label.thresholds) != (cfg.t_box, cfg.t_pix):
            return False
    return True


def _require(path, what):
    if not os.path.exists(path):
        raise exceptions.MissingArtifactError(
            "The {} stage has not been run".format(what), path)


def runs_root():
    return os.path.join(config.get_path("out_dir"), "runs")


@util.log(logger)
def run_stages(cfg, data_dir, stages=None, root=None):
    """
    Run the pipeline stages of a configuration.

    Teacher checkpoints and pseudo-labels live in a directory named by
    cfg.teacher_digest(), student artifacts in one named by cfg.digest().
    Without explicit stages every stage runs in order and reuses the
    artifacts already on disk; with explicit stages those stages are re-run
    and their inputs must exist.

    :param cfg:
        The :class:`TrainConfig`.
    :param data_dir:
        The dataset directory.
    :param stages:
        A collection of :class:`consts.Stage`, or None for all.
    :param root:
        Parent of the run directories.
    :raises exceptions.MissingArtifactError:
        If a requested stage misses an upstream artifact.
    :return:
        The :class:`records.RunRecord` of the student stage, None if it did
        not run.

    """
    started = time.perf_counter()
    cfg = cfg._replace(data_dir=os.path.abspath(data_dir)).validate()
    explicit = stages is not None
    stages = set(stages) if explicit else set(consts.Stage)
    root = root or runs_root()
    teacher_dir = file.RunDirectory(cfg.teacher_digest(), root=root).create()
    run_dir = file.RunDirectory(cfg.digest(), root=root).create()
    for directory in (teacher_dir, run_dir):
        data_io.write_json(directory.artifact(directory.CONFIG_SNAPSHOT),
                           cfg.to_dict())

    split = resolve_split(data_dir, cfg.ratio)
    labeled = load_records(data_dir, split.labeled)
    with data_io.DatasetReader(data_dir) as reader:
        unlabeled_ids = reader.get_patch_ids(*split.unlabeled)
    teacher_history = []

    if consts.Stage.TEACHER in stages and (
            explicit or not os.path.exists(teacher_dir.teacher_checkpoint)):
        _, teacher_history = train_teacher(cfg, labeled,
                                           teacher_dir.teacher_checkpoint)

    if consts.Stage.PSEUDO in stages:
        _require(teacher_dir.teacher_checkpoint, "teacher")
        if explicit or not _pseudo_ready(teacher_dir.pseudo_dir,
                                         unlabeled_ids, cfg):
            teacher = net_module.load_checkpoint(
                teacher_dir.teacher_checkpoint, cfg.model)
            with data_io.DatasetReader(data_dir) as reader:
                images = [(patch_id, image) for patch_id, image, _ in
                          reader.get_patches(*split.unlabeled)]
            generate_pseudo(cfg, teacher, images, teacher_dir.pseudo_dir)

    if consts.Stage.STUDENT not in stages:
        return None
    if not explicit and os.path.exists(run_dir.run_record) \
            and os.path.exists(run_dir.student_checkpoint):
        logger.info("Reusing the finished run in %s", run_dir)
        run_dir.export()
        return RunRecord.load(run_dir.run_record)

    _require(teacher_dir.teacher_checkpoint, "teacher")
    if not _pseudo_ready(teacher_dir.pseudo_dir, unlabeled_ids, cfg):
        raise exceptions.MissingArtifactError(
            "Pseudo-labels for these thresholds have not been generated",
            teacher_dir.pseudo_dir)
    with data_io.DatasetReader(data_dir) as reader:
        pseudo = [(reader.read_patch(image_id)[0],
                   pseudolabel.load_pseudo(teacher_dir.pseudo_dir,
                                           image_id)[0])
                  for image_id in unlabeled_ids]
    student_set = pseudolabel.assemble_student_set(
        ((r.image_id, r.image, r.labels) for r in labeled), pseudo,
        labeled_ids={r.image_id for r in labeled})
    val_records = load_records(data_dir, split.val)

    student, student_history, val_dice = train_student(
        cfg, student_set, teacher_dir.teacher_checkpoint,
        run_dir.student_checkpoint, val_records)

    record = RunRecord.empty(cfg)._replace(
        epochs=teacher_history + student_history, val_dice=val_dice)
    for split_name, scene_ids in (("val", split.val), ("test", split.test)):
        records = val_records if split_name == "val" \
            else load_records(data_dir, scene_ids)
        report, _ = evaluate(student, records, cfg)
        record.metrics[split_name] = report.to_dict()
        data_io.write_json(run_dir.metrics_report("student", split_name),
                           report.to_dict())
    record = record._replace(wall_clock=time.perf_counter() - started)
    record.save(run_dir.run_record)
    run_dir.export()
    return record
