# -------------------------------------------------------------
# model.py - compact RoI-based nuclei segmentation network
# -------------------------------------------------------------

"""
The segmentation network.

A four-layer convolutional encoder produces a single feature level at stride
4. A single-level anchor grid head scores and regresses boxes; RoIs are
pooled to 14 x 14 with aligned bilinear RoIAlign and fed to three parallel
heads:

* the naive mask head (NMH), upsampling to 28 x 28 logits;
* the low-resolution head (LRD), predicting 14 x 14 logits directly;
* the embedding head, a 1 x 1 projection to unit-length pixel embeddings
  used by the contrastive module.

Images enter as N x 3 x H x W float tensors and embeddings leave as
K x D x 14 x 14 (channel first, like every tensor here).

"""

__all__ = (
    'Detection',
    'RoIFeatureMap',
    'MaskPrediction',
    'ModelOptions',
    'NucleusNet',
    'image_to_tensor',
    'mask_probabilities',
    'encode_boxes',
    'decode_boxes',
    'save_checkpoint',
    'load_checkpoint',
)

import collections
import logging
import math
from typing import NamedTuple, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torchvision import ops

from boundseg.common import config, consts, data_io, exceptions, util

logger = logging.getLogger(__name__)
logger.debug('Entered module: %s', __name__)

# Smallest side, in pixels, of a box kept by the detector
MIN_BOX_SIZE = 4.0

# Upper bound on the log-scale regression outputs
_MAX_LOG_SCALE = math.log(1000.0 / 16)


class Detection(NamedTuple):
    """
    A scored box in image pixels.

    .. attribute:: box:
        (x1, y1, x2, y2) with x1 < x2 and y1 < y2.
    .. attribute:: score:
        Objectness in [0, 1].

    """
    box: Tuple[float, float, float, float]
    score: float


class RoIFeatureMap(NamedTuple):
    """
    Pooled features of one RoI.

    .. attribute:: values:
        C x 14 x 14 tensor.
    .. attribute:: roi_id:
        Identifier of the RoI, unique within a batch.
    .. attribute:: source_box:
        The :class:`Detection` the RoI was pooled from.

    """
    values: torch.Tensor
    roi_id: int
    source_box: Detection


class MaskPrediction(NamedTuple):
    """
    Mask logits of a batch of RoIs.

    .. attribute:: high_res:
        K x 28 x 28 logits of the naive mask head.
    .. attribute:: low_res:
        K x 14 x 14 logits of the low-resolution head.

    """
    high_res: torch.Tensor
    low_res: torch.Tensor


class ModelOptions(NamedTuple):
    """ Architecture and post-processing options of the network """
    channels: int = 64
    embed_dim: int = 32
    anchor_scales: Tuple[float, ...] = (12.0, 24.0)
    top_k: int = 100
    nms_iou: float = 0.5
    min_score: float = 0.5
    sampling_ratio: int = 1

    @staticmethod
    def from_config():
        """ Read the options from the [Model] section """
        model = config.get_section("Model")
        return ModelOptions(
            channels=model.getint("channels"),
            embed_dim=model.getint("embed_dim"),
            anchor_scales=tuple(
                float(scale) for scale in config.get_option_from_section(
                    "Model", "anchor_scales", "list")),
            top_k=model.getint("top_k"),
            nms_iou=model.getfloat("nms_iou"),
            min_score=model.getfloat("detect_min_score"),
            sampling_ratio=model.getint("roi_sampling_ratio"))


def image_to_tensor(image):
    """ H x W x 3 array in [0, 1] to a 1 x 3 x H x W float tensor """
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[2] != 3:
        raise exceptions.ShapeError(
            "expected an H x W x 3 image, got {}".format(image.shape))
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1))) \
        .unsqueeze(0)


def encode_boxes(anchors, boxes):
    """
    Regression targets (dx, dy, dw, dh) of `boxes` relative to `anchors`.

    :param anchors, boxes:
        K x 4 tensors in (x1, y1, x2, y2).

    """
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    ax = anchors[:, 0] + 0.5 * aw
    ay = anchors[:, 1] + 0.5 * ah
    bw = boxes[:, 2] - boxes[:, 0]
    bh = boxes[:, 3] - boxes[:, 1]
    bx = boxes[:, 0] + 0.5 * bw
    by = boxes[:, 1] + 0.5 * bh
    return torch.stack(((bx - ax) / aw, (by - ay) / ah,
                        torch.log(bw / aw), torch.log(bh / ah)), dim=1)


def decode_boxes(anchors, deltas):
    """ Inverse of :func:`encode_boxes` """
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    ax = anchors[:, 0] + 0.5 * aw
    ay = anchors[:, 1] + 0.5 * ah
    dw = deltas[:, 2].clamp(max=_MAX_LOG_SCALE)
    dh = deltas[:, 3].clamp(max=_MAX_LOG_SCALE)
    cx = ax + deltas[:, 0] * aw
    cy = ay + deltas[:, 1] * ah
    w = aw * torch.exp(dw)
    h = ah * torch.exp(dh)
    return torch.stack((cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w,
                        cy + 0.5 * h), dim=1)


def _conv(in_channels, out_channels, stride=1):
    return nn.Conv2d(in_channels, out_channels, kernel_size=3, stride=stride,
                     padding=1)


class NucleusNet(nn.Module):
    """
    Encoder, detection head and the three parallel RoI heads.

    """
    def __init__(self, options=ModelOptions()):
        """
        Build the network.

        :param options:
            A :class:`ModelOptions`.

        """
        super().__init__()
        self.options = options
        channels = options.channels
        n_anchors = len(options.anchor_scales)

        self.backbone = nn.Sequential(
            _conv(3, 32, stride=2), nn.ReLU(inplace=True),
            _conv(32, 64, stride=2), nn.ReLU(inplace=True),
            _conv(64, 64), nn.ReLU(inplace=True),
            _conv(64, channels), nn.ReLU(inplace=True))

        self.det_conv = _conv(channels, channels)
        self.det_objectness = nn.Conv2d(channels, n_anchors, kernel_size=1)
        self.det_deltas = nn.Conv2d(channels, 4 * n_anchors, kernel_size=1)

        self.nmh = nn.Sequential(
            _conv(channels, channels), nn.ReLU(inplace=True),
            _conv(channels, channels), nn.ReLU(inplace=True),
            nn.ConvTranspose2d(channels, channels, kernel_size=2, stride=2),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, 1, kernel_size=1))

        self.lrd = nn.Sequential(
            _conv(channels, channels), nn.ReLU(inplace=True),
            _conv(channels, channels), nn.ReLU(inplace=True),
            nn.Conv2d(channels, 1, kernel_size=1))

        self.embed = nn.Conv2d(channels, options.embed_dim, kernel_size=1)

        self._init_weights()

    def _init_weights(self):
        for module in self.modules():
            if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
                nn.init.kaiming_normal_(module.weight, mode="fan_out",
                                        nonlinearity="relu")
                nn.init.zeros_(module.bias)
        for head in (self.det_objectness, self.det_deltas, self.nmh[-1],
                     self.lrd[-1]):
            nn.init.normal_(head.weight, std=0.01)
        # Start with few confident anchors, as in single-stage detectors
        nn.init.constant_(self.det_objectness.bias, -math.log(99.0))

    def parameter_count(self):
        return sum(p.numel() for p in self.parameters())

    def forward_backbone(self, images):
        """
        Encode a batch of images.

        :param images:
            N x 3 x H x W tensor, H and W divisible by 4.
        :return:
            N x C x H/4 x W/4 features.

        """
        if images.dim() != 4 or images.shape[1] != 3:
            raise exceptions.ShapeError(
                "expected N x 3 x H x W images, got {}"
                .format(tuple(images.shape)))
        height, width = images.shape[-2:]
        if height % consts.FEATURE_STRIDE or width % consts.FEATURE_STRIDE:
            raise exceptions.ShapeError(
                "image size {}x{} is not divisible by {}".format(
                    height, width, consts.FEATURE_STRIDE))
        return self.backbone(images)

    def anchors(self, feature_h, feature_w, device=None):
        """
        Anchor boxes of a feature grid, ordered by (row, col, scale).

        :return:
            (feature_h * feature_w * A) x 4 tensor in image pixels.

        """
        stride = consts.FEATURE_STRIDE
        ys = (torch.arange(feature_h, dtype=torch.float32, device=device)
              + 0.5) * stride
        xs = (torch.arange(feature_w, dtype=torch.float32, device=device)
              + 0.5) * stride
        cy, cx = torch.meshgrid(ys, xs, indexing="ij")
        centers = torch.stack((cx, cy), dim=-1).reshape(-1, 1, 2)
        half = torch.tensor(self.options.anchor_scales, dtype=torch.float32,
                            device=device).reshape(1, -1, 1) / 2
        boxes = torch.cat((centers - half, centers + half), dim=-1)
        return boxes.reshape(-1, 4)

    def head_outputs(self, features):
        """
        Raw detection head outputs.

        :return:
            (N x K objectness logits, N x K x 4 box deltas), K anchors in the
            order of :meth:`anchors`.

        """
        hidden = F.relu(self.det_conv(features))
        logits = self.det_objectness(hidden)
        deltas = self.det_deltas(hidden)
        n, a, h, w = logits.shape
        logits = logits.permute(0, 2, 3, 1).reshape(n, h * w * a)
        deltas = deltas.reshape(n, a, 4, h, w).permute(0, 3, 4, 1, 2) \
            .reshape(n, h * w * a, 4)
        return logits, deltas

    @torch.no_grad()
    def detect(self, features, image_size):
        """
        Scored, non-overlapping boxes for every image of the batch.

        :param features:
            Output of :meth:`forward_backbone`.
        :param image_size:
            (H, W) of the images, used to clip the boxes.
        :return:
            A list (per image) of :class:`Detection` lists, by score.

        """
        logits, deltas = self.head_outputs(features)
        anchors = self.anchors(*features.shape[-2:], device=features.device)
        height, width = image_size
        results = []
        for image_logits, image_deltas in zip(logits, deltas):
            scores = torch.sigmoid(image_logits)
            keep = scores >= self.options.min_score
            boxes = decode_boxes(anchors[keep], image_deltas[keep])
            scores = scores[keep]
            boxes[:, 0::2] = boxes[:, 0::2].clamp(0, width)
            boxes[:, 1::2] = boxes[:, 1::2].clamp(0, height)
            sizes = boxes[:, 2:] - boxes[:, :2]
            keep = (sizes >= MIN_BOX_SIZE).all(dim=1)
            boxes, scores = boxes[keep], scores[keep]
            keep = ops.nms(boxes, scores, self.options.nms_iou)
            keep = keep[:self.options.top_k]
            results.append([Detection(tuple(float(v) for v in box), float(s))
                            for box, s in zip(boxes[keep], scores[keep])])
        return results

    def pool_rois(self, features, boxes, batch_index):
        """
        Aligned bilinear RoI pooling of many boxes at once.

        :param features:
            N x C x h x w features.
        :param boxes:
            K x 4 tensor of (x1, y1, x2, y2) image pixels.
        :param batch_index:
            K image indices into the batch.
        :raises exceptions.InvalidProposalError:
            If a box covers less than one feature cell.
        :return:
            K x C x 14 x 14 tensor.

        """
        boxes = boxes.to(features.dtype)
        if len(boxes):
            cells = ((boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
                     / consts.FEATURE_STRIDE ** 2)
            bad = torch.nonzero(cells < 1.0)
            if len(bad):
                box = tuple(float(v) for v in boxes[bad[0, 0]])
                raise exceptions.InvalidProposalError(
                    "Box {} covers less than one feature cell".format(box),
                    box)
        rois = torch.cat((batch_index.to(features.dtype).reshape(-1, 1),
                          boxes), dim=1)
        return ops.roi_align(features, rois, output_size=consts.ROI_SIZE,
                             spatial_scale=1.0 / consts.FEATURE_STRIDE,
                             sampling_ratio=self.options.sampling_ratio,
                             aligned=True)

    def roi_align(self, features, detection, roi_id=0, image_index=0):
        """
        Pool one detection into a :class:`RoIFeatureMap`.

        :param features:
            Output of :meth:`forward_backbone`.
        :param detection:
            The :class:`Detection` to pool.

        """
        boxes = torch.tensor([detection.box], dtype=features.dtype,
                             device=features.device)
        values = self.pool_rois(features, boxes,
                                torch.tensor([image_index],
                                             device=features.device))
        return RoIFeatureMap(values[0], roi_id, detection)

    def mask_heads(self, rois):
        """
        Both mask heads on a batch of RoIs.

        :param rois:
            K x C x 14 x 14 tensor (or a single :class:`RoIFeatureMap`).
        :return:
            A :class:`MaskPrediction`.

        """
        rois = _values(rois)
        return MaskPrediction(self.nmh(rois).squeeze(1),
                              self.lrd(rois).squeeze(1))

    def embed_head(self, rois):
        """
        Unit-length pixel embeddings of a batch of RoIs.

        :param rois:
            K x C x 14 x 14 tensor (or a single :class:`RoIFeatureMap`).
        :return:
            K x D x 14 x 14 tensor, every pixel vector of L2 norm 1.

        """
        return F.normalize(self.embed(_values(rois)), p=2, dim=1, eps=1e-12)

    @torch.no_grad()
    @util.log(logger)
    def predict(self, images, use_nmh=True, use_lrd=False, fusion="mean",
                with_embeddings=False):
        """
        Full inference: encode, detect, pool and predict masks.

        :param images:
            N x 3 x H x W tensor.
        :param use_nmh, use_lrd:
            Heads whose probabilities form the instance masks.
        :param fusion:
            "mean" averages NMH and upsampled LRD probabilities when both
            heads are used; "nmh" keeps NMH alone.
        :param with_embeddings:
            Also return the embedding grids of every RoI.
        :return:
            A list (per image) of lists of (Detection, 28 x 28 probability
            array) pairs, or (Detection, probabilities, D x 14 x 14 array)
            triples with embeddings.

        """
        if not (use_nmh or use_lrd):
            raise ValueError("At least one mask head must be used")
        features = self.forward_backbone(images)
        detections = self.detect(features, images.shape[-2:])

        results = []
        for index, image_detections in enumerate(detections):
            if not image_detections:
                results.append([])
                continue
            boxes = torch.tensor([d.box for d in image_detections],
                                 dtype=features.dtype, device=features.device)
            rois = self.pool_rois(
                features, boxes,
                torch.full((len(boxes),), index, device=features.device))
            probs = mask_probabilities(self.mask_heads(rois), use_nmh,
                                       use_lrd, fusion).cpu().numpy()
            if with_embeddings:
                embeddings = self.embed_head(rois).cpu().numpy()
                results.append(list(zip(image_detections, probs, embeddings)))
            else:
                results.append(list(zip(image_detections, probs)))
        return results


def _values(rois):
    if isinstance(rois, RoIFeatureMap):
        return rois.values.unsqueeze(0)
    if rois.dim() != 4 or tuple(rois.shape[-2:]) != (consts.ROI_SIZE,
                                                    consts.ROI_SIZE):
        raise exceptions.ShapeError(
            "expected K x C x 14 x 14 RoIs, got {}".format(tuple(rois.shape)))
    return rois


def mask_probabilities(prediction, use_nmh, use_lrd, fusion="mean"):
    """
    28 x 28 instance probabilities from the enabled heads.

    LRD probabilities are bilinearly upsampled to 28 x 28.

    """
    nmh = torch.sigmoid(prediction.high_res)
    if not use_lrd:
        return nmh
    lrd = F.interpolate(torch.sigmoid(prediction.low_res).unsqueeze(1),
                        size=(consts.MASK_SIZE, consts.MASK_SIZE),
                        mode="bilinear", align_corners=False).squeeze(1)
    if not use_nmh:
        return lrd
    if fusion == "nmh":
        return nmh
    if fusion != "mean":
        raise ValueError("Unknown mask fusion: {}".format(fusion))
    return 0.5 * (nmh + lrd)


@util.log(logger)
def save_checkpoint(model, path):
    """ Write the parameters of `model` as a checkpoint archive """
    data_io.write_checkpoint(path, model.state_dict())


@util.log(logger)
def load_checkpoint(path, options=None):
    """
    Build a network from a checkpoint archive.

    :param path:
        The archive.
    :param options:
        The :class:`ModelOptions` the archive was trained with; the
        configured options if None.
    :raises exceptions.ArchiveFormatError:
        If the archive does not hold the parameters of that network.

    """
    model = NucleusNet(options or ModelOptions.from_config())
    tensors = data_io.read_checkpoint(path)
    expected = model.state_dict()
    if list(tensors.keys()) != list(expected.keys()):
        raise exceptions.ArchiveFormatError(
            "{} does not hold the parameters of this network".format(path))
    state = collections.OrderedDict()
    for name, value in tensors.items():
        if tuple(value.shape) != tuple(expected[name].shape):
            raise exceptions.ArchiveFormatError(
                "shape of {} in {} is {}, expected {}".format(
                    name, path, value.shape, tuple(expected[name].shape)))
        state[name] = torch.from_numpy(value.copy())
    model.load_state_dict(state)
    model.eval()
    return model
