# -------------------------------------------------------------
# crc.py - cross-RoI boundary contrastive learning
# -------------------------------------------------------------

"""
Contrastive learning across pairs of RoIs.

For each RoI of a pair the supervision mask is split into four regions
(inner band, outer band, deep foreground, deep background), pixel embeddings
are sampled from every region, and the samples of both RoIs are pooled into
a background query and a foreground query. The loss pulls each query towards
keys of its own side and away from keys of the other side, see
:func:`losses.crc_loss`.

The supervision of a RoI must come from where its record says: human masks
for labeled records and filtered pseudo-labels for unlabeled ones. Every RoI
carries both tags and a mismatch raises :class:`exceptions.ProvenanceError`.

"""

__all__ = (
    'CrcRoI',
    'EmbeddingBatch',
    'CrcResult',
    'sample_region',
    'make_queries',
    'pair_rois',
    'region_masks',
    'crc_step',
)

import logging
import math
from typing import NamedTuple, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from boundseg.common import consts, exceptions, util
from boundseg.segment import geometry, losses

logger = logging.getLogger(__name__)
logger.debug('Entered module: %s', __name__)

# Index of each region in derived sampling seeds
_BACK, _OUT, _FORE, _INN = range(4)

# Band computation scales
BAND_SCALES = ("roi", "mask")


class CrcRoI(NamedTuple):
    """
    One RoI taking part in the contrastive loss.

    .. attribute:: values:
        D x 14 x 14 embeddings, or C x 14 x 14 RoI features when an embedding
        function is passed to :func:`crc_step`.
    .. attribute:: mask:
        Supervision mask of the RoI: 14 x 14, or 28 x 28 with band scale
        "mask".
    .. attribute:: roi_id:
        Identifier of the RoI, unique within the batch.
    .. attribute:: provenance:
        :class:`consts.Provenance` of the record the RoI comes from.
    .. attribute:: mask_source:
        :class:`consts.Provenance` of the mask.

    """
    values: torch.Tensor
    mask: np.ndarray
    roi_id: int
    provenance: consts.Provenance = consts.Provenance.HUMAN
    mask_source: consts.Provenance = consts.Provenance.HUMAN


class EmbeddingBatch(NamedTuple):
    """
    Sampled keys of a RoI pair and their queries.

    Each k_* field holds the (roi i, roi j) pair of n x D key tensors.

    """
    k_back: Tuple[torch.Tensor, torch.Tensor]
    k_out: Tuple[torch.Tensor, torch.Tensor]
    k_fore: Tuple[torch.Tensor, torch.Tensor]
    k_inn: Tuple[torch.Tensor, torch.Tensor]
    q_b: Optional[torch.Tensor]
    q_f: Optional[torch.Tensor]
    alpha: float
    seed: int

    def keys(self, name):
        """ The keys of both RoIs of a region, concatenated """
        first, second = getattr(self, name)
        return torch.cat((first, second), dim=0)


class CrcResult(NamedTuple):
    """ Loss of a pair, whether it was skipped, and its samples """
    loss: torch.Tensor
    skipped: int
    batch: Optional[EmbeddingBatch]


def sample_count(size, alpha):
    """ max(1, floor(alpha * size)) for a non-empty region, else 0 """
    if size == 0:
        return 0
    return max(1, int(math.floor(alpha * size + 1e-9)))


def sample_region(embedding_grid, region, alpha, seed):
    """
    Sample embeddings of a region uniformly without replacement.

    :param embedding_grid:
        D x 14 x 14 tensor.
    :param region:
        14 x 14 boolean grid, or a collection of (row, col) coordinates.
    :param alpha:
        Sampling ratio in (0, 1].
    :param seed:
        Seed of the draw.
    :return:
        n x D tensor, n = max(1, floor(alpha * |region|)), or 0 x D for an
        empty region.

    """
    if not 0 < alpha <= 1:
        raise ValueError("Sampling ratio must lie in (0, 1], got {}"
                         .format(alpha))
    height, width = embedding_grid.shape[-2:]
    if isinstance(region, np.ndarray) and region.dtype == bool:
        if region.shape != (height, width):
            raise exceptions.ShapeError("region {} vs grid {}".format(
                region.shape, (height, width)))
        region = geometry.coords(region)
    points = np.array(sorted(region), dtype=np.int64).reshape(-1, 2)

    count = sample_count(len(points), alpha)
    if count == 0:
        return embedding_grid.new_zeros((0, embedding_grid.shape[0]))
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(len(points), size=count, replace=False))
    rows = torch.as_tensor(points[chosen, 0], device=embedding_grid.device)
    cols = torch.as_tensor(points[chosen, 1], device=embedding_grid.device)
    return embedding_grid[:, rows, cols].T


def _mean_direction(vectors, side):
    if not vectors or sum(len(v) for v in vectors) == 0:
        raise exceptions.ContrastiveInputError(
            "no sampled vector on the {} side".format(side))
    pooled = torch.cat(vectors, dim=0).mean(dim=0)
    return F.normalize(pooled, p=2, dim=0, eps=1e-12)


def make_queries(k_back, k_out, k_fore, k_inn):
    """
    Background and foreground queries of a RoI pair.

    q_b is the renormalised mean of every sampled background-side vector
    (k_back and k_out of both RoIs), q_f the same over k_fore and k_inn.

    :param k_back, k_out, k_fore, k_inn:
        Collections of n x D tensors, one per RoI.
    :raises exceptions.ContrastiveInputError:
        If a side has no vector.
    :return:
        (q_b, q_f).

    """
    q_b = _mean_direction(list(k_back) + list(k_out), "background")
    q_f = _mean_direction(list(k_fore) + list(k_inn), "foreground")
    return q_b, q_f


def pair_rois(rois, seed):
    """
    Shuffle the RoIs of a batch and pair them consecutively.

    :param rois:
        The RoIs (any sequence) or their number.
    :param seed:
        Seed of the shuffle.
    :return:
        A list of (i, j) index pairs; with an odd count the last RoI is
        paired with itself.

    """
    count = rois if isinstance(rois, int) else len(rois)
    if count < 1:
        raise ValueError("At least one RoI is needed to form pairs")
    order = [int(i) for i in np.random.default_rng(seed).permutation(count)]
    pairs = [(order[k], order[k + 1]) for k in range(0, count - 1, 2)]
    if count % 2:
        pairs.append((order[-1], order[-1]))
    return pairs


def region_masks(mask, d, band_scale="roi"):
    """
    The four regions of a supervision mask at 14 x 14 resolution.

    :param mask:
        14 x 14 mask for band scale "roi"; for band scale "mask" a 28 x 28
        mask whose bands are computed at distance 2d and subsampled.
    :return:
        A :class:`geometry.ContourBands` on the 14 x 14 grid.

    """
    mask = np.asarray(mask, dtype=bool)
    if band_scale == "roi":
        if mask.shape != (consts.ROI_SIZE, consts.ROI_SIZE):
            mask = geometry.downsample_majority(mask, consts.ROI_SIZE,
                                                consts.ROI_SIZE)
        return geometry.compute_bands(mask, d)
    if band_scale != "mask":
        raise ValueError("Unknown band scale: {}".format(band_scale))

    if mask.shape != (consts.MASK_SIZE, consts.MASK_SIZE):
        raise exceptions.ShapeError(
            "band scale 'mask' needs a 28 x 28 mask, got {}".format(
                mask.shape))
    bands = geometry.compute_bands(mask, 2 * d)
    step = consts.MASK_SIZE // consts.ROI_SIZE
    return geometry.ContourBands(*(grid[::step, ::step] for grid in bands[:4]),
                                 d, bands.contour[::step, ::step])


def _check_provenance(roi):
    if consts.Provenance(roi.provenance) is not \
            consts.Provenance(roi.mask_source):
        raise exceptions.ProvenanceError(
            "RoI {} of a {} record is supervised by a {} mask".format(
                roi.roi_id, consts.Provenance(roi.provenance).value,
                consts.Provenance(roi.mask_source).value))


def crc_step(roi_i, roi_j, d, alpha, tau, seed, embed=None,
             band_scale="roi"):
    """
    Contrastive loss of one RoI pair.

    Bands are computed per RoI, every region is sampled with a seed derived
    from (seed, roi_id, region), so the loss of (i, j) equals the loss of
    (j, i). A RoI paired with itself contributes its samples once. A pair
    with no sample on the foreground side or on the background side is
    skipped and contributes 0.

    :param roi_i, roi_j:
        :class:`CrcRoI` of the pair (may be the same RoI).
    :param d:
        Band half-width in 14 x 14 cells.
    :param alpha:
        Sampling ratio.
    :param tau:
        Temperature.
    :param seed:
        Step seed.
    :param embed:
        Embedding function applied to K x C x 14 x 14 RoI features; None when
        the RoIs already hold embeddings.
    :param band_scale:
        "roi" or "mask", see :func:`region_masks`.
    :raises exceptions.ProvenanceError:
        If a RoI's mask does not come from its record's source.
    :return:
        A :class:`CrcResult`.

    """
    members = (roi_i,) if roi_i.roi_id == roi_j.roi_id else (roi_i, roi_j)
    for roi in members:
        _check_provenance(roi)

    embeddings = []
    for roi in members:
        values = roi.values
        if embed is not None:
            values = embed(values.unsqueeze(0))[0]
        embeddings.append(values)

    sampled = {_BACK: [], _OUT: [], _FORE: [], _INN: []}
    for roi, grid in zip(members, embeddings):
        bands = region_masks(roi.mask, d, band_scale)
        regions = {_BACK: bands.p_back_out, _OUT: bands.p_out,
                   _FORE: bands.p_fore_inn, _INN: bands.p_inn}
        for region, cells in regions.items():
            sampled[region].append(sample_region(
                grid, cells, alpha,
                util.derive_seed(seed, roi.roi_id, region)))

    zero = sum(e.sum() for e in embeddings) * 0.0
    back_side = sum(len(v) for v in sampled[_BACK] + sampled[_OUT])
    fore_side = sum(len(v) for v in sampled[_FORE] + sampled[_INN])
    if back_side == 0 or fore_side == 0:
        logger.debug("Skipped CRC pair (%d, %d)", roi_i.roi_id, roi_j.roi_id)
        return CrcResult(zero, 1, None)

    q_b, q_f = make_queries(sampled[_BACK], sampled[_OUT], sampled[_FORE],
                            sampled[_INN])
    if len(members) == 1:
        for region in sampled:
            sampled[region].append(sampled[region][0][:0])
    batch = EmbeddingBatch(tuple(sampled[_BACK]), tuple(sampled[_OUT]),
                           tuple(sampled[_FORE]), tuple(sampled[_INN]),
                           q_b, q_f, alpha, seed)
    loss = losses.crc_loss(q_b, q_f, batch.keys("k_back"),
                           batch.keys("k_out"), batch.keys("k_fore"),
                           batch.keys("k_inn"), tau, allow_empty=True)
    return CrcResult(loss, 0, batch)
