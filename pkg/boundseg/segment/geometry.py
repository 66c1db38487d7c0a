# -------------------------------------------------------------
# geometry.py - contours, boundary bands and mask downsampling
# -------------------------------------------------------------

"""
Mask geometry used by the mask heads and the contrastive module.

Masks are H x W boolean numpy arrays. Pixel sets are returned as boolean
grids of the same shape; :func:`coords` turns a grid into a set of
(row, col) tuples where a set is more convenient.

Contour pixels are foreground pixels with a 4-neighbour in the background;
pixels outside the image count as background. Distances to the contour are
exact Euclidean distances from :func:`scipy.ndimage.distance_transform_edt`.

"""

__all__ = (
    'ContourBands',
    'extract_contour',
    'compute_bands',
    'boundary_weight_map',
    'downsample_majority',
    'coords',
)

import logging
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from boundseg.common import exceptions

logger = logging.getLogger(__name__)
logger.debug('Entered module: %s', __name__)

_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)

# Slack on the majority test for boxes that straddle pixels
_TIE_TOLERANCE = 1e-9


class ContourBands(NamedTuple):
    """
    The four region sets of a mask at band half-width d.

    .. attribute:: p_inn:
        Foreground pixels within distance d of the contour.
    .. attribute:: p_out:
        Background pixels within distance d of the contour.
    .. attribute:: p_fore_inn:
        Foreground pixels outside p_inn.
    .. attribute:: p_back_out:
        Background pixels outside p_out.
    .. attribute:: d:
        The band half-width.
    .. attribute:: contour:
        The contour pixels.

    """
    p_inn: np.ndarray
    p_out: np.ndarray
    p_fore_inn: np.ndarray
    p_back_out: np.ndarray
    d: float
    contour: np.ndarray


def coords(grid):
    """ The set of (row, col) coordinates where `grid` is true """
    return {(int(r), int(c)) for r, c in zip(*np.nonzero(grid))}


def _as_mask(mask):
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise exceptions.ShapeError(
            "expected an H x W mask, got {}".format(mask.shape))
    return mask


def extract_contour(mask):
    """
    Foreground pixels with at least one background 4-neighbour.

    :param mask:
        H x W booleans.
    :return:
        H x W booleans, true on the contour.

    """
    mask = _as_mask(mask)
    interior = ndimage.binary_erosion(mask, structure=_FOUR_CONNECTED,
                                      border_value=0)
    return mask & ~interior


def _contour_distance(contour):
    """ Euclidean distance of every pixel to the nearest contour pixel """
    return ndimage.distance_transform_edt(~contour)


def compute_bands(mask, d):
    """
    Split foreground and background by their distance to the contour.

    p_inn and p_out hold the pixels within Euclidean distance d of the
    contour on each side; p_fore_inn and p_back_out are their complements
    within foreground and background. With d = 0, or without any contour,
    both bands are empty.

    :param mask:
        H x W booleans.
    :param d:
        Band half-width in pixels, d >= 0.
    :return:
        A :class:`ContourBands`.

    """
    if d < 0:
        raise ValueError("Band distance must be non-negative, got {}"
                         .format(d))
    mask = _as_mask(mask)
    contour = extract_contour(mask)

    if d == 0 or not contour.any():
        near = np.zeros(mask.shape, dtype=bool)
    else:
        near = _contour_distance(contour) <= d

    p_inn = mask & near
    p_out = ~mask & near
    return ContourBands(p_inn, p_out, mask & ~p_inn, ~mask & ~p_out, d,
                        contour)


def boundary_weight_map(mask, band, w_boundary, w_interior):
    """
    Per-pixel loss weights that discount the boundary.

    :param mask:
        H x W booleans.
    :param band:
        Pixels within this distance of the contour, on either side, are
        boundary pixels; band = 0 selects the contour alone.
    :param w_boundary, w_interior:
        Weights of boundary and other pixels, 0 <= w_boundary <= w_interior.
    :return:
        H x W float32 weights.

    """
    if band < 0:
        raise ValueError("Band must be non-negative, got {}".format(band))
    if not 0 <= w_boundary <= w_interior:
        raise ValueError("Weights must satisfy 0 <= w_boundary <= w_interior")
    mask = _as_mask(mask)
    contour = extract_contour(mask)

    weights = np.full(mask.shape, w_interior, dtype=np.float32)
    if contour.any():
        weights[_contour_distance(contour) <= band] = w_boundary
    return weights


def _area_matrix(n_in, n_out):
    """
    n_out x n_in matrix of the share of each output box covered by each
    input pixel; the boxes split [0, n_in) into n_out equal intervals.
    """
    edges = np.arange(n_out + 1, dtype=np.float64) * n_in / n_out
    lo, hi = edges[:-1, None], edges[1:, None]
    pixel = np.arange(n_in, dtype=np.float64)[None, :]
    overlap = np.clip(np.minimum(pixel + 1, hi) - np.maximum(pixel, lo),
                      0.0, None)
    return overlap / (hi - lo)


def downsample_majority(mask, out_h, out_w):
    """
    Majority vote of every area-interpolation box.

    An output cell is true iff strictly more than half of its box is
    foreground; exact ties go to background.

    :param mask:
        H x W booleans.
    :param out_h, out_w:
        Output size, at most H and W.
    :return:
        out_h x out_w booleans.

    """
    mask = _as_mask(mask)
    height, width = mask.shape
    if not (0 < out_h <= height and 0 < out_w <= width):
        raise exceptions.ShapeError(
            "cannot downsample {} to {}".format(mask.shape, (out_h, out_w)))
    fraction = _area_matrix(height, out_h) @ mask.astype(np.float64) \
        @ _area_matrix(width, out_w).T
    return fraction > 0.5 + _TIE_TOLERANCE
