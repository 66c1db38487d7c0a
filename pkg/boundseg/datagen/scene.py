# -------------------------------------------------------------
# scene.py - synthetic nuclei scenes with exact instance masks
# -------------------------------------------------------------

"""
Synthetic pathology-like scenes.

Nuclei are rotated ellipses painted, one id after the other, on a tissue
background whose colour differs from the nuclei by a small configurable gap.
The instance label map is built from the very same ellipse supports, so the
ground truth is exact. Scenes are cut into overlapping patches for training
and can be flipped for augmentation.

"""

__all__ = (
    'Nucleus',
    'SyntheticScene',
    'generate_scene',
    'crop_patches',
    'patch_origins',
    'flip_scene',
)

import logging
from typing import List, NamedTuple, Tuple

import numpy as np
from skimage import draw, filters, segmentation

from boundseg.common import exceptions, util

logger = logging.getLogger(__name__)
logger.debug('Entered module: %s', __name__)

# Pinkish tissue; nuclei are darker by the contrast gap
BACKGROUND_RGB = np.array([0.86, 0.72, 0.80])
NUCLEUS_TINT = np.array([1.0, 1.1, 0.7])

# Rejection attempts allowed per requested nucleus
ATTEMPTS_PER_NUCLEUS = 100


class Nucleus(NamedTuple):
    """
    One rendered nucleus.

    .. attribute:: center:
        (row, col) of the ellipse centre in pixels.
    .. attribute:: radii:
        (row radius, col radius) in pixels.
    .. attribute:: rotation:
        Rotation in radians.
    .. attribute:: intensity:
        Mean grey level of the nucleus colour, in [0, 1].

    """
    center: Tuple[float, float]
    radii: Tuple[float, float]
    rotation: float
    intensity: float

    def to_dict(self):
        return {"center": list(self.center), "radii": list(self.radii),
                "rotation": self.rotation, "intensity": self.intensity}

    @staticmethod
    def from_dict(entry):
        return Nucleus(tuple(entry["center"]), tuple(entry["radii"]),
                       float(entry["rotation"]), float(entry["intensity"]))


class SyntheticScene(NamedTuple):
    """
    An image with its exact instance label map.

    .. attribute:: image:
        H x W x 3 floats in [0, 1].
    .. attribute:: labels:
        H x W integers; 0 is background, nuclei are numbered 1..K.
    .. attribute:: nuclei:
        nuclei[k - 1] describes label id k.
    .. attribute:: origin:
        (row, col) of the top left pixel in the scene it was cut from.

    """
    image: np.ndarray
    labels: np.ndarray
    nuclei: List[Nucleus]
    origin: Tuple[int, int] = (0, 0)

    @property
    def shape(self):
        return self.labels.shape


def _ellipse(nucleus, shape):
    """ Pixel coordinates covered by a nucleus """
    return draw.ellipse(nucleus.center[0], nucleus.center[1],
                        nucleus.radii[0], nucleus.radii[1], shape=shape,
                        rotation=nucleus.rotation)


@util.log(logger)
def generate_scene(seed, height, width, n_nuclei, texture_noise,
                   contrast=0.15, min_radius=5.0, max_radius=9.0,
                   max_overlap=0.0):
    """
    Render a synthetic scene.

    Candidates are drawn until n_nuclei are placed; a candidate is rejected
    when it leaves the image or would paint over more than `max_overlap` of
    a nucleus already placed. Later ids win contested pixels.

    :param seed:
        Seed of the scene; the scene is a pure function of the arguments.
    :param height, width:
        Image size, at least 64 each.
    :param n_nuclei:
        Number of nuclei.
    :param texture_noise:
        Standard deviation of the Gaussian texture noise.
    :param contrast:
        Intensity gap between tissue and nuclei.
    :param min_radius, max_radius:
        Range of the long radius in pixels.
    :param max_overlap:
        Largest fraction of an earlier nucleus a later one may cover.
    :raises exceptions.SceneGenerationError:
        If the nuclei cannot be placed.

    """
    if height < 64 or width < 64:
        raise ValueError("Scenes must be at least 64 x 64, got {} x {}"
                         .format(height, width))
    if n_nuclei < 0:
        raise ValueError("n_nuclei must be non-negative")

    rng = np.random.default_rng(seed)
    shape = (height, width)
    labels = np.zeros(shape, dtype=np.int32)
    areas = {}
    nuclei = []
    fill = np.zeros(shape + (3,), dtype=np.float64)
    fill[:] = BACKGROUND_RGB

    attempts = 0
    while len(nuclei) < n_nuclei:
        attempts += 1
        if attempts > ATTEMPTS_PER_NUCLEUS * n_nuclei:
            raise exceptions.SceneGenerationError(
                "Placed {} of {} nuclei; request is too dense for a {}x{} "
                "scene".format(len(nuclei), n_nuclei, height, width),
                len(nuclei), n_nuclei)

        long_radius = rng.uniform(min_radius, max_radius)
        radii = (long_radius, long_radius * rng.uniform(0.6, 1.0))
        margin = long_radius + 1
        center = (rng.uniform(margin, height - margin),
                  rng.uniform(margin, width - margin))
        rotation = rng.uniform(-np.pi, np.pi)
        shade = rng.uniform(-0.02, 0.02)
        candidate = Nucleus(center, radii, rotation, 0.0)

        rr, cc = _ellipse(candidate, shape)
        if rr.size == 0:
            continue
        covered = labels[rr, cc]
        if _too_much_overlap(covered, areas, labels, max_overlap):
            continue

        color = np.clip(BACKGROUND_RGB - (contrast + shade) * NUCLEUS_TINT,
                        0.0, 1.0)
        label_id = len(nuclei) + 1
        labels[rr, cc] = label_id
        fill[rr, cc] = color
        areas[label_id] = rr.size
        nuclei.append(candidate._replace(intensity=float(color.mean())))

    if n_nuclei:
        fill = filters.gaussian(fill, sigma=0.7, channel_axis=-1,
                                preserve_range=True)
    if texture_noise > 0:
        fill = fill + rng.normal(0.0, texture_noise, size=fill.shape)
    image = np.clip(fill, 0.0, 1.0).astype(np.float32)

    logger.debug("Scene %d: %d nuclei after %d attempts", seed, n_nuclei,
                 attempts)
    return SyntheticScene(image, labels, nuclei)


def _too_much_overlap(covered, areas, labels, max_overlap):
    """ Would painting over `covered` hide too much of an earlier nucleus? """
    hit_ids, hit_counts = np.unique(covered[covered > 0], return_counts=True)
    for label_id, count in zip(hit_ids, hit_counts):
        remaining = np.count_nonzero(labels == label_id) - count
        if remaining < (1.0 - max_overlap) * areas[label_id] or remaining < 1:
            return True
    return False


def patch_origins(length, patch, overlap):
    """
    Start offsets of the patches along one axis.

    Patches step by patch - overlap; the last patch is clamped to end at the
    border instead of being padded.

    """
    stride = patch - overlap
    starts = list(range(0, length - patch + 1, stride))
    if starts[-1] + patch < length:
        starts.append(length - patch)
    return starts


@util.log(logger)
def crop_patches(scene, patch=256, overlap=128):
    """
    Cut a scene into overlapping square patches.

    Ids are renumbered 1..K' inside every patch and nuclei with no pixel left
    in the patch are dropped.

    :param scene:
        The :class:`SyntheticScene` to cut.
    :param patch:
        Patch side in pixels, at most min(H, W).
    :param overlap:
        Overlap between neighbouring patches, in [0, patch).
    :return:
        A list of :class:`SyntheticScene` patches in row-major order, each
        with its origin in the scene.

    """
    height, width = scene.shape
    if patch > min(height, width):
        raise ValueError("Patch {} larger than the {}x{} scene"
                         .format(patch, height, width))
    if not 0 <= overlap < patch:
        raise ValueError("Overlap must lie in [0, {})".format(patch))

    patches = []
    for row in patch_origins(height, patch, overlap):
        for col in patch_origins(width, patch, overlap):
            window = (slice(row, row + patch), slice(col, col + patch))
            labels, _, _ = segmentation.relabel_sequential(
                scene.labels[window])
            kept = sorted(int(old) for old in np.unique(scene.labels[window])
                          if old)
            # relabel_sequential keeps id order, so nuclei[k-1] is id k
            nuclei = [_shift(scene.nuclei[old - 1], row, col) for old in kept]
            patches.append(SyntheticScene(scene.image[window].copy(),
                                          labels.astype(np.int32), nuclei,
                                          (row, col)))
    return patches


def _shift(nucleus, row, col):
    return nucleus._replace(center=(nucleus.center[0] - row,
                                    nucleus.center[1] - col))


def flip_scene(scene, horizontal, vertical):
    """
    Mirror a scene.

    :param horizontal:
        Mirror left-right.
    :param vertical:
        Mirror top-bottom.

    """
    image, labels = scene.image, scene.labels
    height, width = labels.shape
    nuclei = list(scene.nuclei)
    if horizontal:
        image, labels = image[:, ::-1], labels[:, ::-1]
        nuclei = [n._replace(center=(n.center[0], width - 1 - n.center[1]),
                             rotation=-n.rotation) for n in nuclei]
    if vertical:
        image, labels = image[::-1], labels[::-1]
        nuclei = [n._replace(center=(height - 1 - n.center[0], n.center[1]),
                             rotation=-n.rotation) for n in nuclei]
    return SyntheticScene(np.ascontiguousarray(image),
                          np.ascontiguousarray(labels), nuclei, scene.origin)
