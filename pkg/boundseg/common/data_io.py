# ------------------------------------------------------------------
# data_io.py - on-disk formats of images, datasets and checkpoints
# ------------------------------------------------------------------

"""
Handles data input and output for boundseg.

Every on-disk format lives here:

* images as 8-bit RGB PNG, instance label maps as 16-bit single-channel PNG
  (pixel value = instance id, 0 = background), stacks of small binary masks
  as 8-bit PNG strips (masks side by side, 0 or 255);
* flat JSON sidecars, split manifests and run records;
* datasets: a directory of PNGs described by a metaheader (dataset.json),
  written with :class:`DatasetWriter` and read with :class:`DatasetReader`;
* named-tensor checkpoint archives;
* ablation results: every cell of a grid and its metrics, as JSON written
  with :meth:`AblationResult.write` and summarised per grid value.

Checkpoint archives are laid out as follows:
<magic: the 8 ASCII bytes "BSEGCKPT">
<header length: little-endian uint32>
<header: UTF-8 JSON {"tensors": [{"name": ..., "shape": [...]}, ...]}>
<payload of tensor 1: little-endian float32, C order>
<payload of tensor 2 ...>

"""

__all__ = (
    'write_image',
    'read_image',
    'write_labels',
    'read_labels',
    'write_mask_strip',
    'read_mask_strip',
    'write_json',
    'read_json',
    'write_checkpoint',
    'read_checkpoint',
    'DatasetWriter',
    'DatasetReader',
    'CellResult',
    'AblationResult',
)

import collections
import json
import logging
import os
import struct
from typing import List, NamedTuple, Optional

import numpy as np
import pandas as pd
from PIL import Image

from boundseg.common import exceptions, util

logger = logging.getLogger(__name__)
logger.debug('Entered module: %s', __name__)

CHECKPOINT_MAGIC = b"BSEGCKPT"
METAHEADER = "dataset.json"


def write_image(path, image):
    """
    Write an H x W x 3 image with values in [0, 1] as an 8-bit RGB PNG.

    :param path:
        The output file.
    :param image:
        The image array.

    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise exceptions.ShapeError(
            "expected an H x W x 3 image, got {}".format(image.shape))
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(pixels, mode="RGB").save(path, format="PNG")


def read_image(path):
    """ Read an 8-bit RGB PNG as a float32 H x W x 3 array in [0, 1] """
    with Image.open(path) as img:
        pixels = np.array(img.convert("RGB"), dtype=np.float32)
    return pixels / 255.0


def write_labels(path, labels):
    """
    Write an instance label map as a 16-bit single-channel PNG.

    :param path:
        The output file.
    :param labels:
        H x W non-negative integer ids, at most 65535.

    """
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise exceptions.ShapeError(
            "expected an H x W label map, got {}".format(labels.shape))
    if labels.size and (labels.min() < 0 or labels.max() > 0xFFFF):
        raise ValueError("Instance ids must lie in [0, 65535]")
    Image.fromarray(labels.astype(np.uint16)).save(path, format="PNG")


def read_labels(path):
    """ Read a 16-bit instance PNG as an int32 H x W array """
    with Image.open(path) as img:
        return np.array(img).astype(np.int32)


def write_mask_strip(path, masks):
    """
    Write K square binary masks side by side as one 8-bit PNG.

    :param path:
        The output file.
    :param masks:
        K x S x S booleans; K must be at least 1.

    """
    masks = np.asarray(masks, dtype=bool)
    if masks.ndim != 3 or masks.shape[0] == 0:
        raise exceptions.ShapeError(
            "expected a non-empty K x S x S stack, got {}".format(masks.shape))
    strip = np.concatenate(list(masks), axis=1).astype(np.uint8) * 255
    Image.fromarray(strip).save(path, format="PNG")


def read_mask_strip(path, size):
    """
    Read a mask strip written by :func:`write_mask_strip`.

    :param size:
        The side S of each mask.
    :return:
        K x S x S booleans.

    """
    with Image.open(path) as img:
        strip = np.array(img) > 127
    if strip.shape[0] != size or strip.shape[1] % size:
        raise exceptions.ArchiveFormatError(
            "mask strip {} is not a row of {}x{} masks".format(path, size,
                                                               size))
    return np.stack(np.split(strip, strip.shape[1] // size, axis=1))


def write_json(path, obj):
    """ Write a JSON-compatible object with sorted keys """
    with open(path, "w", encoding="utf-8") as out:
        json.dump(obj, out, indent=2, sort_keys=True)
        out.write("\n")


def read_json(path):
    """ Read a JSON file """
    with open(path, "r", encoding="utf-8") as src:
        return json.load(src)


@util.log(logger)
def write_checkpoint(path, tensors):
    """
    Write named tensors as a checkpoint archive (see module docstring).

    :param path:
        The output file.
    :param tensors:
        An ordered mapping of name to array (or torch tensor).

    """
    header = {"tensors": []}
    payloads = []
    for name, value in tensors.items():
        if hasattr(value, "detach"):
            value = value.detach().cpu().numpy()
        array = np.ascontiguousarray(value, dtype="<f4")
        header["tensors"].append({"name": name, "shape": list(array.shape)})
        payloads.append(array.tobytes())

    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as out:
        out.write(CHECKPOINT_MAGIC)
        out.write(struct.pack("<I", len(encoded)))
        out.write(encoded)
        for payload in payloads:
            out.write(payload)


@util.log(logger)
def read_checkpoint(path):
    """
    Read a checkpoint archive.

    :param path:
        The archive file.
    :raises exceptions.ArchiveFormatError:
        If the magic, header or payload sizes are wrong.
    :return:
        An ordered dict of name to float32 array.

    """
    with open(path, "rb") as src:
        data = src.read()

    magic_len = len(CHECKPOINT_MAGIC)
    if data[:magic_len] != CHECKPOINT_MAGIC:
        raise exceptions.ArchiveFormatError(
            "{} is not a checkpoint archive".format(path))
    try:
        (header_len,) = struct.unpack_from("<I", data, magic_len)
        start = magic_len + 4
        header = json.loads(data[start:start + header_len].decode("utf-8"))
    except (struct.error, ValueError) as err:
        raise exceptions.ArchiveFormatError(
            "unreadable header in {}".format(path)) from err

    offset = start + header_len
    tensors = collections.OrderedDict()
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(data):
            raise exceptions.ArchiveFormatError(
                "payload of {} truncated in {}".format(entry["name"], path))
        tensors[entry["name"]] = np.frombuffer(
            data, dtype="<f4", count=nbytes // 4, offset=offset
        ).reshape(shape).astype(np.float32)
        offset += nbytes
    if offset != len(data):
        raise exceptions.ArchiveFormatError(
            "{} trailing bytes in {}".format(len(data) - offset, path))
    return tensors


class DatasetWriter:
    """
    Class for writing a patch dataset to a directory.

    Images go to images/<patch id>.png and instance maps to
    labels/<patch id>.png. A metaheader keeps track of the scenes, the patches
    cut from each scene and their nuclei; it is written to dataset.json when
    the writer is closed.

    """
    def __init__(self, directory, attributes=None):
        """
        Initialises a writer object.

        :param directory:
            The dataset directory.
        :param attributes:
            Generation parameters recorded in the metaheader.

        """
        self.directory = directory
        self.metaheader = {"attributes": dict(attributes or {}),
                           "scenes": collections.OrderedDict()}

    def __enter__(self):
        """ Context manager for writer. """
        os.makedirs(os.path.join(self.directory, "images"), exist_ok=True)
        os.makedirs(os.path.join(self.directory, "labels"), exist_ok=True)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        """ Write the metaheader, unless the dataset was left incomplete. """
        if exc_type is None:
            write_json(os.path.join(self.directory, METAHEADER),
                       self.metaheader)

    def write_patch(self, scene_id, patch_id, image, labels, nuclei, origin):
        """
        Write a single patch, and update the metaheader.

        :param scene_id:
            The scene the patch was cut from.
        :param patch_id:
            A unique identifier for the patch.
        :param image, labels:
            The patch image and instance label map.
        :param nuclei:
            JSON-compatible descriptions of the nuclei in the patch.
        :param origin:
            (row, col) of the patch in its scene.

        """
        write_image(os.path.join(self.directory, "images", patch_id + ".png"),
                    image)
        write_labels(os.path.join(self.directory, "labels",
                                  patch_id + ".png"), labels)
        patches = self.metaheader["scenes"].setdefault(scene_id, {})
        patches[patch_id] = {"origin": list(origin), "nuclei": nuclei,
                             "shape": list(np.asarray(labels).shape)}

    @util.log(logger)
    def write(self, scene_id, patches):
        """
        Write all patches of a scene.

        :param scene_id:
            The scene identifier.
        :param patches:
            An iterable of (patch id, image, labels, nuclei, origin) tuples.

        """
        for patch_id, image, labels, nuclei, origin in patches:
            self.write_patch(scene_id, patch_id, image, labels, nuclei,
                             origin)


class DatasetReader:
    """
    Class for reading a patch dataset from a directory.

    Uses the metaheader to list scenes and patches without reading any image.

    """
    def __init__(self, directory):
        """
        Initialises a reader object.

        :param directory:
            The dataset directory.

        """
        self.directory = directory
        self.metaheader = None

    def __enter__(self):
        """ Context manager for reader: loads the metaheader. """
        path = os.path.join(self.directory, METAHEADER)
        if not os.path.isfile(path):
            raise exceptions.MissingArtifactError(
                "No dataset metaheader found", path)
        self.metaheader = read_json(path)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.metaheader = None

    @property
    def attributes(self):
        return self.metaheader["attributes"]

    def get_scene_ids(self):
        """ All scene ids, in generation order. """
        return list(self.metaheader["scenes"].keys())

    def get_patch_ids(self, *scene_ids):
        """ Patch ids of the given scenes (all scenes if none given). """
        scene_ids = scene_ids or self.get_scene_ids()
        return [patch_id for scene_id in scene_ids
                for patch_id in self.metaheader["scenes"][scene_id]]

    def get_patch_info(self, patch_id):
        """ The metaheader entry of a patch. """
        for patches in self.metaheader["scenes"].values():
            if patch_id in patches:
                return patches[patch_id]
        raise KeyError("Patch {} not found in metaheader!".format(patch_id))

    def read_patch(self, patch_id):
        """
        Read one patch.

        :return:
            (image, labels) arrays.

        """
        image = read_image(os.path.join(self.directory, "images",
                                        patch_id + ".png"))
        labels = read_labels(os.path.join(self.directory, "labels",
                                          patch_id + ".png"))
        return image, labels

    def get_patches(self, *scene_ids):
        """
        Lazily read the patches of some scenes.

        :return:
            A generator of (patch id, image, labels).

        """
        for patch_id in self.get_patch_ids(*scene_ids):
            image, labels = self.read_patch(patch_id)
            yield patch_id, image, labels

    def get_header_info_string(self):
        """
        Get header information on all the scenes in the dataset.

        :return:
            A list of formatted informational lines.

        """
        format_str = "{:>10.10} {:>8.8} {:>8.8}"
        lines = [format_str.format("Scene", "Patches", "Nuclei")]
        for scene_id, patches in self.metaheader["scenes"].items():
            nuclei = sum(len(info["nuclei"]) for info in patches.values())
            lines.append(format_str.format(scene_id, str(len(patches)),
                                           str(nuclei)))
        return lines


class CellResult(NamedTuple):
    """
    One training run of an ablation grid.

    Exactly one of `metrics` (a :class:`MetricsReport` dict on the test
    split) and `error` is set.

    """
    value: str
    seed: int
    digest: str
    metrics: Optional[dict] = None
    error: Optional[str] = None

    @property
    def ok(self):
        return self.error is None


class AblationResult(NamedTuple):
    """
    Every cell of an ablation grid, in grid order.

    """
    axis: str
    values: List[str]
    seeds: List[int]
    cells: List[CellResult]

    METRICS = ("dice", "aji", "pq")

    def summary(self):
        """
        The median over seeds of every grid value.

        Failed cells are left out of the medians; a value without any
        successful cell has NaN metrics.

        :return:
            A `pd.DataFrame` indexed by grid value, in grid order, with the
            columns dice, aji, pq, their <metric>_min and <metric>_max over
            seeds, runs (successful cells) and failed.

        """
        rows = []
        for value in self.values:
            cells = [cell for cell in self.cells if cell.value == value]
            done = [cell.metrics for cell in cells if cell.ok]
            row = {"value": value, "runs": len(done),
                   "failed": len(cells) - len(done)}
            for key in self.METRICS:
                scores = np.array([entry[key] for entry in done], dtype=float)
                empty = scores.size == 0
                row[key] = np.nan if empty else float(np.median(scores))
                row[key + "_min"] = np.nan if empty else float(scores.min())
                row[key + "_max"] = np.nan if empty else float(scores.max())
            rows.append(row)
        columns = ["value"] + [key + suffix for key in self.METRICS
                               for suffix in ("", "_min", "_max")]
        return pd.DataFrame(rows, columns=columns + ["runs", "failed"]) \
            .set_index("value")

    def to_dict(self):
        return {"axis": self.axis, "values": list(self.values),
                "seeds": [int(seed) for seed in self.seeds],
                "cells": [cell._asdict() for cell in self.cells]}

    @staticmethod
    def from_dict(entry):
        try:
            return AblationResult(
                entry["axis"], list(entry["values"]), list(entry["seeds"]),
                [CellResult(**cell) for cell in entry["cells"]])
        except (KeyError, TypeError) as err:
            raise exceptions.ArchiveFormatError(
                "not an ablation result: {}".format(err)) from err

    def write(self, path):
        write_json(path, self.to_dict())

    @staticmethod
    def read(path):
        """
        Read an ablation result file.

        :raises exceptions.ArchiveFormatError:
            If the file is JSON but not an ablation result.

        """
        return AblationResult.from_dict(read_json(path))
