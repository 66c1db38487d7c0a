# --------------------------------------------------------------------
# main.py - user interface, parses and applies data generation commands
# --------------------------------------------------------------------

"""
Controller script - user interface, parses and applies --gen-data commands

Renders the synthetic scenes, cuts them into patches, writes the patch
dataset and the split manifest.

"""

__all__ = (
    "main",
    "generate_dataset",
)

import argparse
import errno
import logging
import os
import shutil

import numpy as np

from boundseg.common import (
    config,
    data_io,
    output,
    util,
)
from boundseg.datagen import scene as scenes
from boundseg.datagen import split as splits

logger = logging.getLogger(__name__)
logger.debug('Entered module: %s', __name__)


@util.log(logger)
def _args_parse(argv):
    """
    Creates a parser that parses the data generation command.

    :param argv:
        a list of arguments passed by the main function.

    :return:
        an object containing the parsed command information.

    """
    parser = argparse.ArgumentParser(
        prog="boundseg --gen-data",
        description="Generate a synthetic nuclei dataset and its split.")

    parser.add_argument(
        "-o", "--out", type=str,
        help="dataset directory; defaults to data_dir in the config file")
    parser.add_argument(
        "-s", "--seed", type=int, help="seed of the dataset")
    parser.add_argument(
        "-n", "--scenes", type=int, help="number of scenes to render")
    parser.add_argument(
        "-r", "--ratio", type=str,
        help="labeled share of the training scenes: 1/8, 1/4 or 1/2")
    parser.add_argument(
        "-f", "--force", action="store_true",
        help="overwrite an existing dataset directory")

    return parser.parse_args(argv)


def _scene_id(index):
    return "scene{:03d}".format(index)


@util.log(logger)
def generate_dataset(directory, n_scenes, ratio, seed, force=False):
    """
    Write a complete dataset: patches, metaheader and split manifest.

    Geometry and rendering parameters come from the [Data] section.

    :param directory:
        The dataset directory.
    :param n_scenes:
        Number of scenes, at least 8.
    :param ratio:
        Labeled ratio of the split.
    :param seed:
        Seed of the whole dataset; scene seeds are derived from it.
    :param force:
        Replace an existing non-empty directory.
    :raises FileExistsError:
        If the directory holds data and `force` is not set.
    :return:
        The :class:`split.DatasetSplit` written.

    """
    if os.path.isdir(directory) and os.listdir(directory):
        if not force:
            raise FileExistsError(errno.EEXIST, "Dataset directory not empty",
                                  directory)
        logger.info("Removing existing dataset %s", directory)
        shutil.rmtree(directory)

    data = config.get_section("Data")
    attributes = {
        "seed": int(seed),
        "height": data.getint("height"),
        "width": data.getint("width"),
        "nuclei": data.getint("nuclei"),
        "min_radius": data.getfloat("min_radius"),
        "max_radius": data.getfloat("max_radius"),
        "texture_noise": data.getfloat("texture_noise"),
        "contrast": data.getfloat("contrast"),
        "max_overlap": data.getfloat("max_overlap"),
        "patch": data.getint("patch"),
        "overlap": data.getint("overlap"),
    }

    scene_seeds = np.random.SeedSequence(seed).generate_state(n_scenes)
    scene_ids = [_scene_id(index) for index in range(n_scenes)]
    with data_io.DatasetWriter(directory, attributes) as writer:
        for scene_id, scene_seed in output.progress(
                list(zip(scene_ids, scene_seeds)), "Rendering scenes"):
            scene = scenes.generate_scene(
                int(scene_seed), attributes["height"], attributes["width"],
                attributes["nuclei"], attributes["texture_noise"],
                contrast=attributes["contrast"],
                min_radius=attributes["min_radius"],
                max_radius=attributes["max_radius"],
                max_overlap=attributes["max_overlap"])
            patches = scenes.crop_patches(scene, attributes["patch"],
                                          attributes["overlap"])
            writer.write(scene_id, (
                ("{}_p{:02d}".format(scene_id, index), patch.image,
                 patch.labels, [n.to_dict() for n in patch.nuclei],
                 patch.origin)
                for index, patch in enumerate(patches)))

    split = splits.make_split(scene_ids, ratio, seed)
    splits.write_split(directory, split)
    return split


@util.log(logger)
def main(argv):
    """
    The main function of the data generator.

    :param argv:
        The arguments left after the top-level parser.

    """
    args = _args_parse(argv)
    directory = os.path.abspath(args.out) if args.out \
        else config.get_path("data_dir")
    seed = args.seed if args.seed is not None \
        else config.get_option_from_section("Data", "seed", "int")
    n_scenes = args.scenes if args.scenes is not None \
        else config.get_option_from_section("Data", "scenes", "int")
    ratio = args.ratio or config.get_option_from_section("Data", "ratio")

    split = generate_dataset(directory, n_scenes, ratio, seed, args.force)

    with data_io.DatasetReader(directory) as reader:
        for line in reader.get_header_info_string():
            output.print_(line)
        output.print_("Attributes: " + ", ".join(
            "{}={}".format(key, value)
            for key, value in sorted(reader.attributes.items())))
    output.print_("Wrote {} scenes ({} labeled, {} unlabeled, {} val, {} "
                  "test) to {}".format(n_scenes, len(split.labeled),
                                       len(split.unlabeled), len(split.val),
                                       len(split.test), directory))
