# --------------------------------------------------------------------
# main.py - user interface, parses and applies evaluation commands
# --------------------------------------------------------------------

"""
Controller script - user interface, parses and applies --eval commands

Loads a trained network from a run directory, scores it on the val or test
scenes of the run's dataset, writes the metrics report and optionally dumps
the pixel embeddings of every detection.

"""

__all__ = (
    "main",
    "load_run",
    "evaluate_run",
    "dump_features",
    "embedding_mosaic",
)

import argparse
import collections
import logging
import math
import os

import numpy as np
import pandas as pd

from boundseg.common import (
    consts,
    data_io,
    exceptions,
    file,
    output,
    util,
)
from boundseg.evaluate import metrics
from boundseg.segment import model as net_module
from boundseg.train import pipeline

logger = logging.getLogger(__name__)
logger.debug('Entered module: %s', __name__)

_MODELS = ("teacher", "student")
_SPLITS = tuple(split.value for split in consts.Split)

# Upscaling of every 14 x 14 RoI in the embedding mosaic, and mosaic width
_TILE_SCALE = 4
_TILE_COLUMNS = 8


@util.log(logger)
def _args_parse(argv):
    """
    Creates a parser that parses the evaluate command.

    :param argv:
        a list of arguments passed by the main function.

    :return:
        an object containing the parsed command information.

    """
    parser = argparse.ArgumentParser(
        prog="boundseg --eval",
        description="Score a trained network on held-out scenes.")

    parser.add_argument(
        "-r", "--run", type=str,
        help="run directory; defaults to the last run")
    parser.add_argument(
        "--data", type=str,
        help="dataset directory; defaults to the one the run trained on")
    parser.add_argument(
        "-m", "--model", choices=_MODELS, default="student",
        help="network to evaluate")
    parser.add_argument(
        "-s", "--split", choices=_SPLITS, default=consts.Split.TEST.value,
        help="scenes to evaluate on")
    parser.add_argument(
        "--aggregate", choices=metrics.AGGREGATIONS,
        help="how per-image Dice and AJI are combined")
    parser.add_argument(
        "--dump-features", action="store_true",
        help="also write the pixel embeddings of every detection")

    return parser.parse_args(argv)


@util.log(logger)
def load_run(run_dir, model):
    """
    The configuration and a network of a run.

    :param run_dir:
        The :class:`file.RunDirectory`.
    :param model:
        "teacher" or "student".
    :raises exceptions.MissingArtifactError:
        If the run has no configuration snapshot or no such checkpoint.
    :return:
        (:class:`pipeline.TrainConfig`, network in eval mode).

    """
    snapshot = run_dir.artifact(run_dir.CONFIG_SNAPSHOT)
    if not os.path.isfile(snapshot):
        raise exceptions.MissingArtifactError(
            "{} is not a run directory".format(run_dir), snapshot)
    cfg = pipeline.TrainConfig.from_dict(data_io.read_json(snapshot))

    if model == "teacher":
        owner = file.RunDirectory(cfg.teacher_digest(),
                                  root=os.path.dirname(run_dir.path))
        checkpoint = owner.teacher_checkpoint
    else:
        checkpoint = run_dir.student_checkpoint
    if not os.path.isfile(checkpoint):
        raise exceptions.MissingArtifactError(
            "The {} of this run has not been trained".format(model),
            checkpoint)
    net = net_module.load_checkpoint(checkpoint, cfg.model)
    net.eval()
    return cfg, net


def _heads(cfg, model):
    if model == "teacher":
        return True, False
    return cfg.head_flags.nmh, cfg.head_flags.lrd


@util.log(logger)
def evaluate_run(run_dir, model="student", split="test", aggregate=None,
                 data_dir=None):
    """
    Score a network of a run and write its reports.

    The aggregated report goes to metrics_<model>_<split>.json and the
    per-image scores to scores_<model>_<split>.csv in the run directory.

    :return:
        (:class:`metrics.MetricsReport`, the run's config, the network, the
        evaluated records).

    """
    cfg, net = load_run(run_dir, model)
    if aggregate is not None:
        cfg = cfg._replace(aggregate=aggregate)
    if data_dir is not None:
        cfg = cfg._replace(data_dir=os.path.abspath(data_dir))
    scenes = pipeline.resolve_split(cfg.data_dir, cfg.ratio).scenes(split)
    records = pipeline.load_records(cfg.data_dir, scenes)
    report, scores = pipeline.evaluate(net, records, cfg, *_heads(cfg, model))

    data_io.write_json(run_dir.metrics_report(model, split), report.to_dict())
    frame = pd.DataFrame.from_dict(
        {image_id: score._asdict() for image_id, score in scores.items()},
        orient="index")
    frame.index.name = "image_id"
    frame.sort_index().to_csv(run_dir.artifact(
        "scores_{}_{}.csv".format(model, split)))
    return report, cfg, net, records


def embedding_mosaic(embeddings):
    """
    Tile RoI embeddings as an RGB image of their principal components.

    Every pixel vector is projected on the 3 leading principal components of
    all pixel vectors; each component is scaled to [0, 1].

    :param embeddings:
        K x D x 14 x 14 array, K >= 1.
    :return:
        An H x W x 3 image.

    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    count, dim, side, _ = embeddings.shape
    pixels = embeddings.transpose(0, 2, 3, 1).reshape(-1, dim)
    centred = pixels - pixels.mean(axis=0)
    _, _, components = np.linalg.svd(centred, full_matrices=False)
    projected = centred @ components[:3].T
    if projected.shape[1] < 3:
        projected = np.pad(projected, ((0, 0), (0, 3 - projected.shape[1])))
    low, high = projected.min(axis=0), projected.max(axis=0)
    colours = (projected - low) / np.where(high > low, high - low, 1.0)
    tiles = colours.reshape(count, side, side, 3)

    tile = side * _TILE_SCALE
    columns = min(count, _TILE_COLUMNS)
    rows = math.ceil(count / columns)
    mosaic = np.ones((rows * (tile + 1) - 1, columns * (tile + 1) - 1, 3))
    for index, grid in enumerate(tiles):
        row, col = divmod(index, columns)
        top, left = row * (tile + 1), col * (tile + 1)
        mosaic[top:top + tile, left:left + tile] = np.kron(
            grid, np.ones((_TILE_SCALE, _TILE_SCALE, 1)))
    return mosaic


@util.log(logger)
def dump_features(net, records, cfg, directory, model="student"):
    """
    Write the boxes, scores and embeddings of every detection.

    Each image gets <id>.ckpt, a checkpoint archive holding "boxes",
    "scores" and "embeddings" (K x D x 14 x 14), and <id>_embeddings.png, a
    mosaic of its RoIs; images without detections are skipped.

    :return:
        The number of images written.

    """
    os.makedirs(directory, exist_ok=True)
    use_nmh, use_lrd = _heads(cfg, model)
    written = 0
    for record in output.progress(records, "Dumping features"):
        detections = net.predict(net_module.image_to_tensor(record.image),
                                 use_nmh=use_nmh, use_lrd=use_lrd,
                                 fusion=cfg.mask_fusion,
                                 with_embeddings=True)[0]
        if not detections:
            continue
        embeddings = np.stack([emb for _, _, emb in detections])
        data_io.write_checkpoint(
            os.path.join(directory, record.image_id + ".ckpt"),
            collections.OrderedDict((
                ("boxes", np.array([d.box for d, _, _ in detections])),
                ("scores", np.array([d.score for d, _, _ in detections])),
                ("embeddings", embeddings))))
        data_io.write_image(
            os.path.join(directory, record.image_id + "_embeddings.png"),
            embedding_mosaic(embeddings))
        written += 1
    return written


@util.log(logger)
def main(argv):
    """
    The main function of the evaluator.

    :param argv:
        The arguments left after the top-level parser.

    """
    args = _args_parse(argv)
    run_dir = file.RunDirectory(given_path=args.run) if args.run \
        else file.RunDirectory.import_latest()

    report, cfg, net, records = evaluate_run(run_dir, args.model, args.split,
                                             args.aggregate, args.data)
    label = "{} ({})".format(args.model, args.split)
    for line in metrics.format_table([(label, report)], label="Model"):
        output.print_(line)
    output.print_("TP {}  FP {}  FN {}  SQ {:.2f}  RQ {:.2f}".format(
        report.tp, report.fp, report.fn, report.sq, report.rq))

    if args.dump_features:
        count = dump_features(net, records, cfg, run_dir.features_dir,
                              args.model)
        output.print_("Wrote the embeddings of {} images to {}".format(
            count, run_dir.features_dir))
