# --------------------------------------------------------------------
# main.py - user interface, parses and applies training commands
# --------------------------------------------------------------------

"""
Controller script - user interface, parses and applies --train commands

Builds the training configuration from the config file and the command
line, then runs the requested stages of the teacher/student pipeline.

"""

__all__ = (
    "main",
    "config_from_args",
)

import argparse
import logging
import os
import textwrap

from boundseg.common import (
    config,
    consts,
    output,
    util,
)
from boundseg.evaluate import metrics
from boundseg.train import pipeline

logger = logging.getLogger(__name__)
logger.debug('Entered module: %s', __name__)


@util.log(logger)
def _args_parse(argv):
    """
    Creates a parser that parses the train command.

    :param argv:
        a list of arguments passed by the main function.

    :return:
        an object containing the parsed command information.

    """
    parser = argparse.ArgumentParser(
        prog="boundseg --train",
        description="Train the teacher and the student.",
        formatter_class=argparse.RawTextHelpFormatter)

    parser.add_argument(
        "--data", type=str,
        help="dataset directory; defaults to data_dir in the config file")
    parser.add_argument(
        "--stage", nargs="+",
        choices=[stage.value for stage in consts.Stage],
        help=textwrap.dedent("""\
            stages to (re-)run; without this flag every stage runs and
            reuses the artifacts already on disk"""))
    parser.add_argument(
        "--seed", type=int, help="seed of the whole run")
    parser.add_argument(
        "--heads", type=str,
        help="student heads, e.g. nmh+lrd+crc; one of nmh and lrd is needed")
    parser.add_argument(
        "--alpha", type=float, help="contrastive sampling ratio in (0, 1]")
    parser.add_argument(
        "--distance", type=float,
        help="contrastive band half-width, in 14 x 14 cells")
    parser.add_argument(
        "--ratio", type=str,
        help="redraw the split at this labeled ratio: 1/8, 1/4 or 1/2")
    parser.add_argument(
        "--epochs", type=int, nargs=2, metavar=("TEACHER", "STUDENT"),
        help="epochs of the teacher and of the student")

    return parser.parse_args(argv)


def config_from_args(args):
    """ The config file's :class:`pipeline.TrainConfig` with flag overrides """
    cfg = pipeline.TrainConfig.from_config()
    if args.seed is not None:
        cfg = cfg._replace(seed=args.seed)
    if args.heads is not None:
        cfg = cfg._replace(head_flags=pipeline.HeadFlags.parse(args.heads))
    if args.alpha is not None:
        cfg = cfg._replace(alpha=args.alpha)
    if args.distance is not None:
        cfg = cfg._replace(d=args.distance)
    if args.ratio is not None:
        cfg = cfg._replace(ratio=args.ratio)
    if args.epochs is not None:
        cfg = cfg._replace(epochs_teacher=args.epochs[0],
                           epochs_student=args.epochs[1])
    return cfg.validate()


@util.log(logger)
def main(argv):
    """
    The main function of the trainer.

    :param argv:
        The arguments left after the top-level parser.

    """
    args = _args_parse(argv)
    data_dir = os.path.abspath(args.data) if args.data \
        else config.get_path("data_dir")
    cfg = config_from_args(args)
    stages = [consts.Stage(stage) for stage in args.stage] \
        if args.stage else None

    output.print_("Training with heads {}, seed {} (run {})".format(
        cfg.head_flags.label(), cfg.seed,
        cfg._replace(data_dir=data_dir).digest()[:12]))
    record = pipeline.run_stages(cfg, data_dir, stages)
    if record is None:
        output.print_("Stages {} done".format(", ".join(args.stage)))
        return

    rows = [(split, metrics.MetricsReport.from_dict(entry))
            for split, entry in sorted(record.metrics.items())]
    for line in metrics.format_table(rows, label="Split"):
        output.print_(line)
    output.print_("Run took {:.1f}s".format(record.wall_clock))
