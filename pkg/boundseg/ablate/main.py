# --------------------------------------------------------------------
# main.py - user interface, parses and applies ablation commands
# --------------------------------------------------------------------

"""
Controller script - user interface, parses and applies --ablate commands

Runs an ablation grid over one axis and writes its result file, a CSV table
of the medians over seeds and a plot, side by side in a directory named after
the axis and the digest of the grid.

"""

__all__ = (
    "main",
    "results_dir",
    "write_outputs",
)

import argparse
import logging
import os

from boundseg.ablate import grid
from boundseg.common import (
    config,
    consts,
    file,
    output,
    util,
)
from boundseg.display import main as display
from boundseg.display.interface import table

logger = logging.getLogger(__name__)
logger.debug('Entered module: %s', __name__)


@util.log(logger)
def _args_parse(argv):
    """
    Creates a parser that parses the ablate command.

    :param argv:
        a list of arguments passed by the main function.

    :return:
        an object containing the parsed command information.

    """
    parser = argparse.ArgumentParser(
        prog="boundseg --ablate",
        description="Train a grid of configurations over one axis.")

    parser.add_argument(
        "--axis", required=True,
        choices=[axis.value for axis in consts.AblationAxis],
        help="the setting the grid varies")
    parser.add_argument(
        "--values", nargs="+",
        help="grid values; defaults to the axis option of [Ablation]")
    parser.add_argument(
        "--seeds", type=str,
        help="comma separated seeds; defaults to [Ablation] seeds")
    parser.add_argument(
        "--workers", type=int,
        help="worker processes; defaults to [Ablation] workers")
    parser.add_argument(
        "--data", type=str,
        help="dataset directory; defaults to data_dir in the config file")
    parser.add_argument(
        "-o", "--outfile", type=str,
        help="result file; defaults to a dated name in the directory of "
             "the grid")

    return parser.parse_args(argv)


def results_dir(spec, data_dir):
    """ Output directory of a grid: ablations/<axis>-<digest prefix> """
    return os.path.join(config.get_path("out_dir"), "ablations",
                        "{}-{}".format(spec.axis.value,
                                       spec.digest(data_dir)[:12]))


@util.log(logger)
def write_outputs(result, filename):
    """
    Write the result file, its CSV table and its plot.

    :param result:
        A :class:`data_io.AblationResult`.
    :param filename:
        The :class:`file.ResultFileName` of the result file.
    :return:
        The paths written: (json, csv, png).

    """
    paths = (str(filename), filename.with_extension("csv"),
             filename.with_extension("png"))
    os.makedirs(os.path.dirname(paths[0]) or ".", exist_ok=True)
    result.write(paths[0])
    table.Table(result).save(paths[1])
    display.render(result, display.select_mode(result.axis, {}), paths[2])
    return paths


@util.log(logger)
def main(argv):
    """
    The main function of the ablation harness.

    :param argv:
        The arguments left after the top-level parser.

    """
    args = _args_parse(argv)
    data_dir = os.path.abspath(args.data) if args.data \
        else config.get_path("data_dir")
    seeds = args.seeds.split(",") if args.seeds else None
    workers = args.workers if args.workers is not None else \
        config.get_option_from_section("Ablation", "workers", "int")
    if workers < 1:
        raise ValueError("At least one worker is needed, got {}"
                         .format(workers))

    spec = grid.AblationSpec.from_config(args.axis, args.values, seeds)
    output.print_("Ablating {} over {} with seeds {} ({} runs)".format(
        spec.axis.value, ", ".join(spec.values),
        ", ".join(str(seed) for seed in spec.seeds),
        len(spec.values) * len(spec.seeds)))

    result = grid.run_grid(spec, data_dir, workers=workers)
    for line in table.Table(result).lines():
        output.print_(line)
    for cell in result.cells:
        if not cell.ok:
            output.warn_("Cell {} (seed {}) failed".format(cell.value,
                                                           cell.seed),
                         cell.error)

    filename = file.ResultFileName("ablation-" + spec.axis.value,
                                   given_name=args.outfile,
                                   path=results_dir(spec, data_dir))
    for path in write_outputs(result, filename):
        output.print_("Wrote {}".format(path))
