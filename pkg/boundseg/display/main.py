# -------------------------------------------------------------
# main.py - user interface, parses and applies display commands
# -------------------------------------------------------------

"""
Controller script - user interface, parses and applies display commands

Reads a stored ablation result, prints its table and renders its plot as a
static image beside the result file, or where --outfile says.

"""
__all__ = ["main", "render", "select_mode"]

import argparse
import logging
import os

from boundseg.common import (
    config,
    consts,
    data_io,
    output,
    util,
)
from boundseg.display.interface import (
    plotter,
    table,
)

logger = logging.getLogger(__name__)
logger.debug('Entered module: %s', __name__)


@util.log(logger)
def select_mode(axis, args):
    """
    Function that selects the plot of an ablation axis

    A --bar or --line flag wins; otherwise the option of the axis in the
    [DisplayModes] section of the config file is used.

    :param axis:
        the ablation axis of the result, as a string
    :param args:
        terminal arguments as a dictionary

    :return:
        a `consts.DisplayOptions` specifing the display mode

    """
    for option in consts.DisplayOptions:
        if args.get(option.value):
            return option

    try:
        axis_enum = consts.AblationAxis(axis)
    except ValueError as ve:
        raise ValueError("The ablation axis {} is not supported."
                         .format(axis)) from ve

    default = config.get_option_from_section("DisplayModes", axis_enum.value)
    try:
        return consts.DisplayOptions(default)
    except ValueError as ve:
        raise ValueError(
            "The default value from the config ({}) was not recognised. "
            "Make sure the config values are within the accepted parameters."
            .format(default)) from ve


@util.log(logger)
def _args_parse(argv):
    """
    Create a parser that parses the display command.

    :param argv:
        the arguments passed by the main function

    :return:
        an object containing the parsed command information

    """
    parser = argparse.ArgumentParser(
        prog="boundseg --display",
        description="Display an ablation result as a table and a plot")

    plot_display = parser.add_mutually_exclusive_group()
    plot_display.add_argument(
        "--" + consts.DisplayOptions.BAR.value, action="store_true",
        help="plot as grouped bars")
    plot_display.add_argument(
        "--" + consts.DisplayOptions.LINE.value, action="store_true",
        help="plot as lines over the grid values")

    parser.add_argument(
        "-i", "--infile", type=str, required=True,
        help="ablation result file written by --ablate")
    parser.add_argument(
        "-o", "--outfile", type=str,
        help="image to write; defaults to the result file with .png")

    return parser.parse_args(argv)


@util.log(logger)
def render(result, mode, path):
    """
    Write the plot of an ablation result.

    :param result:
        A :class:`data_io.AblationResult`.
    :param mode:
        A :class:`consts.DisplayOptions`.
    :param path:
        The image file.

    """
    try:
        visualiser = {
            consts.DisplayOptions.BAR: plotter.BarChart,
            consts.DisplayOptions.LINE: plotter.LinePlot,
        }[mode]
    except KeyError as ke:
        raise KeyError("Unexpected display mode {}!".format(mode)) from ke
    visualiser(result).save(path)


@util.log(logger)
def main(argv):
    """
    The main function of the controller.

    :param argv:
        command line arguments from call in main

    """
    args = _args_parse(argv)
    infile = os.path.expanduser(args.infile)
    result = data_io.AblationResult.read(infile)

    for line in table.Table(result).lines():
        output.print_(line)

    outfile = args.outfile or os.path.splitext(infile)[0] + ".png"
    render(result, select_mode(result.axis, vars(args)), outfile)
    output.print_("Plot written to {}".format(outfile))
