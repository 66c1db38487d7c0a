#!/usr/bin/env python3

# -------------------------------------------------------------
# __main__.py - Initiates the program
# -------------------------------------------------------------

"""
Initiates the program.

Sets up logging, loads the configuration, calls the appropriate controller
(gen-data, train, eval, ablate or display) and turns exceptions into exit
codes.

"""
__all__ = ["main"]

import argparse
import importlib
import logging
import sys
import textwrap
import traceback
from datetime import datetime

from boundseg.common import (
    config,
    consts,
    exceptions,
    output,
    paths,
    util,
)

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)

# Controllers by command, imported when the command runs
_CONTROLLERS = {
    "gen_data": "boundseg.datagen.main",
    "train": "boundseg.train.main",
    "eval": "boundseg.evaluate.main",
    "ablate": "boundseg.ablate.main",
    "display": "boundseg.display.main",
}

# Errors caused by the data given to a command
_INVALID_INPUT = (
    exceptions.SceneGenerationError,
    exceptions.ShapeError,
    exceptions.InvalidProposalError,
    exceptions.ContrastiveInputError,
    exceptions.DuplicateRecordError,
    exceptions.ProvenanceError,
    exceptions.ArchiveFormatError,
)


def _args_parse(argv):
    """
    Parse the top-level options; the rest goes to the controller.

    :return:
        (parsed options, remaining arguments).

    """
    parser = argparse.ArgumentParser(
        prog="boundseg",
        description="Boundary-aware semi-supervised nuclei instance "
                    "segmentation: generate data, train, evaluate, ablate "
                    "and display results.", add_help=False)
    submodules = parser.add_mutually_exclusive_group(required=True)
    submodules.add_argument(
        "--gen-data", "-g", action="store_true",
        help="Generate a synthetic nuclei dataset.")
    submodules.add_argument(
        "--train", "-t", action="store_true",
        help="Train the teacher and the student.")
    submodules.add_argument(
        "--eval", "-e", action="store_true",
        help="Evaluate a trained network.")
    submodules.add_argument(
        "--ablate", "-a", action="store_true",
        help="Train a grid of configurations over one axis.")
    submodules.add_argument(
        "--display", "-d", action="store_true",
        help="Display a stored ablation result.")
    parser.add_argument(
        "--config", type=str,
        help="config file to use instead of ~/.boundsegconfig")
    return parser.parse_known_args(argv)


def _run(parsed, rest):
    """ Call the controller of the chosen command """
    command = next(name for name in _CONTROLLERS if getattr(parsed, name))
    importlib.import_module(_CONTROLLERS[command]).main(rest)


@util.log(logger)
def main(argv=None):
    """
    Run boundseg.

    :param argv:
        The command line arguments; sys.argv[1:] if None.
    :return:
        A :class:`consts.ExitCodes` value.

    """
    paths.create_directories()
    setup_logger()

    parsed, rest = _args_parse(sys.argv[1:] if argv is None else argv)

    try:
        if parsed.config:
            config.load(parsed.config)
        _run(parsed, rest)

    except exceptions.MissingArtifactError as mae:
        output.error_("{}. Run the stage that produces it first.".format(mae),
                      "Missing artifact: {}".format(mae.path))
        return consts.ExitCodes.MISSING_ARTIFACT
    except FileExistsError as fee:
        output.error_("{} already exists. Use --force or choose another "
                      "location.".format(fee.filename),
                      "Exited with a FileExistsError. File: {}".format(
                          fee.filename))
        return consts.ExitCodes.FILE_EXISTS
    except FileNotFoundError as fnfe:
        output.error_("No file named {} found. Please choose a different "
                      "input file.".format(fnfe.filename),
                      "Exited with a FileNotFoundError. Filename: {}"
                      .format(fnfe.filename))
        return consts.ExitCodes.MISSING_ARTIFACT
    except exceptions.DivergenceError as de:
        output.error_("Training diverged at step {}.".format(de.step),
                      str(de))
        return consts.ExitCodes.DIVERGED
    except _INVALID_INPUT as err:
        output.error_("Invalid input: {}".format(err),
                      "\n" + traceback.format_exc())
        return consts.ExitCodes.INVALID_INPUT
    except ValueError as ve:
        output.error_("Invalid option: {}".format(ve),
                      "\n" + traceback.format_exc())
        return consts.ExitCodes.USAGE
    except Exception:  # pylint: disable=broad-except
        output.error_("An unexpected error occurred. Check log for details.",
                      "\n" + traceback.format_exc())
        return consts.ExitCodes.UNEXPECTED

    return consts.ExitCodes.SUCCESS


@util.log(logger)
def setup_logger():
    """ Create a log in paths.LOG_DIR """
    class LogFormatter(logging.Formatter):
        @util.Override(logging.Formatter)
        def format(self, record):
            header = super().format(record)
            original_msg = record.getMessage().split('\n')
            formatted_msg = ""
            line_length = 70
            for line in original_msg:
                if len(line) > line_length:
                    line = '\n'.join(textwrap.wrap(line, width=line_length,
                                                   break_long_words=False))
                formatted_msg = "\n".join((formatted_msg, line))

            indented_msg = textwrap.indent(formatted_msg, prefix="    ")
            if record.exc_info:
                indented_msg += "\n" + self.formatException(record.exc_info)
            return header + indented_msg

        @util.Override(logging.Formatter)
        def formatException(self, ei):
            return textwrap.indent(super().formatException(ei), prefix="    ")

    try:
        msg_format = '%(asctime)s - %(name)-25.25s - %(levelname)-8.8s'
        date_format = "%H:%M:%S"
        now = datetime.now()
        log_file = paths.LOG_DIR + now.strftime('%Y-%m-%d_%H-%M-%S') + ".log"

        handler = logging.FileHandler(log_file, mode='w')
        handler.setFormatter(LogFormatter(fmt=msg_format,
                                          datefmt=date_format))
        logging.basicConfig(level=logging.DEBUG, handlers=[handler])

    except OSError as ose:
        output.error_("Fatal error: failed to set up logging.", str(ose))
        sys.exit(consts.ExitCodes.UNEXPECTED)


if __name__ == "__main__":
    sys.exit(main())
