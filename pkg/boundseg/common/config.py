# -------------------------------------------------------------
# config.py - configuration of constants and defaults
# -------------------------------------------------------------

"""
Interacts with the boundseg config file.

The user config file is located in ~/.boundsegconfig.
If no config file exists, the default one is copied to the config location.
The default config file can be found in the boundseg package (with
__main__.py). Any command can re-read the options from another file with
:func:`load`, so that every path and hyperparameter of a run comes from one
file.

"""

__all__ = (
    'config',
    'load',
    'get_option_from_section',
    'get_section',
    'parse_fraction',
    'get_path',
)

import configparser
import fractions
import logging
import os
from shutil import copyfile

logger = logging.getLogger(__name__)
logger.debug('Entered module: %s', __name__)


CONFIG_FILE = os.path.expanduser('~/.boundsegconfig')
DEFAULTS_FILE = os.path.dirname(os.path.dirname(__file__)) + "/config.txt"

config = configparser.ConfigParser()


def _initial_file():
    """ The file read on import: the user file, created from the defaults """
    if not os.path.exists(CONFIG_FILE):
        try:
            copyfile(DEFAULTS_FILE, CONFIG_FILE)
        except OSError:
            logger.warning("Could not create %s, using package defaults",
                           CONFIG_FILE)
            return DEFAULTS_FILE
    return CONFIG_FILE


def load(path=None):
    """
    (Re)load the configuration.

    The package defaults are always read first, so a user file only needs to
    contain the options it overrides.

    :param path:
        the config file to read; the user config file if None
    :raises FileNotFoundError:
        if the requested file does not exist

    """
    path = _initial_file() if path is None else os.path.expanduser(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(2, "No such config file", path)

    config.clear()
    config.read(DEFAULTS_FILE)
    config.read(path)
    logger.info("Configuration loaded from %s", path)
    return path


def parse_fraction(value):
    """
    Parse a fraction written as "1/4", "0.25" or "1".

    :param value:
        the string (or number) to parse
    :return:
        a :class:`fractions.Fraction`

    """
    try:
        return fractions.Fraction(str(value).strip()).limit_denominator(1000)
    except (ValueError, ZeroDivisionError) as err:
        raise ValueError("Invalid fraction: {}".format(value)) from err


def get_option_from_section(sec, opt, typ="string"):
    """
    Parses an option from a section of the config file

    :param sec:
        the section we are reading from
    :param opt:
        the option we want to get
    :param typ:
        the type of the output, so we can parse it to the appropriate type;
        "list" splits on commas, "fraction" accepts "1/4" style values
    :return:
        the option, converted to `typ`

    """

    if typ == "string":
        value = config.get(sec, opt)
    elif typ == "int":
        value = config.getint(sec, opt)
    elif typ == "bool":
        value = config.getboolean(sec, opt)
    elif typ == "float":
        value = config.getfloat(sec, opt)
    elif typ == "list":
        value = [item.strip() for item in config.get(sec, opt).split(',')
                 if item.strip()]
    elif typ == "fraction":
        value = parse_fraction(config.get(sec, opt))
    else:
        raise ValueError("Invalid type specified to read from config: {}."
                         .format(typ))

    return value


def get_section(sec):
    """
    Retrieves a section from the config

    :param sec:
        section we want to retrieve
    :return:
        the section as a dict

    """
    try:
        return config[sec]
    except KeyError as ke:
        raise ValueError("The section {} is not in the config".format(sec)) \
            from ke


def get_path(opt):
    """
    An absolute path from the [Paths] section

    :param opt:
        the option holding the path; relative paths are resolved against
        the working directory

    """
    return os.path.abspath(os.path.expanduser(
        get_option_from_section("Paths", opt)))


load()
