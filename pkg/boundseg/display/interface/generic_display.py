# -------------------------------------------------------------
# generic_display.py - Implements an interface for all the display classes
# -------------------------------------------------------------

__all__ = ("GenericDisplay",)

from typing import NamedTuple


class GenericDisplay:
    """
    An interface for display classes to implement

    """

    class DisplayOptions(NamedTuple):
        """
        Any options that the display might have. To be overriden in its
        implementation.

        """
        pass

    def __init__(self, result, *args):
        """
        Initialises the display module

        :param result: a `data_io.AblationResult` object
        :param args: extra args
        """
        self.result = result
        self.summary = result.summary()

    def save(self, path):
        """
        Method that renders the result to a file

        :param path: the output file
        """
        pass
