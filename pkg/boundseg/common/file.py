# -------------------------------------------------------------
# file.py - generates new filenames
# -------------------------------------------------------------

"""
Handles the naming of files and run directories.

Provides classes to encapsulate result file names and the run directories
that hold the artifacts of one training configuration.

"""

__all__ = (
    'ResultFileName',
    'RunDirectory',
)

import logging
import os
from datetime import datetime

from boundseg.common import paths

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)


class _FileName:
    """
    Base class for a file name.

    Files are of the format <path>/<date>_<option>.<extension> and reside in
    paths.OUT_DIR by default.
    However they can be given a custom name and stored in paths.OUT_DIR,
    or alternatively given both a custom name and a path.

    """
    def __init__(self, option, extension, given_name=None, path=paths.OUT_DIR):
        """
        Initialise the file name.

        :param option:
            An optional field directly before the '.<extension>' (see above).
        :param extension:
            The extension of the file.
        :param given_name:
            The optional desired name of the file.
        :param path:
            The optional desired path of the file.

        """
        self.datetime = datetime.now()
        self.option = option
        self.extension = extension
        if given_name == "":
            raise FileNotFoundError("Cannot have empty file name.")
        elif given_name is None:
            self.given_name = None
            self.path = path
        else:
            dir_name = os.path.dirname(given_name)
            if os.path.isdir(dir_name):
                self.path = dir_name + "/"
                self.given_name = os.path.basename(given_name)
            else:
                self.path = path
                self.given_name = given_name

    def __str__(self):
        """
        Converts the file object to a string, which includes path to the file.

        :return:
            The resulting string.

        """
        if self.given_name is None:
            date = self.datetime.strftime("%Y-%m-%d_%H-%M-%S")
            result = os.path.join(self.path, date)
            if self.option is None:
                result += "." + self.extension
            else:
                result += "_" + self.option + "." + self.extension
        else:
            result = os.path.join(self.path, self.given_name)
        return result

    def __repr__(self):
        """ Give a unique representation of a file object. """
        return str(self.__class__) + "." + self.__str__()


class ResultFileName(_FileName):
    """ Class for result file names (ablation tables and plots). """
    def __init__(self, option, extension="json", given_name=None,
                 path=paths.OUT_DIR):
        """
        Initialise a result file name: <date>_<option>.<extension>.

        :param option:
            Describes the result, e.g. "ablation-alpha".

        """
        super().__init__(option, extension, given_name, path)

    def with_extension(self, extension):
        """ The same name with another extension, e.g. a plot beside a table """
        return os.path.splitext(str(self))[0] + "." + extension


class RunDirectory:
    """
    The directory holding every artifact of one training configuration.

    Directories are named run-<digest prefix> after the digest of the
    configuration, so that identical configurations share artifacts and
    commands can resume from them.

    """
    TEACHER_CHECKPOINT = "teacher.ckpt"
    STUDENT_CHECKPOINT = "student.ckpt"
    PSEUDO_DIR = "pseudo"
    FEATURES_DIR = "features"
    RUN_RECORD = "run_record.json"
    CONFIG_SNAPSHOT = "config.json"

    def __init__(self, digest=None, given_path=None, root=None):
        """
        Initialise the run directory.

        :param digest:
            The configuration digest naming the directory.
        :param given_path:
            An explicit directory, overriding the digest naming.
        :param root:
            The parent of digest-named directories; paths.OUT_DIR/runs by
            default.

        """
        if given_path is not None:
            self.path = os.path.abspath(os.path.expanduser(given_path))
        elif digest is not None:
            root = root or os.path.join(paths.OUT_DIR, "runs")
            self.path = os.path.join(root, "run-" + digest[:12])
        else:
            raise ValueError("A run directory needs a digest or a path")

    def __str__(self):
        return self.path

    def __repr__(self):
        return str(self.__class__) + "." + self.path

    def create(self):
        """ Create the directory tree of the run """
        os.makedirs(os.path.join(self.path, self.PSEUDO_DIR), exist_ok=True)
        return self

    def artifact(self, name):
        """ Path of an artifact inside the run directory """
        return os.path.join(self.path, name)

    @property
    def teacher_checkpoint(self):
        return self.artifact(self.TEACHER_CHECKPOINT)

    @property
    def student_checkpoint(self):
        return self.artifact(self.STUDENT_CHECKPOINT)

    @property
    def pseudo_dir(self):
        return self.artifact(self.PSEUDO_DIR)

    @property
    def features_dir(self):
        return self.artifact(self.FEATURES_DIR)

    @property
    def run_record(self):
        return self.artifact(self.RUN_RECORD)

    def metrics_report(self, model, split):
        return self.artifact("metrics_{}_{}.json".format(model, split))

    def export(self):
        """
        Remember this run directory.

        Write the current run path to disk in a known file, so that
        future invocations can find the last run without --run.

        """
        os.makedirs(paths.VAR_DIR, exist_ok=True)
        with open(os.path.join(paths.VAR_DIR, "last_run"), "w") as file:
            file.write(self.path)

    @classmethod
    def import_latest(cls):
        """
        The run directory written by the previous invocation.

        :raises FileNotFoundError:
            If the known file cannot be found.

        """
        try:
            with open(os.path.join(paths.VAR_DIR, "last_run"), "r") as saved:
                return cls(given_path=saved.readline().strip())
        except FileNotFoundError:
            logger.error("Unable to find last run helper file in %s",
                         str(paths.VAR_DIR))
            raise
