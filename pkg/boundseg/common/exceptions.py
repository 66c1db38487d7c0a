# --------------------------------------------------------------------
# exceptions.py - custom exceptions
# --------------------------------------------------------------------

"""Custom exceptions"""


class SceneGenerationError(Exception):
    """Exception for scenes whose nuclei cannot all be placed"""
    def __init__(self, message, placed, requested):
        """
        Init the error class

        :param message:
            the error message.
        :param placed:
            the number of nuclei placed before giving up.
        :param requested:
            the number of nuclei requested.

        """
        super().__init__(message)
        self.placed = placed
        self.requested = requested


class ShapeError(ValueError):
    """Exception for arrays or tensors whose shapes do not agree"""
    def __init__(self, message):
        """
        Init the error class

        :param message:
            the error message.

        """
        super().__init__("Shape mismatch: " + message)


class InvalidProposalError(ValueError):
    """Exception for boxes too small to be pooled into a RoI"""
    def __init__(self, message, box):
        """
        Init the error class

        :param message:
            the error message.
        :param box:
            the offending (x1, y1, x2, y2) box.

        """
        super().__init__(message)
        self.box = box


class ContrastiveInputError(ValueError):
    """Exception for empty or zero-norm inputs to the contrastive loss"""


class DivergenceError(Exception):
    """Exception for training runs whose loss stops being finite"""
    def __init__(self, message, step):
        """
        Init the error class

        :param message:
            the error message.
        :param step:
            the optimisation step at which training was aborted.

        """
        super().__init__(message)
        self.step = step


class MissingArtifactError(Exception):
    """Exception for commands that need an artifact that does not exist"""
    def __init__(self, message, path):
        """
        Init the error class

        :param message:
            the error message.
        :param path:
            the path at which the artifact was expected.

        """
        super().__init__(message)
        self.path = path


class DuplicateRecordError(ValueError):
    """Exception for training sets containing an image id twice"""


class ProvenanceError(Exception):
    """Exception for supervision whose source does not match its record"""


class ArchiveFormatError(Exception):
    """Exception for malformed archives, pseudo-label stores or result files"""
    def __init__(self, message):
        """
        Init the error class

        :param message:
            the error message.

        """
        message = "Error in common.data_io: " + message
        super().__init__(message)
