# ---------------------------------------------
# consts.py - Various enums and other constants
# ---------------------------------------------

"""
Module that defines various enums and constants used throughout the
segmentation, training and display modules so that we avoid hard coded
things and improve readability

"""

__all__ = (
    "Provenance",
    "Stage",
    "Head",
    "Split",
    "AblationAxis",
    "DisplayOptions",
    "ExitCodes",
)

from enum import Enum, IntEnum


class Provenance(Enum):
    # Where the supervision of a training record comes from
    HUMAN = "human"
    PSEUDO = "pseudo"


class Stage(Enum):
    # The values here should correspond to the --stage choices
    TEACHER = "teacher"
    PSEUDO = "pseudo"
    STUDENT = "student"


class Head(Enum):
    # The values here should correspond to the [Heads] config options
    NMH = "nmh"
    LRD = "lrd"
    CRC = "crc"


class Split(Enum):
    LABELED = "labeled"
    UNLABELED = "unlabeled"
    VAL = "val"
    TEST = "test"


class AblationAxis(Enum):
    # The values here should correspond to the [Ablation] config options
    HEADS = "heads"
    ALPHA = "alpha"
    DISTANCE = "distance"
    RATIO = "ratio"


class DisplayOptions(Enum):
    # The values here should correspond to the ones from the config
    BAR = "bar"
    LINE = "line"


class ExitCodes(IntEnum):
    SUCCESS = 0
    UNEXPECTED = 1
    USAGE = 2
    MISSING_ARTIFACT = 3
    FILE_EXISTS = 4
    DIVERGED = 5
    INVALID_INPUT = 6


# RoI grid side and the naive mask head's output side
ROI_SIZE = 14
MASK_SIZE = 28

# Backbone output stride in pixels
FEATURE_STRIDE = 4

# The labeled fractions a split may use
LABEL_RATIOS = ("1/8", "1/4", "1/2")

# Train/val/test proportions applied before the labeled split
SPLIT_PROPORTIONS = (6, 2, 2)

# Heads that may be switched off for ablations
head_argnames = [head.value for head in Head]
