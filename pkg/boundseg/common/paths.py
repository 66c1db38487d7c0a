# -------------------------------------------------------------
# paths.py - stores standard paths to files
# -------------------------------------------------------------

"""Stores standard paths to files"""
__all__ = (
    'create_directories',
    'LOG_DIR',
    'VAR_DIR',
    'BOUNDSEG_DIR',
    'OUT_DIR',
)

import os

LOG_DIR = os.path.expanduser("~/.boundseg/log/")
VAR_DIR = os.path.expanduser("~/.boundseg/")

BOUNDSEG_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
OUT_DIR = os.getcwd() + "/boundseg_out/"


def create_directories():
    """
    Method that creates the required boundseg directories

    """
    for directory in (VAR_DIR, LOG_DIR, OUT_DIR):
        os.makedirs(directory, exist_ok=True)
