# -------------------------------------------------------------
# test.py - Runs boundseg tests
# -------------------------------------------------------------

import argparse
import os
import sys

import pytest
from pylint import lint

boundseg_dir = os.path.dirname(os.path.abspath(__file__)) + "/"
package_dirs = [boundseg_dir + package for package in
                ("common", "datagen", "segment", "train", "evaluate",
                 "ablate", "display")]


class color:
    PURPLE = '\033[95m'
    BOLD = '\033[1m'
    END = '\033[0m'


def _title(text):
    print(color.BOLD + color.PURPLE + text + color.END)


def main():
    # Parse args
    parser = argparse.ArgumentParser(
        prog="boundseg_test",
        description="Test suite for boundseg.")
    parser.add_argument("-w", "--warn", action="store_true",
                        help="display all Pylint warnings.")
    parser.add_argument("-s", "--slow", action="store_true",
                        help="also run the slow training tests.")
    parsed = parser.parse_args(sys.argv[1:])

    if parsed.slow:
        os.environ["BOUNDSEG_SLOW_TESTS"] = "1"

    pylint_args = package_dirs + [
        '--rcfile={}pylintrc.txt'.format(boundseg_dir),
    ]
    if not parsed.warn:
        pylint_args.append('-E')

    pytest_args = [
        '--cov={}'.format(boundseg_dir),
        '--cov-config={}.coveragerc'.format(boundseg_dir),
    ] + package_dirs

    _title('Starting Pytest:')
    pytest_ret = pytest.main(pytest_args)
    if pytest_ret:
        sys.exit(pytest_ret)
    _title('Finished Pytest.')
    print("")

    _title('Starting Pylint: warnings are ' +
           ('on' if parsed.warn else 'off'))
    pylint_ret = lint.Run(pylint_args, exit=False).linter.msg_status
    if pylint_ret and not parsed.warn:
        sys.exit(pylint_ret)
    _title('Finished Pylint.')


if __name__ == "__main__":
    main()
