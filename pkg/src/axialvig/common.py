# -*- coding: utf-8 -*-
"""Shared error types and stderr helpers used by every module."""

from __future__ import print_function

import os
import sys
import traceback


DEBUG = bool(os.environ.get("DEBUG_AXIALVIG", False))


##
## Exceptions
##

class AxialVigError(Exception):
    """Base of every error raised on purpose by this package."""


class DimensionError(AxialVigError, ValueError):

    def __init__(self, msg, axis=None):
        self.axis = axis
        super(DimensionError, self).__init__(msg)


class ConfigurationError(AxialVigError, ValueError):
    pass


class TapeError(AxialVigError):
    pass


class FormatError(AxialVigError, ValueError):

    def __init__(self, msg, name=None):
        self.name = name
        super(FormatError, self).__init__(msg)


class UsageError(AxialVigError):
    pass


class VerificationFailure(AxialVigError):
    """A check ran to completion and found a mismatch."""

    def __init__(self, msg, case=None):
        self.case = case
        super(VerificationFailure, self).__init__(msg)


##
## stderr helpers
##

def stderr(msg):
    print(msg, file=sys.stderr)


def err(msg):
    stderr("Error: " + msg)


def warn(msg):
    stderr("Warning: " + msg)


def debug(msg):
    if DEBUG:
        stderr("Debug: " + msg)


def die(msg=None, errlvl=1):
    if msg:
        stderr(msg)
    sys.exit(errlvl)


def set_debug(value):
    global DEBUG
    DEBUG = bool(value)


def format_last_exception(prefix="  | "):
    """Format the last exception for display.

    >>> try:
    ...     raise DimensionError("bad height", axis="height")
    ... except DimensionError:
    ...     print(format_last_exception().splitlines()[-1])
      | axialvig.common.DimensionError: bad height

    """

    return '\n'.join(
        str(prefix + line)
        for line in traceback.format_exc().strip().split('\n'))


def indent(text, chars="  ", first=None):
    """Return text string indented with the given chars

    >>> print(indent("a\\nb", chars="| "))
    | a
    | b

    >>> print(indent("a\\nb", first="- "))
    - a
      b

    """
    if first:
        first_line = text.split("\n")[0]
        rest = '\n'.join(text.split("\n")[1:])
        return '\n'.join([(first + first_line).rstrip(),
                          indent(rest, chars=chars)])
    return '\n'.join([(chars + line).rstrip()
                      for line in text.split('\n')])


##
## File
##

def file_get_contents(filename):
    with open(filename) as f:
        return f.read()


def file_put_contents(filename, string):
    """Write string to filename."""
    with open(filename, 'w', newline='') as f:
        f.write(string)
