"""Exception hierarchy shared by the library, the service and the CLI.

The three concrete classes map one-to-one onto the CLI exit codes and the
service error categories:

* ``ConfigError``  -> exit 2, category ``usage``   (bad parameters, violated preconditions)
* ``DataError``    -> exit 3, category ``data``    (missing/malformed files, shape mismatches)
* ``NumericError`` -> exit 4, category ``numeric`` (undefined or failed computations)
"""


class IrisBsifError(Exception):
    """Base class for all errors raised by this package."""

    category = "error"
    exit_code = 1


class ConfigError(IrisBsifError):
    """Invalid configuration or violated call precondition."""

    category = "usage"
    exit_code = 2


class DataError(IrisBsifError):
    """Input data is missing, malformed or inconsistent."""

    category = "data"
    exit_code = 3


class NumericError(IrisBsifError):
    """A computation is undefined or failed for the given inputs."""

    category = "numeric"
    exit_code = 4
