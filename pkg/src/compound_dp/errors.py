"""Exception hierarchy shared by the library and the command line.

Each class carries the process exit code the CLI maps it to.
"""


class CdpError(Exception):
    exit_code = 1


class ConfigError(CdpError, ValueError):
    exit_code = 2


class DomainError(CdpError, ValueError):
    """An argument lies outside the domain of an operation."""

    exit_code = 2


class DataError(CdpError, ValueError):
    exit_code = 3


class CapabilityError(CdpError, NotImplementedError):
    """The requested combination of model pieces has no supported evaluator."""

    exit_code = 4


class ResourceError(CdpError, RuntimeError):
    """A configured size cap (partition count, matrix dimension) was exceeded."""

    exit_code = 5
