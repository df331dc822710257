"""Exception hierarchy.

ConfigError marks unusable input (CLI exit 2); every other DensctlError
subclass marks a numerical or constraint failure (CLI exit 1).
"""


class DensctlError(Exception):
    pass


class ConfigError(DensctlError):
    pass


class ModelError(DensctlError):
    pass


class OperatorError(DensctlError):
    pass


class SpectralError(DensctlError):
    pass


class PdeError(DensctlError):
    pass


class SamplingError(DensctlError):
    pass


class InverseError(DensctlError):
    pass
