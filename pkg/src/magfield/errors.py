"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class MagfieldError(Exception):
    exit_code = 1


class ParameterError(MagfieldError, ValueError):
    """Invalid argument value (band edges, shapes, out-of-range indices)."""

    exit_code = 2


class StructureError(MagfieldError, ValueError):
    """Inconsistent object structure (dimension or variant mismatch)."""

    exit_code = 2


class InputError(MagfieldError):
    """Malformed input data or file."""

    exit_code = 3


class TrainingError(MagfieldError, RuntimeError):
    """Non-finite loss or gradients during optimization."""

    exit_code = 4
