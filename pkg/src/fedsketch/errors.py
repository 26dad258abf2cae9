"""Exception types raised across the package."""


class ParameterError(ValueError):
    """A numeric parameter is outside its valid domain."""


class DimensionError(ValueError):
    """A vector does not have the length the operation expects."""


class IncompatibleSketchError(ValueError):
    """Two sketch tables (or a table and a family) were built from different hash families."""


class MissingOracleError(ValueError):
    """ORACLE value mode was requested without an exact vector to read values from."""


class ConfigError(ValueError):
    """Experiment or protocol configuration failed validation.

    ``errors`` holds every problem found, each prefixed with ``section.key``.
    """

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class SchemaError(ValueError):
    """Two metrics files do not share a column layout."""
