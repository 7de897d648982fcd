class PpfMatchError(Exception):
    pass


class ShapeError(PpfMatchError, ValueError):
    pass


class NonFiniteError(PpfMatchError, FloatingPointError):
    pass


class DegenerateGeometryError(PpfMatchError, ValueError):
    pass


class ConfigError(PpfMatchError, ValueError):
    pass


class WeightsError(PpfMatchError, ValueError):
    """Weight file is corrupt or does not fit the active configuration."""


class ParseError(PpfMatchError, ValueError):
    pass


class MissingNormalsError(ParseError):
    """Input cloud has no normals and estimation was not requested."""
